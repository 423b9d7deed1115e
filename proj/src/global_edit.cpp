#include "mgan/global_edit.hpp"

#include <algorithm>
#include <cmath>

#include "mgan/rng.hpp"

namespace mgan {

double EditBasis::sigma(int k) const {
  if (k < 0 || k >= size()) throw NotFoundError("edit basis has no component " + std::to_string(k));
  return std::sqrt(explained_variance[k]);
}

EditBasis fit_basis_from_samples(const Eigen::MatrixXd& samples, int n_components) {
  const Index n = samples.rows(), d = samples.cols();
  if (n_components < 1 || n_components > d)
    throw ConfigError("n_components " + std::to_string(n_components) + " must lie in [1, dim_w=" + std::to_string(d) + "]");
  if (n < 2) throw ConfigError("PCA needs at least two samples");
  EditBasis basis;
  basis.n_samples = static_cast<int>(n);
  basis.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - basis.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("covariance eigendecomposition failed");

  basis.components.resize(d, n_components);
  basis.explained_variance.resize(n_components);
  for (int k = 0; k < n_components; ++k) {
    const Index src = d - 1 - k;  // eigenvalues ascend
    VectorXd v = eig.eigenvectors().col(src);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    basis.components.col(k) = v;
    basis.explained_variance[k] = std::max(0.0, eig.eigenvalues()[src]);
  }
  return basis;
}

EditBasis fit_basis(const Generator& g, int n_samples, int n_components, std::uint64_t seed) {
  if (n_components > g.config().dim_w)
    throw ConfigError("n_components " + std::to_string(n_components) + " exceeds dim_w " + std::to_string(g.config().dim_w));
  Eigen::MatrixXd samples(n_samples, g.config().dim_w);
  for (int i = 0; i < n_samples; ++i)
    samples.row(i) = g.map_latent(sample_z(g.config().dim_z, derive_seed(seed, "pca", static_cast<std::uint64_t>(i)))).transpose();
  EditBasis basis = fit_basis_from_samples(samples, n_components);
  basis.checkpoint_id = g.checkpoint_id();
  return basis;
}

LayerRange LayerRange::parse(const std::string& text, int num_blocks) {
  const auto dots = text.find("..");
  LayerRange r;
  try {
    if (dots == std::string::npos) {
      r.begin = std::stoi(text);
      r.end = r.begin + 1;
    } else {
      r.begin = dots == 0 ? 0 : std::stoi(text.substr(0, dots));
      r.end = dots + 2 == text.size() ? num_blocks : std::stoi(text.substr(dots + 2));
    }
  } catch (const std::logic_error&) {
    throw ConfigError("layer range '" + text + "' is not of the form A..B");
  }
  if (r.begin < 0 || r.end > num_blocks || r.begin >= r.end)
    throw ConfigError("layer range " + text + " must lie within [0," + std::to_string(num_blocks) + ")");
  return r;
}

GlobalEdit GlobalEdit::compose(const GlobalEdit& a, const GlobalEdit& b) {
  if (a.layers.begin != b.layers.begin || a.layers.end != b.layers.end || a.sigma_units != b.sigma_units)
    throw ConfigError("only edits with identical layer ranges and units compose");
  GlobalEdit out = a;
  for (const auto& [k, v] : b.coordinates) {
    auto it = std::find_if(out.coordinates.begin(), out.coordinates.end(), [k = k](const auto& c) { return c.first == k; });
    if (it == out.coordinates.end())
      out.coordinates.emplace_back(k, v);
    else
      it->second += v;
  }
  return out;
}

VectorXd edit_offset(const EditBasis& basis, const GlobalEdit& edit) {
  VectorXd offset = VectorXd::Zero(basis.components.rows());
  for (const auto& [k, v] : edit.coordinates) {
    if (!std::isfinite(v)) throw NumericError("edit coordinate for component " + std::to_string(k) + " is not finite");
    const double x = edit.sigma_units ? v * basis.sigma(k) : v;
    if (k < 0 || k >= basis.size()) throw NotFoundError("edit basis has no component " + std::to_string(k));
    offset += x * basis.components.col(k);
  }
  return offset;
}

LatentW apply_edit(const LatentW& w, const EditBasis& basis, const GlobalEdit& edit) {
  const int L = w.size();
  if (edit.layers.begin < 0 || edit.layers.end > L || edit.layers.begin >= edit.layers.end)
    throw ConfigError("edit layer range must lie within [0," + std::to_string(L) + ")");
  const VectorXd offset = edit_offset(basis, edit);
  LatentW out = w;
  for (int i = edit.layers.begin; i < edit.layers.end; ++i) {
    VectorXd& layer = out.layers[static_cast<std::size_t>(i)];
    if (layer.size() != offset.size()) throw DimensionError("latent and basis dimensions differ");
    layer += offset;
  }
  return out;
}

LatentW apply_edit(const VectorXd& w, const EditBasis& basis, const GlobalEdit& edit, int num_blocks) {
  return apply_edit(LatentW::broadcast(w, num_blocks), basis, edit);
}

LatentW apply_edit(const LatentRecord& record, const EditBasis& basis, const GlobalEdit& edit, int num_blocks) {
  if (record.checkpoint_id != basis.checkpoint_id)
    throw ProvenanceError("latent from checkpoint " + record.checkpoint_id + " edited with basis from " + basis.checkpoint_id);
  return apply_edit(record.w, basis, edit, num_blocks);
}

std::vector<Tensor> component_sweep(const Generator& g, const LatentRecord& record, const EditBasis& basis, int component,
                                    const std::vector<double>& values, LayerRange layers) {
  if (values.empty()) throw ConfigError("component_sweep needs at least one value");
  if (!std::is_sorted(values.begin(), values.end())) throw ConfigError("component_sweep values must be sorted");
  std::vector<Tensor> strip;
  for (double v : values) {
    const GlobalEdit edit{{{component, v}}, layers, true};
    strip.push_back(g.synthesize(apply_edit(record, basis, edit, g.config().num_blocks()), record.noise_seed));
  }
  return strip;
}

nlohmann::json to_json(const GlobalEdit& e) {
  nlohmann::json coords = nlohmann::json::array();
  for (const auto& [k, v] : e.coordinates) coords.push_back({k, v});
  return {{"coordinates", coords}, {"layers", {e.layers.begin, e.layers.end}}, {"sigma_units", e.sigma_units}};
}

GlobalEdit global_edit_from_json(const nlohmann::json& j) {
  GlobalEdit e;
  for (const auto& c : j.at("coordinates")) e.coordinates.emplace_back(c.at(0).get<int>(), c.at(1).get<double>());
  e.layers = {j.at("layers").at(0).get<int>(), j.at("layers").at(1).get<int>()};
  e.sigma_units = j.value("sigma_units", true);
  return e;
}

}  // namespace mgan
