#include "mgan/local_edit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mgan/rng.hpp"

namespace mgan {

using Eigen::MatrixXd;

MatrixXd normalize_rows(const MatrixXd& m) {
  std::vector<Index> keep;
  for (Index i = 0; i < m.rows(); ++i)
    if (m.row(i).norm() > 0) keep.push_back(i);
  MatrixXd out(static_cast<Index>(keep.size()), m.cols());
  for (std::size_t i = 0; i < keep.size(); ++i) out.row(static_cast<Index>(i)) = m.row(keep[i]).normalized();
  return out;
}

namespace {

// Cosine similarity of every point to its best centroid.
double assign_points(const MatrixXd& points, const MatrixXd& centroids, std::vector<int>& assignment,
                     std::vector<double>& best) {
  const MatrixXd sims = points * centroids.transpose();
  double total = 0;
  for (Index i = 0; i < points.rows(); ++i) {
    Index arg = 0;
    best[static_cast<std::size_t>(i)] = sims.row(i).maxCoeff(&arg);
    assignment[static_cast<std::size_t>(i)] = static_cast<int>(arg);
    total += best[static_cast<std::size_t>(i)];
  }
  return total;
}

MatrixXd kmeanspp(const MatrixXd& points, int k, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "kmeans-init"));
  const Index n = points.rows();
  MatrixXd c(k, points.cols());
  c.row(0) = points.row(static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(n))));
  Eigen::VectorXd dist = (1.0 - (points * c.row(0).transpose()).array()).max(0.0).matrix();
  for (int j = 1; j < k; ++j) {
    const double total = dist.sum();
    Index pick = 0;
    if (total <= 0) {
      pick = static_cast<Index>(uniform_index(rng, static_cast<std::uint64_t>(n)));
    } else {
      double u = uniform01(rng) * total;
      for (pick = 0; pick < n - 1; ++pick) {
        u -= dist[pick];
        if (u < 0) break;
      }
    }
    c.row(j) = points.row(pick);
    dist = dist.cwiseMin((1.0 - (points * c.row(j).transpose()).array()).max(0.0).matrix());
  }
  return c;
}

}  // namespace

KMeansResult spherical_kmeans(const MatrixXd& points, int k, std::uint64_t seed, int max_iterations) {
  const Index n = points.rows();
  if (k < 1) throw ConfigError("k must be positive");
  if (k > points.cols())
    throw ConfigError("k=" + std::to_string(k) + " exceeds the channel count " + std::to_string(points.cols()));
  if (n < k) throw ConfigError("spherical k-means needs at least k points");
  for (Index i = 0; i < n; ++i)
    if (std::abs(points.row(i).norm() - 1.0) > 1e-9) throw DimensionError("spherical k-means expects unit rows");

  KMeansResult r;
  r.centroids = kmeanspp(points, k, seed);
  r.assignment.assign(static_cast<std::size_t>(n), -1);
  std::vector<double> best(static_cast<std::size_t>(n));
  std::vector<int> previous;
  for (int it = 0; it < max_iterations; ++it) {
    r.objective.push_back(assign_points(points, r.centroids, r.assignment, best));
    r.iterations = it + 1;
    if (r.assignment == previous) break;
    previous = r.assignment;

    MatrixXd sums = MatrixXd::Zero(k, points.cols());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (Index i = 0; i < n; ++i) {
      sums.row(r.assignment[static_cast<std::size_t>(i)]) += points.row(i);
      ++counts[static_cast<std::size_t>(r.assignment[static_cast<std::size_t>(i)])];
    }
    std::vector<char> taken(static_cast<std::size_t>(n), 0);
    for (int j = 0; j < k; ++j) {
      const double norm = sums.row(j).norm();
      if (counts[static_cast<std::size_t>(j)] > 0 && norm > 0) {
        r.centroids.row(j) = sums.row(j) / norm;
        continue;
      }
      // Empty (or degenerate) cluster: take the point its centroid serves worst.
      Index worst = -1;
      for (Index i = 0; i < n; ++i)
        if (!taken[static_cast<std::size_t>(i)] && (worst < 0 || best[static_cast<std::size_t>(i)] < best[static_cast<std::size_t>(worst)]))
          worst = i;
      taken[static_cast<std::size_t>(worst)] = 1;
      r.centroids.row(j) = points.row(worst);
      ++r.reseeds;
    }
  }
  return r;
}

MatrixXd centroid_membership(const MatrixXd& centroids) {
  MatrixXd m = centroids.cwiseAbs();
  for (Index c = 0; c < m.cols(); ++c) {
    const double s = m.col(c).sum();
    if (s > 0)
      m.col(c) /= s;
    else
      m.col(c).setConstant(1.0 / static_cast<double>(m.rows()));
  }
  return m;
}

namespace {

// [1,C,H,W] -> (H*W) x C
MatrixXd spatial_vectors(const Tensor& a) {
  const Shape& s = a.shape();
  const Index C = s[s.size() - 3], HW = s[s.size() - 2] * s[s.size() - 1];
  MatrixXd out(HW, C);
  for (Index c = 0; c < C; ++c)
    for (Index p = 0; p < HW; ++p) out(p, c) = a.values()[static_cast<std::size_t>(c * HW + p)];
  return out;
}

// Nearest-neighbour resampling of a square label grid.
std::vector<int> resample_labels(const std::vector<int>& labels, int grid, int size) {
  std::vector<int> out(static_cast<std::size_t>(size) * static_cast<std::size_t>(size));
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const int sy = y * grid / size, sx = x * grid / size;
      out[static_cast<std::size_t>(y * size + x)] = labels[static_cast<std::size_t>(sy * grid + sx)];
    }
  return out;
}

int grid_of(std::size_t n_labels) {
  return static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_labels))));
}

}  // namespace

std::vector<int> ClusterModel::assign(const Tensor& activation) const {
  const MatrixXd v = spatial_vectors(activation);
  if (v.cols() != centroids.cols()) throw DimensionError("activation channels do not match the cluster model");
  const MatrixXd sims = v * centroids.transpose();
  std::vector<int> labels(static_cast<std::size_t>(v.rows()));
  for (Index p = 0; p < v.rows(); ++p) {
    Index arg = 0;
    sims.row(p).maxCoeff(&arg);
    labels[static_cast<std::size_t>(p)] = static_cast<int>(arg);
  }
  return labels;
}

ClusterModel fit_clusters(const Generator& g, const ClusterOptions& opts, std::uint64_t seed) {
  const int L = g.config().num_blocks();
  ClusterModel model;
  model.layer_name = opts.layer_name;
  model.k = opts.k;
  const int fit = model.fit_layer(L);
  const int C = g.config().channels[static_cast<std::size_t>(fit)];
  if (opts.k > C) throw ConfigError("k=" + std::to_string(opts.k) + " exceeds the " + std::to_string(C) + " channels of " + opts.layer_name);
  if (opts.n_samples < 1) throw ConfigError("n_samples must be positive");

  auto capture_sample = [&](int i) {
    const std::uint64_t s = derive_seed(seed, "cluster", static_cast<std::uint64_t>(i));
    ActivationCapture cap;
    cap.block_name = opts.layer_name;
    g.synthesize(LatentW::broadcast(g.map_latent(sample_z(g.config().dim_z, s)), L), s, &cap);
    return cap;
  };

  const Index per = static_cast<Index>(g.config().block_resolution(fit)) * g.config().block_resolution(fit);
  MatrixXd all(per * opts.n_samples, C);
  for (int i = 0; i < opts.n_samples; ++i) all.middleRows(per * i, per) = spatial_vectors(capture_sample(i).activation);
  const MatrixXd points = normalize_rows(all);
  const KMeansResult km = spherical_kmeans(points, opts.k, derive_seed(seed, "kmeans"), opts.max_iterations);

  model.centroids = km.centroids;
  model.channel_membership = centroid_membership(km.centroids);
  model.objective = km.objective;
  model.reseeds = km.reseeds;
  model.n_samples = opts.n_samples;
  model.checkpoint_id = g.checkpoint_id();

  // Other layers: mean |activation| per cluster region, normalized per channel.
  std::vector<MatrixXd> mass(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) mass[static_cast<std::size_t>(l)] = MatrixXd::Zero(opts.k, g.config().channels[static_cast<std::size_t>(l)]);
  for (int i = 0; i < opts.n_samples; ++i) {
    const ActivationCapture cap = capture_sample(i);
    const std::vector<int> labels = model.assign(cap.activation);
    const int grid = grid_of(labels.size());
    for (int l = 0; l < L; ++l) {
      if (l == fit) continue;
      const MatrixXd v = spatial_vectors(cap.blocks[static_cast<std::size_t>(l)]);
      const int size = g.config().block_resolution(l);
      const std::vector<int> lab = resample_labels(labels, grid, size);
      MatrixXd sum = MatrixXd::Zero(opts.k, v.cols());
      Eigen::VectorXd count = Eigen::VectorXd::Zero(opts.k);
      for (Index p = 0; p < v.rows(); ++p) {
        sum.row(lab[static_cast<std::size_t>(p)]) += v.row(p).cwiseAbs();
        count[lab[static_cast<std::size_t>(p)]] += 1;
      }
      for (int j = 0; j < opts.k; ++j)
        if (count[j] > 0) mass[static_cast<std::size_t>(l)].row(j) += sum.row(j) / count[j];
    }
  }
  model.layer_membership.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l)
    model.layer_membership[static_cast<std::size_t>(l)] = l == fit ? model.channel_membership : centroid_membership(mass[static_cast<std::size_t>(l)]);
  return model;
}

const VectorXd& QueryMatrix::fit_gate(const ClusterModel& model) const {
  return q.at(static_cast<std::size_t>(model.fit_layer(static_cast<int>(q.size()))));
}

QueryMatrix QueryMatrix::constant(const ClusterModel& model, double value) {
  QueryMatrix out;
  for (const auto& m : model.layer_membership) out.q.push_back(VectorXd::Constant(m.cols(), value));
  return out;
}

QueryMatrix build_query(const ClusterModel& model, int cluster, double epsilon, double theta) {
  if (cluster < 0 || cluster >= model.k) throw NotFoundError("cluster " + std::to_string(cluster) + " does not exist");
  if (!std::isfinite(epsilon) || !std::isfinite(theta) || theta <= 0 || theta >= 1)
    throw ConfigError("epsilon must be finite and theta must lie in (0,1)");
  QueryMatrix out;
  out.cluster = cluster;
  out.epsilon = epsilon;
  out.theta = theta;
  out.rho = theta / (1.0 - theta);
  if (epsilon < 20 || epsilon > 100) out.warning = "epsilon " + std::to_string(epsilon) + " is outside the tuned range [20, 100]";
  for (const auto& m : model.layer_membership) {
    VectorXd q(m.cols());
    for (Index c = 0; c < m.cols(); ++c) q[c] = 1.0 / (1.0 + std::exp(-epsilon * (m(cluster, c) - theta)));
    out.q.push_back(q);
  }
  return out;
}

StyleSet interpolate_styles(const StyleSet& target, const StyleSet& reference, const QueryMatrix& query) {
  if (target.layers.size() != reference.layers.size() || target.layers.size() != query.q.size())
    throw DimensionError("style sets and query disagree on the number of layers");
  StyleSet out = target;
  for (std::size_t l = 0; l < target.layers.size(); ++l) {
    const VectorXd& q = query.q[l];
    const Index C = q.size();
    if (target.layers[l].size() != 2 * C || reference.layers[l].size() != 2 * C)
      throw DimensionError("style layer " + std::to_string(l) + " does not match the query width");
    for (Index i = 0; i < 2 * C; ++i) {
      const double g = q[i % C];
      out.layers[l][i] = (1.0 - g) * target.layers[l][i] + g * reference.layers[l][i];
    }
  }
  return out;
}

Tensor cluster_mask(const std::vector<int>& labels, int grid, int cluster, int size) {
  const std::vector<int> up = resample_labels(labels, grid, size);
  Tensor mask(Shape{1, size, size});
  for (std::size_t i = 0; i < up.size(); ++i) mask.storage()[i] = up[i] == cluster ? 1.0 : 0.0;
  return mask;
}

LocalEditResult local_edit(const Generator& g, const ClusterModel& model, const QueryMatrix& query,
                           const LatentRecord& target, const LatentRecord& reference) {
  const std::string id = g.checkpoint_id();
  if (target.checkpoint_id != reference.checkpoint_id)
    throw ProvenanceError("target and reference come from different checkpoints");
  if (target.checkpoint_id != id || model.checkpoint_id != id)
    throw ProvenanceError("latents or cluster model do not belong to the loaded checkpoint " + id);
  const int L = g.config().num_blocks();
  const LatentW ws = LatentW::broadcast(target.w, L), wr = LatentW::broadcast(reference.w, L);

  ActivationCapture cap_s, cap_r;
  cap_s.block_name = cap_r.block_name = model.layer_name;
  g.synthesize(ws, target.noise_seed, &cap_s);
  g.synthesize(wr, reference.noise_seed, &cap_r);

  LocalEditResult out;
  out.image = g.synthesize_styles(interpolate_styles(cap_s.styles, cap_r.styles, query), target.noise_seed);
  const int size = g.config().resolution();
  const std::vector<int> ls = model.assign(cap_s.activation), lr = model.assign(cap_r.activation);
  const int grid = grid_of(ls.size());
  out.mask = cluster_mask(ls, grid, query.cluster, size);
  const Tensor mr = cluster_mask(lr, grid, query.cluster, size);
  for (std::size_t i = 0; i < out.mask.storage().size(); ++i) out.mask.storage()[i] = std::max(out.mask.storage()[i], mr.values()[i]);
  return out;
}

nlohmann::json cluster_summary(const ClusterModel& model) {
  nlohmann::json clusters = nlohmann::json::array();
  for (int j = 0; j < model.k; ++j) {
    int strong = 0;
    for (Index c = 0; c < model.channel_membership.cols(); ++c) strong += model.channel_membership(j, c) > kDefaultTheta;
    clusters.push_back({{"id", j}, {"channels_above_threshold", strong}});
  }
  return {{"layer", model.layer_name}, {"k", model.k}, {"n_samples", model.n_samples}, {"checkpoint_id", model.checkpoint_id},
          {"clusters", clusters}};
}

}  // namespace mgan
