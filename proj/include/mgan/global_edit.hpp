#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "mgan/generator.hpp"

namespace mgan {

/// Orthonormal principal directions of the intermediate latent space.
struct EditBasis {
  Eigen::MatrixXd components;  // dim_w x n_components, columns by descending variance
  VectorXd explained_variance;
  VectorXd mean;
  int n_samples = 0;
  std::string checkpoint_id;

  int size() const { return static_cast<int>(components.cols()); }
  double sigma(int k) const;
};

/// PCA of the rows of `samples` (n x d). Column signs are fixed so that each
/// column's largest-magnitude entry is positive.
EditBasis fit_basis_from_samples(const Eigen::MatrixXd& samples, int n_components);

/// Samples n_samples z, maps them to w and fits the basis.
EditBasis fit_basis(const Generator& g, int n_samples, int n_components, std::uint64_t seed);

inline int default_components(int dim_w) { return std::min(100, dim_w); }

/// Half-open range of synthesis blocks [begin, end).
struct LayerRange {
  int begin = 0;
  int end = 0;

  static LayerRange all(int num_blocks) { return {0, num_blocks}; }
  static LayerRange parse(const std::string& text, int num_blocks);  // "A..B"
  bool contains(int block) const { return block >= begin && block < end; }
};

/// Sparse PCA coordinates x plus the blocks that receive w + Vx.
struct GlobalEdit {
  std::vector<std::pair<int, double>> coordinates;
  LayerRange layers;
  /// Coordinates are multiples of sigma_k = sqrt(explained_variance[k]).
  bool sigma_units = true;

  /// Coordinate-wise sum; both edits must share layers and units.
  static GlobalEdit compose(const GlobalEdit& a, const GlobalEdit& b);
};

/// V x as a dim_w vector.
VectorXd edit_offset(const EditBasis& basis, const GlobalEdit& edit);

/// w' = w + Vx on blocks inside edit.layers, the original w elsewhere.
LatentW apply_edit(const VectorXd& w, const EditBasis& basis, const GlobalEdit& edit, int num_blocks);
/// Same, applied on top of existing per-layer latents.
LatentW apply_edit(const LatentW& w, const EditBasis& basis, const GlobalEdit& edit);
/// Provenance-checked form for sampled records.
LatentW apply_edit(const LatentRecord& record, const EditBasis& basis, const GlobalEdit& edit, int num_blocks);

/// One image per value along component k, all with the record's noise seed.
std::vector<Tensor> component_sweep(const Generator& g, const LatentRecord& record, const EditBasis& basis, int component,
                                    const std::vector<double>& values, LayerRange layers);

nlohmann::json to_json(const GlobalEdit& e);
GlobalEdit global_edit_from_json(const nlohmann::json& j);

}  // namespace mgan
