#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "mgan/generator.hpp"

namespace mgan {

struct KMeansResult {
  Eigen::MatrixXd centroids;  // k x C, unit rows
  std::vector<int> assignment;
  /// Sum of cosine similarities to the assigned centroid, one entry per assignment pass.
  std::vector<double> objective;
  int iterations = 0;
  int reseeds = 0;
};

/// Spherical k-means over the unit rows of `points`. Seeding is k-means++ on
/// cosine distance; an empty cluster is re-seeded from the worst-served point.
KMeansResult spherical_kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed, int max_iterations = 200);

/// Rows scaled to unit L2 norm; zero rows are dropped.
Eigen::MatrixXd normalize_rows(const Eigen::MatrixXd& m);

struct ClusterModel {
  std::string layer_name = "block1";
  int k = 10;
  Eigen::MatrixXd centroids;           // k x C at the fit layer
  Eigen::MatrixXd channel_membership;  // k x C, columns sum to one
  /// k x C_l memberships for every synthesis block (the fit layer's entry
  /// equals channel_membership).
  std::vector<Eigen::MatrixXd> layer_membership;
  int n_samples = 0;
  std::string checkpoint_id;
  std::vector<double> objective;
  int reseeds = 0;

  int fit_layer(int num_blocks) const { return block_index(layer_name, num_blocks); }
  /// Nearest-centroid labels of a [C,H,W] (or [1,C,H,W]) activation, row-major H x W.
  std::vector<int> assign(const Tensor& activation) const;
};

/// Column-normalized |centroid| entries.
Eigen::MatrixXd centroid_membership(const Eigen::MatrixXd& centroids);

struct ClusterOptions {
  int n_samples = 1000;
  int k = 10;
  std::string layer_name = "block1";
  int max_iterations = 200;
};

ClusterModel fit_clusters(const Generator& g, const ClusterOptions& opts, std::uint64_t seed);

constexpr double kDefaultTheta = 0.1;

struct QueryMatrix {
  int cluster = 0;
  double rho = kDefaultTheta / (1.0 - kDefaultTheta);
  double theta = kDefaultTheta;
  double epsilon = 50.0;
  /// Diagonal gate per synthesis block, one entry per channel.
  std::vector<VectorXd> q;
  /// Non-empty when epsilon lies outside the tuned range [20, 100].
  std::string warning;

  /// Gate of the fit layer.
  const VectorXd& fit_gate(const ClusterModel& model) const;
  static QueryMatrix constant(const ClusterModel& model, double value);
};

QueryMatrix build_query(const ClusterModel& model, int cluster, double epsilon, double theta = kDefaultTheta);

/// (1 - q) * s + q * r per channel, applied to both the scale and the shift half.
StyleSet interpolate_styles(const StyleSet& target, const StyleSet& reference, const QueryMatrix& query);

struct LocalEditResult {
  Tensor image;  // [1,S,S]
  Tensor mask;   // [1,S,S] in {0,1}: the cluster on either target or reference
};

/// Labels upsampled (nearest) to an S x S mask of `cluster`.
Tensor cluster_mask(const std::vector<int>& labels, int grid, int cluster, int size);

LocalEditResult local_edit(const Generator& g, const ClusterModel& model, const QueryMatrix& query,
                           const LatentRecord& target, const LatentRecord& reference);

nlohmann::json cluster_summary(const ClusterModel& model);

}  // namespace mgan
