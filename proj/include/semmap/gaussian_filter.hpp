#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "semmap/errors.hpp"

namespace semmap {

enum class FilterBackend { Lattice, ExactSum };

/// Linear operator approximating out[i] = sum_j exp(-|f_i - f_j|^2 / 2) * values[j]
/// over a fixed point set. Features are pre-divided by their bandwidths, so
/// the kernel is isotropic with unit variance. The j == i term is included;
/// self_response() is its coefficient, which callers subtract to get the
/// sum over j != i.
class GaussianFilter {
 public:
  virtual ~GaussianFilter() = default;

  virtual Eigen::Index point_count() const = 0;
  virtual Eigen::MatrixXd filter(const Eigen::Ref<const Eigen::MatrixXd>& values) const = 0;
  double self_response() const { return 1.0; }
};

/// Brute-force O(N^2) summation. Reference oracle for the lattice and the
/// ExactSum inference backend.
class ExactGaussianFilter final : public GaussianFilter {
 public:
  explicit ExactGaussianFilter(Eigen::MatrixXd features);

  Eigen::Index point_count() const override { return features_.rows(); }
  Eigen::MatrixXd filter(const Eigen::Ref<const Eigen::MatrixXd>& values) const override;

 private:
  Eigen::MatrixXd features_;
};

/// Permutohedral lattice (splat, blur along the d+1 lattice directions,
/// slice). The blur averages forward and reverse pass orders so the induced
/// operator is exactly symmetric. Each point's own contribution through the
/// lattice is computed in closed form and replaced by the exact kernel value
/// 1, and the remaining cross terms are scaled by a single gain calibrated at
/// build time from the all-ones response against exact sums on a fixed
/// subsample of points.
class PermutohedralLattice final : public GaussianFilter {
 public:
  /// Throws FeatureError on empty or non-finite features.
  static PermutohedralLattice build(const Eigen::Ref<const Eigen::MatrixXd>& features);

  Eigen::Index point_count() const override { return point_count_; }
  Eigen::MatrixXd filter(const Eigen::Ref<const Eigen::MatrixXd>& values) const override;

  int feature_dim() const { return dim_; }
  std::size_t vertex_count() const { return vertex_count_; }
  double gain() const { return gain_; }

  /// Lattice vertex slots and barycentric weights of point i (d+1 each).
  std::vector<std::int32_t> vertices_of(Eigen::Index i) const;
  std::vector<double> weights_of(Eigen::Index i) const;

  /// Raw lattice response of point i to its own unit mass.
  double lattice_self_response(Eigen::Index i) const { return lattice_self_[i]; }

  /// Uncalibrated splat-blur-slice output, exposed for diagnostics.
  Eigen::MatrixXd raw_filter(const Eigen::Ref<const Eigen::MatrixXd>& values) const;

 private:
  PermutohedralLattice() = default;
  double path_weight(std::int32_t source, const std::vector<int>& steps) const;
  void compute_self_responses();
  void calibrate(const Eigen::Ref<const Eigen::MatrixXd>& features);

  int dim_ = 0;
  Eigen::Index point_count_ = 0;
  std::size_t vertex_count_ = 0;
  std::vector<std::int32_t> offsets_;    // N x (d+1) vertex slots
  std::vector<double> barycentric_;      // N x (d+1)
  std::vector<std::int8_t> step_dir_;    // N x (d+1): direction from vertex r to r+1
  // neighbors_[(j * M + v) * 2 + {0,1}]: slot of v - s_j / v + s_j, M if absent.
  std::vector<std::int32_t> neighbors_;
  std::vector<double> lattice_self_;
  double alpha_ = 1.0;
  double gain_ = 1.0;
};

std::unique_ptr<GaussianFilter> make_filter(FilterBackend backend, const Eigen::Ref<const Eigen::MatrixXd>& features);

}  // namespace semmap
