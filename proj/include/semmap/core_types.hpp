#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "semmap/errors.hpp"

namespace semmap {

/// Probabilities below this are clamped before taking logarithms or
/// multiplying into a fused distribution.
inline constexpr double kProbabilityFloor = 1e-8;

using LabelId = int;

/// Normalized, non-negative probability vector over the label set.
class LabelDistribution {
 public:
  LabelDistribution() = default;

  std::size_t size() const { return probs_.size(); }
  double operator[](std::size_t l) const { return probs_[l]; }
  std::span<const double> probs() const { return probs_; }
  LabelId argmax() const;

  bool operator==(const LabelDistribution&) const = default;

 private:
  friend LabelDistribution normalize(std::span<const double> raw);
  explicit LabelDistribution(std::vector<double> probs) : probs_(std::move(probs)) {}

  std::vector<double> probs_;
};

/// Scales a non-negative vector to unit sum. Throws InvalidDistribution on an
/// empty, all-zero, negative or non-finite input.
LabelDistribution normalize(std::span<const double> raw);

/// Uniform distribution over `label_count` labels.
LabelDistribution uniform_distribution(std::size_t label_count);

/// Unary cost -log(max(p, epsilon)) per label.
std::vector<double> neg_log(const LabelDistribution& dist, double epsilon = kProbabilityFloor);

/// Rigid world-from-camera transform.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  /// Throws PoseError unless finite, orthonormal and right-handed within 1e-6.
  void validate() const;

  Eigen::Vector3d to_world(const Eigen::Vector3d& p_camera) const { return rotation * p_camera + translation; }
  Eigen::Vector3d to_camera(const Eigen::Vector3d& p_world) const {
    return rotation.transpose() * (p_world - translation);
  }
  const Eigen::Vector3d& camera_center() const { return translation; }
};

/// Pinhole model with a stereo baseline. Pixel (u, v) has its center at
/// integer coordinates.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double baseline = 0.0;
  int width = 0;
  int height = 0;

  void validate() const;

  Eigen::Vector3d back_project(double u, double v, double depth) const {
    return {(u - cx) * depth / fx, (v - cy) * depth / fy, depth};
  }
  Eigen::Vector2d project(const Eigen::Vector3d& p_camera) const {
    return {fx * p_camera.x() / p_camera.z() + cx, fy * p_camera.y() / p_camera.z() + cy};
  }
  double disparity_to_depth(double disparity) const { return fx * baseline / disparity; }
};

/// Position + color of a single CRF node.
struct FeatureVector {
  Eigen::VectorXd position;
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

/// Features of a whole node set, one row per node. Positions are meters for
/// grid cells and pixels for image nodes; colors are RGB in [0, 255].
struct FeatureSet {
  Eigen::MatrixXd positions;
  Eigen::MatrixXd colors;

  Eigen::Index size() const { return positions.rows(); }
  Eigen::Index position_dim() const { return positions.cols(); }
  FeatureVector row(Eigen::Index i) const { return {positions.row(i).transpose(), colors.row(i).transpose()}; }

  /// Throws FeatureError on row-count mismatch, wrong color width or
  /// non-finite entries.
  void validate() const;
};

/// Weights and bandwidths of the appearance and smoothness Gaussian kernels.
struct KernelParams {
  double w1 = 5.0;           // appearance weight
  double w2 = 3.0;           // smoothness weight
  double theta_alpha = 0.5;  // appearance, position bandwidth
  double theta_beta = 10.0;  // appearance, color bandwidth
  double theta_gamma = 0.3;  // smoothness, position bandwidth

  /// Bandwidths must be positive and weights non-negative. Both weights may
  /// be zero, which disables the pairwise term.
  void validate() const;
  bool active() const { return w1 > 0.0 || w2 > 0.0; }

  static KernelParams defaults_3d() { return {}; }
  static KernelParams defaults_2d() { return {5.0, 3.0, 60.0, 10.0, 3.0}; }
};

/// Kernel value w1*k_appearance + w2*k_smoothness between two feature rows.
double kernel_value(const KernelParams& params, const FeatureVector& a, const FeatureVector& b);

/// Softmax of the negated costs, i.e. exp(-cost) normalized.
Eigen::VectorXd softmax_neg(const Eigen::Ref<const Eigen::VectorXd>& costs);

}  // namespace semmap
