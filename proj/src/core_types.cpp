#include "semmap/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <Eigen/LU>

namespace semmap {

LabelId LabelDistribution::argmax() const {
  return static_cast<LabelId>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
}

LabelDistribution normalize(std::span<const double> raw) {
  if (raw.empty()) throw InvalidDistribution("empty label distribution");
  double sum = 0.0;
  for (double p : raw) {
    if (!std::isfinite(p) || p < 0.0) throw InvalidDistribution("negative or non-finite probability");
    sum += p;
  }
  if (!(sum > 0.0)) throw InvalidDistribution("label distribution sums to zero");
  std::vector<double> probs(raw.begin(), raw.end());
  for (double& p : probs) p /= sum;
  return LabelDistribution(std::move(probs));
}

LabelDistribution uniform_distribution(std::size_t label_count) {
  std::vector<double> ones(label_count, 1.0);
  return normalize(ones);
}

std::vector<double> neg_log(const LabelDistribution& dist, double epsilon) {
  std::vector<double> cost(dist.size());
  for (std::size_t l = 0; l < dist.size(); ++l) cost[l] = -std::log(std::max(dist[l], epsilon));
  return cost;
}

void Pose::validate() const {
  if (!rotation.allFinite() || !translation.allFinite()) throw PoseError("pose contains non-finite values");
  const double ortho_err = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  if (ortho_err > 1e-6) throw PoseError("rotation is not orthonormal");
  if (std::abs(rotation.determinant() - 1.0) > 1e-6) throw PoseError("rotation determinant is not +1");
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw ConfigError("focal lengths must be positive");
  if (!(baseline > 0.0)) throw ConfigError("baseline must be positive");
  if (width <= 0 || height <= 0) throw ConfigError("image size must be positive");
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) throw ConfigError("principal point outside the image");
}

void FeatureSet::validate() const {
  if (colors.rows() != positions.rows()) throw FeatureError("position and color row counts differ");
  if (colors.cols() != 3) throw FeatureError("colors must have three channels");
  if (!positions.allFinite() || !colors.allFinite()) throw FeatureError("non-finite feature values");
}

void KernelParams::validate() const {
  if (!(theta_alpha > 0.0) || !(theta_beta > 0.0) || !(theta_gamma > 0.0))
    throw ConfigError("kernel bandwidths must be positive");
  if (!(w1 >= 0.0) || !(w2 >= 0.0)) throw ConfigError("kernel weights must be non-negative");
}

double kernel_value(const KernelParams& params, const FeatureVector& a, const FeatureVector& b) {
  const double dp2 = (a.position - b.position).squaredNorm();
  const double dc2 = (a.color - b.color).squaredNorm();
  const double appearance =
      std::exp(-dp2 / (2.0 * params.theta_alpha * params.theta_alpha) - dc2 / (2.0 * params.theta_beta * params.theta_beta));
  const double smoothness = std::exp(-dp2 / (2.0 * params.theta_gamma * params.theta_gamma));
  return params.w1 * appearance + params.w2 * smoothness;
}

Eigen::VectorXd softmax_neg(const Eigen::Ref<const Eigen::VectorXd>& costs) {
  const double lowest = costs.minCoeff();
  Eigen::VectorXd q = (-(costs.array() - lowest)).exp().matrix();
  return q / q.sum();
}

}  // namespace semmap
