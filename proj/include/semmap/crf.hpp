#pragma once

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "semmap/core_types.hpp"
#include "semmap/gaussian_filter.hpp"
#include "semmap/superpixel.hpp"

namespace semmap {

enum class CliqueUpdateMode { Expectation, MapHardened };

struct HierarchyParams {
  // Cost k[y] paid by a child whose label differs from its clique's label y.
  // Empty means 1 for every label.
  std::vector<double> consistency_cost;
  KernelParams clique_kernel_params;
  bool use_free_label = false;
  double free_label_cost = 0.0;  // unary of the free clique label
  CliqueUpdateMode clique_update_mode = CliqueUpdateMode::Expectation;
  double damping = 0.0;  // Q <- (1 - damping) * Q_new + damping * Q_old

  double cost(int label) const { return consistency_cost.empty() ? 1.0 : consistency_cost[label]; }
};

/// Unaries, features and cliques of one CRF instance. Rows of
/// `node_unaries` are per-label costs.
struct CrfProblem {
  Eigen::MatrixXd node_unaries;  // N x L
  FeatureSet node_features;
  KernelParams kernel_params;
  CliqueSet cliques;
  HierarchyParams hierarchy;

  Eigen::Index node_count() const { return node_unaries.rows(); }
  int label_count() const { return static_cast<int>(node_unaries.cols()); }
  /// L, or L + 1 with the free label.
  int clique_label_count() const { return label_count() + (hierarchy.use_free_label ? 1 : 0); }
  bool has_cliques() const { return !cliques.empty(); }

  /// Throws ShapeError / FeatureError / ConfigError on an inconsistent problem.
  void validate() const;

  /// Clique unaries including the free-label column when enabled.
  Eigen::MatrixXd clique_unaries() const;
};

struct MarginalField {
  Eigen::MatrixXd q_nodes;    // N x L
  Eigen::MatrixXd q_cliques;  // N_c x L'
  int iteration = 0;
  double last_delta = 0.0;
};

struct IterationRecord {
  int iteration = 0;
  double energy = 0.0;  // of the MAP labeling after the iteration
  double delta = 0.0;
  double seconds = 0.0;
};

struct InferenceResult {
  MarginalField field;
  std::vector<IterationRecord> diagnostics;
};

/// Gaussian filters for the appearance and smoothness kernels over one
/// feature set, built once and reused across iterations.
class PairwiseFilters {
 public:
  PairwiseFilters(const FeatureSet& features, const KernelParams& params, FilterBackend backend);

  Eigen::Index point_count() const { return count_; }

  /// message[i,l] = sum_m w_m sum_{j != i} k_m(f_i, f_j) (1 - Q[j,l]),
  /// the expected Potts cost of label l at node i.
  Eigen::MatrixXd message(const Eigen::Ref<const Eigen::MatrixXd>& q) const;

 private:
  Eigen::Index count_ = 0;
  double w_appearance_ = 0.0;
  double w_smoothness_ = 0.0;
  std::unique_ptr<GaussianFilter> appearance_;
  std::unique_ptr<GaussianFilter> smoothness_;
};

/// Features scaled to unit bandwidth: [p / theta_alpha, c / theta_beta].
Eigen::MatrixXd appearance_features(const FeatureSet& features, const KernelParams& params);
/// [p / theta_gamma].
Eigen::MatrixXd smoothness_features(const FeatureSet& features, const KernelParams& params);

/// Q_nodes = softmax(-node unary), Q_cliques = softmax(-clique unary).
MarginalField init_marginals(const CrfProblem& problem);

/// Mean-field engine holding the filters of one problem. Keeps a reference
/// to `problem`, which must outlive the solver.
class MeanFieldSolver {
 public:
  MeanFieldSolver(const CrfProblem& problem, FilterBackend backend);

  const CrfProblem& problem() const { return problem_; }

  /// New clique marginals from the previous clique and node marginals.
  Eigen::MatrixXd update_cliques(const MarginalField& field) const;
  /// New node marginals from the previous node marginals and `q_cliques`
  /// (the clique marginals of the current iteration).
  Eigen::MatrixXd update_nodes(const MarginalField& field, const Eigen::Ref<const Eigen::MatrixXd>& q_cliques) const;
  /// One full iteration: cliques, then nodes.
  void step(MarginalField& field) const;

  /// Energy of the MAP labeling of `field`, pairwise terms evaluated through
  /// the filters (exact with the ExactSum backend).
  double map_energy(const MarginalField& field) const;

 private:
  const CrfProblem& problem_;
  Eigen::MatrixXd clique_unaries_;
  PairwiseFilters node_filters_;
  std::optional<PairwiseFilters> clique_filters_;
};

/// Iterates until the largest change of any marginal falls below
/// `convergence_delta` or `max_iterations` is reached.
InferenceResult infer(const CrfProblem& problem, int max_iterations, double convergence_delta,
                      FilterBackend backend = FilterBackend::Lattice);

/// Energy of a labeling with exact O(N^2) pairwise sums. Without
/// `clique_labels`, each clique takes its own cheapest label; clique-clique
/// terms are then evaluated at those labels.
double energy(const CrfProblem& problem, std::span<const LabelId> labeling,
              std::optional<std::span<const LabelId>> clique_labels = std::nullopt);

/// Cost of clique c at clique label y given the node labeling: clique unary
/// plus consistency penalties of its children.
double clique_cost(const CrfProblem& problem, std::size_t c, LabelId y, std::span<const LabelId> labeling);

/// Row-wise argmax.
std::vector<LabelId> map_labels(const Eigen::Ref<const Eigen::MatrixXd>& q);

/// Direct double-loop evaluation of one clique update followed by one node
/// update with exact kernels. Throws OracleSizeError above 4096 nodes.
MarginalField naive_reference_update(const CrfProblem& problem, const MarginalField& field);

inline constexpr Eigen::Index kNaiveNodeLimit = 4096;

}  // namespace semmap
