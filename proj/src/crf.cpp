#include "semmap/crf.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace semmap {
namespace {

void softmax_rows(Eigen::MatrixXd& exponent) {
  for (Eigen::Index i = 0; i < exponent.rows(); ++i) {
    const double top = exponent.row(i).maxCoeff();
    exponent.row(i) = (exponent.row(i).array() - top).exp();
    exponent.row(i) /= exponent.row(i).sum();
  }
}

void damp(Eigen::MatrixXd& fresh, const Eigen::MatrixXd& old, double damping) {
  if (damping > 0.0) fresh = (1.0 - damping) * fresh + damping * old;
}

Eigen::MatrixXd one_hot(std::span<const LabelId> labels, int width) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), width);
  for (std::size_t i = 0; i < labels.size(); ++i) x(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return x;
}

// Both kernels between rows i and j without allocating.
double pair_kernel(const KernelParams& params, const FeatureSet& f, Eigen::Index i, Eigen::Index j) {
  const double dp2 = (f.positions.row(i) - f.positions.row(j)).squaredNorm();
  const double dc2 = (f.colors.row(i) - f.colors.row(j)).squaredNorm();
  double k = 0.0;
  if (params.w1 > 0.0)
    k += params.w1 * std::exp(-dp2 / (2.0 * params.theta_alpha * params.theta_alpha) -
                              dc2 / (2.0 * params.theta_beta * params.theta_beta));
  if (params.w2 > 0.0) k += params.w2 * std::exp(-dp2 / (2.0 * params.theta_gamma * params.theta_gamma));
  return k;
}

// Exact Potts pairwise energy over all unordered pairs.
double exact_pairwise_energy(const KernelParams& params, const FeatureSet& f, std::span<const LabelId> labels) {
  if (!params.active()) return 0.0;
  double e = 0.0;
  const auto n = static_cast<Eigen::Index>(labels.size());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      if (labels[i] != labels[j]) e += pair_kernel(params, f, i, j);
  return e;
}

LabelId row_argmax(const Eigen::Ref<const Eigen::MatrixXd>& q, Eigen::Index row) {
  Eigen::Index best = 0;
  q.row(row).maxCoeff(&best);
  return static_cast<LabelId>(best);
}

}  // namespace

void CrfProblem::validate() const {
  const Eigen::Index n = node_count();
  if (label_count() < 1) throw ShapeError("at least one label is required");
  if (!node_unaries.allFinite()) throw ShapeError("node unaries must be finite");
  node_features.validate();
  if (node_features.size() != n) throw FeatureError("feature count differs from node count");
  kernel_params.validate();
  cliques.validate(static_cast<std::size_t>(n), label_count());
  if (!cliques.unaries.allFinite()) throw ShapeError("clique unaries must be finite");
  if (has_cliques()) cliques.features.validate();

  const auto& h = hierarchy;
  if (!h.consistency_cost.empty()) {
    if (static_cast<int>(h.consistency_cost.size()) != label_count())
      throw ConfigError("consistency_cost needs one entry per label");
    for (double k : h.consistency_cost)
      if (!(k > 0.0) || !std::isfinite(k)) throw ConfigError("consistency costs must be positive and finite");
  }
  h.clique_kernel_params.validate();
  if (!(h.damping >= 0.0 && h.damping < 1.0)) throw ConfigError("damping must lie in [0, 1)");
  if (h.use_free_label) {
    if (!std::isfinite(h.free_label_cost)) throw ConfigError("free label cost must be finite");
    if (has_cliques() && !(h.free_label_cost > cliques.unaries.maxCoeff()))
      throw ConfigError("free label cost must exceed every clique unary");
  }
}

Eigen::MatrixXd CrfProblem::clique_unaries() const {
  const Eigen::Index nc = static_cast<Eigen::Index>(cliques.size());
  Eigen::MatrixXd u(nc, clique_label_count());
  if (nc == 0) return u;
  u.leftCols(label_count()) = cliques.unaries;
  if (hierarchy.use_free_label) u.col(label_count()).setConstant(hierarchy.free_label_cost);
  return u;
}

Eigen::MatrixXd appearance_features(const FeatureSet& features, const KernelParams& params) {
  Eigen::MatrixXd f(features.size(), features.position_dim() + 3);
  f.leftCols(features.position_dim()) = features.positions / params.theta_alpha;
  f.rightCols(3) = features.colors / params.theta_beta;
  return f;
}

Eigen::MatrixXd smoothness_features(const FeatureSet& features, const KernelParams& params) {
  return features.positions / params.theta_gamma;
}

PairwiseFilters::PairwiseFilters(const FeatureSet& features, const KernelParams& params, FilterBackend backend)
    : count_(features.size()), w_appearance_(params.w1), w_smoothness_(params.w2) {
  if (count_ < 2) return;  // no neighbors, no message
  if (w_appearance_ > 0.0) appearance_ = make_filter(backend, appearance_features(features, params));
  if (w_smoothness_ > 0.0 && features.position_dim() > 0)
    smoothness_ = make_filter(backend, smoothness_features(features, params));
  else if (w_smoothness_ > 0.0)
    smoothness_ = make_filter(backend, Eigen::MatrixXd::Zero(count_, 1));
}

Eigen::MatrixXd PairwiseFilters::message(const Eigen::Ref<const Eigen::MatrixXd>& q) const {
  if (q.rows() != count_) throw FilterShapeError("marginal rows do not match the filtered point count");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(q.rows(), q.cols());
  auto add = [&](const GaussianFilter* filter, double weight) {
    if (!filter) return;
    Eigen::MatrixXd g = filter->filter(q);
    g -= filter->self_response() * q;
    const Eigen::VectorXd total = g.rowwise().sum();
    out += weight * ((-g).colwise() + total);
  };
  add(appearance_.get(), w_appearance_);
  add(smoothness_.get(), w_smoothness_);
  return out;
}

MarginalField init_marginals(const CrfProblem& problem) {
  MarginalField field;
  field.q_nodes = problem.node_unaries;
  field.q_nodes *= -1.0;
  softmax_rows(field.q_nodes);
  field.q_cliques = problem.clique_unaries();
  field.q_cliques *= -1.0;
  softmax_rows(field.q_cliques);
  return field;
}

MeanFieldSolver::MeanFieldSolver(const CrfProblem& problem, FilterBackend backend)
    : problem_(problem),
      clique_unaries_(problem.clique_unaries()),
      node_filters_(problem.node_features, problem.kernel_params, backend) {
  if (problem.has_cliques()) clique_filters_.emplace(problem.cliques.features, problem.hierarchy.clique_kernel_params, backend);
}

Eigen::MatrixXd MeanFieldSolver::update_cliques(const MarginalField& field) const {
  const CrfProblem& p = problem_;
  const int labels = p.label_count();
  Eigen::MatrixXd exponent = -clique_unaries_;
  if (!p.has_cliques()) return exponent;
  exponent -= clique_filters_->message(field.q_cliques);
  for (std::size_t c = 0; c < p.cliques.size(); ++c) {
    const auto& members = p.cliques.members[c];
    for (int y = 0; y < labels; ++y) {
      double mismatch = 0.0;
      for (std::int32_t i : members) mismatch += field.q_nodes.row(i).sum() - field.q_nodes(i, y);
      exponent(static_cast<Eigen::Index>(c), y) -= p.hierarchy.cost(y) * mismatch;
    }
  }
  softmax_rows(exponent);
  damp(exponent, field.q_cliques, p.hierarchy.damping);
  return exponent;
}

Eigen::MatrixXd MeanFieldSolver::update_nodes(const MarginalField& field,
                                              const Eigen::Ref<const Eigen::MatrixXd>& q_cliques) const {
  const CrfProblem& p = problem_;
  const int labels = p.label_count();
  Eigen::MatrixXd exponent = -p.node_unaries - node_filters_.message(field.q_nodes);
  if (p.has_cliques()) {
    // Per-clique expected penalty for each child label.
    Eigen::MatrixXd penalty = Eigen::MatrixXd::Zero(q_cliques.rows(), labels);
    for (Eigen::Index c = 0; c < q_cliques.rows(); ++c) {
      if (p.hierarchy.clique_update_mode == CliqueUpdateMode::MapHardened) {
        const LabelId y = row_argmax(q_cliques, c);
        if (y >= labels) continue;  // free label: no penalty
        for (int l = 0; l < labels; ++l)
          if (l != y) penalty(c, l) = p.hierarchy.cost(y);
      } else {
        double total = 0.0;
        for (int y = 0; y < labels; ++y) total += q_cliques(c, y) * p.hierarchy.cost(y);
        for (int l = 0; l < labels; ++l) penalty(c, l) = total - q_cliques(c, l) * p.hierarchy.cost(l);
      }
    }
    for (Eigen::Index i = 0; i < exponent.rows(); ++i) {
      const std::int32_t c = p.cliques.node_to_clique[i];
      if (c >= 0) exponent.row(i) -= penalty.row(c);
    }
  }
  softmax_rows(exponent);
  damp(exponent, field.q_nodes, p.hierarchy.damping);
  return exponent;
}

void MeanFieldSolver::step(MarginalField& field) const {
  Eigen::MatrixXd qc = problem_.has_cliques() ? update_cliques(field) : field.q_cliques;
  Eigen::MatrixXd qn = update_nodes(field, qc);
  double delta = qn.size() ? (qn - field.q_nodes).cwiseAbs().maxCoeff() : 0.0;
  if (qc.size()) delta = std::max(delta, (qc - field.q_cliques).cwiseAbs().maxCoeff());
  field.q_nodes = std::move(qn);
  field.q_cliques = std::move(qc);
  field.last_delta = delta;
  ++field.iteration;
}

double MeanFieldSolver::map_energy(const MarginalField& field) const {
  const CrfProblem& p = problem_;
  const std::vector<LabelId> x = map_labels(field.q_nodes);
  double e = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) e += p.node_unaries(static_cast<Eigen::Index>(i), x[i]);
  if (x.size() > 1 && p.kernel_params.active()) {
    const Eigen::MatrixXd msg = node_filters_.message(one_hot(x, p.label_count()));
    double pair = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) pair += msg(static_cast<Eigen::Index>(i), x[i]);
    e += 0.5 * pair;
  }
  if (!p.has_cliques()) return e;
  std::vector<LabelId> y(p.cliques.size());
  for (std::size_t c = 0; c < y.size(); ++c) {
    double best = std::numeric_limits<double>::infinity();
    for (int l = 0; l < p.clique_label_count(); ++l) {
      const double cost = clique_cost(p, c, l, x);
      if (cost < best) {
        best = cost;
        y[c] = l;
      }
    }
    e += best;
  }
  if (y.size() > 1 && p.hierarchy.clique_kernel_params.active()) {
    const Eigen::MatrixXd msg = clique_filters_->message(one_hot(y, p.clique_label_count()));
    double pair = 0.0;
    for (std::size_t c = 0; c < y.size(); ++c) pair += msg(static_cast<Eigen::Index>(c), y[c]);
    e += 0.5 * pair;
  }
  return e;
}

InferenceResult infer(const CrfProblem& problem, int max_iterations, double convergence_delta, FilterBackend backend) {
  if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
  problem.validate();
  using Clock = std::chrono::steady_clock;
  InferenceResult result;
  const auto start = Clock::now();
  const MeanFieldSolver solver(problem, backend);
  result.field = init_marginals(problem);
  for (int it = 1; it <= max_iterations; ++it) {
    solver.step(result.field);
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    result.diagnostics.push_back({it, solver.map_energy(result.field), result.field.last_delta, seconds});
    if (result.field.last_delta <= convergence_delta) break;
  }
  return result;
}

double clique_cost(const CrfProblem& problem, std::size_t c, LabelId y, std::span<const LabelId> labeling) {
  if (y >= problem.label_count()) return problem.hierarchy.free_label_cost;
  double cost = problem.cliques.unaries(static_cast<Eigen::Index>(c), y);
  std::size_t mismatched = 0;
  for (std::int32_t i : problem.cliques.members[c])
    if (labeling[i] != y) ++mismatched;
  return cost + problem.hierarchy.cost(y) * static_cast<double>(mismatched);
}

double energy(const CrfProblem& problem, std::span<const LabelId> labeling,
              std::optional<std::span<const LabelId>> clique_labels) {
  const Eigen::Index n = problem.node_count();
  if (static_cast<Eigen::Index>(labeling.size()) != n) throw ShapeError("labeling size differs from node count");
  for (LabelId l : labeling)
    if (l < 0 || l >= problem.label_count()) throw ShapeError("label out of range");
  double e = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) e += problem.node_unaries(i, labeling[i]);
  e += exact_pairwise_energy(problem.kernel_params, problem.node_features, labeling);
  if (!problem.has_cliques()) return e;

  const std::size_t nc = problem.cliques.size();
  std::vector<LabelId> y(nc);
  if (clique_labels) {
    if (clique_labels->size() != nc) throw ShapeError("clique labeling size differs from clique count");
    std::copy(clique_labels->begin(), clique_labels->end(), y.begin());
    for (LabelId l : y)
      if (l < 0 || l >= problem.clique_label_count()) throw ShapeError("clique label out of range");
    for (std::size_t c = 0; c < nc; ++c) e += clique_cost(problem, c, y[c], labeling);
  } else {
    for (std::size_t c = 0; c < nc; ++c) {
      double best = std::numeric_limits<double>::infinity();
      for (int l = 0; l < problem.clique_label_count(); ++l) {
        const double cost = clique_cost(problem, c, l, labeling);
        if (cost < best) {
          best = cost;
          y[c] = l;
        }
      }
      e += best;
    }
  }
  e += exact_pairwise_energy(problem.hierarchy.clique_kernel_params, problem.cliques.features, y);
  return e;
}

std::vector<LabelId> map_labels(const Eigen::Ref<const Eigen::MatrixXd>& q) {
  std::vector<LabelId> out(static_cast<std::size_t>(q.rows()));
  for (Eigen::Index i = 0; i < q.rows(); ++i) out[static_cast<std::size_t>(i)] = row_argmax(q, i);
  return out;
}

MarginalField naive_reference_update(const CrfProblem& problem, const MarginalField& field) {
  const Eigen::Index n = problem.node_count();
  if (n > kNaiveNodeLimit) throw OracleSizeError("naive reference update is limited to 4096 nodes");
  problem.validate();
  const int labels = problem.label_count();
  const int clique_labels = problem.clique_label_count();
  const auto nc = static_cast<Eigen::Index>(problem.cliques.size());
  const HierarchyParams& h = problem.hierarchy;

  // psi_ci(y, x): penalty between clique label y and child label x.
  auto psi_ci = [&](int y, int x) { return (y < labels && y != x) ? h.cost(y) : 0.0; };

  std::vector<FeatureVector> nodes(n), cliques(nc);
  for (Eigen::Index i = 0; i < n; ++i) nodes[i] = problem.node_features.row(i);
  for (Eigen::Index c = 0; c < nc; ++c) cliques[c] = problem.cliques.features.row(c);
  const Eigen::MatrixXd clique_unary = problem.clique_unaries();

  MarginalField next = field;
  for (Eigen::Index c = 0; c < nc; ++c) {
    Eigen::VectorXd cost(clique_labels);
    for (int y = 0; y < clique_labels; ++y) {
      double e = clique_unary(c, y);
      for (Eigen::Index d = 0; d < nc; ++d) {
        if (d == c) continue;
        const double k = kernel_value(h.clique_kernel_params, cliques[c], cliques[d]);
        for (int yd = 0; yd < clique_labels; ++yd)
          if (yd != y) e += field.q_cliques(d, yd) * k;
      }
      for (std::int32_t i : problem.cliques.members[c])
        for (int x = 0; x < labels; ++x) e += field.q_nodes(i, x) * psi_ci(y, x);
      cost[y] = e;
    }
    Eigen::VectorXd q = softmax_neg(cost);
    if (h.damping > 0.0) q = (1.0 - h.damping) * q + h.damping * field.q_cliques.row(c).transpose();
    next.q_cliques.row(c) = q.transpose();
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd cost(labels);
    const std::int32_t c = problem.cliques.node_to_clique.empty() ? -1 : problem.cliques.node_to_clique[i];
    for (int l = 0; l < labels; ++l) {
      double e = problem.node_unaries(i, l);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) continue;
        const double k = kernel_value(problem.kernel_params, nodes[i], nodes[j]);
        for (int lj = 0; lj < labels; ++lj)
          if (lj != l) e += field.q_nodes(j, lj) * k;
      }
      if (c >= 0) {
        if (h.clique_update_mode == CliqueUpdateMode::MapHardened) {
          e += psi_ci(row_argmax(next.q_cliques, c), l);
        } else {
          for (int y = 0; y < clique_labels; ++y) e += next.q_cliques(c, y) * psi_ci(y, l);
        }
      }
      cost[l] = e;
    }
    Eigen::VectorXd q = softmax_neg(cost);
    if (h.damping > 0.0) q = (1.0 - h.damping) * q + h.damping * field.q_nodes.row(i).transpose();
    next.q_nodes.row(i) = q.transpose();
  }

  double delta = n ? (next.q_nodes - field.q_nodes).cwiseAbs().maxCoeff() : 0.0;
  if (nc) delta = std::max(delta, (next.q_cliques - field.q_cliques).cwiseAbs().maxCoeff());
  next.last_delta = delta;
  ++next.iteration;
  return next;
}

}  // namespace semmap
