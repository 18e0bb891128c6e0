#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace fedlab {

// Denominators below this are reported as undefined rather than divided by.
inline constexpr double kGradFloor = 1e-12;

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm_sq(std::span<const double> a) { return dot(a, a); }

// Summary of one evaluation point: per-client full-batch gradients reduced
// to the dissimilarity ratio B = sqrt(E||g_k||^2 / ||g||^2) and the
// alignment ratio eps = g . E[g_k] / ||g||^2, both weighted by sample counts.
struct GradientStats {
  std::vector<double> mean_grad;
  double grad_norm_sq = 0.0;
  double expected_sq_norm = 0.0;
  double b_est = 0.0;
  bool b_defined = false;
  double eps_est = 0.0;
  bool eps_defined = false;
};

// The tightest eps satisfying g . m >= eps ||g||^2 at this point.
inline double alignment_ratio(std::span<const double> global_grad,
                              std::span<const double> mean_local_grad) {
  const double nsq = norm_sq(global_grad);
  if (nsq <= kGradFloor) {
    throw std::invalid_argument("alignment_ratio: gradient norm is degenerate");
  }
  return dot(global_grad, mean_local_grad) / nsq;
}

inline double dissimilarity_ratio(double expected_sq_norm, double grad_norm_sq) {
  if (grad_norm_sq <= kGradFloor) {
    throw std::invalid_argument("dissimilarity_ratio: gradient norm is degenerate");
  }
  return std::sqrt(expected_sq_norm / grad_norm_sq);
}

inline GradientStats gradient_stats(const std::vector<std::vector<double>>& grads,
                                    const std::vector<std::size_t>& counts) {
  if (grads.empty() || grads.size() != counts.size()) {
    throw std::invalid_argument("gradient_stats: need one count per gradient");
  }
  const std::size_t dim = grads.front().size();
  double total = 0.0;
  for (std::size_t n : counts) total += static_cast<double>(n);
  if (total <= 0.0) throw std::invalid_argument("gradient_stats: zero total weight");

  GradientStats out;
  out.mean_grad.assign(dim, 0.0);
  for (std::size_t k = 0; k < grads.size(); ++k) {
    if (grads[k].size() != dim) {
      throw std::invalid_argument("gradient_stats: gradient dimension mismatch");
    }
    const double w = static_cast<double>(counts[k]) / total;
    for (std::size_t i = 0; i < dim; ++i) out.mean_grad[i] += w * grads[k][i];
    out.expected_sq_norm += w * norm_sq(grads[k]);
  }
  out.grad_norm_sq = norm_sq(out.mean_grad);
  if (out.grad_norm_sq > kGradFloor) {
    out.b_est = dissimilarity_ratio(out.expected_sq_norm, out.grad_norm_sq);
    out.b_defined = true;
    // E[g_k] coincides with the global gradient here, making this an
    // identity check; the ratio form is kept so constructed gradients can
    // exercise the general formula.
    out.eps_est = alignment_ratio(out.mean_grad, out.mean_grad);
    out.eps_defined = true;
  }
  return out;
}

// One logged point of the training trajectory (scalars only; the vectors
// needed for smoothness estimation are kept separately).
struct TheoryPoint {
  double objective = 0.0;
  double grad_norm_sq = 0.0;
  double b_est = 0.0;
  bool b_defined = false;
  double eps_est = 0.0;
  bool eps_defined = false;
};

// Largest secant ratio ||g_a - g_b|| / ||w_a - w_b|| over consecutive logged
// points; a trajectory-local stand-in for the smoothness constant.
inline double estimate_smoothness(
    const std::vector<std::vector<double>>& params_trajectory,
    const std::vector<std::vector<double>>& grad_trajectory) {
  if (params_trajectory.size() != grad_trajectory.size()) {
    throw std::invalid_argument("estimate_smoothness: trajectory length mismatch");
  }
  double best = 0.0;
  for (std::size_t t = 0; t + 1 < params_trajectory.size(); ++t) {
    double dw = 0.0, dg = 0.0;
    const auto& w0 = params_trajectory[t];
    const auto& w1 = params_trajectory[t + 1];
    const auto& g0 = grad_trajectory[t];
    const auto& g1 = grad_trajectory[t + 1];
    for (std::size_t i = 0; i < w0.size(); ++i) {
      const double a = w1[i] - w0[i];
      const double b = g1[i] - g0[i];
      dw += a * a;
      dg += b * b;
    }
    if (dw > 1e-30) best = std::max(best, std::sqrt(dg / dw));
  }
  return best;
}

// Per-round verdict for the expected-decrease inequality
//   F(t) - F(t+1) >= rho * ||grad F(t)||^2,  rho = eta * (eps - L*eta*B^2/2).
struct TheoryRound {
  std::size_t round = 0;
  double grad_norm_sq = 0.0;
  double b_est = 0.0;
  double eps_est = 0.0;
  bool defined = false;       // start-point gradient was non-degenerate
  double rho = 0.0;
  bool vacuous = false;       // rho <= 0: step size too large for guarantee
  double decrease_observed = 0.0;
  double decrease_bound = 0.0;
  bool bound_satisfied = false;
  double delta_so_far = 0.0;  // F(0) minus best objective seen up to here
};

struct DescentSummary {
  std::vector<TheoryRound> rounds;
  double smoothness = 0.0;
  double aggregate_lhs = 0.0;   // (1/T) sum rho_t ||grad F(t)||^2
  double delta = 0.0;           // F(0) - best observed F
  bool aggregate_satisfied = false;
  std::size_t violations = 0;
  std::size_t vacuous_rounds = 0;
};

// Replays a logged trajectory against the per-round decrease bound and the
// aggregate inequality (1/T) sum rho ||grad F||^2 <= Delta. Best observed F
// substitutes for the unknown optimum, and rho <= 0 rounds are flagged
// vacuous instead of counted as violations.
inline DescentSummary descent_check(const std::vector<TheoryPoint>& history,
                                    double eta, double smoothness) {
  if (history.size() < 2) {
    throw std::invalid_argument("descent_check: need at least two points");
  }
  if (!(smoothness >= 0.0)) {
    throw std::invalid_argument("descent_check: smoothness must be >= 0");
  }
  DescentSummary out;
  out.smoothness = smoothness;

  const double f0 = history.front().objective;
  double best = f0;
  double lhs_sum = 0.0;
  const std::size_t transitions = history.size() - 1;

  for (std::size_t t = 0; t < transitions; ++t) {
    const TheoryPoint& at = history[t];
    TheoryRound r;
    r.round = t + 1;
    r.grad_norm_sq = at.grad_norm_sq;
    r.decrease_observed = at.objective - history[t + 1].objective;
    const double tol =
        1e-9 * std::max({1.0, std::abs(r.decrease_observed), std::abs(at.objective)});

    if (at.b_defined && at.eps_defined && at.grad_norm_sq > kGradFloor) {
      r.defined = true;
      r.b_est = at.b_est;
      r.eps_est = at.eps_est;
      r.rho = eta * (at.eps_est - smoothness * eta * at.b_est * at.b_est / 2.0);
      r.vacuous = r.rho <= 0.0;
      r.decrease_bound = r.rho * at.grad_norm_sq;
      lhs_sum += r.decrease_bound;
    } else {
      // stationary start: zero bound, trivially satisfiable
      r.decrease_bound = 0.0;
    }
    r.bound_satisfied = r.decrease_observed >= r.decrease_bound - tol;
    if (!r.bound_satisfied && !r.vacuous) ++out.violations;
    if (r.vacuous) ++out.vacuous_rounds;

    best = std::min(best, history[t + 1].objective);
    r.delta_so_far = f0 - best;
    out.rounds.push_back(r);
  }

  out.aggregate_lhs = lhs_sum / static_cast<double>(transitions);
  out.delta = f0 - best;
  out.aggregate_satisfied =
      out.aggregate_lhs <= out.delta + 1e-9 * std::max(1.0, std::abs(out.delta));
  return out;
}

}  // namespace fedlab
