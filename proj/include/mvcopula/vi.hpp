#pragma once

#include "common.hpp"

#include <chrono>
#include <functional>
#include <limits>
#include <utility>

namespace mvcopula {

//! Factor-Gaussian variational family q(eta) = N(mu, BB^T + Delta^2), with the
//! strict upper triangle of B fixed at zero.
struct VariationalParams {
  VectorXd mu;     // T
  MatrixXd b;      // T x M
  VectorXd delta;  // T, used as |delta| in the covariance

  Eigen::Index dim() const { return mu.size(); }
  Eigen::Index factors() const { return b.cols(); }
};

//! eta = mu + B w1 + delta o w2.
inline VectorXd sample_eta(const VariationalParams& lambda, const VectorXd& w1,
                           const VectorXd& w2)
{
  return lambda.mu + lambda.b * w1 + lambda.delta.cwiseProduct(w2);
}

//! (BB^T + Delta^2)^{-1} r via the Woodbury identity; O(TM^2 + M^3), no T x T
//! matrix is formed.
inline VectorXd woodbury_apply(const MatrixXd& b, const VectorXd& delta, const VectorXd& r)
{
  const Eigen::Index m = b.cols();
  const VectorXd d2inv = delta.array().square().inverse();
  const VectorXd rd = r.cwiseProduct(d2inv);
  MatrixXd inner = MatrixXd::Identity(m, m) + b.transpose() * d2inv.asDiagonal() * b;
  Eigen::LDLT<MatrixXd> ldlt(inner);
  if (ldlt.info() != Eigen::Success)
    throw numerical_error("woodbury_apply: singular inner system");
  const VectorXd correction = ldlt.solve(b.transpose() * rd);
  return rd - d2inv.cwiseProduct(b * correction);
}

//! log det(BB^T + Delta^2) by the matrix determinant lemma.
inline double factor_logdet(const MatrixXd& b, const VectorXd& delta)
{
  const Eigen::Index m = b.cols();
  const VectorXd d2inv = delta.array().square().inverse();
  MatrixXd inner = MatrixXd::Identity(m, m) + b.transpose() * d2inv.asDiagonal() * b;
  Eigen::LLT<MatrixXd> llt(inner);
  if (llt.info() != Eigen::Success)
    throw numerical_error("factor_logdet: inner matrix not positive definite");
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return logdet + 2.0 * delta.array().abs().log().sum();
}

inline double log_q(const VariationalParams& lambda, const VectorXd& eta)
{
  const VectorXd r = eta - lambda.mu;
  const double quad = r.dot(woodbury_apply(lambda.b, lambda.delta, r));
  return -0.5 * quad - 0.5 * factor_logdet(lambda.b, lambda.delta) -
         0.5 * static_cast<double>(lambda.dim()) * std::log(2.0 * M_PI);
}

//! The optimization target: unnormalized log posterior and its gradient.
struct ViTarget {
  std::function<double(const VectorXd&)> log_density;
  std::function<VectorXd(const VectorXd&)> gradient;
};

struct ViGradient {
  VectorXd mu;
  MatrixXd b;
  VectorXd delta;
};

//! One-draw (or K-draw averaged) reparameterization gradient of the ELBO.
//! Draws whose model gradient is non-finite are rejected and resampled.
inline ViGradient elbo_gradient(const VariationalParams& lambda, const ViTarget& target,
                                int n_draws, Rng& rng)
{
  const Eigen::Index t = lambda.dim(), m = lambda.factors();
  ViGradient grad{ VectorXd::Zero(t), MatrixXd::Zero(t, m), VectorXd::Zero(t) };

  for (int k = 0; k < n_draws; ++k) {
    int consecutive_rejects = 0;
    for (;;) {
      const VectorXd w1 = normal_vector(rng, m);
      const VectorXd w2 = normal_vector(rng, t);
      const VectorXd shift = lambda.b * w1 + lambda.delta.cwiseProduct(w2);
      const VectorXd eta = lambda.mu + shift;
      VectorXd g = target.gradient(eta);
      if (!g.allFinite()) {
        if (++consecutive_rejects >= 10)
          throw numerical_error("elbo_gradient: 10 consecutive non-finite gradients");
        continue;
      }
      const VectorXd score = g + woodbury_apply(lambda.b, lambda.delta, shift);
      grad.mu += score;
      grad.b += score * w1.transpose();
      grad.delta += score.cwiseProduct(w2);
      break;
    }
  }
  grad.mu /= n_draws;
  grad.b /= n_draws;
  grad.delta /= n_draws;
  grad.b.triangularView<Eigen::StrictlyUpper>().setZero();
  return grad;
}

//! Monte Carlo ELBO estimate, E_q[log h - log q].
inline double elbo_estimate(const VariationalParams& lambda, const ViTarget& target,
                            int n_draws, Rng& rng)
{
  double acc = 0.0;
  for (int k = 0; k < n_draws; ++k) {
    const VectorXd eta = sample_eta(lambda, normal_vector(rng, lambda.factors()),
                                    normal_vector(rng, lambda.dim()));
    acc += target.log_density(eta) - log_q(lambda, eta);
  }
  return acc / n_draws;
}

struct FitConfig {
  int iterations = 30000;
  int samples_per_gradient = 1;  // K
  int factors = 10;              // M
  std::uint64_t seed = 1;
  int monitor_window = 1000;     // smoothed-ELBO window
  double adadelta_decay = 0.95;
  double adadelta_damping = 1e-6;
  double gradient_clip = 1e4;    // L2 cap per step
  bool early_stop = false;
  double early_stop_rel = 1e-4;  // relative smoothed-ELBO improvement floor
};

struct FitTrace {
  std::vector<double> noisy_elbo;
  std::vector<double> smoothed_elbo;
  double wall_clock_seconds = 0.0;
};

inline VariationalParams init_variational(const VectorXd& mu0, int factors, Rng& rng)
{
  VariationalParams lambda;
  lambda.mu = mu0;
  lambda.b.resize(mu0.size(), factors);
  for (Eigen::Index i = 0; i < lambda.b.rows(); ++i)
    for (Eigen::Index j = 0; j < lambda.b.cols(); ++j)
      lambda.b(i, j) = (j > i) ? 0.0 : 0.01 * standard_normal(rng);
  lambda.delta = VectorXd::Constant(mu0.size(), 0.1);
  return lambda;
}

//! Stochastic gradient ascent on the ELBO with per-coordinate ADADELTA steps.
//! Deterministic given config.seed.
inline std::pair<VariationalParams, FitTrace> fit(const ViTarget& target,
                                                  const VectorXd& mu0,
                                                  const FitConfig& config)
{
  const auto start = std::chrono::steady_clock::now();
  Rng rng(config.seed);
  VariationalParams lambda = init_variational(mu0, config.factors, rng);

  const Eigen::Index t = lambda.dim(), m = lambda.factors();
  const Eigen::Index n_params = t + t * m + t;

  VectorXd eg2 = VectorXd::Zero(n_params);   // decayed squared gradients
  VectorXd edx2 = VectorXd::Zero(n_params);  // decayed squared updates
  const double rho = config.adadelta_decay, eps = config.adadelta_damping;

  FitTrace trace;
  trace.noisy_elbo.reserve(config.iterations);
  trace.smoothed_elbo.reserve(config.iterations);

  double window_sum = 0.0;
  double previous_window_mean = -std::numeric_limits<double>::infinity();

  const auto flatten = [&](const ViGradient& g, VectorXd& out) {
    out.segment(0, t) = g.mu;
    out.segment(t, t * m) = Eigen::Map<const VectorXd>(g.b.data(), t * m);
    out.segment(t + t * m, t) = g.delta;
  };

  VectorXd flat(n_params);
  for (int iter = 0; iter < config.iterations; ++iter) {
    const ViGradient grad = elbo_gradient(lambda, target, config.samples_per_gradient, rng);
    flatten(grad, flat);

    const double norm = flat.norm();
    if (norm > config.gradient_clip)
      flat *= config.gradient_clip / norm;

    eg2 = rho * eg2.array() + (1.0 - rho) * flat.array().square();
    const VectorXd step = ((edx2.array() + eps) / (eg2.array() + eps)).sqrt() * flat.array();
    edx2 = rho * edx2.array() + (1.0 - rho) * step.array().square();

    lambda.mu += step.segment(0, t);
    lambda.b += Eigen::Map<const MatrixXd>(step.segment(t, t * m).data(), t, m);
    lambda.b.triangularView<Eigen::StrictlyUpper>().setZero();
    lambda.delta += step.segment(t + t * m, t);

    // single-draw noisy ELBO at the current lambda
    Rng elbo_rng(config.seed ^ 0x9e3779b97f4a7c15ULL ^ static_cast<std::uint64_t>(iter));
    const double noisy = elbo_estimate(lambda, target, 1, elbo_rng);
    trace.noisy_elbo.push_back(noisy);
    window_sum += noisy;

    const int window = std::min(config.monitor_window, iter + 1);
    if (iter + 1 > config.monitor_window)
      window_sum -= trace.noisy_elbo[iter - config.monitor_window];
    const double smoothed = window_sum / window;
    trace.smoothed_elbo.push_back(smoothed);
    if (!std::isfinite(smoothed))
      throw numerical_error("fit: smoothed ELBO became non-finite at iteration " +
                            std::to_string(iter));

    if (config.early_stop && (iter + 1) % config.monitor_window == 0) {
      if (std::isfinite(previous_window_mean)) {
        const double improvement = (smoothed - previous_window_mean) /
                                   std::max(1.0, std::abs(previous_window_mean));
        if (improvement < config.early_stop_rel && improvement > -config.early_stop_rel)
          break;
      }
      previous_window_mean = smoothed;
    }
  }

  trace.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return { std::move(lambda), std::move(trace) };
}

}  // namespace mvcopula
