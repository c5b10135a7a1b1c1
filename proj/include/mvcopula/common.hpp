#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvcopula {

using Eigen::MatrixXd;
using Eigen::VectorXd;

//! Thrown when user-supplied data violates an operation's preconditions.
struct input_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! Thrown when a computation fails numerically (singular matrix, divergence).
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

inline double standard_normal(Rng& rng)
{
  // Box-Muller instead of std::normal_distribution: the latter's stream is
  // implementation-defined, this keeps seeded runs reproducible across stdlibs.
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u1 = unif(rng);
  while (u1 <= 0.0)
    u1 = unif(rng);
  const double u2 = unif(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline VectorXd normal_vector(Rng& rng, Eigen::Index n)
{
  VectorXd w(n);
  for (Eigen::Index i = 0; i < n; ++i)
    w(i) = standard_normal(rng);
  return w;
}

inline double uniform01(Rng& rng)
{
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  return unif(rng);
}

//! Standard normal CDF.
inline double norm_cdf(double x)
{
  return 0.5 * std::erfc(-x * M_SQRT1_2);
}

//! Standard normal log-density.
inline double norm_logpdf(double x)
{
  return -0.5 * x * x - 0.5 * std::log(2.0 * M_PI);
}

inline double norm_pdf(double x)
{
  return std::exp(norm_logpdf(x));
}

//! Inverse standard normal CDF (Acklam's rational approximation plus one
//! Halley refinement; accurate to full double precision in (0,1)).
inline double norm_quantile(double p)
{
  if (!(p > 0.0 && p < 1.0))
    throw input_error("norm_quantile: p must lie strictly inside (0,1)");

  static const double a[] = { -3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00 };
  static const double b[] = { -5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01 };
  static const double c[] = { -7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00 };
  static const double d[] = { 7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00 };

  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  // Halley step against the exact CDF.
  const double e = norm_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

//! Multivariate normal log-density with dense covariance.
inline double mvn_logpdf(const VectorXd& x, const VectorXd& mean, const MatrixXd& cov)
{
  const Eigen::Index d = x.size();
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw numerical_error("mvn_logpdf: covariance not positive definite");
  const VectorXd r = x - mean;
  const VectorXd half = llt.matrixL().solve(r);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < d; ++i)
    logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * half.squaredNorm() - 0.5 * logdet -
         0.5 * static_cast<double>(d) * std::log(2.0 * M_PI);
}

//! Gauss-Hermite nodes/weights (physicists' convention, weight e^{-t^2})
//! via Golub-Welsch on the Jacobi matrix.
struct GaussHermite {
  VectorXd nodes;
  VectorXd weights;

  explicit GaussHermite(int order)
  {
    MatrixXd jacobi = MatrixXd::Zero(order, order);
    for (int i = 1; i < order; ++i) {
      const double off = std::sqrt(i / 2.0);
      jacobi(i, i - 1) = off;
      jacobi(i - 1, i) = off;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(jacobi);
    nodes = eig.eigenvalues();
    weights.resize(order);
    const double sqrt_pi = std::sqrt(M_PI);
    for (int i = 0; i < order; ++i) {
      const double v0 = eig.eigenvectors()(0, i);
      weights(i) = sqrt_pi * v0 * v0;
    }
  }

  //! E[f(Z)] for Z ~ N(mean, sd^2).
  template <typename F>
  double expectation(F&& f, double mean, double sd) const
  {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < nodes.size(); ++i)
      acc += weights(i) * f(mean + M_SQRT2 * sd * nodes(i));
    return acc / std::sqrt(M_PI);
  }
};

}  // namespace mvcopula
