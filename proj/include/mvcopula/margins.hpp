#pragma once

#include "common.hpp"

#include <algorithm>
#include <limits>

namespace mvcopula {

//! A marginal distribution G_j with CDF/quantile/density evaluators.
//!
//! Either a grid-tabulated bounded adaptive KDE, or a declared parametric
//! family (useful for tests and for LFI parameters with known priors).
class Margin {
public:
  enum class Kind { kde_grid, normal, lognormal, exponential };

  Kind kind = Kind::kde_grid;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  // grid representation (kind == kde_grid)
  VectorXd grid;       // strictly increasing abscissae
  VectorXd density;    // nonnegative, integrates to 1 over the grid
  VectorXd cdf_grid;   // nondecreasing, 0 at grid start, 1 at grid end

  // parametric representation
  double par1 = 0.0;  // normal: mean; lognormal: mu; exponential: rate
  double par2 = 1.0;  // normal: sd;   lognormal: sigma

  static Margin normal(double mean, double sd)
  {
    Margin m;
    m.kind = Kind::normal;
    m.par1 = mean;
    m.par2 = sd;
    return m;
  }

  static Margin lognormal(double mu, double sigma)
  {
    Margin m;
    m.kind = Kind::lognormal;
    m.par1 = mu;
    m.par2 = sigma;
    m.lower = 0.0;
    return m;
  }

  static Margin exponential(double rate)
  {
    Margin m;
    m.kind = Kind::exponential;
    m.par1 = rate;
    m.lower = 0.0;
    return m;
  }

  double cdf(double y) const
  {
    switch (kind) {
      case Kind::normal:
        return norm_cdf((y - par1) / par2);
      case Kind::lognormal:
        return y <= 0.0 ? 0.0 : norm_cdf((std::log(y) - par1) / par2);
      case Kind::exponential:
        return y <= 0.0 ? 0.0 : 1.0 - std::exp(-par1 * y);
      case Kind::kde_grid:
        break;
    }
    if (y <= grid(0))
      return 0.0;
    if (y >= grid(grid.size() - 1))
      return 1.0;
    return interp(grid, cdf_grid, y);
  }

  double pdf(double y) const
  {
    switch (kind) {
      case Kind::normal:
        return norm_pdf((y - par1) / par2) / par2;
      case Kind::lognormal:
        return y <= 0.0 ? 0.0 : norm_pdf((std::log(y) - par1) / par2) / (par2 * y);
      case Kind::exponential:
        return y < 0.0 ? 0.0 : par1 * std::exp(-par1 * y);
      case Kind::kde_grid:
        break;
    }
    if (y < grid(0) || y > grid(grid.size() - 1))
      return 0.0;
    return std::max(0.0, interp(grid, density, y));
  }

  double quantile(double u) const
  {
    if (!(u >= 0.0 && u <= 1.0))
      throw input_error("Margin::quantile: u outside [0,1]");
    switch (kind) {
      case Kind::normal:
        return par1 + par2 * norm_quantile(clamp_u(u));
      case Kind::lognormal:
        return std::exp(par1 + par2 * norm_quantile(clamp_u(u)));
      case Kind::exponential:
        return -std::log1p(-std::min(u, 1.0 - 1e-16)) / par1;
      case Kind::kde_grid:
        break;
    }
    if (u <= 0.0)
      return grid(0);
    if (u >= 1.0)
      return grid(grid.size() - 1);
    // generalized inverse of the piecewise-linear CDF: leftmost crossing
    const double* begin = cdf_grid.data();
    const double* end = begin + cdf_grid.size();
    const double* it = std::lower_bound(begin, end, u);
    Eigen::Index hi = it - begin;
    if (hi == 0)
      return grid(0);
    const Eigen::Index lo = hi - 1;
    const double c0 = cdf_grid(lo), c1 = cdf_grid(hi);
    if (c1 <= c0)
      return grid(lo);
    const double t = (u - c0) / (c1 - c0);
    return grid(lo) + t * (grid(hi) - grid(lo));
  }

  //! Normal score z = Phi^{-1}(G(y)), with the CDF clamped away from {0,1}.
  double to_z(double y) const
  {
    return norm_quantile(clamp_u(cdf(y)));
  }

  double from_z(double z) const
  {
    return quantile(norm_cdf(z));
  }

private:
  static double clamp_u(double u)
  {
    constexpr double eps = 1e-12;
    return std::min(std::max(u, eps), 1.0 - eps);
  }

  static double interp(const VectorXd& xs, const VectorXd& ys, double x)
  {
    const double* begin = xs.data();
    const double* end = begin + xs.size();
    const double* it = std::upper_bound(begin, end, x);
    Eigen::Index hi = it - begin;
    if (hi <= 0)
      return ys(0);
    if (hi >= xs.size())
      return ys(xs.size() - 1);
    const Eigen::Index lo = hi - 1;
    const double t = (x - xs(lo)) / (xs(hi) - xs(lo));
    return ys(lo) + t * (ys(hi) - ys(lo));
  }
};

//! Bounded adaptive KDE: Silverman pilot bandwidth, Abramson square-root-law
//! local factors, Gaussian kernels with boundary reflection at finite bounds.
inline Margin fit_margin(const VectorXd& samples,
                         double lower = -std::numeric_limits<double>::infinity(),
                         double upper = std::numeric_limits<double>::infinity(),
                         int grid_size = 2048)
{
  const Eigen::Index n = samples.size();
  if (n < 30)
    throw input_error("fit_margin: need at least 30 samples");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(samples(i) >= lower && samples(i) <= upper))
      throw input_error("fit_margin: sample outside declared bounds");
  }

  const double mean = samples.mean();
  const double sd =
      std::sqrt((samples.array() - mean).square().sum() / static_cast<double>(n - 1));
  if (!(sd > 0.0))
    throw numerical_error("fit_margin: degenerate (constant) sample");

  VectorXd sorted = samples;
  std::sort(sorted.data(), sorted.data() + n);
  const auto quantile_of = [&](double u) {
    const double pos = u * static_cast<double>(n - 1);
    const Eigen::Index lo = static_cast<Eigen::Index>(std::floor(pos));
    const Eigen::Index hi = std::min(lo + 1, n - 1);
    return sorted(lo) + (pos - lo) * (sorted(hi) - sorted(lo));
  };
  const double iqr = quantile_of(0.75) - quantile_of(0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  const double h = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);

  const bool lo_finite = std::isfinite(lower);
  const bool hi_finite = std::isfinite(upper);

  // kernel sum with reflection across finite bounds
  const auto kde_at = [&](double y, const VectorXd& bw) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double hi_bw = bw(i);
      double k = norm_pdf((y - samples(i)) / hi_bw);
      if (lo_finite)
        k += norm_pdf((y - (2.0 * lower - samples(i))) / hi_bw);
      if (hi_finite)
        k += norm_pdf((y - (2.0 * upper - samples(i))) / hi_bw);
      acc += k / hi_bw;
    }
    return acc / static_cast<double>(n);
  };

  // pilot estimate tabulated on a coarse grid (interpolated at the sample
  // points), then Abramson local factors
  const VectorXd pilot_bw = VectorXd::Constant(n, h);
  const int pilot_size = 512;
  const double pg_lo = (lo_finite ? lower : sorted(0) - 4.0 * h);
  const double pg_hi = (hi_finite ? upper : sorted(n - 1) + 4.0 * h);
  VectorXd pg(pilot_size), pv(pilot_size);
  for (int g = 0; g < pilot_size; ++g) {
    pg(g) = pg_lo + (pg_hi - pg_lo) * g / static_cast<double>(pilot_size - 1);
    pv(g) = kde_at(pg(g), pilot_bw);
  }
  const auto pilot_interp = [&](double y) {
    const double* it = std::upper_bound(pg.data(), pg.data() + pilot_size, y);
    Eigen::Index hi_idx = it - pg.data();
    if (hi_idx <= 0)
      return pv(0);
    if (hi_idx >= pilot_size)
      return pv(pilot_size - 1);
    const double t = (y - pg(hi_idx - 1)) / (pg(hi_idx) - pg(hi_idx - 1));
    return pv(hi_idx - 1) + t * (pv(hi_idx) - pv(hi_idx - 1));
  };
  VectorXd pilot(n);
  for (Eigen::Index i = 0; i < n; ++i)
    pilot(i) = std::max(pilot_interp(samples(i)), 1e-300);
  const double log_geo_mean = pilot.array().log().mean();
  VectorXd adaptive_bw(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lambda = std::exp(-0.5 * (std::log(pilot(i)) - log_geo_mean));
    adaptive_bw(i) = h * lambda;
  }

  Margin m;
  m.kind = Margin::Kind::kde_grid;
  m.lower = lower;
  m.upper = upper;
  const double grid_lo = lo_finite ? lower : sorted(0) - 4.0 * h;
  const double grid_hi = hi_finite ? upper : sorted(n - 1) + 4.0 * h;
  m.grid.resize(grid_size);
  m.density.resize(grid_size);
  for (int g = 0; g < grid_size; ++g) {
    m.grid(g) = grid_lo + (grid_hi - grid_lo) * g / static_cast<double>(grid_size - 1);
    m.density(g) = kde_at(m.grid(g), adaptive_bw);
  }

  // cumulative trapezoid, renormalized so the grid mass is exactly 1
  m.cdf_grid.resize(grid_size);
  m.cdf_grid(0) = 0.0;
  for (int g = 1; g < grid_size; ++g) {
    m.cdf_grid(g) = m.cdf_grid(g - 1) + 0.5 * (m.density(g) + m.density(g - 1)) *
                                            (m.grid(g) - m.grid(g - 1));
  }
  const double total = m.cdf_grid(grid_size - 1);
  if (!(total > 0.0))
    throw numerical_error("fit_margin: zero total density mass");
  m.cdf_grid /= total;
  m.density /= total;
  return m;
}

}  // namespace mvcopula
