#pragma once

#include "predict.hpp"

#include <optional>

namespace mvcopula {
namespace lfi {

//! Demographic hyperparameters of the census simulator.
struct HyperParams {
  double omega = 0.0;   // lognormal location of the mortality rate
  double sigma2 = 1.0;  // lognormal squared scale (> 0)
  double c = 0.0;       // ALD mode of the growth rate
  double phi1 = 1.0;    // ALD right rate (> 0)
  double phi2 = 1.0;    // ALD left rate (> 0)

  void validate() const
  {
    if (!(sigma2 > 0.0) || !(phi1 > 0.0) || !(phi2 > 0.0))
      throw input_error("HyperParams: sigma2, phi1, phi2 must be positive");
  }

  //! The unconstrained regression-response scale (Omega, log sigma2, c,
  //! log phi1, log phi2).
  VectorXd transformed() const
  {
    VectorXd v(5);
    v << omega, std::log(sigma2), c, std::log(phi1), std::log(phi2);
    return v;
  }

  static HyperParams from_transformed(const VectorXd& v)
  {
    if (v.size() != 5)
      throw input_error("HyperParams: transformed vector must have length 5");
    return { v(0), std::exp(v(1)), v(2), std::exp(v(3)), std::exp(v(4)) };
  }
};

//! Gamma(shape, 1) via Marsaglia-Tsang squeeze (shape >= 1), using only the
//! library's own normal/uniform draws for cross-platform determinism.
inline double sample_gamma(double shape, Rng& rng)
{
  if (shape < 1.0) {
    // boost: Gamma(a) = Gamma(a+1) * U^{1/a}
    const double u = uniform01(rng);
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double cc = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = standard_normal(rng);
      v = 1.0 + cc * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x)
      return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return d * v;
  }
}

inline double sample_inverse_gamma(double shape, double scale, Rng& rng)
{
  return scale / sample_gamma(shape, rng);
}

//! Omega ~ N(-3.3, 1.2^2), c ~ N(0.07, 0.08^2), sigma2 ~ IG(2, 1),
//! phi1, phi2 ~ IG(3, 200).
inline HyperParams sample_hyperpriors(Rng& rng)
{
  HyperParams psi;
  psi.omega = -3.3 + 1.2 * standard_normal(rng);
  psi.c = 0.07 + 0.08 * standard_normal(rng);
  psi.sigma2 = sample_inverse_gamma(2.0, 1.0, rng);
  psi.phi1 = sample_inverse_gamma(3.0, 200.0, rng);
  psi.phi2 = sample_inverse_gamma(3.0, 200.0, rng);
  return psi;
}

//! Closed-form prior margins of the transformed responses, in layout order.
inline std::vector<Margin> hyperprior_margins();

//! Asymmetric Laplace draw by its exact two-exponential mixture: with
//! probability phi1/(phi1+phi2) return c - Exp(phi2), else c + Exp(phi1).
inline double sample_ald(double c, double phi1, double phi2, Rng& rng)
{
  if (!(phi1 > 0.0) || !(phi2 > 0.0))
    throw input_error("sample_ald: rates must be positive");
  const double u = uniform01(rng);
  const double e = -std::log1p(-uniform01(rng));
  if (u < phi1 / (phi1 + phi2))
    return c - e / phi2;
  return c + e / phi1;
}

inline double ald_logpdf(double x, double c, double phi1, double phi2)
{
  const double log_k = std::log(phi1) + std::log(phi2) - std::log(phi1 + phi2);
  return log_k + (x < c ? phi2 * (x - c) : -phi1 * (x - c));
}

//! Lognormal LN(Omega, sigma2) conditioned on exceeding `lower`, by inverse
//! CDF; plain lognormal when the bound is inactive.
inline double sample_trunc_lognormal(double omega, double sigma2, double lower, Rng& rng)
{
  if (!(sigma2 > 0.0))
    throw input_error("sample_trunc_lognormal: sigma2 must be positive");
  const double sigma = std::sqrt(sigma2);
  if (lower <= 0.0)
    return std::exp(omega + sigma * standard_normal(rng));
  const double f = norm_cdf((std::log(lower) - omega) / sigma);
  if (f >= 1.0 - 1e-14)
    throw numerical_error("sample_trunc_lognormal: truncation mass vanishes (lower=" +
                          std::to_string(lower) + ", Omega=" + std::to_string(omega) +
                          ", sigma2=" + std::to_string(sigma2) + ")");
  const double u = f + uniform01(rng) * (1.0 - f);
  return std::exp(omega + sigma * norm_quantile(std::min(u, 1.0 - 1e-16)));
}

//! One census interval per species: initial counts, survivors, recruits,
//! durations, and the latent per-species rates (kept for test oracles).
struct CensusData {
  Eigen::VectorXi n;   // initial abundance
  Eigen::VectorXi s;   // survivors, 0..n
  Eigen::VectorXi a;   // recruits
  VectorXd dt;         // interval duration, years
  VectorXd rho;        // latent growth rate
  VectorXd mu;         // latent mortality rate

  int species() const { return static_cast<int>(n.size()); }
  Eigen::VectorXi n_next() const { return s + a; }
};

inline int sample_binomial(int n, double prob, Rng& rng)
{
  int k = 0;
  for (int i = 0; i < n; ++i)
    k += (uniform01(rng) < prob) ? 1 : 0;
  return k;
}

inline int sample_poisson(double mean, Rng& rng)
{
  if (!(mean >= 0.0))
    throw numerical_error("sample_poisson: negative mean");
  int total = 0;
  // split large means into exact independent chunks to avoid underflow in
  // the multiplicative inversion
  while (mean > 30.0) {
    double l = std::exp(-30.0), prod = uniform01(rng);
    int k = 0;
    while (prod > l) {
      prod *= uniform01(rng);
      ++k;
    }
    total += k;
    mean -= 30.0;
  }
  const double l = std::exp(-mean);
  double prod = uniform01(rng);
  int k = 0;
  while (prod > l) {
    prod *= uniform01(rng);
    ++k;
  }
  return total + k;
}

//! Test hook: pin the latent rates instead of drawing them.
struct LatentOverride {
  std::optional<double> rho;
  std::optional<double> mu;
};

//! One census step: per species, rho ~ ALD(c, phi1, phi2), mu ~ LN(Omega,
//! sigma2) truncated to mu > -rho, S ~ Bin(N, e^{-mu dt}),
//! A ~ Poisson(N (e^{rho dt} - e^{-mu dt})).
inline CensusData simulate_census(const HyperParams& psi, const Eigen::VectorXi& n_init,
                                  const VectorXd& dt, Rng& rng,
                                  const LatentOverride& hook = {})
{
  psi.validate();
  if (n_init.size() != dt.size())
    throw input_error("simulate_census: N/dt size mismatch");
  if (n_init.minCoeff() < 0 || !(dt.minCoeff() > 0.0))
    throw input_error("simulate_census: need N >= 0 and dt > 0");

  const int species = static_cast<int>(n_init.size());
  CensusData out;
  out.n = n_init;
  out.dt = dt;
  out.s.resize(species);
  out.a.resize(species);
  out.rho.resize(species);
  out.mu.resize(species);

  for (int i = 0; i < species; ++i) {
    const double rho = hook.rho ? *hook.rho : sample_ald(psi.c, psi.phi1, psi.phi2, rng);
    const double mu =
        hook.mu ? *hook.mu : sample_trunc_lognormal(psi.omega, psi.sigma2, -rho, rng);
    out.rho(i) = rho;
    out.mu(i) = mu;
    if (n_init(i) == 0) {
      out.s(i) = 0;
      out.a(i) = 0;
      continue;
    }
    const double survive = std::exp(-mu * dt(i));
    out.s(i) = sample_binomial(n_init(i), survive, rng);
    const double recruit_mean = n_init(i) * (std::exp(rho * dt(i)) - survive);
    out.a(i) = sample_poisson(std::max(0.0, recruit_mean), rng);
  }
  return out;
}

//! Fisher log-series abundances: P(N = k) proportional to theta^k / k, with
//! theta chosen by bisection so the distribution's median is `median_target`.
inline Eigen::VectorXi logseries_abundances(int species, int median_target,
                                            std::uint64_t seed)
{
  if (species < 1 || median_target < 1)
    throw input_error("logseries_abundances: bad arguments");
  const auto cdf_at = [](double theta, int m) {
    const double norm = -std::log1p(-theta);
    double acc = 0.0, term = theta;
    for (int k = 1; k <= m; ++k) {
      acc += term / k;
      term *= theta;
    }
    return acc / norm;
  };
  // median m means F(m) >= 0.5 > F(m-1); pick theta with F(median_target) = 0.5
  double lo = 1e-9, hi = 1.0 - 1e-12;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf_at(mid, median_target) > 0.5 ? lo : hi) = mid;
  }
  const double theta = 0.5 * (lo + hi);

  Rng rng(seed);
  Eigen::VectorXi out(species);
  const double norm = -std::log1p(-theta);
  for (int i = 0; i < species; ++i) {
    const double u = uniform01(rng) * norm;
    double acc = 0.0, term = theta;
    int k = 1;
    for (;;) {
      acc += term / k;
      if (acc >= u || k > 100000000)
        break;
      term *= theta;
      ++k;
    }
    out(i) = k;
  }
  return out;
}

//! Five summary statistics of a census interval.
//! H1: scaling exponent of Var(change in N) against mean N over 10
//!     equal-count abundance bins; H2: pooled survival fraction;
//! H3: pooled per-time recruitment rate; H4/H5: interquartile ranges of the
//! per-species survival fractions and recruitment rates (species with N >= 5).
inline VectorXd summaries(const CensusData& data)
{
  const int species = data.species();
  std::vector<int> alive;
  for (int i = 0; i < species; ++i)
    if (data.n(i) > 0)
      alive.push_back(i);
  if (alive.size() < 50)
    throw input_error("summaries: need at least 50 species with N > 0");

  std::sort(alive.begin(), alive.end(),
            [&](int a, int b) { return data.n(a) < data.n(b); });

  // H1: log-log regression of within-bin variance of delta N on bin mean N
  const int bins = 10;
  std::vector<double> log_mean, log_var;
  const std::size_t per_bin = alive.size() / bins;
  for (int b = 0; b < bins; ++b) {
    const std::size_t begin = b * per_bin;
    const std::size_t end = (b == bins - 1) ? alive.size() : begin + per_bin;
    double mean_n = 0.0, mean_d = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const int i = alive[k];
      mean_n += data.n(i);
      mean_d += data.s(i) + data.a(i) - data.n(i);
    }
    const double count = static_cast<double>(end - begin);
    mean_n /= count;
    mean_d /= count;
    double var_d = 0.0;
    for (std::size_t k = begin; k < end; ++k) {
      const int i = alive[k];
      const double d = data.s(i) + data.a(i) - data.n(i) - mean_d;
      var_d += d * d;
    }
    var_d /= std::max(1.0, count - 1.0);
    if (var_d > 0.0 && mean_n > 0.0) {
      log_mean.push_back(std::log(mean_n));
      log_var.push_back(std::log(var_d));
    }
  }
  double h1 = 0.0;
  if (log_mean.size() >= 2) {
    const double mx = std::accumulate(log_mean.begin(), log_mean.end(), 0.0) / log_mean.size();
    const double my = std::accumulate(log_var.begin(), log_var.end(), 0.0) / log_var.size();
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < log_mean.size(); ++k) {
      sxy += (log_mean[k] - mx) * (log_var[k] - my);
      sxx += (log_mean[k] - mx) * (log_mean[k] - mx);
    }
    h1 = sxx > 0.0 ? sxy / sxx : 0.0;
  }

  double sum_n = 0.0, sum_s = 0.0, sum_a = 0.0, sum_ndt = 0.0;
  std::vector<double> survival, recruitment;
  for (int i : alive) {
    sum_n += data.n(i);
    sum_s += data.s(i);
    sum_a += data.a(i);
    sum_ndt += data.n(i) * data.dt(i);
    if (data.n(i) >= 5) {
      survival.push_back(static_cast<double>(data.s(i)) / data.n(i));
      recruitment.push_back(data.a(i) / (data.n(i) * data.dt(i)));
    }
  }
  const auto iqr = [](std::vector<double> v) {
    if (v.size() < 4)
      return 0.0;
    std::sort(v.begin(), v.end());
    const auto at = [&](double u) {
      const double pos = u * static_cast<double>(v.size() - 1);
      const std::size_t lo = static_cast<std::size_t>(pos);
      const std::size_t hi = std::min(lo + 1, v.size() - 1);
      return v[lo] + (pos - lo) * (v[hi] - v[lo]);
    };
    return at(0.75) - at(0.25);
  };

  VectorXd h(5);
  h << h1, sum_s / sum_n, sum_a / sum_ndt, iqr(survival), iqr(recruitment);
  if (!h.allFinite())
    throw numerical_error("summaries: non-finite summary statistics");
  return h;
}

inline std::vector<Margin> hyperprior_margins()
{
  // transformed scale: Omega and c are normal; log IG(a, b) has the density
  // of b e^{-x} summed through... use large-sample KDE-free normals only for
  // the Gaussian entries; the log-inverse-gamma entries are tabulated exactly
  // on a grid from the closed-form density.
  const auto log_ig_margin = [](double shape, double scale) {
    // X = log V, V ~ IG(shape, scale): f(x) = scale^shape/Gamma(shape) *
    // exp(-shape x - scale e^{-x})
    const int g = 4096;
    Margin m;
    m.kind = Margin::Kind::kde_grid;
    const double mode = std::log(scale) - std::log(shape);
    const double lo = mode - 12.0, hi = mode + 14.0;
    m.grid.resize(g);
    m.density.resize(g);
    const double log_norm = shape * std::log(scale) - std::lgamma(shape);
    for (int i = 0; i < g; ++i) {
      const double x = lo + (hi - lo) * i / static_cast<double>(g - 1);
      m.grid(i) = x;
      m.density(i) = std::exp(log_norm - shape * x - scale * std::exp(-x));
    }
    m.cdf_grid.resize(g);
    m.cdf_grid(0) = 0.0;
    for (int i = 1; i < g; ++i)
      m.cdf_grid(i) = m.cdf_grid(i - 1) +
                      0.5 * (m.density(i) + m.density(i - 1)) * (m.grid(i) - m.grid(i - 1));
    const double total = m.cdf_grid(g - 1);
    m.cdf_grid /= total;
    m.density /= total;
    return m;
  };
  return { Margin::normal(-3.3, 1.2), log_ig_margin(2.0, 1.0), Margin::normal(0.07, 0.08),
           log_ig_margin(3.0, 200.0), log_ig_margin(3.0, 200.0) };
}

//! Training set: n_sims draws of (psi, H) from the prior predictive, with a
//! per-simulation RNG stream derived from (seed, r).
struct TrainingSet {
  MatrixXd psi;  // n_sims x 5, transformed scale
  MatrixXd h;    // n_sims x 5
};

inline TrainingSet simulate_training(int n_sims, const Eigen::VectorXi& n_init,
                                     const VectorXd& dt, std::uint64_t seed)
{
  TrainingSet out;
  out.psi.resize(n_sims, 5);
  out.h.resize(n_sims, 5);
  for (int r = 0; r < n_sims; ++r) {
    Rng rng(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(r + 1)));
    for (;;) {
      try {
        const HyperParams psi = sample_hyperpriors(rng);
        const CensusData data = simulate_census(psi, n_init, dt, rng);
        out.psi.row(r) = psi.transformed().transpose();
        out.h.row(r) = summaries(data).transpose();
        break;
      } catch (const numerical_error&) {
        // rare degenerate draw (vanishing truncation mass); redraw from the
        // same stream
      }
    }
  }
  return out;
}

//! Amortized posterior: fit the copula regression of transformed psi on H.
//! Margins use the closed-form priors; the basis follows the default
//! configuration (50 knots, degree-2 polynomials: 70 columns for d = 5).
inline FittedModel lfi_train(int n_sims, const Eigen::VectorXi& n_init, const VectorXd& dt,
                             FitSpec spec, std::uint64_t seed)
{
  if (n_sims < 500)
    throw input_error("lfi_train: need at least 500 simulations");
  const TrainingSet train = simulate_training(n_sims, n_init, dt, seed);

  FittedModel model;
  model.design = build_design(RawCovariates::from_matrix(train.h), spec.basis);
  model.layout = ParamLayout{ 5, model.design.q(), spec.prior,
                              spec.prior == PriorChoice::prior2 ? spec.correlation_factors : 0 };
  model.margins = hyperprior_margins();

  ModelData data;
  data.f = model.design.f;
  data.z.resize(n_sims, 5);
  for (int j = 0; j < 5; ++j)
    for (int r = 0; r < n_sims; ++r)
      data.z(r, j) = model.margins[j].to_z(train.psi(r, j));

  model.lambda = fit_posterior(data, model.layout, spec.vi).first;
  model.eta_hat = model.lambda.mu;
  return model;
}

//! m joint posterior draws of psi given observed summaries, natural scale.
inline MatrixXd lfi_posterior(const FittedModel& model, const VectorXd& h_obs, int m,
                              std::uint64_t seed)
{
  if (h_obs.size() != 5)
    throw input_error("lfi_posterior: H_obs must have length 5");
  MatrixXd draws = predictive_sample(model, h_obs, m, seed).samples;
  for (int i = 0; i < m; ++i) {
    draws(i, 1) = std::exp(draws(i, 1));
    draws(i, 3) = std::exp(draws(i, 3));
    draws(i, 4) = std::exp(draws(i, 4));
  }
  return draws;
}

//! Eq.-style variance partition: Var(N_next | N) = N^2 dt^2 v_e + N dt v_d,
//! with v_e = Var(rho) and v_d = E(rho) + 2 E(mu) estimated by Monte Carlo
//! over the (rho, mu) hierarchy.
struct VariancePartition {
  double v_e = 0.0;
  double v_d = 0.0;
  double variance = 0.0;
};

inline VariancePartition demographic_variance(const HyperParams& psi, double n, double dt,
                                              Rng& rng, int inner_draws = 10000)
{
  psi.validate();
  if (n < 0.0 || !(dt > 0.0))
    throw input_error("demographic_variance: need N >= 0 and dt > 0");
  double sum_rho = 0.0, sum_rho2 = 0.0, sum_mu = 0.0;
  for (int k = 0; k < inner_draws; ++k) {
    const double rho = sample_ald(psi.c, psi.phi1, psi.phi2, rng);
    double mu;
    try {
      mu = sample_trunc_lognormal(psi.omega, psi.sigma2, -rho, rng);
    } catch (const numerical_error&) {
      mu = std::max(0.0, -rho);  // truncation mass vanishing: boundary value
    }
    sum_rho += rho;
    sum_rho2 += rho * rho;
    sum_mu += mu;
  }
  VariancePartition out;
  const double mean_rho = sum_rho / inner_draws;
  out.v_e = sum_rho2 / inner_draws - mean_rho * mean_rho;
  out.v_d = mean_rho + 2.0 * sum_mu / inner_draws;
  out.variance = n * n * dt * dt * out.v_e + n * dt * out.v_d;
  return out;
}

//! Distribution of the partition over posterior draws of psi (natural scale,
//! rows as produced by lfi_posterior).
inline std::vector<VariancePartition> demographic_variance(const MatrixXd& psi_draws,
                                                           double n, double dt, Rng& rng,
                                                           int inner_draws = 10000)
{
  std::vector<VariancePartition> out;
  out.reserve(psi_draws.rows());
  for (Eigen::Index r = 0; r < psi_draws.rows(); ++r) {
    HyperParams psi{ psi_draws(r, 0), psi_draws(r, 1), psi_draws(r, 2), psi_draws(r, 3),
                     psi_draws(r, 4) };
    out.push_back(demographic_variance(psi, n, dt, rng, inner_draws));
  }
  return out;
}

}  // namespace lfi
}  // namespace mvcopula
