#pragma once

#include "basis.hpp"
#include "margins.hpp"
#include "model.hpp"
#include "vi.hpp"

namespace mvcopula {

//! A fitted copula regression: variational parameters plus the plug-in point
//! estimate eta_hat (the variational mean decoded through the positivity
//! transforms), the basis descriptor and the invariant margins.
struct FittedModel {
  VariationalParams lambda;
  VectorXd eta_hat;  // = lambda.mu, decoded via layout
  ParamLayout layout;
  DesignMatrix design;
  std::vector<Margin> margins;

  int p() const { return layout.n_responses; }

  MatrixXd beta_hat() const { return layout.beta_matrix(eta_hat); }
  std::vector<HorseshoeParams> theta_hat() const { return layout.horseshoe(eta_hat); }
  MatrixXd sigma_hat() const
  {
    return correlation_matrix(layout.correlation(eta_hat));
  }
};

//! The plug-in conditional law of the normal scores at one covariate value:
//! z | x_new ~ N(mean, cov) with mean_j = s_j x~^T beta_j, cov = S Sigma S.
struct ConditionalGaussian {
  VectorXd basis_row;  // x~
  VectorXd scale;      // s_{n+1,j}
  VectorXd mean;
  MatrixXd cov;
};

inline ConditionalGaussian conditional_gaussian(const FittedModel& model,
                                                const VectorXd& x_new)
{
  ConditionalGaussian out;
  out.basis_row = model.design.row(x_new);
  const auto theta = model.theta_hat();
  const MatrixXd beta = model.beta_hat();
  const int p = model.p();
  out.scale.resize(p);
  out.mean.resize(p);
  for (int j = 0; j < p; ++j) {
    out.scale(j) = scale_factor(out.basis_row, theta[j]);
    out.mean(j) = out.scale(j) * out.basis_row.dot(beta.col(j));
  }
  out.cov = out.scale.asDiagonal() * model.sigma_hat() * out.scale.asDiagonal();
  return out;
}

//! Plug-in predictive density at (x_new, y_new):
//! phi_p(z; mean, cov) * prod_j g_j(y_j) / phi_1(z_j).
inline double predictive_density(const FittedModel& model, const VectorXd& x_new,
                                 const VectorXd& y_new)
{
  const int p = model.p();
  if (y_new.size() != p)
    throw input_error("predictive_density: response dimension mismatch");
  const ConditionalGaussian cond = conditional_gaussian(model, x_new);
  VectorXd z(p);
  double log_jacobian = 0.0;
  for (int j = 0; j < p; ++j) {
    const double g = model.margins[j].pdf(y_new(j));
    if (!(g > 0.0))
      throw input_error("predictive_density: y outside the support of margin " +
                        std::to_string(j));
    z(j) = model.margins[j].to_z(y_new(j));
    log_jacobian += std::log(g) - norm_logpdf(z(j));
  }
  return std::exp(mvn_logpdf(z, cond.mean, cond.cov) + log_jacobian);
}

//! Predictive density averaged over variational draws of eta (the slower
//! Monte Carlo alternative to the plug-in estimate).
inline double predictive_density_averaged(const FittedModel& model, const VectorXd& x_new,
                                          const VectorXd& y_new, int n_draws, Rng& rng)
{
  const int p = model.p();
  const VectorXd row = model.design.row(x_new);
  VectorXd z(p);
  double log_jacobian = 0.0;
  for (int j = 0; j < p; ++j) {
    const double g = model.margins[j].pdf(y_new(j));
    if (!(g > 0.0))
      throw input_error("predictive_density_averaged: y outside support");
    z(j) = model.margins[j].to_z(y_new(j));
    log_jacobian += std::log(g) - norm_logpdf(z(j));
  }
  double acc = 0.0;
  for (int it = 0; it < n_draws; ++it) {
    const VectorXd eta = sample_eta(model.lambda,
                                    normal_vector(rng, model.lambda.factors()),
                                    normal_vector(rng, model.lambda.dim()));
    const auto theta = model.layout.horseshoe(eta);
    const MatrixXd beta = model.layout.beta_matrix(eta);
    const MatrixXd sigma = correlation_matrix(model.layout.correlation(eta));
    VectorXd scale(p), mean(p);
    for (int j = 0; j < p; ++j) {
      scale(j) = scale_factor(row, theta[j]);
      mean(j) = scale(j) * row.dot(beta.col(j));
    }
    const MatrixXd cov = scale.asDiagonal() * sigma * scale.asDiagonal();
    acc += std::exp(mvn_logpdf(z, mean, cov));
  }
  return acc / n_draws * std::exp(log_jacobian);
}

struct PredictiveBatch {
  VectorXd x_new;
  MatrixXd samples;  // m x p
  std::uint64_t seed = 0;
};

//! Draw z ~ N(mean, cov), return y_j = G_j^{-1}(Phi(z_j)); deterministic per seed.
inline PredictiveBatch predictive_sample(const FittedModel& model, const VectorXd& x_new,
                                         int m, std::uint64_t seed)
{
  if (m < 1)
    throw input_error("predictive_sample: m must be >= 1");
  const int p = model.p();
  const ConditionalGaussian cond = conditional_gaussian(model, x_new);
  Eigen::LLT<MatrixXd> llt(cond.cov);
  if (llt.info() != Eigen::Success)
    throw numerical_error("predictive_sample: conditional covariance not SPD");

  PredictiveBatch batch;
  batch.x_new = x_new;
  batch.seed = seed;
  batch.samples.resize(m, p);
  Rng rng(seed);
  for (int i = 0; i < m; ++i) {
    const VectorXd z = cond.mean + llt.matrixL() * normal_vector(rng, p);
    for (int j = 0; j < p; ++j)
      batch.samples(i, j) = model.margins[j].from_z(z(j));
  }
  return batch;
}

//! Pseudo-response regression function m_j(x) = s_j x~^T beta_j.
inline double pseudo_mean(const FittedModel& model, const VectorXd& x_new, int j)
{
  const VectorXd row = model.design.row(x_new);
  const auto theta = model.theta_hat();
  return scale_factor(row, theta[j]) * row.dot(model.beta_hat().col(j));
}

//! E(Y_j | x_new) by Gauss-Hermite quadrature of G_j^{-1}(Phi(z)) against
//! N(m_j, s_j^2).
inline double marginal_mean(const FittedModel& model, const VectorXd& x_new, int j,
                            int quadrature_order = 64)
{
  if (j < 0 || j >= model.p())
    throw input_error("marginal_mean: response index out of range");
  const VectorXd row = model.design.row(x_new);
  const auto theta = model.theta_hat();
  const double s = scale_factor(row, theta[j]);
  const double m = s * row.dot(model.beta_hat().col(j));
  const GaussHermite gh(quadrature_order);
  const Margin& margin = model.margins[j];
  return gh.expectation([&](double z) { return margin.from_z(z); }, m, s);
}

//! Covariate-dependent Spearman matrix (6/pi) arcsin(R_ref / 2) with
//! R_ref from V_ref = Sigma + (I ox x~)(Sigma * P^{-1})(I ox x~^T).
inline MatrixXd spearman_matrix(const FittedModel& model, const VectorXd& x_ref)
{
  const VectorXd row = model.design.row(x_ref);
  const auto theta = model.theta_hat();
  const MatrixXd sigma = model.sigma_hat();
  const int p = model.p();

  const VectorXd row2 = row.array().square();
  MatrixXd v(p, p);
  for (int j = 0; j < p; ++j) {
    const VectorXd xi_j = theta[j].xi();
    for (int l = 0; l <= j; ++l) {
      const VectorXd xi_l = theta[l].xi();
      const double cross = row2.dot(xi_j.cwiseProduct(xi_l));
      v(j, l) = v(l, j) = sigma(j, l) * (1.0 + cross);
    }
  }
  const VectorXd inv_sqrt = v.diagonal().array().rsqrt();
  MatrixXd spearman(p, p);
  for (int j = 0; j < p; ++j) {
    for (int l = 0; l < j; ++l) {
      const double r = v(j, l) * inv_sqrt(j) * inv_sqrt(l);
      spearman(j, l) = spearman(l, j) =
          6.0 / M_PI * std::asin(std::clamp(r, -1.0, 1.0) / 2.0);
    }
  }
  spearman.diagonal().setOnes();
  return spearman;
}

//! Samples of w^T Y at x_new (e.g. a demand-weighted average response).
inline VectorXd linear_functional_sample(const FittedModel& model, const VectorXd& x_new,
                                         const VectorXd& weights, int m, std::uint64_t seed)
{
  if (!weights.allFinite() || weights.size() != model.p())
    throw input_error("linear_functional_sample: bad weight vector");
  const PredictiveBatch batch = predictive_sample(model, x_new, m, seed);
  return batch.samples * weights;
}

//! Sup-distance between the average of predictive CDFs over a test set and a
//! reference margin, on a y-grid spanning the reference's central mass.
inline double calibration_distance(const std::vector<std::function<double(double)>>& predictive_cdfs,
                                   const Margin& reference, int grid_size = 200)
{
  if (predictive_cdfs.size() < 1)
    throw input_error("calibration_distance: empty test set");
  const double lo = reference.quantile(0.001);
  const double hi = reference.quantile(0.999);
  double sup = 0.0;
  for (int g = 0; g < grid_size; ++g) {
    const double y = lo + (hi - lo) * g / static_cast<double>(grid_size - 1);
    double avg = 0.0;
    for (const auto& cdf : predictive_cdfs)
      avg += cdf(y);
    avg /= static_cast<double>(predictive_cdfs.size());
    sup = std::max(sup, std::abs(avg - reference.cdf(y)));
  }
  return sup;
}

//! Ridge warm start for the coefficient block: beta_j solves the penalized
//! least squares fit of z_j on the scale-adjusted basis at xi = tau = 1.
inline VectorXd warm_start(const ModelData& data, const ParamLayout& layout)
{
  const int p = layout.n_responses, q = layout.n_basis;
  VectorXd mu0 = VectorXd::Zero(layout.total());
  const VectorXd s0 =
      (1.0 + data.f.array().square().rowwise().sum()).rsqrt().matrix();
  const MatrixXd fs = s0.asDiagonal() * data.f;
  const MatrixXd gram = fs.transpose() * fs + MatrixXd::Identity(q, q);
  Eigen::LLT<MatrixXd> llt(gram);
  for (int j = 0; j < p; ++j)
    mu0.segment(j * q, q) = llt.solve(fs.transpose() * data.z.col(j));
  return mu0;
}

//! Variational fit of the copula posterior from normal scores and a basis.
inline std::pair<VariationalParams, FitTrace> fit_posterior(const ModelData& data,
                                                            const ParamLayout& layout,
                                                            const FitConfig& config)
{
  ViTarget target;
  target.log_density = [&data, &layout](const VectorXd& eta) {
    return log_h(eta, data, layout);
  };
  target.gradient = [&data, &layout](const VectorXd& eta) {
    return grad_log_h(eta, data, layout);
  };
  return fit(target, warm_start(data, layout), config);
}

struct FitSpec {
  BasisSpec basis;
  PriorChoice prior = PriorChoice::prior1;
  int correlation_factors = 1;  // Prior 2 only
  FitConfig vi;
  double margin_lower = -std::numeric_limits<double>::infinity();
  double margin_upper = std::numeric_limits<double>::infinity();
};

//! End-to-end fit: invariant KDE margins, normal scores, basis, VI posterior.
inline FittedModel fit_model(const MatrixXd& y, const MatrixXd& x_raw, const FitSpec& spec,
                             FitTrace* trace_out = nullptr)
{
  if (y.rows() != x_raw.rows())
    throw input_error("fit_model: response/covariate row mismatch");
  const int p = static_cast<int>(y.cols());
  const Eigen::Index n = y.rows();

  FittedModel model;
  model.design = build_design(RawCovariates::from_matrix(x_raw), spec.basis);
  model.layout = ParamLayout{ p, model.design.q(), spec.prior,
                              spec.prior == PriorChoice::prior2 ? spec.correlation_factors : 0 };

  ModelData data;
  data.f = model.design.f;
  data.z.resize(n, p);
  for (int j = 0; j < p; ++j) {
    model.margins.push_back(fit_margin(y.col(j), spec.margin_lower, spec.margin_upper));
    for (Eigen::Index i = 0; i < n; ++i)
      data.z(i, j) = model.margins[j].to_z(y(i, j));
  }

  auto [lambda, trace] = fit_posterior(data, model.layout, spec.vi);
  model.lambda = std::move(lambda);
  model.eta_hat = model.lambda.mu;
  if (trace_out)
    *trace_out = std::move(trace);
  return model;
}

//! Empirical-CDF evaluator over a sample vector, for calibration checks.
inline std::function<double(double)> empirical_cdf(VectorXd samples)
{
  std::sort(samples.data(), samples.data() + samples.size());
  return [samples = std::move(samples)](double y) {
    const double* begin = samples.data();
    const double* end = begin + samples.size();
    return static_cast<double>(std::upper_bound(begin, end, y) - begin) /
           static_cast<double>(samples.size());
  };
}

}  // namespace mvcopula
