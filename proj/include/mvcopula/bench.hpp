#pragma once

#include "predict.hpp"

#include <chrono>
#include <numeric>
#include <sstream>

namespace mvcopula {

//! Sample CRPS estimate mean|X - y| - 1/2 mean|X - X'|, with the pairwise
//! term computed from the sorted sample in O(m log m).
inline double crps_sample(const VectorXd& samples, double y)
{
  const Eigen::Index m = samples.size();
  if (m < 2)
    throw input_error("crps_sample: need at least 2 samples");
  if (!samples.allFinite())
    throw input_error("crps_sample: non-finite samples");

  VectorXd sorted = samples;
  std::sort(sorted.data(), sorted.data() + m);
  const double term1 = (sorted.array() - y).abs().mean();

  // sum_{i,j} |x_i - x_j| = 2 sum_i (2i - m + 1) x_(i)
  double pair_sum = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    pair_sum += (2.0 * static_cast<double>(i) - static_cast<double>(m) + 1.0) * sorted(i);
  const double term2 = pair_sum / (static_cast<double>(m) * static_cast<double>(m));
  return term1 - term2;
}

inline double log_score(double density)
{
  if (!(density > 0.0))
    throw numerical_error("log_score: nonpositive predictive density");
  return -std::log(density);
}

inline double rmse(const VectorXd& predictions, const VectorXd& truths)
{
  if (predictions.size() != truths.size() || predictions.size() == 0)
    throw input_error("rmse: size mismatch");
  return std::sqrt((predictions - truths).array().square().mean());
}

//! Synthetic data drawn from the model's own generative law: covariates
//! uniform on [-2,2]^d, normal scores z_i ~ N(mean(x_i), Sigma), responses
//! y_ij = G_j^{-1}(Phi(z_ij)).
struct SynthSpec {
  int n = 500;
  int d = 2;
  MatrixXd sigma;  // p x p correlation
  std::vector<std::function<double(const VectorXd&)>> mean;  // per response, score scale
  std::vector<Margin> margins;                               // per response
  std::uint64_t seed = 1;
};

struct Dataset {
  MatrixXd y;  // n x p
  MatrixXd x;  // n x d
};

inline Dataset synth_generate(const SynthSpec& spec)
{
  const int p = static_cast<int>(spec.sigma.rows());
  if (spec.mean.size() != static_cast<std::size_t>(p) ||
      spec.margins.size() != static_cast<std::size_t>(p))
    throw input_error("synth_generate: mean/margin count must match sigma");
  Eigen::LLT<MatrixXd> llt(spec.sigma);
  if (llt.info() != Eigen::Success)
    throw input_error("synth_generate: sigma is not positive definite");

  Rng rng(spec.seed);
  Dataset out;
  out.x.resize(spec.n, spec.d);
  out.y.resize(spec.n, p);
  for (int i = 0; i < spec.n; ++i) {
    for (int j = 0; j < spec.d; ++j)
      out.x(i, j) = 4.0 * uniform01(rng) - 2.0;
    VectorXd z = llt.matrixL() * normal_vector(rng, p);
    const VectorXd xi = out.x.row(i);
    for (int j = 0; j < p; ++j)
      out.y(i, j) = spec.margins[j].from_z(z(j) + spec.mean[j](xi));
  }
  return out;
}

// ---------------------------------------------------------------------------
// cross-validation harness

enum class BenchBasis { tps, additive, linear };

struct BenchModelSpec {
  std::string name;
  bool noc = false;  // Gaussian copula over regression residuals instead of MVC
  BenchBasis basis = BenchBasis::tps;
  PriorChoice prior = PriorChoice::prior1;
  int knots = 8;                 // tps: joint knots; additive: knots per covariate
  int correlation_factors = 1;   // Prior 2 only
  FitConfig vi;
};

struct ScoreRow {
  std::string model;
  double crps = 0.0;
  double ls = 0.0;
  double rmse = 0.0;
  bool failed = false;
  std::vector<double> fold_crps, fold_ls, fold_rmse;
};

struct ScoreTable {
  std::vector<ScoreRow> rows;
  int folds = 0;
  std::uint64_t seed = 0;
  double wall_clock_seconds = 0.0;

  std::string to_csv() const
  {
    std::ostringstream os;
    os.precision(10);
    os << "model,CRPS,LS,RMSE,failed\n";
    for (const auto& row : rows)
      os << row.model << ',' << row.crps << ',' << row.ls << ',' << row.rmse << ','
         << (row.failed ? 1 : 0) << '\n';
    return os.str();
  }
};

//! Random fold assignment: shuffled indices dealt round-robin. Deterministic
//! per seed; the folds partition 0..n-1.
inline std::vector<std::vector<int>> fold_partition(int n, int folds, std::uint64_t seed)
{
  if (folds < 2 || n < folds)
    throw input_error("fold_partition: need 2 <= folds <= n");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<int> pick(0, i);
    std::swap(order[i], order[pick(rng)]);
  }
  std::vector<std::vector<int>> out(folds);
  for (int i = 0; i < n; ++i)
    out[i % folds].push_back(order[i]);
  return out;
}

namespace detail {

//! Basis with a row evaluator usable at new covariate values; the linear and
//! additive variants are bench-only alternatives to the joint thin-plate basis.
struct GenericDesign {
  MatrixXd f;
  std::function<VectorXd(const VectorXd&)> row;
};

inline GenericDesign bench_design(const MatrixXd& x_train, BenchBasis kind, int knots,
                                  std::uint64_t seed)
{
  const auto raw = RawCovariates::from_matrix(x_train);
  const Eigen::Index n = x_train.rows(), d = x_train.cols();
  GenericDesign out;

  if (kind == BenchBasis::tps) {
    BasisSpec spec;
    spec.knot_count = knots;
    spec.poly_degree = 2;
    spec.seed = seed;
    auto design = std::make_shared<DesignMatrix>(build_design(raw, spec));
    out.f = design->f;
    out.row = [design](const VectorXd& x) { return design->row(x); };
    return out;
  }

  const VectorXd mean = raw.mean, sd = raw.sd;
  if (kind == BenchBasis::linear) {
    out.row = [mean, sd](const VectorXd& x) -> VectorXd {
      return (x - mean).cwiseQuotient(sd);
    };
  } else {
    // additive: per covariate, linear term plus |x - knot|^3 spline columns
    // with knots at equally spaced sample quantiles
    const MatrixXd xs = raw.standardized();
    MatrixXd knot_grid(d, knots);
    for (Eigen::Index j = 0; j < d; ++j) {
      VectorXd col = xs.col(j);
      std::sort(col.data(), col.data() + n);
      for (int k = 0; k < knots; ++k) {
        const double u = (k + 1.0) / (knots + 1.0);
        knot_grid(j, k) = col(static_cast<Eigen::Index>(u * static_cast<double>(n - 1)));
      }
    }
    out.row = [mean, sd, knot_grid, knots, d](const VectorXd& x) -> VectorXd {
      const VectorXd xs_row = (x - mean).cwiseQuotient(sd);
      VectorXd r(d * (1 + knots));
      Eigen::Index col = 0;
      for (Eigen::Index j = 0; j < d; ++j) {
        r(col++) = xs_row(j);
        for (int k = 0; k < knots; ++k)
          r(col++) = std::pow(std::abs(xs_row(j) - knot_grid(j, k)), 3.0);
      }
      return r;
    };
  }
  const Eigen::Index q = out.row(VectorXd(x_train.row(0))).size();
  out.f.resize(n, q);
  for (Eigen::Index i = 0; i < n; ++i)
    out.f.row(i) = out.row(x_train.row(i)).transpose();
  return out;
}

//! One fitted candidate: either an MVC plug-in or the NOC benchmark
//! (per-equation ridge regression means, residual margins, constant
//! correlation Gaussian copula on the residual scores).
struct FittedCandidate {
  bool noc = false;
  GenericDesign design;
  std::vector<Margin> margins;

  // MVC
  ParamLayout layout;
  VectorXd eta;

  // NOC
  MatrixXd ridge_beta;  // q x p
  MatrixXd noc_sigma;   // p x p residual-score correlation
};

inline FittedCandidate fit_candidate(const MatrixXd& y, const MatrixXd& x,
                                     const BenchModelSpec& spec, std::uint64_t seed)
{
  FittedCandidate cand;
  cand.noc = spec.noc;
  cand.design = bench_design(x, spec.basis, spec.knots, seed);
  const int p = static_cast<int>(y.cols());
  const int q = static_cast<int>(cand.design.f.cols());
  const Eigen::Index n = y.rows();

  if (spec.noc) {
    const MatrixXd gram =
        cand.design.f.transpose() * cand.design.f + MatrixXd::Identity(q, q);
    Eigen::LLT<MatrixXd> llt(gram);
    cand.ridge_beta = llt.solve(cand.design.f.transpose() * y);
    const MatrixXd residuals = y - cand.design.f * cand.ridge_beta;
    MatrixXd scores(n, p);
    for (int j = 0; j < p; ++j) {
      cand.margins.push_back(fit_margin(residuals.col(j)));
      for (Eigen::Index i = 0; i < n; ++i)
        scores(i, j) = cand.margins[j].to_z(residuals(i, j));
    }
    MatrixXd cov = scores.transpose() * scores / static_cast<double>(n - 1);
    const VectorXd inv_sqrt = cov.diagonal().array().rsqrt();
    cand.noc_sigma = inv_sqrt.asDiagonal() * cov * inv_sqrt.asDiagonal();
    cand.noc_sigma.diagonal().setOnes();
    return cand;
  }

  cand.layout = ParamLayout{ p, q, spec.prior,
                             spec.prior == PriorChoice::prior2 ? spec.correlation_factors : 0 };
  ModelData data;
  data.f = cand.design.f;
  data.z.resize(n, p);
  for (int j = 0; j < p; ++j) {
    cand.margins.push_back(fit_margin(y.col(j)));
    for (Eigen::Index i = 0; i < n; ++i)
      data.z(i, j) = cand.margins[j].to_z(y(i, j));
  }
  FitConfig cfg = spec.vi;
  cfg.seed = seed;
  cand.eta = fit_posterior(data, cand.layout, cfg).first.mu;
  return cand;
}

struct ObservationScores {
  double crps = 0.0;  // per-response CRPS, averaged
  double ls = 0.0;    // -log joint predictive density
  VectorXd mean;      // per-response predictive means
};

inline ObservationScores score_observation(const FittedCandidate& cand, const VectorXd& x,
                                           const VectorXd& y, int n_samples, Rng& rng)
{
  const int p = static_cast<int>(y.size());
  const VectorXd row = cand.design.row(x);

  VectorXd mean(p);
  MatrixXd cov(p, p);
  VectorXd shift = VectorXd::Zero(p);  // NOC regression mean on the raw scale
  if (cand.noc) {
    mean.setZero();
    cov = cand.noc_sigma;
    shift = cand.ridge_beta.transpose() * row;
  } else {
    const auto theta = cand.layout.horseshoe(cand.eta);
    const MatrixXd beta = cand.layout.beta_matrix(cand.eta);
    VectorXd scale(p);
    for (int j = 0; j < p; ++j) {
      scale(j) = scale_factor(row, theta[j]);
      mean(j) = scale(j) * row.dot(beta.col(j));
    }
    cov = scale.asDiagonal() *
          correlation_matrix(cand.layout.correlation(cand.eta)) * scale.asDiagonal();
  }

  ObservationScores out;

  // joint log score on the copula scale
  VectorXd z(p);
  double log_jacobian = 0.0;
  for (int j = 0; j < p; ++j) {
    const double e = y(j) - shift(j);
    const double g = std::max(cand.margins[j].pdf(e), 1e-300);
    z(j) = cand.margins[j].to_z(e);
    log_jacobian += std::log(g) - norm_logpdf(z(j));
  }
  out.ls = -(mvn_logpdf(z, mean, cov) + log_jacobian);

  // predictive samples for CRPS, plus quadrature means for RMSE
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw numerical_error("score_observation: predictive covariance not SPD");
  MatrixXd samples(n_samples, p);
  for (int s = 0; s < n_samples; ++s) {
    const VectorXd zs = mean + llt.matrixL() * normal_vector(rng, p);
    for (int j = 0; j < p; ++j)
      samples(s, j) = shift(j) + cand.margins[j].from_z(zs(j));
  }
  const GaussHermite gh(32);
  out.mean.resize(p);
  for (int j = 0; j < p; ++j) {
    out.crps += crps_sample(samples.col(j), y(j)) / p;
    const Margin& margin = cand.margins[j];
    out.mean(j) = shift(j) + gh.expectation([&](double zv) { return margin.from_z(zv); },
                                            mean(j), std::sqrt(cov(j, j)));
  }
  return out;
}

}  // namespace detail

//! K-fold cross-validation of a list of candidate models. Fold assignment and
//! all fits are deterministic per seed; a failing fold marks the row failed
//! and the run continues.
inline ScoreTable kfold_cv(const MatrixXd& y, const MatrixXd& x, int folds,
                           const std::vector<BenchModelSpec>& specs, std::uint64_t seed,
                           int crps_samples = 200)
{
  const auto start = std::chrono::steady_clock::now();
  const int n = static_cast<int>(y.rows());
  const auto partition = fold_partition(n, folds, seed);

  ScoreTable table;
  table.folds = folds;
  table.seed = seed;

  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& spec = specs[s];
    ScoreRow row;
    row.model = spec.name;
    double crps_acc = 0.0, ls_acc = 0.0, se_acc = 0.0;
    int scored = 0;
    Eigen::Index se_count = 0;

    for (int fold = 0; fold < folds; ++fold) {
      const auto& test_idx = partition[fold];
      const int n_test = static_cast<int>(test_idx.size());
      const int n_train = n - n_test;
      MatrixXd y_train(n_train, y.cols()), x_train(n_train, x.cols());
      std::vector<char> in_test(n, 0);
      for (int i : test_idx)
        in_test[i] = 1;
      int r = 0;
      for (int i = 0; i < n; ++i) {
        if (!in_test[i]) {
          y_train.row(r) = y.row(i);
          x_train.row(r) = x.row(i);
          ++r;
        }
      }
      try {
        const auto cand = detail::fit_candidate(
            y_train, x_train, spec, seed + 1000 * (s + 1) + static_cast<std::uint64_t>(fold));
        Rng rng(seed + 7777 * (s + 1) + static_cast<std::uint64_t>(fold));
        double fold_crps = 0.0, fold_ls = 0.0, fold_se = 0.0;
        Eigen::Index fold_se_count = 0;
        for (int i : test_idx) {
          const auto scores =
              detail::score_observation(cand, x.row(i), y.row(i), crps_samples, rng);
          fold_crps += scores.crps;
          fold_ls += scores.ls;
          fold_se += (scores.mean - VectorXd(y.row(i))).array().square().sum();
          fold_se_count += y.cols();
        }
        row.fold_crps.push_back(fold_crps / n_test);
        row.fold_ls.push_back(fold_ls / n_test);
        row.fold_rmse.push_back(std::sqrt(fold_se / static_cast<double>(fold_se_count)));
        crps_acc += fold_crps;
        ls_acc += fold_ls;
        se_acc += fold_se;
        se_count += fold_se_count;
        scored += n_test;
      } catch (const std::exception&) {
        row.failed = true;
      }
    }
    if (scored > 0) {
      row.crps = crps_acc / scored;
      row.ls = ls_acc / scored;
      row.rmse = std::sqrt(se_acc / static_cast<double>(se_count));
    } else {
      row.failed = true;
      row.crps = row.ls = row.rmse = std::numeric_limits<double>::quiet_NaN();
    }
    table.rows.push_back(std::move(row));
  }

  table.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return table;
}

}  // namespace mvcopula
