// Test-only dense oracles. These deliberately build the full np x np / pq x pq
// matrices with explicit Kronecker products, independent of the compact code
// paths they are used to check.
#pragma once

#include <mvcopula/model.hpp>

namespace oracles {

using mvcopula::MatrixXd;
using mvcopula::Rng;
using mvcopula::VectorXd;

inline MatrixXd kron(const MatrixXd& a, const MatrixXd& b)
{
  MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

//! A random correlation matrix via normalized Wishart-style construction.
inline MatrixXd random_correlation(int p, Rng& rng)
{
  MatrixXd a(p, p + 3);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      a(i, j) = mvcopula::standard_normal(rng);
  MatrixXd cov = a * a.transpose() + 0.1 * MatrixXd::Identity(p, p);
  const VectorXd inv_sqrt = cov.diagonal().array().rsqrt();
  MatrixXd corr = inv_sqrt.asDiagonal() * cov * inv_sqrt.asDiagonal();
  corr.diagonal().setOnes();
  return corr;
}

//! Dense Sigma * P^{-1} with P_j^{-1} = diag(xi_j^2), by explicit blocks.
inline MatrixXd dense_star_horseshoe(const MatrixXd& sigma,
                                     const std::vector<mvcopula::HorseshoeParams>& theta)
{
  const int p = static_cast<int>(sigma.rows());
  const int q = static_cast<int>(theta.front().log_xi.size());
  MatrixXd out(p * q, p * q);
  for (int j = 0; j < p; ++j)
    for (int l = 0; l < p; ++l)
      out.block(j * q, l * q, q, q) =
          sigma(j, l) *
          MatrixXd(theta[j].xi().asDiagonal()) * MatrixXd(theta[l].xi().asDiagonal());
  return out;
}

//! Dense V = (Sigma ox I_n) + X (Sigma * P^{-1}) X^T with X = I_p ox F.
inline MatrixXd dense_v(const MatrixXd& sigma,
                        const std::vector<mvcopula::HorseshoeParams>& theta,
                        const MatrixXd& f)
{
  const int p = static_cast<int>(sigma.rows());
  const Eigen::Index n = f.rows();
  const MatrixXd x = kron(MatrixXd::Identity(p, p), f);
  return kron(sigma, MatrixXd::Identity(n, n)) +
         x * dense_star_horseshoe(sigma, theta) * x.transpose();
}

//! z stacked by variable: (z_{.,1}^T, ..., z_{.,p}^T)^T.
inline VectorXd stack_by_variable(const MatrixXd& z)
{
  VectorXd out(z.size());
  for (Eigen::Index j = 0; j < z.cols(); ++j)
    out.segment(j * z.rows(), z.rows()) = z.col(j);
  return out;
}

//! Dense augmented log-posterior: log N(z; SXb, S(Sigma ox I)S) +
//! log N(beta; 0, Sigma * P^{-1}) + copula prior.
inline double dense_log_h(const VectorXd& eta, const mvcopula::ModelData& data,
                          const mvcopula::ParamLayout& layout)
{
  const int p = layout.n_responses;
  const Eigen::Index n = data.z.rows();
  const auto params = layout.decode(eta);
  const MatrixXd sigma = mvcopula::correlation_matrix(params.correlation);
  const MatrixXd beta = layout.beta_matrix(eta);

  const MatrixXd s_mat = mvcopula::scale_matrix(data.f, params.theta);
  VectorXd s_diag(n * p);
  for (int j = 0; j < p; ++j)
    s_diag.segment(j * n, n) = s_mat.col(j);

  const MatrixXd x = kron(MatrixXd::Identity(p, p), data.f);
  VectorXd beta_vec(layout.beta_size());
  for (int j = 0; j < p; ++j)
    beta_vec.segment(j * layout.n_basis, layout.n_basis) = beta.col(j);

  const VectorXd mean = s_diag.asDiagonal() * (x * beta_vec);
  const MatrixXd cov = s_diag.asDiagonal() *
                       kron(sigma, MatrixXd::Identity(n, n)) *
                       MatrixXd(s_diag.asDiagonal());

  double acc = mvcopula::mvn_logpdf(stack_by_variable(data.z), mean, cov);
  acc += mvcopula::mvn_logpdf(beta_vec, VectorXd::Zero(beta_vec.size()),
                              dense_star_horseshoe(sigma, params.theta));
  acc += mvcopula::log_prior_copula(params);
  return acc;
}

inline VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f,
                            const VectorXd& x, double step = 1e-5)
{
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd xp = x, xm = x;
    xp(i) += step;
    xm(i) -= step;
    g(i) = (f(xp) - f(xm)) / (2.0 * step);
  }
  return g;
}

//! Random unconstrained parameter vector with tame magnitudes.
inline VectorXd random_eta(const mvcopula::ParamLayout& layout, Rng& rng, double scale = 0.4)
{
  VectorXd eta(layout.total());
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    eta(i) = scale * mvcopula::standard_normal(rng);
  return eta;
}

inline mvcopula::ModelData random_data(int n, int p, int q, Rng& rng)
{
  mvcopula::ModelData data;
  data.z.resize(n, p);
  data.f.resize(n, q);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j)
      data.z(i, j) = mvcopula::standard_normal(rng);
    for (int k = 0; k < q; ++k)
      data.f(i, k) = mvcopula::standard_normal(rng);
  }
  return data;
}

}  // namespace oracles
