#pragma once

#include "common.hpp"

#include <algorithm>
#include <functional>
#include <limits>
#include <numeric>

namespace mvcopula {

//! Raw covariates with per-column standardization (mean 0, sd 1).
struct RawCovariates {
  MatrixXd values;                  // n x d, original scale
  std::vector<std::string> names;   // size d
  VectorXd mean;                    // column means
  VectorXd sd;                      // column standard deviations (sample, n-1)

  static RawCovariates from_matrix(const MatrixXd& x, std::vector<std::string> names = {})
  {
    if (x.rows() < 2)
      throw input_error("RawCovariates: need at least 2 rows");
    if (!x.allFinite())
      throw input_error("RawCovariates: non-finite covariate values");
    RawCovariates out;
    out.values = x;
    const Eigen::Index n = x.rows(), d = x.cols();
    out.mean = x.colwise().mean();
    out.sd.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double var = (x.col(j).array() - out.mean(j)).square().sum() /
                         static_cast<double>(n - 1);
      out.sd(j) = std::sqrt(var);
      if (!(out.sd(j) > 1e-12 * (1.0 + std::abs(out.mean(j)))))
        throw input_error("RawCovariates: column " + std::to_string(j) +
                          " has zero standard deviation");
    }
    if (names.empty()) {
      for (Eigen::Index j = 0; j < d; ++j)
        names.push_back("x" + std::to_string(j + 1));
    }
    out.names = std::move(names);
    return out;
  }

  MatrixXd standardized() const
  {
    return (values.rowwise() - mean.transpose()).array().rowwise() /
           sd.transpose().array();
  }
};

struct BasisSpec {
  int knot_count = 30;
  int poly_degree = 2;      // maximum total degree of the polynomial block
  int radial_exponent = 3;  // phi(r) = r^exponent
  std::uint64_t seed = 1;

  void validate() const
  {
    if (knot_count < 1)
      throw input_error("BasisSpec: knot_count must be >= 1");
    if (poly_degree < 1)
      throw input_error("BasisSpec: poly_degree must be >= 1");
    if (radial_exponent < 1)
      throw input_error("BasisSpec: radial_exponent must be >= 1");
  }
};

//! Monomial exponent vectors of total degree 1..max_degree in d variables,
//! graded lexicographic order (all degree-1 terms first, then degree-2, ...).
//! The constant term is excluded.
inline std::vector<std::vector<int>> monomial_exponents(int d, int max_degree)
{
  std::vector<std::vector<int>> out;
  std::vector<int> current(d, 0);
  // enumerate compositions of `degree` into d parts, lexicographically by exponent
  std::function<void(int, int)> recurse = [&](int pos, int remaining) {
    if (pos == d - 1) {
      current[pos] = remaining;
      out.push_back(current);
      return;
    }
    for (int e = remaining; e >= 0; --e) {
      current[pos] = e;
      recurse(pos + 1, remaining - e);
    }
  };
  for (int degree = 1; degree <= max_degree; ++degree)
    recurse(0, degree);
  return out;
}

inline int monomial_count(int d, int max_degree)
{
  // C(d + deg, deg) - 1
  long long c = 1;
  for (int i = 1; i <= max_degree; ++i)
    c = c * (d + i) / i;
  return static_cast<int>(c - 1);
}

//! Lloyd's k-means on standardized covariates. Deterministic per seed; empty
//! clusters are re-seeded at the point farthest from its assigned centroid.
inline MatrixXd select_knots(const RawCovariates& x, int k, std::uint64_t seed,
                             int max_iterations = 300)
{
  const MatrixXd xs = x.standardized();
  const Eigen::Index n = xs.rows(), d = xs.cols();

  // distinct rows (exact comparison on the standardized scale)
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index j = 0; j < d; ++j) {
      if (xs(a, j) != xs(b, j))
        return xs(a, j) < xs(b, j);
    }
    return false;
  });
  std::vector<Eigen::Index> distinct;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (distinct.empty() || (xs.row(order[i]) - xs.row(distinct.back())).norm() > 0.0)
      distinct.push_back(order[i]);
  }
  if (static_cast<std::size_t>(k) > distinct.size())
    throw input_error("select_knots: k exceeds number of distinct covariate rows");

  // initial centroids: k distinct rows chosen without replacement
  Rng rng(seed);
  std::vector<Eigen::Index> pool = distinct;
  MatrixXd centroids(k, d);
  for (int m = 0; m < k; ++m) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    const std::size_t idx = pick(rng);
    centroids.row(m) = xs.row(pool[idx]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(idx));
  }

  std::vector<int> assignment(n, -1);
  for (int iter = 0; iter < max_iterations; ++iter) {
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double best_d2 = (xs.row(i) - centroids.row(0)).squaredNorm();
      for (int m = 1; m < k; ++m) {
        const double d2 = (xs.row(i) - centroids.row(m)).squaredNorm();
        if (d2 < best_d2) {
          best_d2 = d2;
          best = m;
        }
      }
      if (assignment[i] != best) {
        assignment[i] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0)
      break;

    MatrixXd sums = MatrixXd::Zero(k, d);
    std::vector<int> counts(k, 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(assignment[i]) += xs.row(i);
      ++counts[assignment[i]];
    }
    for (int m = 0; m < k; ++m) {
      if (counts[m] > 0) {
        centroids.row(m) = sums.row(m) / counts[m];
      } else {
        // re-seed at the point farthest from its current centroid
        Eigen::Index far_i = 0;
        double far_d2 = -1.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double d2 = (xs.row(i) - centroids.row(assignment[i])).squaredNorm();
          if (d2 > far_d2) {
            far_d2 = d2;
            far_i = i;
          }
        }
        centroids.row(m) = xs.row(far_i);
      }
    }
  }
  return centroids;
}

//! Design matrix: polynomial block (degree 1..max, intercept excluded) followed
//! by thin-plate radial columns phi(||x - knot||) on the standardized scale.
struct DesignMatrix {
  MatrixXd f;          // n x q
  BasisSpec spec;
  MatrixXd knots;      // k x d, standardized scale
  VectorXd std_mean;   // standardization copied from RawCovariates
  VectorXd std_sd;
  std::vector<std::vector<int>> exponents;

  int q() const { return static_cast<int>(exponents.size()) + spec.knot_count; }
  int d() const { return static_cast<int>(std_mean.size()); }

  //! Basis row for one raw covariate vector.
  VectorXd row(const VectorXd& x_raw) const
  {
    if (x_raw.size() != std_mean.size())
      throw input_error("design_row: covariate dimension mismatch");
    if (!x_raw.allFinite())
      throw input_error("design_row: non-finite covariates");
    const VectorXd xs = (x_raw - std_mean).cwiseQuotient(std_sd);
    VectorXd out(q());
    Eigen::Index col = 0;
    for (const auto& expo : exponents) {
      double term = 1.0;
      for (int j = 0; j < d(); ++j) {
        for (int e = 0; e < expo[j]; ++e)
          term *= xs(j);
      }
      out(col++) = term;
    }
    for (int m = 0; m < spec.knot_count; ++m) {
      const double r = (xs.transpose() - knots.row(m)).norm();
      out(col++) = std::pow(r, spec.radial_exponent);
    }
    return out;
  }
};

inline DesignMatrix build_design(const RawCovariates& x, const BasisSpec& spec)
{
  spec.validate();
  DesignMatrix design;
  design.spec = spec;
  design.std_mean = x.mean;
  design.std_sd = x.sd;
  design.exponents = monomial_exponents(static_cast<int>(x.values.cols()), spec.poly_degree);
  design.knots = select_knots(x, spec.knot_count, spec.seed);

  const Eigen::Index n = x.values.rows();
  design.f.resize(n, design.q());
  for (Eigen::Index i = 0; i < n; ++i)
    design.f.row(i) = design.row(x.values.row(i)).transpose();
  return design;
}

}  // namespace mvcopula
