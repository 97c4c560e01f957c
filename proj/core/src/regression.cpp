#include "hjblab/regression.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>

#include "hjblab/errors.hpp"

namespace hjblab {

namespace {

constexpr double kConditionGuard = 1e12;

std::size_t monomial_count(int dim, int degree) {
  if (dim == 1) return static_cast<std::size_t>(degree + 1);
  // total degree in two variables
  return static_cast<std::size_t>((degree + 1) * (degree + 2) / 2);
}

// standardized, clipped monomial row
void fill_monomials(const Eigen::VectorXd& x, const FittedSurface::Block& blk, double clip,
                    int degree, Eigen::VectorXd& row) {
  const int dim = static_cast<int>(blk.mean.size());
  double z0 = (std::clamp(x[0], -clip, clip) - blk.mean[0]) / blk.scale[0];
  if (dim == 1) {
    double p = 1.0;
    for (int k = 0; k <= degree; ++k) {
      row[k] = p;
      p *= z0;
    }
    return;
  }
  const double z1 = (std::clamp(x[1], -clip, clip) - blk.mean[1]) / blk.scale[1];
  int c = 0;
  double p0 = 1.0;
  for (int i = 0; i <= degree; ++i) {
    double p1 = 1.0;
    for (int j = 0; i + j <= degree; ++j) {
      row[c++] = p0 * p1;
      p1 *= z1;
    }
    p0 *= z0;
  }
}

// fit one block on the rows listed in `idx`; reduces degree until the Gram
// matrix passes the condition guard
FittedSurface::Block fit_block(const RegressionBasis& basis, const Eigen::MatrixXd& x,
                               const Eigen::VectorXd& y, const std::vector<std::size_t>& idx) {
  FittedSurface::Block blk;
  const int dim = static_cast<int>(x.cols());
  blk.samples = idx.size();
  if (idx.empty()) return blk;

  blk.mean = Eigen::VectorXd::Zero(dim);
  blk.scale = Eigen::VectorXd::Ones(dim);
  for (std::size_t r : idx)
    for (int d = 0; d < dim; ++d)
      blk.mean[d] += std::clamp(x(static_cast<Eigen::Index>(r), d), -basis.clip_radius,
                                basis.clip_radius);
  blk.mean /= static_cast<double>(idx.size());
  Eigen::VectorXd var = Eigen::VectorXd::Zero(dim);
  for (std::size_t r : idx)
    for (int d = 0; d < dim; ++d) {
      const double dev = std::clamp(x(static_cast<Eigen::Index>(r), d), -basis.clip_radius,
                                    basis.clip_radius) -
                         blk.mean[d];
      var[d] += dev * dev;
    }
  for (int d = 0; d < dim; ++d)
    blk.scale[d] = std::max(std::sqrt(var[d] / static_cast<double>(idx.size())), 1e-10);

  int degree = basis.degree;
  // keep at least two samples per coefficient
  while (degree > 0 && idx.size() < 2 * monomial_count(dim, degree)) --degree;

  Eigen::VectorXd row;
  for (; degree >= 0; --degree) {
    const std::size_t m = monomial_count(dim, degree);
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m),
                                                 static_cast<Eigen::Index>(m));
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m));
    row.resize(static_cast<Eigen::Index>(m));
    for (std::size_t r : idx) {
      fill_monomials(x.row(static_cast<Eigen::Index>(r)).transpose(), blk, basis.clip_radius,
                     degree, row);
      gram.selfadjointView<Eigen::Lower>().rankUpdate(row);
      rhs += row * y[static_cast<Eigen::Index>(r)];
    }
    gram = gram.selfadjointView<Eigen::Lower>();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo > kConditionGuard) continue;  // degree fallback

    blk.coef = Eigen::LDLT<Eigen::MatrixXd>(gram).solve(rhs);
    if (!blk.coef.allFinite()) continue;
    blk.degree = degree;
    blk.condition = std::sqrt(hi / lo);
    blk.valid = true;
    return blk;
  }
  return blk;  // invalid: caller falls back to the pooled fit
}

}  // namespace

std::size_t RegressionBasis::monomials(int dim) const { return monomial_count(dim, degree); }

std::size_t RegressionBasis::size(int dim, std::size_t n_controls) const {
  const std::size_t per = monomials(dim);
  return family == BasisFamily::tensor_polynomial_regime ? per * n_controls : per;
}

double FittedSurface::eval(const Eigen::VectorXd& x, int regime) const {
  const Block* blk = &pooled_;
  if (!blocks_.empty()) {
    const Block& candidate = blocks_[static_cast<std::size_t>(regime)];
    if (candidate.valid && !candidate.use_pooled) blk = &candidate;
  }
  Eigen::VectorXd row(blk->coef.size());
  fill_monomials(x, *blk, clip_radius_, blk->degree, row);
  return row.dot(blk->coef);
}

double FittedSurface::max_condition() const {
  double c = pooled_.condition;
  for (const auto& b : blocks_)
    if (b.valid && !b.use_pooled) c = std::max(c, b.condition);
  return c;
}

FittedSurface fit_surface(const RegressionBasis& basis, const Eigen::MatrixXd& x,
                          const std::vector<int>& regimes, const Eigen::VectorXd& y,
                          std::size_t n_controls) {
  if (x.rows() == 0) throw RegressionError("fit_surface: empty sample");
  if (x.rows() != y.size() || regimes.size() != static_cast<std::size_t>(x.rows()))
    throw RegressionError("fit_surface: sample size mismatch");
  if (!y.allFinite()) throw RegressionError("fit_surface: non-finite targets");

  FittedSurface s;
  s.clip_radius_ = basis.clip_radius;
  s.dim_ = static_cast<int>(x.cols());

  std::vector<std::size_t> all(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  s.pooled_ = fit_block(basis, x, y, all);
  if (!s.pooled_.valid) throw RegressionError("fit_surface: pooled fit failed");

  if (basis.family == BasisFamily::tensor_polynomial_regime && n_controls > 1) {
    std::vector<std::vector<std::size_t>> by_regime(n_controls);
    for (std::size_t i = 0; i < all.size(); ++i)
      by_regime[static_cast<std::size_t>(regimes[i])].push_back(i);
    s.blocks_.resize(n_controls);
    for (std::size_t j = 0; j < n_controls; ++j) {
      s.blocks_[j] = fit_block(basis, x, y, by_regime[j]);
      if (!s.blocks_[j].valid) {
        s.blocks_[j].use_pooled = true;
        s.blocks_[j].samples = by_regime[j].size();
      }
    }
  }
  return s;
}

}  // namespace hjblab
