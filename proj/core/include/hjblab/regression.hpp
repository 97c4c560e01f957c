#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <vector>

namespace hjblab {

enum class BasisFamily { polynomial, tensor_polynomial_regime };

/// Basis of the conditional-expectation projections: total-degree polynomials
/// in x (clipped to a box to control extrapolation), either pooled across
/// regimes or tensored with regime indicators (one independent polynomial
/// block per control — indicator blocks have disjoint support, so each block
/// is fit on its own subsample).
struct RegressionBasis {
  BasisFamily family = BasisFamily::tensor_polynomial_regime;
  int degree = 3;
  double clip_radius = 10.0;

  std::size_t monomials(int dim) const;
  std::size_t size(int dim, std::size_t n_controls) const;
};

/// A fitted time-slice surface (x, regime) -> value. Inputs are standardized
/// per block before the polynomial is evaluated; undersampled blocks fall
/// back to a lower degree or to the pooled fit.
class FittedSurface {
 public:
  struct Block {
    int degree = 0;
    Eigen::VectorXd mean;   // per dim
    Eigen::VectorXd scale;  // per dim
    Eigen::VectorXd coef;
    double condition = 1.0;
    std::size_t samples = 0;
    bool use_pooled = false;
    bool valid = false;
  };

  double eval(const Eigen::VectorXd& x, int regime) const;
  double max_condition() const;
  std::size_t block_samples(std::size_t regime) const { return blocks_[regime].samples; }

 private:
  friend FittedSurface fit_surface(const RegressionBasis&, const Eigen::MatrixXd&,
                                   const std::vector<int>&, const Eigen::VectorXd&, std::size_t);
  std::vector<Block> blocks_;  // one per regime (empty when family == polynomial)
  Block pooled_;
  double clip_radius_ = 0.0;
  int dim_ = 0;
};

/// Least-squares fit of y against the basis at sample points (x, regime).
/// Normal equations with a condition-number guard: a block whose Gram matrix
/// exceeds the guard drops to a lower degree, and an empty or degenerate
/// block delegates to the pooled fit. Throws RegressionError only if even the
/// pooled degree-0 fit is impossible (no samples / non-finite data).
FittedSurface fit_surface(const RegressionBasis& basis, const Eigen::MatrixXd& x,
                          const std::vector<int>& regimes, const Eigen::VectorXd& y,
                          std::size_t n_controls);

}  // namespace hjblab
