#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace hjblab {

/// How the truncated domain is closed. One-sided keeps the upwind drift and
/// drops the diffusion stencil at boundary nodes (dissipativity pushes mass
/// inward, so the boundary influence decays into the domain);
/// dirichlet-from-growth pins boundary values instead, for sensitivity checks.
enum class BoundaryPolicy { one_sided_extrapolation, dirichlet_from_growth };

std::string to_string(BoundaryPolicy p);

/// Uniform tensor grid on a box, dimension 1 or 2, shared spacing h.
class Grid {
 public:
  Grid() = default;
  Grid(std::vector<std::pair<double, double>> bounds, double h,
       BoundaryPolicy boundary = BoundaryPolicy::one_sided_extrapolation);

  int dim() const { return static_cast<int>(bounds_.size()); }
  double spacing() const { return h_; }
  BoundaryPolicy boundary() const { return boundary_; }
  const std::vector<std::pair<double, double>>& bounds() const { return bounds_; }
  std::size_t extent(int d) const { return shape_[static_cast<std::size_t>(d)]; }
  std::size_t size() const { return size_; }

  std::size_t flatten(const std::vector<std::size_t>& multi) const;
  std::vector<std::size_t> unflatten(std::size_t flat) const;
  double coordinate(int d, std::size_t i) const {
    return bounds_[static_cast<std::size_t>(d)].first + h_ * static_cast<double>(i);
  }
  Eigen::VectorXd node(std::size_t flat) const;
  bool on_boundary(std::size_t flat) const;

  /// Node nearest the origin (the phi normalization anchor).
  std::size_t anchor_node() const;
  /// Node nearest an arbitrary point (clamped to the box).
  std::size_t nearest_node(const Eigen::VectorXd& x) const;

 private:
  std::vector<std::pair<double, double>> bounds_;
  double h_ = 0.0;
  BoundaryPolicy boundary_ = BoundaryPolicy::one_sided_extrapolation;
  std::vector<std::size_t> shape_;
  std::size_t size_ = 0;
};

}  // namespace hjblab
