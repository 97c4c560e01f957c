#include "hjblab/grid.hpp"

#include <cmath>
#include <stdexcept>

namespace hjblab {

std::string to_string(BoundaryPolicy p) {
  switch (p) {
    case BoundaryPolicy::one_sided_extrapolation: return "one-sided-extrapolation";
    case BoundaryPolicy::dirichlet_from_growth: return "dirichlet-from-growth";
  }
  return "?";
}

Grid::Grid(std::vector<std::pair<double, double>> bounds, double h, BoundaryPolicy boundary)
    : bounds_(std::move(bounds)), h_(h), boundary_(boundary) {
  if (h_ <= 0.0) throw std::invalid_argument("Grid: spacing h must be positive");
  if (bounds_.empty() || bounds_.size() > 2)
    throw std::invalid_argument("Grid: dimension must be 1 or 2");
  size_ = 1;
  for (const auto& [lo, hi] : bounds_) {
    if (!(lo < hi)) throw std::invalid_argument("Grid: bounds must be ordered");
    const double raw = (hi - lo) / h_;
    const double rounded = std::round(raw);
    // node count = (x_max - x_min)/h + 1, required exact
    if (std::abs(raw - rounded) > 1e-9 * (1.0 + raw) || rounded < 1.0)
      throw std::invalid_argument("Grid: (x_max - x_min) must be an integer multiple of h");
    shape_.push_back(static_cast<std::size_t>(rounded) + 1);
    size_ *= shape_.back();
  }
}

std::size_t Grid::flatten(const std::vector<std::size_t>& multi) const {
  std::size_t flat = 0;
  for (std::size_t d = 0; d < shape_.size(); ++d) flat = flat * shape_[d] + multi[d];
  return flat;
}

std::vector<std::size_t> Grid::unflatten(std::size_t flat) const {
  std::vector<std::size_t> multi(shape_.size());
  for (std::size_t d = shape_.size(); d-- > 0;) {
    multi[d] = flat % shape_[d];
    flat /= shape_[d];
  }
  return multi;
}

Eigen::VectorXd Grid::node(std::size_t flat) const {
  const auto multi = unflatten(flat);
  Eigen::VectorXd x(dim());
  for (int d = 0; d < dim(); ++d) x[d] = coordinate(d, multi[static_cast<std::size_t>(d)]);
  return x;
}

bool Grid::on_boundary(std::size_t flat) const {
  const auto multi = unflatten(flat);
  for (std::size_t d = 0; d < shape_.size(); ++d)
    if (multi[d] == 0 || multi[d] + 1 == shape_[d]) return true;
  return false;
}

std::size_t Grid::anchor_node() const {
  return nearest_node(Eigen::VectorXd::Zero(dim()));
}

std::size_t Grid::nearest_node(const Eigen::VectorXd& x) const {
  std::vector<std::size_t> multi(shape_.size());
  for (std::size_t d = 0; d < shape_.size(); ++d) {
    const double lo = bounds_[d].first;
    double idx = std::round((x[static_cast<Eigen::Index>(d)] - lo) / h_);
    idx = std::max(0.0, std::min(idx, static_cast<double>(shape_[d] - 1)));
    multi[d] = static_cast<std::size_t>(idx);
  }
  return flatten(multi);
}

}  // namespace hjblab
