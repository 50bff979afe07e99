#pragma once

// Spatial grid, soft position-to-cell assignment, and the cross-grid
// detection pieces (Jensen-Shannon divergence + gate mask).

#include <cmath>
#include <ostream>
#include <vector>

#include "crowdflow/autodiff.hpp"
#include "crowdflow/core.hpp"

namespace crowdflow {

struct Grid {
  Rect bounds;
  std::size_t nx = 0, ny = 0;
  double cell_w = 0.0, cell_h = 0.0;
  std::vector<Vec2> centers;  // row-major: cell (ix, iy) at index iy*nx + ix

  static Grid make(Rect bounds, std::size_t nx, std::size_t ny) {
    require(nx >= 1 && ny >= 1, "Grid: need at least one cell per axis");
    require(bounds.width() > 0.0 && bounds.height() > 0.0,
            "Grid: bounds must have positive area");
    Grid g;
    g.bounds = bounds;
    g.nx = nx;
    g.ny = ny;
    g.cell_w = bounds.width() / static_cast<double>(nx);
    g.cell_h = bounds.height() / static_cast<double>(ny);
    g.centers.reserve(nx * ny);
    for (std::size_t iy = 0; iy < ny; ++iy)
      for (std::size_t ix = 0; ix < nx; ++ix)
        g.centers.emplace_back(bounds.min_x + (ix + 0.5) * g.cell_w,
                               bounds.min_y + (iy + 0.5) * g.cell_h);
    return g;
  }

  std::size_t size() const { return nx * ny; }

  // Nearest cell center; out-of-bounds positions clamp to the rim.
  std::size_t nearest_cell(Vec2 p) const {
    auto bin = [](double v, double lo, double w, std::size_t n) {
      long i = static_cast<long>(std::floor((v - lo) / w));
      if (i < 0) i = 0;
      if (i >= static_cast<long>(n)) i = static_cast<long>(n) - 1;
      return static_cast<std::size_t>(i);
    };
    return bin(p.y, bounds.min_y, cell_h, ny) * nx +
           bin(p.x, bounds.min_x, cell_w, nx);
  }

  // One cell of displacement shifts log-weights by about 2 at this value.
  double default_beta() const { return 2.0 / (cell_w * cell_h); }
};

namespace detail {

inline ad::Tensor centers_tensor(const Grid& grid) {
  ad::Tensor c(grid.size(), 2);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    c.mut(i, 0) = grid.centers[i].x;
    c.mut(i, 1) = grid.centers[i].y;
  }
  return c;
}

}  // namespace detail

// Soft assignment of each row of `positions` (M,2) to every grid cell:
// q = softmax(-beta * squared distance to centers), rows sum to one.
inline ad::Tensor soft_assign_matrix(const Grid& grid,
                                     const ad::Tensor& positions,
                                     double beta) {
  require(beta > 0.0, "soft_assign: beta must be positive");
  require(positions.cols() == 2, "soft_assign: positions must be (M,2)");
  const std::size_t n = grid.size();
  ad::Tensor c = detail::centers_tensor(grid);
  ad::Tensor ct = ad::transpose(c);  // (2,N) constant
  // |p - c|^2 = |p|^2 + |c|^2 - 2 p.c
  ad::Tensor p_sq = ad::sum_axis(ad::mul(positions, positions), 1);  // (M,1)
  ad::Tensor c_sq(1, n);
  for (std::size_t i = 0; i < n; ++i)
    c_sq.mut(0, i) = grid.centers[i].squared_norm();
  ad::Tensor cross = ad::matmul(positions, ct);  // (M,N)
  ad::Tensor d2 = ad::add(
      ad::sub(ad::broadcast(p_sq, positions.rows(), n), ad::scale(cross, 2.0)),
      ad::broadcast(c_sq, positions.rows(), n));
  return ad::softmax_rows(ad::scale(d2, -beta));
}

inline ad::Tensor soft_assign(const Grid& grid, Vec2 position, double beta) {
  ad::Tensor p(1, 2);
  p.mut(0, 0) = position.x;
  p.mut(0, 1) = position.y;
  return soft_assign_matrix(grid, p, beta);
}

// Density field (N,1): sum of the per-pedestrian assignment rows.
inline ad::Tensor density_from_positions(const Grid& grid,
                                         const ad::Tensor& positions,
                                         double beta) {
  if (positions.rows() == 0) return ad::Tensor::zeros(grid.size(), 1);
  ad::Tensor q = soft_assign_matrix(grid, positions, beta);
  return ad::transpose(ad::sum_axis(q, 0));
}

// Row-wise Jensen-Shannon divergence between two stacks of distributions,
// natural log, 0*log(0/x) treated as 0. dJ/dq1 = 0.5*log(q1/m) per entry.
inline ad::Tensor js_rows(const ad::Tensor& q1, const ad::Tensor& q2) {
  ad::detail::check_same_shape("js_divergence", q1, q2);
  for (double v : q1.values())
    require(v >= 0.0, "js_divergence: negative entry in q1");
  for (double v : q2.values())
    require(v >= 0.0, "js_divergence: negative entry in q2");
  const std::size_t rows = q1.rows(), cols = q1.cols();
  ad::Tensor out(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    double j = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double a = q1.at(r, c), b = q2.at(r, c);
      const double m = 0.5 * (a + b);
      // paired per coordinate so J(q1,q2) == J(q2,q1) exactly
      const double ta = a > 0.0 ? 0.5 * a * std::log(a / m) : 0.0;
      const double tb = b > 0.0 ? 0.5 * b * std::log(b / m) : 0.0;
      j += ta + tb;
    }
    out.mut(r, 0) = j;
  }
  if (ad::Tape* t = ad::detail::joint_tape(q1, q2)) {
    std::vector<int> parents;
    if (q1.on_tape()) parents.push_back(q1.node());
    if (q2.on_tape()) parents.push_back(q2.node());
    int node = t->alloc(out.numel(), parents, [q1, q2](ad::Tape& tp,
                                                       int self) {
      const auto& g = tp.grad_buf(self);
      const std::size_t rows2 = q1.rows(), cols2 = q1.cols();
      for (std::size_t r = 0; r < rows2; ++r) {
        if (g[r] == 0.0) continue;
        for (std::size_t c = 0; c < cols2; ++c) {
          const double a = q1.at(r, c), b = q2.at(r, c);
          const double m = 0.5 * (a + b);
          if (q1.on_tape() && a > 0.0)
            tp.grad_buf(q1.node())[r * cols2 + c] +=
                g[r] * 0.5 * std::log(a / m);
          if (q2.on_tape() && b > 0.0)
            tp.grad_buf(q2.node())[r * cols2 + c] +=
                g[r] * 0.5 * std::log(b / m);
        }
      }
    });
    t->bind(out, node);
  }
  return out;
}

// Scalar JS between two distributions of any common shape.
inline ad::Tensor js_divergence(const ad::Tensor& q1, const ad::Tensor& q2) {
  ad::detail::check_same_shape("js_divergence", q1, q2);
  return ad::sum(js_rows(q1, q2));
}

constexpr double kMaskFloor = 0.01;
constexpr double kMaskCeil = 0.99;

// sigma(alpha*(J - tau)) clamped into [0.01, 0.99]; zero gradient only in
// the clamped region.
inline ad::Tensor cross_grid_mask(const ad::Tensor& js, double alpha,
                                  double tau_mask) {
  for (double v : js.values())
    require(v >= 0.0, "cross_grid_mask: J must be nonnegative");
  return ad::clamp(ad::sigmoid(ad::scale(ad::add_scalar(js, -tau_mask), alpha)),
                   kMaskFloor, kMaskCeil);
}

inline double cross_grid_mask(double js, double alpha, double tau_mask) {
  return cross_grid_mask(ad::Tensor::scalar(js), alpha, tau_mask).item();
}

// One frame per line, nx*ny comma-separated values, row-major.
inline void write_density_csv(std::ostream& os,
                              const std::vector<ad::Tensor>& frames) {
  for (const auto& rho : frames) {
    const auto& v = rho.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) os << ',';
      os << format_double(v[i]);
    }
    os << '\n';
  }
}

}  // namespace crowdflow
