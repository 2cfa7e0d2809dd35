#pragma once

#include <vector>

#include "skytrack/grid.hpp"
#include "skytrack/kernel_spec.hpp"
#include "skytrack/wsvr.hpp"

namespace skytrack {

struct GridField {
  Grid u;  // m/s, rows x cols
  Grid v;
  double height = 0.0;  // layer height H_c, meters
};

/// Row-major (col * scale, row * scale) coordinates of every pixel.
RowMatrix pixel_coordinates(int rows, int cols, double scale);

/// Evaluates both outputs of an MO solution at every pixel coordinate.
/// `grid` is rows*cols x 2 in row-major pixel order (see pixel_coordinates).
GridField extrapolate(const DualSolution& solution, const KernelSpec& kernel, const RowMatrix& train,
                      const RowMatrix& grid, int rows, int cols, Exec exec = Exec::parallel);

/// Per-cell constraint residuals: div = dx u + dy v, curl = dx u - dy v
/// (forward differences, zero where the neighbour is missing), plus their
/// squared norms.
struct DivCurl {
  Grid div;
  Grid curl;
  ConstraintResidual scalars;
};
DivCurl div_curl(const GridField& field, const FlowConstraintOps& ops);

struct StreamFunction {
  Grid phi;  // stream values
  Grid psi;  // potential values
};

/// Trapezoid-rule integration anchored at phi(0,0) = psi(0,0) = 0:
///   phi = H/2 (R[u dy] - C[v dx]),  psi = H/2 (C[u dx] + R[v dy])
/// where R accumulates down each column (over rows) and C along each row
/// (over columns). dx, dy are metric cell sizes per meter of height.
StreamFunction stream_potential(const GridField& field, const Grid& dx, const Grid& dy);

/// Inclusive trapezoid running sum along rows (axis 0) or columns (axis 1),
/// starting at zero.
Grid trapezoid_cumsum(const Grid& f, int axis);

struct Polyline {
  double level = 0.0;
  std::vector<Vec2> points;  // (col, row)
  bool closed = false;
};

/// Marching-squares isolines at levels min + (k + 1)(max - min)/(n + 1),
/// k = 0..n-1. Saddle cells are split using the cell-centre average.
/// A constant field yields no lines.
std::vector<Polyline> extract_isolines(const Grid& field, int n_levels);

struct IsolineSet {
  std::vector<Polyline> phi;
  std::vector<Polyline> psi;
};
IsolineSet extract_isolines(const StreamFunction& s, int n_levels);

/// Acute angle in degrees (0..90) at every proper crossing of a segment of
/// `a` with a segment of `b`.
std::vector<double> crossing_angles(const std::vector<Polyline>& a, const std::vector<Polyline>& b);

}  // namespace skytrack
