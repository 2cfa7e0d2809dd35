#include "skytrack/flowfield.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <tuple>

namespace skytrack {

RowMatrix pixel_coordinates(int rows, int cols, double scale) {
  if (rows < 1 || cols < 1) throw InputError("grid must be non-empty");
  RowMatrix g(static_cast<Eigen::Index>(rows) * cols, 2);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const Eigen::Index p = static_cast<Eigen::Index>(r) * cols + c;
      g(p, 0) = c * scale;
      g(p, 1) = r * scale;
    }
  return g;
}

GridField extrapolate(const DualSolution& solution, const KernelSpec& kernel, const RowMatrix& train,
                      const RowMatrix& grid, int rows, int cols, Exec exec) {
  const Eigen::Index n = train.rows();
  if (grid.rows() != static_cast<Eigen::Index>(rows) * cols) throw InputError("grid coordinates do not match dims");
  if (solution.alpha.size() != 2 * n || solution.bias.size() != 2)
    throw InputError("extrapolation needs a two-output solution");
  // Same code path as predict, so training-point queries reproduce it bit for bit.
  const Eigen::VectorXd u = predict(solution, kernel, train, grid, 0, exec);
  const Eigen::VectorXd v = predict(solution, kernel, train, grid, 1, exec);
  GridField f;
  f.u = Eigen::Map<const Grid>(u.data(), rows, cols);
  f.v = Eigen::Map<const Grid>(v.data(), rows, cols);
  return f;
}

DivCurl div_curl(const GridField& field, const FlowConstraintOps& ops) {
  if (field.u.rows() != ops.rows || field.u.cols() != ops.cols || field.v.rows() != ops.rows ||
      field.v.cols() != ops.cols)
    throw InputError("field dims do not match the operators");
  const Eigen::Map<const Eigen::VectorXd> u(field.u.data(), field.u.size());
  const Eigen::Map<const Eigen::VectorXd> v(field.v.data(), field.v.size());
  const Eigen::VectorXd ru = ops.dx * u, rv = ops.dy * v;
  const Eigen::VectorXd d = ru + rv, c = ru - rv;
  DivCurl out;
  out.div = Eigen::Map<const Grid>(d.data(), ops.rows, ops.cols);
  out.curl = Eigen::Map<const Grid>(c.data(), ops.rows, ops.cols);
  out.scalars = {d.squaredNorm(), c.squaredNorm()};
  return out;
}

Grid trapezoid_cumsum(const Grid& f, int axis) {
  Grid out = Grid::Zero(f.rows(), f.cols());
  if (axis == 0) {
    for (Eigen::Index r = 1; r < f.rows(); ++r) out.row(r) = out.row(r - 1) + 0.5 * (f.row(r - 1) + f.row(r));
  } else if (axis == 1) {
    for (Eigen::Index c = 1; c < f.cols(); ++c) out.col(c) = out.col(c - 1) + 0.5 * (f.col(c - 1) + f.col(c));
  } else {
    throw InputError("axis must be 0 or 1");
  }
  return out;
}

StreamFunction stream_potential(const GridField& field, const Grid& dx, const Grid& dy) {
  const auto same = [&](const Grid& g) { return g.rows() == field.u.rows() && g.cols() == field.u.cols(); };
  if (!same(field.v) || !same(dx) || !same(dy)) throw InputError("stream_potential grids differ in size");
  if (!field.u.allFinite() || !field.v.allFinite()) throw DomainError("velocity field is not finite");
  const double h = 0.5 * field.height;
  StreamFunction s;
  s.phi = h * (trapezoid_cumsum(field.u * dy, 0) - trapezoid_cumsum(field.v * dx, 1));
  s.psi = h * (trapezoid_cumsum(field.u * dx, 1) + trapezoid_cumsum(field.v * dy, 0));
  return s;
}

namespace {

// Grid edge identity: horizontal edge (r, c)-(r, c+1) or vertical (r, c)-(r+1, c).
using EdgeKey = std::tuple<int, Eigen::Index, Eigen::Index>;

struct Segment {
  EdgeKey a, b;
  Vec2 pa, pb;
};

void march_level(const Grid& f, double level, std::vector<Segment>& segs) {
  const Eigen::Index rows = f.rows(), cols = f.cols();
  for (Eigen::Index r = 0; r + 1 < rows; ++r)
    for (Eigen::Index c = 0; c + 1 < cols; ++c) {
      // Corners clockwise from the top-left; edges top, right, bottom, left.
      const std::array<double, 4> val{f(r, c), f(r, c + 1), f(r + 1, c + 1), f(r + 1, c)};
      const std::array<Vec2, 4> pos{Vec2(c, r), Vec2(c + 1, r), Vec2(c + 1, r + 1), Vec2(c, r + 1)};
      const std::array<EdgeKey, 4> key{EdgeKey{0, r, c}, EdgeKey{1, r, c + 1}, EdgeKey{0, r + 1, c},
                                       EdgeKey{1, r, c}};
      std::array<bool, 4> in{};
      for (int k = 0; k < 4; ++k) in[k] = val[k] > level;
      std::array<int, 4> hit{};
      int nhit = 0;
      std::array<Vec2, 4> pt;
      for (int e = 0; e < 4; ++e) {
        const int a = e, b = (e + 1) % 4;
        if (in[a] == in[b]) continue;
        const double t = (level - val[a]) / (val[b] - val[a]);
        pt[e] = pos[a] + t * (pos[b] - pos[a]);
        hit[nhit++] = e;
      }
      auto add = [&](int e0, int e1) { segs.push_back({key[e0], key[e1], pt[e0], pt[e1]}); };
      if (nhit == 2) {
        add(hit[0], hit[1]);
      } else if (nhit == 4) {
        const bool centre = 0.25 * (val[0] + val[1] + val[2] + val[3]) > level;
        if (centre == in[0]) {
          add(0, 1);  // corners 1 and 3 are cut off
          add(2, 3);
        } else {
          add(3, 0);  // corners 0 and 2 are cut off
          add(1, 2);
        }
      }
    }
}

std::vector<Polyline> join(const std::vector<Segment>& segs, double level) {
  std::map<EdgeKey, std::vector<std::size_t>> at;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    at[segs[i].a].push_back(i);
    at[segs[i].b].push_back(i);
  }
  std::vector<bool> used(segs.size(), false);
  std::vector<Polyline> out;
  auto walk = [&](std::size_t start, const EdgeKey& from) {
    Polyline line;
    line.level = level;
    EdgeKey cur = from;
    std::size_t s = start;
    line.points.push_back(segs[s].a == cur ? segs[s].pa : segs[s].pb);
    for (;;) {
      used[s] = true;
      const bool forward = segs[s].a == cur;
      const EdgeKey next = forward ? segs[s].b : segs[s].a;
      line.points.push_back(forward ? segs[s].pb : segs[s].pa);
      cur = next;
      std::size_t nxt = segs.size();
      for (auto cand : at[cur])
        if (!used[cand]) nxt = cand;
      if (nxt == segs.size()) {
        line.closed = cur == from && line.points.size() > 2;
        break;
      }
      s = nxt;
    }
    out.push_back(std::move(line));
  };
  // Open chains start at edges touched once, then whatever remains is closed loops.
  for (const auto& [k, ids] : at)
    if (ids.size() == 1 && !used[ids[0]]) walk(ids[0], k);
  for (std::size_t i = 0; i < segs.size(); ++i)
    if (!used[i]) walk(i, segs[i].a);
  return out;
}

}  // namespace

std::vector<Polyline> extract_isolines(const Grid& field, int n_levels) {
  if (n_levels < 1) throw InputError("need at least one isoline level");
  if (field.size() == 0 || !field.allFinite()) throw InputError("isolines need a finite non-empty field");
  const double lo = field.minCoeff(), hi = field.maxCoeff();
  std::vector<Polyline> out;
  if (!(hi - lo > 1e-12 * std::max(1.0, std::max(std::abs(lo), std::abs(hi))))) return out;
  for (int k = 0; k < n_levels; ++k) {
    const double level = lo + (k + 1) * (hi - lo) / (n_levels + 1);
    std::vector<Segment> segs;
    march_level(field, level, segs);
    for (auto& l : join(segs, level)) out.push_back(std::move(l));
  }
  return out;
}

IsolineSet extract_isolines(const StreamFunction& s, int n_levels) {
  return {extract_isolines(s.phi, n_levels), extract_isolines(s.psi, n_levels)};
}

std::vector<double> crossing_angles(const std::vector<Polyline>& a, const std::vector<Polyline>& b) {
  struct Seg {
    Vec2 p, q;
    double xmin, xmax, ymin, ymax;
  };
  auto flatten = [](const std::vector<Polyline>& lines) {
    std::vector<Seg> out;
    for (const auto& l : lines)
      for (std::size_t i = 1; i < l.points.size(); ++i) {
        const Vec2 p = l.points[i - 1], q = l.points[i];
        if ((q - p).norm() == 0.0) continue;
        out.push_back({p, q, std::min(p.x(), q.x()), std::max(p.x(), q.x()), std::min(p.y(), q.y()),
                       std::max(p.y(), q.y())});
      }
    return out;
  };
  const auto sa = flatten(a), sb = flatten(b);
  auto cross2 = [](const Vec2& u, const Vec2& v) { return u.x() * v.y() - u.y() * v.x(); };
  std::vector<double> angles;
  for (const auto& s : sa)
    for (const auto& t : sb) {
      if (s.xmax < t.xmin || t.xmax < s.xmin || s.ymax < t.ymin || t.ymax < s.ymin) continue;
      const Vec2 r = s.q - s.p, d = t.q - t.p;
      const double den = cross2(r, d);
      if (den == 0.0) continue;
      const double u = cross2(t.p - s.p, d) / den, w = cross2(t.p - s.p, r) / den;
      if (u < 0.0 || u > 1.0 || w < 0.0 || w > 1.0) continue;
      const double cosang = std::abs(r.dot(d)) / (r.norm() * d.norm());
      angles.push_back(std::acos(std::min(1.0, cosang)) * 180.0 / std::numbers::pi);
    }
  return angles;
}

}  // namespace skytrack
