#include "skytrack/motionpool.hpp"

#include <algorithm>
#include <numeric>

namespace skytrack {

ChangeRank change_rank(const Grid& prev, const Grid& next) {
  if (prev.rows() != next.rows() || prev.cols() != next.cols()) throw InputError("frame dimensions differ");
  const double lo = std::min(prev.minCoeff(), next.minCoeff());
  const double hi = std::max(prev.maxCoeff(), next.maxCoeff());
  const double span = hi > lo ? hi - lo : 1.0;
  ChangeRank out;
  out.d = ((next - prev) / span).abs();
  const double total = out.d.sum();
  const auto n = out.d.size();
  if (!(total > 0.0)) {
    out.degenerate = true;
    out.d.setConstant(1.0 / static_cast<double>(n));
  } else {
    out.d /= total;
  }

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return out.d(a) < out.d(b); });
  out.r.resize(out.d.rows(), out.d.cols());
  double running = 0.0;
  for (auto idx : order) {
    running += out.d(idx);
    out.r(idx) = running;
  }
  // Pin the top of the ranking to exactly one despite rounding in the sum.
  out.r /= running;
  return out;
}

ChangeRank change_rank(const ThermalFrame& prev, const ThermalFrame& next) {
  return change_rank(prev.temps(), next.temps());
}

CloudMask threshold_select(const ChangeRank& rank, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw InputError("selection threshold must lie in (0, 1)");
  return CloudMask{(rank.r >= tau).cast<std::uint8_t>()};
}

VectorPool push_frame(const VectorPool& pool, const std::vector<PoolEntry>& selected) {
  if (pool.depth < 1) throw InputError("pool depth must be at least 1");
  VectorPool out;
  out.depth = pool.depth;
  out.inclusive = pool.inclusive;
  out.entries.reserve(pool.entries.size() + selected.size());
  for (const auto& e : pool.entries) {
    if (e.age + 1 > out.max_age()) continue;
    out.entries.push_back(e);
    ++out.entries.back().age;
  }
  for (const auto& e : selected) {
    out.entries.push_back(e);
    out.entries.back().age = 0;
  }
  return out;
}

}  // namespace skytrack
