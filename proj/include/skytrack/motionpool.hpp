#pragma once

#include <array>
#include <vector>

#include "skytrack/grid.hpp"
#include "skytrack/imaging.hpp"

namespace skytrack {

struct ChangeRank {
  Grid d;  // normalized absolute intensity change, sums to one
  Grid r;  // accumulated change of all pixels ranked at or below this one
  bool degenerate = false;  // frames identical after normalization
};

/// Ranks pixels by their share of the total intensity change between two
/// frames. Pixels are ordered by ascending d (ties by row-major position) and
/// r is the inclusive running sum in that order, so the largest change gets r = 1.
ChangeRank change_rank(const Grid& prev, const Grid& next);
ChangeRank change_rank(const ThermalFrame& prev, const ThermalFrame& next);

/// Pixels with r >= tau: the high-change tail carrying the top (1 - tau) of the mass.
CloudMask threshold_select(const ChangeRank& rank, double tau);

struct PoolEntry {
  double x = 0.0;  // column coordinate, pixels
  double y = 0.0;  // row coordinate, pixels
  double u = 0.0;  // m/s
  double v = 0.0;
  int age = 0;     // frames since the vector was measured
  std::array<double, 2> resp{1.0, 0.0};  // BeMM responsibilities at the pixel
};

struct VectorPool {
  std::vector<PoolEntry> entries;
  int depth = 6;
  bool inclusive = false;  // keep ages 0..depth (depth + 1 frames) instead of 0..depth-1

  std::size_t size() const { return entries.size(); }
  int max_age() const { return inclusive ? depth : depth - 1; }
};

/// Ages every entry by one frame, drops entries older than the pool keeps, and
/// appends the new frame's vectors at age zero. Returns a new pool.
VectorPool push_frame(const VectorPool& pool, const std::vector<PoolEntry>& selected);

}  // namespace skytrack
