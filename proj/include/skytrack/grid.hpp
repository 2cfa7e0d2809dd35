#pragma once

#include <cstdint>
#include <stdexcept>

#include <Eigen/Dense>

namespace skytrack {

// Row-major M x N raster; (row, col) addressing matches the frame layout on disk.
using Grid = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MaskGrid = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using LabelGrid = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec2 = Eigen::Vector2d;
using Mat2 = Eigen::Matrix2d;

struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

struct LayerEmptyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Execution policy for the data-parallel kernels. The serial path is the
// reference the parallel path is tested against.
enum class Exec { serial, parallel };

}  // namespace skytrack
