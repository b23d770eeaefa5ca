#pragma once

// Named-tensor checkpoint container.
//
// Byte layout (all integers little-endian):
//   magic    8 bytes  "KQGCKPT1"
//   count    u32      number of tensors
//   then per tensor:
//     name_len u32, name bytes (UTF-8, no terminator)
//     group    u8     0 = qg_core, 1 = knowledge
//     dtype    u8     1 = float64 (only value written)
//     ndim     u32    always 2
//     dims     u64 x ndim  (rows, cols)
//     payload  rows*cols float64, IEEE-754 little-endian, row-major

#include <Eigen/Core>

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kqg/nn/parameters.hpp"

namespace kqg {

using ParameterSet = nn::ParameterSet<double>;

struct NamedTensor {
  std::string name;
  nn::Group group = nn::Group::QgCore;
  Eigen::MatrixXd value;
};

using Checkpoint = std::vector<NamedTensor>;

Checkpoint snapshot(const ParameterSet& params);

/// Copies checkpoint values into `params`; names and shapes must match.
void restore(ParameterSet& params, const Checkpoint& ckpt);

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Elementwise mean computed as a running average in list order, so
/// averaging identical checkpoints returns them unchanged.
Checkpoint average_checkpoints(std::span<const Checkpoint> checkpoints);

}  // namespace kqg
