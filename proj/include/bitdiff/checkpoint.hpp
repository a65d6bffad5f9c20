// SPDX-License-Identifier: Apache-2.0
//
// Parameter checkpoints: a plain-text header followed by little-endian
// 64-bit floats.
//
//   bitdiff-checkpoint 1
//   net blocks=2 width=64 ...
//   diffusion sigma_min=0.002 sigma_max=80 ...
//   data vocab=8 tokens=4
//   step 20000
//   param_count 95233
//   view embed.w 0 6 64
//   ...
//   schedule_records 8192
//   end_header
//   <param_count doubles><2 * schedule_records doubles: sigma, error pairs>
#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "bitdiff/bitcodec.hpp"
#include "bitdiff/diffusion_core.hpp"
#include "bitdiff/residual_net.hpp"

namespace bitdiff {

struct Checkpoint {
  Parameters params;
  DiffusionSpec spec;
  VocabSpec vocab;
  std::size_t tokens = 0;
  std::size_t step = 0;
  std::vector<std::pair<double, double>> schedule_records;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);

/// Throws MissingFileError if the file cannot be opened and ConfigError if
/// the header is malformed or disagrees with the network layout.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bitdiff
