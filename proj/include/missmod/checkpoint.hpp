#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "missmod/layers.hpp"

namespace missmod {

// Flat little-endian binary checkpoint:
//
//   magic    8 bytes  "MMCKPT01"
//   u64      metadata length, followed by that many bytes (JSON text)
//   u64      entry count
//   entry:   u64 name length, name bytes,
//            u64 role length, role bytes,
//            u64 rank, rank x u64 dims,
//            prod(dims) x f64 values (IEEE-754, row-major)
//
// Values are copied bit-for-bit, so save -> load round-trips exactly.
struct CheckpointEntry {
  std::string name;
  std::string role;
  nn::Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string metadata;
  std::vector<CheckpointEntry> entries;
};

void save_checkpoint(const std::filesystem::path& path, const ParameterList& params, const std::string& metadata);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Overwrites every parameter in `params` from the file; names and shapes must
// match exactly. Returns the stored metadata.
std::string load_checkpoint(const std::filesystem::path& path, ParameterList& params);

}  // namespace missmod
