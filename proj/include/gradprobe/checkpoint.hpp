#pragma once

// GPRB1 parameter checkpoints.
//
//   "GPRB1"                       5 bytes, no terminator
//   u32 set_count
//   per set:
//     u32 name_length, name bytes (UTF-8)
//     u32 rank, rank × u32 dims
//     product(dims) × f64 values
//
// All integers and floats are little-endian.

#include <filesystem>
#include <string>
#include <vector>

#include "gradprobe/model.hpp"

namespace gradprobe {

class FormatError : public Error {
 public:
  using Error::Error;
};

std::string encode_checkpoint(const std::vector<ParameterSet>& sets);
std::vector<ParameterSet> decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const std::vector<ParameterSet>& sets);
std::vector<ParameterSet> load_checkpoint(const std::filesystem::path& path);

}  // namespace gradprobe
