#pragma once

#include "pasfuse/ndcore/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>

namespace pasfuse {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Name-keyed tensors; std::map iteration gives the lexicographic order the
/// container format requires.
using TensorDict = std::map<std::string, Tensor<float>>;

/// "NDC1" container: magic, then per entry (sorted by name) a u64 name
/// length, UTF-8 name, u64 rank, u64 extents, and raw f32 data. Every
/// integer and float is little-endian.
void write_container(std::ostream& os, const TensorDict& tensors);
TensorDict read_container(std::istream& is);

void save_container(const std::filesystem::path& path, const TensorDict& tensors);
TensorDict load_container(const std::filesystem::path& path);

}  // namespace pasfuse
