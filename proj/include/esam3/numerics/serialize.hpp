#pragma once

// Tensor file format: one line of JSON
//   {"dtype":"f64le","shape":[...],"fnv1a":"<16 hex digits>"}
// terminated by '\n', followed by product(shape) little-endian IEEE-754
// doubles. The checksum covers the raw payload bytes.

#include <filesystem>
#include <iosfwd>

#include "esam3/numerics/tensor.hpp"

namespace esam3::num {

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
/// Throws Error(kIo) on a missing, truncated or checksum-mismatched file.
Tensor load_tensor(const std::filesystem::path& path);

}  // namespace esam3::num
