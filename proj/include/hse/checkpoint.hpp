#pragma once

#include <string>
#include <utility>
#include <vector>

#include "hse/tensor.hpp"

namespace hse {

// "NTC1" named-tensor container:
//   magic "NTC1"
//   u32 entry count
//   per entry: u16 name length, UTF-8 name, u8 dtype (0=f32, 1=f64), u8 rank,
//              rank x u32 extents, raw little-endian row-major values.
// Round-trips are bit-exact for both dtypes.

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_checkpoint(const std::string& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::string& path);

// Lookup helper; throws DataError when the name is absent.
const Tensor& checkpoint_entry(const NamedTensors& entries, const std::string& name);

}  // namespace hse
