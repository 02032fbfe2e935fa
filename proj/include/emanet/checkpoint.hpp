#pragma once

// Checkpoint file, little-endian:
//   "EMANETCK" | u32 version=1 | u32 entries
//   per entry: u32 name_len | name bytes | u32 rank | u32 dims[rank] | f32 data[prod(dims)]
// Entries appear in parameter-store order.

#include <iosfwd>
#include <string>

#include "emanet/params.hpp"

namespace emanet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& os, const ParamStore<float>& params);
ParamStore<float> read_checkpoint(std::istream& is);

void save_checkpoint(const std::string& path, const ParamStore<float>& params);
ParamStore<float> load_checkpoint(const std::string& path);

/// Copies every tensor of `source` into `target`. Names and shapes must match
/// one to one; otherwise ConfigError.
void assign_params(ParamStore<float>& target, const ParamStore<float>& source);

}  // namespace emanet
