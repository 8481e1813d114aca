#pragma once

#include <cstdint>
#include <string_view>

namespace diffpf {

// All randomness flows from one per-run seed; independent consumers hash the
// master seed with a stream name so draw counts never couple across stages.
std::uint64_t substream_seed(std::uint64_t master, std::string_view stream);

}  // namespace diffpf
