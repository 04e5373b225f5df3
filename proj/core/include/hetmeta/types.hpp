#pragma once

#include <cstdint>
#include <vector>

namespace hetmeta {

/// Per-task modality availability mask c_T: 1 = informative, 0 = absent.
using ConfigVector = std::vector<std::uint8_t>;

} // namespace hetmeta
