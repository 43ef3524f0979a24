#pragma once

namespace twinpair {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace twinpair
