#pragma once

namespace rig {

inline constexpr const char* kToolVersion = "rig 0.1.0";

}  // namespace rig
