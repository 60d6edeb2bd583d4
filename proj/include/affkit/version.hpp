#pragma once

namespace affkit {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace affkit
