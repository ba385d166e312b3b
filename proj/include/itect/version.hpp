#pragma once

namespace itect {
inline constexpr const char* kVersion = "0.1.0";
}
