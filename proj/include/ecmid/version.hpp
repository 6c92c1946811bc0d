#pragma once

namespace ecmid {

inline constexpr const char* kVersion = "0.1.0";

} // namespace ecmid
