#pragma once

namespace pasfuse {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace pasfuse
