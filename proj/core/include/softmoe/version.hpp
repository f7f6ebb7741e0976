#pragma once

namespace softmoe {

inline constexpr const char* kVersion = "softmoe 0.1.0";

}  // namespace softmoe
