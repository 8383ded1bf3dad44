#pragma once

namespace pilotwave {

inline constexpr const char* kVersion = "0.1.0";

}
