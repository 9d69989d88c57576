#pragma once

#include <spdlog/spdlog.h>

namespace sagefm {

/// Library-wide logger. Skips and exclusions required by the data contracts
/// are reported here at warn/info level.
inline spdlog::logger& logger() { return *spdlog::default_logger_raw(); }

}  // namespace sagefm
