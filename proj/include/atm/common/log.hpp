// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string_view>

namespace atm::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

/// Messages below this level are dropped. Initialized from ATM_LOG
/// (debug|info|warn|error|off), default info.
Level threshold();
void set_threshold(Level level);

void write(Level level, std::string_view msg);
inline void debug(std::string_view msg) { write(Level::Debug, msg); }
inline void info(std::string_view msg) { write(Level::Info, msg); }
inline void warn(std::string_view msg) { write(Level::Warn, msg); }
inline void error(std::string_view msg) { write(Level::Error, msg); }

}  // namespace atm::log
