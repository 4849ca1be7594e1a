// Copyright 2026 The atm-msm Authors
// SPDX-License-Identifier: Apache-2.0

#include "atm/common/log.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>

namespace atm::log {
namespace {

Level from_env() {
  const char* env = std::getenv("ATM_LOG");
  if (!env) return Level::Info;
  const std::string v(env);
  if (v == "debug") return Level::Debug;
  if (v == "warn") return Level::Warn;
  if (v == "error") return Level::Error;
  if (v == "off") return Level::Off;
  return Level::Info;
}

std::atomic<int>& level_slot() {
  static std::atomic<int> level{static_cast<int>(from_env())};
  return level;
}

const char* tag(Level l) {
  switch (l) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
    case Level::Off: break;
  }
  return "";
}

}  // namespace

Level threshold() { return static_cast<Level>(level_slot().load()); }
void set_threshold(Level level) { level_slot().store(static_cast<int>(level)); }

void write(Level level, std::string_view msg) {
  if (level < threshold() || level == Level::Off) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::fprintf(stderr, "[%s] %.*s\n", tag(level), static_cast<int>(msg.size()), msg.data());
}

}  // namespace atm::log
