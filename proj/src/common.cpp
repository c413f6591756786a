#include "sbr/common.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace sbr {

namespace {

LogLevel parse_level() {
  const char* env = std::getenv("SBR_LOG_LEVEL");
  if (env == nullptr) {
    return LogLevel::Info;
  }
  if (std::strcmp(env, "error") == 0) return LogLevel::Error;
  if (std::strcmp(env, "warn") == 0) return LogLevel::Warn;
  if (std::strcmp(env, "info") == 0) return LogLevel::Info;
  if (std::strcmp(env, "debug") == 0) return LogLevel::Debug;
  std::fprintf(stderr, "[warn] unknown SBR_LOG_LEVEL '%s', using info\n", env);
  return LogLevel::Info;
}

const char* level_tag(LogLevel level) {
  switch (level) {
    case LogLevel::Error: return "error";
    case LogLevel::Warn: return "warn";
    case LogLevel::Info: return "info";
    case LogLevel::Debug: return "debug";
  }
  return "?";
}

}  // namespace

LogLevel log_level() {
  static const LogLevel level = parse_level();
  return level;
}

void log_message(LogLevel level, const std::string& msg) {
  if (static_cast<int>(level) > static_cast<int>(log_level())) {
    return;
  }
  std::fprintf(stderr, "[%s] %s\n", level_tag(level), msg.c_str());
}

}  // namespace sbr
