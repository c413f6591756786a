#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sbr {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

// Error taxonomy. Everything user-facing derives from Error so callers can
// catch one type at the CLI boundary.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/layer shape disagreement, named with the offending operation.
struct DimensionError : Error {
  using Error::Error;
};

// An API precondition was violated (empty input, non-scalar loss, ...).
struct ContractError : Error {
  using Error::Error;
};

// NaN/Inf surfaced during training.
struct DivergenceError : Error {
  using Error::Error;
};

// Malformed file content (bad JSON, truncated blob).
struct ParseError : Error {
  using Error::Error;
};

// Structurally valid file whose content breaks the data model.
struct SchemaError : Error {
  using Error::Error;
};

// S+ - S- collapsed; similarity normalization is meaningless.
struct DegenerateStatsError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

// No path from the start region to the goal.
struct PlanningError : Error {
  using Error::Error;
};

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level comes from SBR_LOG_LEVEL in {error,warn,info,debug}; default info.
LogLevel log_level();
void log_message(LogLevel level, const std::string& msg);

inline void log_error(const std::string& msg) { log_message(LogLevel::Error, msg); }
inline void log_warn(const std::string& msg) { log_message(LogLevel::Warn, msg); }
inline void log_info(const std::string& msg) { log_message(LogLevel::Info, msg); }
inline void log_debug(const std::string& msg) { log_message(LogLevel::Debug, msg); }

}  // namespace sbr
