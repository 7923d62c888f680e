#pragma once

#include <stdexcept>
#include <string>

namespace vitsr {

// Error taxonomy shared by the whole library. The CLI maps these onto
// process exit codes (config/usage -> 1, data -> 2, numerical -> 3).
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error("dimension error: " + msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

struct DataError : Error {
  explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& msg) : Error("numerical error: " + msg) {}
};

}  // namespace vitsr
