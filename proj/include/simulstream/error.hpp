#pragma once

#include <stdexcept>
#include <string>

namespace simulstream {

// Error taxonomy maps onto CLI exit codes: config=1, data=2, protocol=3.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace simulstream
