#pragma once

#include <stdexcept>
#include <string>

namespace fedsim {

// Rejected configuration or operator input; message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Dataset / file ingestion failure (bad magic, truncation, count mismatch).
class IngestionError : public std::runtime_error {
 public:
  explicit IngestionError(const std::string& what) : std::runtime_error(what) {}
};

// Every run of interest blew up (non-finite iterates).
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace fedsim
