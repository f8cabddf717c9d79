#pragma once

#include <stdexcept>
#include <string>

namespace gridfed {

// Invalid arguments or violated preconditions.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed dataset, checkpoint, config or metrics files.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite losses or parameters during training. `client` is -1 when the
// failure is not attributable to a single client.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int client = -1)
      : std::runtime_error(what), client_(client) {}
  int client() const noexcept { return client_; }

 private:
  int client_;
};

}  // namespace gridfed
