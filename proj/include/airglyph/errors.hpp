#pragma once

#include <stdexcept>
#include <string>

namespace airglyph {

// Error categories map 1:1 onto CLI exit codes (see exit_code_for).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

struct TransportError : Error {
  using Error::Error;
};

struct ValidationError : Error {
  using Error::Error;
};

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const IoError*>(&e)) return 3;
  if (dynamic_cast<const TransportError*>(&e)) return 4;
  if (dynamic_cast<const ValidationError*>(&e)) return 5;
  return 1;
}

}  // namespace airglyph
