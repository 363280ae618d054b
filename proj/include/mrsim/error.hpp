#pragma once

#include <stdexcept>
#include <string>

namespace mrsim {

/// Input text could not be parsed at all (malformed JSON, truncated file).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input parsed but violates a documented invariant. The message names the field.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A mesh/material/texture reference could not be resolved.
class AssetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-system or socket failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while executing a tick; carries the tick index.
class EpisodeError : public std::runtime_error {
 public:
  EpisodeError(long tick, const std::string& what)
      : std::runtime_error("tick " + std::to_string(tick) + ": " + what), tick_(tick) {}
  long tick() const noexcept { return tick_; }

 private:
  long tick_;
};

}  // namespace mrsim
