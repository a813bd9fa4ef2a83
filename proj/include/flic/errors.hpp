#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flic {

/// Malformed serialized data (weights, chunks, containers). Carries the byte
/// offset at which parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace flic
