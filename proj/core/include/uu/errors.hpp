#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace uu {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

class CalibrationSizeError : public Error {
 public:
  using Error::Error;
};

class ZeroVarianceError : public Error {
 public:
  using Error::Error;
};

// Malformed or truncated binary file. offset() is the byte position at which
// decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class DivergenceError : public Error {
 public:
  explicit DivergenceError(int epoch)
      : Error("training diverged (non-finite loss) in epoch " +
              std::to_string(epoch)),
        epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

}  // namespace uu
