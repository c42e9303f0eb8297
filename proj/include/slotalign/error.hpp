#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace slotalign {

// Root of every error thrown by the library. The CLI maps subclasses to exit
// codes (see tools/slotalign.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class InvalidMask : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class StructureError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class ConfigError : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class IoError : public Error {
 public:
  IoError(std::string path, const std::string& what)
      : Error(what + ": " + path), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t offset, const std::string& what)
      : Error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

class TrainingError : public Error {
 public:
  TrainingError(int epoch, const std::string& what)
      : Error(what + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

// Raised when predictions reference utterances absent from the reference set.
class UnmatchedIds : public InvalidInput {
 public:
  explicit UnmatchedIds(std::vector<std::string> ids)
      : InvalidInput(join(ids)), ids_(std::move(ids)) {}
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  static std::string join(const std::vector<std::string>& ids) {
    std::string s = "unmatched utterance ids:";
    for (const auto& id : ids) s += " " + id;
    return s;
  }
  std::vector<std::string> ids_;
};

}  // namespace slotalign
