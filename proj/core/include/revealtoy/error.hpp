#pragma once

#include <stdexcept>
#include <string>

namespace revealtoy {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

/// Input validation failure tied to a named field (request key, CLI flag, box index).
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Dataset I/O failure naming the offending scene directory.
class DatasetError : public Error {
 public:
  DatasetError(std::string scene, const std::string& what)
      : Error(scene.empty() ? what : scene + ": " + what), scene_(std::move(scene)) {}
  const std::string& scene() const noexcept { return scene_; }

 private:
  std::string scene_;
};

}  // namespace revealtoy
