#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dermo {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed CSV header, manifest, config or prediction file.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Ground-truth row that does not one-hot encode a class.
class LabelError : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public Error {
 public:
  explicit MissingFileError(std::vector<std::string> ids)
      : Error(make_message(ids)), missing_ids_(std::move(ids)) {}

  const std::vector<std::string>& missing_ids() const noexcept { return missing_ids_; }

 private:
  static std::string make_message(const std::vector<std::string>& ids) {
    std::string msg = "missing image files for " + std::to_string(ids.size()) + " id(s):";
    for (const auto& id : ids) msg += " " + id;
    return msg;
  }

  std::vector<std::string> missing_ids_;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class DecodeError : public Error {
 public:
  DecodeError(std::string image_id, const std::string& what)
      : Error("cannot decode image '" + image_id + "': " + what), image_id_(std::move(image_id)) {}

  const std::string& image_id() const noexcept { return image_id_; }

 private:
  std::string image_id_;
};

class DegenerateClassError : public Error {
 public:
  using Error::Error;
};

class NumericInputError : public Error {
 public:
  using Error::Error;
};

class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// Pretrained weights (or another external artifact) are not available.
class DependencyError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Image shape or channel count does not match what the model expects.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated, mismatched or wrong-version checkpoint.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Two keyed collections that must cover the same ids do not.
class AlignmentError : public Error {
 public:
  AlignmentError(const std::string& context, std::vector<std::string> symmetric_difference)
      : Error(make_message(context, symmetric_difference)),
        symmetric_difference_(std::move(symmetric_difference)) {}

  const std::vector<std::string>& symmetric_difference() const noexcept {
    return symmetric_difference_;
  }

 private:
  static std::string make_message(const std::string& context, const std::vector<std::string>& ids) {
    std::string msg = context + ": id sets differ in " + std::to_string(ids.size()) + " id(s):";
    std::size_t shown = 0;
    for (const auto& id : ids) {
      if (++shown > 20) {
        msg += " ...";
        break;
      }
      msg += " " + id;
    }
    return msg;
  }

  std::vector<std::string> symmetric_difference_;
};

class EmptyEvaluationError : public Error {
 public:
  using Error::Error;
};

}  // namespace dermo
