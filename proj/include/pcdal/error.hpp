#ifndef PCDAL_ERROR_HPP
#define PCDAL_ERROR_HPP

#include <stdexcept>
#include <string>

namespace pcdal {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed PTNS header or unparsable manifest content.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Payload shorter or longer than the header declares.
class TruncationError : public Error {
 public:
  using Error::Error;
};

/// Incompatible extents (mismatched members, non-square rotation plane, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Axis-role descriptor does not fit the tensor.
class LayoutError : public Error {
 public:
  using Error::Error;
};

/// Argument outside its documented domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A metric that has no value for the given input (empty mask, no predicted class).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pcdal

#endif  // PCDAL_ERROR_HPP
