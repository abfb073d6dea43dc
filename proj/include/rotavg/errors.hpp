#pragma once

#include <stdexcept>
#include <string>

namespace rotavg {

/// Coarse failure classes; the CLI maps them onto exit codes.
enum class ErrorKind {
  Usage,
  Data,
  Numerical,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& what)
      : std::runtime_error(what), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Short machine-readable tag, e.g. "SelfLoop".
  const std::string& code() const noexcept { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

#define ROTAVG_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what)                                \
        : Error(ErrorKind::Kind, #Name, what) {}                          \
  };

ROTAVG_DEFINE_ERROR(DegenerateQuaternion, Numerical)
ROTAVG_DEFINE_ERROR(DegenerateAxis, Data)
ROTAVG_DEFINE_ERROR(ParseError, Data)
ROTAVG_DEFINE_ERROR(DuplicateEdge, Data)
ROTAVG_DEFINE_ERROR(SelfLoop, Data)
ROTAVG_DEFINE_ERROR(NonContiguousIds, Data)
ROTAVG_DEFINE_ERROR(DisconnectedGraph, Data)
ROTAVG_DEFINE_ERROR(MissingEstimate, Data)
ROTAVG_DEFINE_ERROR(MissingGroundTruth, Data)
ROTAVG_DEFINE_ERROR(EmptyGraph, Data)
ROTAVG_DEFINE_ERROR(EmptyDataset, Data)
ROTAVG_DEFINE_ERROR(InvalidConfig, Usage)
ROTAVG_DEFINE_ERROR(ShapeMismatch, Numerical)
ROTAVG_DEFINE_ERROR(EmptySet, Numerical)
ROTAVG_DEFINE_ERROR(TapeCorrupt, Numerical)
ROTAVG_DEFINE_ERROR(CheckpointError, Data)
ROTAVG_DEFINE_ERROR(Divergence, Numerical)
ROTAVG_DEFINE_ERROR(IoError, Data)

#undef ROTAVG_DEFINE_ERROR

}  // namespace rotavg
