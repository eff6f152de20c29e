#ifndef XVIEW_ERROR_HPP_
#define XVIEW_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace xview {

enum class ErrorCode {
  // numerics
  NormTooSmall,
  DimMismatch,
  NonFiniteEvaluation,
  // data
  InvalidConfig,
  NotEnoughIdentities,
  IdentityTooSmall,
  Io,
  FormatVersionMismatch,
  CorruptRecord,
  // model
  InvalidArch,
  ShapeMismatch,
  ArchMismatch,
  // losses
  LabelOutOfRange,
  NoPositive,
  NoNegative,
  // trainer
  EpochOutOfRange,
  StageMismatch,
  // eval
  LabelAbsentFromGallery,
  DegenerateWithinScatter,
  SingleClass,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every library failure is reported as an Error carrying a stable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace xview

#endif  // XVIEW_ERROR_HPP_
