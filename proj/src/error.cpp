#include "xview/error.hpp"

namespace xview {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::NormTooSmall: return "NormTooSmall";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::NotEnoughIdentities: return "NotEnoughIdentities";
    case ErrorCode::IdentityTooSmall: return "IdentityTooSmall";
    case ErrorCode::Io: return "Io";
    case ErrorCode::FormatVersionMismatch: return "FormatVersionMismatch";
    case ErrorCode::CorruptRecord: return "CorruptRecord";
    case ErrorCode::InvalidArch: return "InvalidArch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ArchMismatch: return "ArchMismatch";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NoPositive: return "NoPositive";
    case ErrorCode::NoNegative: return "NoNegative";
    case ErrorCode::EpochOutOfRange: return "EpochOutOfRange";
    case ErrorCode::StageMismatch: return "StageMismatch";
    case ErrorCode::LabelAbsentFromGallery: return "LabelAbsentFromGallery";
    case ErrorCode::DegenerateWithinScatter: return "DegenerateWithinScatter";
    case ErrorCode::SingleClass: return "SingleClass";
  }
  return "Unknown";
}

}  // namespace xview
