#include "voxsfm/error.hpp"

namespace voxsfm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::BehindCamera: return "BehindCamera";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::EmptyVoxel: return "EmptyVoxel";
    case ErrorCode::MissingVoxel: return "MissingVoxel";
    case ErrorCode::ImmatureVoxel: return "ImmatureVoxel";
    case ErrorCode::InsufficientOverlap: return "InsufficientOverlap";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::Exhausted: return "Exhausted";
    case ErrorCode::DegenerateBaseline: return "DegenerateBaseline";
    case ErrorCode::TooFewCorrespondences: return "TooFewCorrespondences";
    case ErrorCode::ConsensusFailed: return "ConsensusFailed";
    case ErrorCode::DegenerateGeometry: return "DegenerateGeometry";
    case ErrorCode::IcpDiverged: return "IcpDiverged";
    case ErrorCode::SolverFailed: return "SolverFailed";
    case ErrorCode::NoMatches: return "NoMatches";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::DisconnectedGraph: return "DisconnectedGraph";
    case ErrorCode::Gauge: return "Gauge";
    case ErrorCode::MissingPose: return "MissingPose";
    case ErrorCode::NoHits: return "NoHits";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::MalformedFile: return "MalformedFile";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::StageFailure: return "StageFailure";
  }
  return "Unknown";
}

}  // namespace voxsfm
