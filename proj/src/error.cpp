#include "modq/error.hpp"

namespace modq {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::EmptyComment: return "EmptyComment";
    case Errc::EmptyPolicy: return "EmptyPolicy";
    case Errc::WrongExampleCount: return "WrongExampleCount";
    case Errc::WrongExampleMix: return "WrongExampleMix";
    case Errc::MissingKeywords: return "MissingKeywords";
    case Errc::TooFewPolicies: return "TooFewPolicies";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::InsufficientExamples: return "InsufficientExamples";
    case Errc::EmptyList: return "EmptyList";
    case Errc::CorruptIndex: return "CorruptIndex";
    case Errc::BackendUnavailable: return "BackendUnavailable";
    case Errc::UnparseableResponse: return "UnparseableResponse";
    case Errc::Timeout: return "Timeout";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::DegenerateDataset: return "DegenerateDataset";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::MissingThreshold: return "MissingThreshold";
    case Errc::MissingScore: return "MissingScore";
    case Errc::EvenVoteCount: return "EvenVoteCount";
    case Errc::UnknownItem: return "UnknownItem";
    case Errc::DuplicateItem: return "DuplicateItem";
    case Errc::LeaseNotHeld: return "LeaseNotHeld";
    case Errc::UnknownRater: return "UnknownRater";
    case Errc::UnknownPolicy: return "UnknownPolicy";
    case Errc::MissingGroundTruth: return "MissingGroundTruth";
    case Errc::CorpusError: return "CorpusError";
    case Errc::MisalignedCorpora: return "MisalignedCorpora";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace modq
