#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace modq {

enum class Errc {
  // prompt-engine
  EmptyComment,
  EmptyPolicy,
  WrongExampleCount,
  WrongExampleMix,
  MissingKeywords,
  TooFewPolicies,
  // example-selector
  DimensionMismatch,
  EmptyCorpus,
  InsufficientExamples,
  EmptyList,
  CorruptIndex,
  // llm-rater
  BackendUnavailable,
  UnparseableResponse,
  Timeout,
  // calibration
  EmptyDataset,
  DegenerateDataset,
  InvalidArgument,
  // queue-router
  MissingThreshold,
  MissingScore,
  EvenVoteCount,
  UnknownItem,
  DuplicateItem,
  LeaseNotHeld,
  UnknownRater,
  UnknownPolicy,
  // simulation
  MissingGroundTruth,
  CorpusError,
  MisalignedCorpora,
  ConfigError,
};

std::string_view errc_name(Errc code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace modq
