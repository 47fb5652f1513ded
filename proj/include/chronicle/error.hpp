#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace chronicle {

enum class Errc {
  DuplicateConcept,
  UnknownType,
  CyclicHierarchy,
  DanglingParent,
  UnknownConcept,
  MissingDemographics,
  EmptyCorpus,
  SequenceTooLong,
  IndexOutOfVocab,
  IoFailure,
  FormatVersionMismatch,
  ChecksumMismatch,
  ParseError,
  UnknownToken,
  InvalidArgument,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::DuplicateConcept: return "DuplicateConcept";
    case Errc::UnknownType: return "UnknownType";
    case Errc::CyclicHierarchy: return "CyclicHierarchy";
    case Errc::DanglingParent: return "DanglingParent";
    case Errc::UnknownConcept: return "UnknownConcept";
    case Errc::MissingDemographics: return "MissingDemographics";
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::SequenceTooLong: return "SequenceTooLong";
    case Errc::IndexOutOfVocab: return "IndexOutOfVocab";
    case Errc::IoFailure: return "IoFailure";
    case Errc::FormatVersionMismatch: return "FormatVersionMismatch";
    case Errc::ChecksumMismatch: return "ChecksumMismatch";
    case Errc::ParseError: return "ParseError";
    case Errc::UnknownToken: return "UnknownToken";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace chronicle
