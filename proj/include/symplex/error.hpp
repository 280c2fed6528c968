#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace symplex {

enum class Errc {
  TooManyEvents,
  OutOfRange,
  MalformedSlot,
  ParseError,
  UnsupportedTimeSignature,
  UnsatisfiablePrior,
  ConflictingPrior,
  BoxTooSmall,
  EmptySelection,
  InvalidArgument,
  VersionMismatch,
  CorruptCheckpoint,
  NonFiniteGradient,
  NonFiniteActivation,
  NoDownbeat,
  IoError,
};

inline std::string_view errcName(Errc c) {
  switch (c) {
    case Errc::TooManyEvents: return "TooManyEvents";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::MalformedSlot: return "MalformedSlot";
    case Errc::ParseError: return "ParseError";
    case Errc::UnsupportedTimeSignature: return "UnsupportedTimeSignature";
    case Errc::UnsatisfiablePrior: return "UnsatisfiablePrior";
    case Errc::ConflictingPrior: return "ConflictingPrior";
    case Errc::BoxTooSmall: return "BoxTooSmall";
    case Errc::EmptySelection: return "EmptySelection";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::CorruptCheckpoint: return "CorruptCheckpoint";
    case Errc::NonFiniteGradient: return "NonFiniteGradient";
    case Errc::NonFiniteActivation: return "NonFiniteActivation";
    case Errc::NoDownbeat: return "NoDownbeat";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Library-wide exception. `code()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errcName(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Raised when a prior zeroes out every token of a noisy row.
class UnsatisfiablePriorError : public Error {
 public:
  UnsatisfiablePriorError(std::size_t slot, std::size_t attribute)
      : Error(Errc::UnsatisfiablePrior,
              "zero probability mass at slot " + std::to_string(slot) + ", attribute " +
                  std::to_string(attribute)),
        slot_(slot),
        attribute_(attribute) {}

  std::size_t slot() const noexcept { return slot_; }
  std::size_t attribute() const noexcept { return attribute_; }

 private:
  std::size_t slot_;
  std::size_t attribute_;
};

}  // namespace symplex
