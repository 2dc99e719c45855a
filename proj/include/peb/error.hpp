#pragma once

#include <stdexcept>
#include <string>

namespace peb {

enum class Errc {
  // templates
  EmptySentence,
  TemplateNotFound,
  TemplateParse,
  // backend
  ConnectFailed,
  ProtocolError,
  LayerOutOfRange,
  NonFiniteValues,
  BackendNotMaskCapable,
  // pooling / analysis
  LayerMissing,
  MaskPositionsNotFound,
  SpanEmpty,
  // datasets
  MissingFile,
  MalformedLine,
  GoldOutOfRange,
  ThresholdOutOfRange,
  // metrics
  LengthMismatch,
  ZeroVector,
  DegenerateInput,
  EmptyInput,
  NotNormalized,
  // store
  CorruptRecord,
  DimensionMismatch,
  ConflictingEntry,
  StoreIo,
  // cli
  ConfigError,
};

const char* errc_name(Errc code) noexcept;

// Every failure raised by the toolkit carries one of the codes above so the
// CLI can map it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace peb
