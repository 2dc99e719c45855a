#include "peb/error.hpp"

namespace peb {

const char* errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::EmptySentence: return "EmptySentence";
    case Errc::TemplateNotFound: return "TemplateNotFound";
    case Errc::TemplateParse: return "TemplateParse";
    case Errc::ConnectFailed: return "ConnectFailed";
    case Errc::ProtocolError: return "ProtocolError";
    case Errc::LayerOutOfRange: return "LayerOutOfRange";
    case Errc::NonFiniteValues: return "NonFiniteValues";
    case Errc::BackendNotMaskCapable: return "BackendNotMaskCapable";
    case Errc::LayerMissing: return "LayerMissing";
    case Errc::MaskPositionsNotFound: return "MaskPositionsNotFound";
    case Errc::SpanEmpty: return "SpanEmpty";
    case Errc::MissingFile: return "MissingFile";
    case Errc::MalformedLine: return "MalformedLine";
    case Errc::GoldOutOfRange: return "GoldOutOfRange";
    case Errc::ThresholdOutOfRange: return "ThresholdOutOfRange";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::DegenerateInput: return "DegenerateInput";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::NotNormalized: return "NotNormalized";
    case Errc::CorruptRecord: return "CorruptRecord";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ConflictingEntry: return "ConflictingEntry";
    case Errc::StoreIo: return "StoreIo";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace peb
