#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace peb {

enum class Family { Generative, Discriminative };

// Where the sentence embedding lives in the model output: the final token of
// the rendered prompt, or the mean over a fixed number of mask tokens.
struct CaptureRule {
  enum class Kind { LastToken, MaskTokens };
  Kind kind = Kind::LastToken;
  int mask_count = 0;

  static CaptureRule last_token() { return {Kind::LastToken, 0}; }
  static CaptureRule mask_tokens(int count) { return {Kind::MaskTokens, count}; }

  bool operator==(const CaptureRule&) const = default;
};

// Mask counts above this were never swept; templates using them still work
// but reports mark them.
inline constexpr int kMaxSweptMaskCount = 4;

struct PromptTemplate {
  std::string id;
  std::string prefix;
  std::string suffix;
  CaptureRule capture;
  Family family = Family::Generative;

  // prefix + "[X]" + suffix
  std::string pattern() const;
  bool flagged() const {
    return capture.kind == CaptureRule::Kind::MaskTokens && capture.mask_count > kMaxSweptMaskCount;
  }

  bool operator==(const PromptTemplate&) const = default;
};

enum class Eos { None, Sep, Period, Exclamation, Question };

struct MaskTemplateConfig {
  int mask_count = 1;
  Eos eos = Eos::Period;
};

inline constexpr std::string_view kSentenceSlot = "[X]";
inline constexpr std::string_view kMaskText = "[MASK]";

// Trims surrounding whitespace and substitutes the sentence into the slot.
// The sentence is otherwise inserted verbatim. Throws EmptySentence.
std::string render(const PromptTemplate& tmpl, std::string_view sentence);

// Character span [begin, end) of the trimmed sentence inside render(tmpl, sentence).
std::pair<std::size_t, std::size_t> sentence_span(const PromptTemplate& tmpl,
                                                  std::string_view sentence);

PromptTemplate build_mask_template(const MaskTemplateConfig& config);

// Built-in generative templates, in a fixed order.
const std::vector<PromptTemplate>& registry();

// Looks up built-ins, then the mask family by id (mask_<n>_<eos>).
std::optional<PromptTemplate> find_template(std::string_view id);

std::string display_name(std::string_view template_id);

std::string_view eos_name(Eos eos);
std::optional<Eos> parse_eos(std::string_view name);

// Parses a template from a pattern string holding exactly one "[X]".
PromptTemplate template_from_pattern(std::string id, Family family, CaptureRule capture,
                                     std::string_view pattern);

// Plain-text template file. Records are blocks of key=value lines separated
// by blank lines; '#' starts a comment line. Keys: id, family
// (generative|discriminative), capture (last|mask:N), pattern. The pattern
// value is the rest of its line, taken verbatim.
std::vector<PromptTemplate> parse_template_config(std::string_view text);
std::vector<PromptTemplate> load_template_config(const std::filesystem::path& path);

}  // namespace peb
