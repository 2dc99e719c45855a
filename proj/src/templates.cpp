#include "peb/templates.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "peb/error.hpp"
#include "text_util.hpp"

namespace peb {
namespace {

constexpr std::string_view kEolSuffix = "\" means in one word:\"";
constexpr std::string_view kThisSentence = "This sentence : \"";

PromptTemplate generative(std::string id, std::string prefix, std::string suffix) {
  return PromptTemplate{std::move(id), std::move(prefix), std::move(suffix),
                        CaptureRule::last_token(), Family::Generative};
}

std::vector<PromptTemplate> make_registry() {
  std::vector<PromptTemplate> out;
  out.push_back(generative("prompt_eol", std::string(kThisSentence), std::string(kEolSuffix)));
  out.push_back(generative("prompt_sth", std::string(kThisSentence), "\" means something"));
  out.push_back(generative("prompt_sum", std::string(kThisSentence), "\" can be summarized as"));
  out.push_back(generative("pretended_cot",
                           "After thinking step by step , this sentence : \"",
                           std::string(kEolSuffix)));
  out.push_back(generative(
      "knowledge_enhancement",
      "The essence of a sentence is often captured by its main subjects and actions, "
      "while descriptive terms provide additional but less central details. "
      "With this in mind , this sentence : \"",
      std::string(kEolSuffix)));
  return out;
}

std::string_view eos_text(Eos eos) {
  switch (eos) {
    case Eos::None: return "";
    case Eos::Sep: return " [SEP]";
    case Eos::Period: return ".";
    case Eos::Exclamation: return " !";
    case Eos::Question: return " ?";
  }
  return "";
}

std::optional<PromptTemplate> parse_mask_id(std::string_view id) {
  // mask_<count>_<eos>
  constexpr std::string_view head = "mask_";
  if (!id.starts_with(head)) return std::nullopt;
  id.remove_prefix(head.size());
  const auto sep = id.find('_');
  if (sep == std::string_view::npos) return std::nullopt;
  int count = 0;
  const auto digits = id.substr(0, sep);
  const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), count);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || count < 1) return std::nullopt;
  const auto eos = parse_eos(id.substr(sep + 1));
  if (!eos) return std::nullopt;
  return build_mask_template({count, *eos});
}

CaptureRule parse_capture(std::string_view value, std::size_t line) {
  if (value == "last") return CaptureRule::last_token();
  if (value.starts_with("mask:")) {
    const auto digits = value.substr(5);
    int count = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), count);
    if (ec == std::errc() && ptr == digits.data() + digits.size() && count >= 1) {
      return CaptureRule::mask_tokens(count);
    }
  }
  throw Error(Errc::TemplateParse,
              "line " + std::to_string(line) + ": bad capture '" + std::string(value) + "'");
}

}  // namespace

std::string PromptTemplate::pattern() const {
  return prefix + std::string(kSentenceSlot) + suffix;
}

std::string render(const PromptTemplate& tmpl, std::string_view sentence) {
  const auto trimmed = text::trim(sentence);
  if (trimmed.empty()) throw Error(Errc::EmptySentence, "sentence is empty after trimming");
  std::string out;
  out.reserve(tmpl.prefix.size() + trimmed.size() + tmpl.suffix.size());
  out.append(tmpl.prefix).append(trimmed).append(tmpl.suffix);
  return out;
}

std::pair<std::size_t, std::size_t> sentence_span(const PromptTemplate& tmpl,
                                                  std::string_view sentence) {
  const auto trimmed = text::trim(sentence);
  if (trimmed.empty()) throw Error(Errc::EmptySentence, "sentence is empty after trimming");
  return {tmpl.prefix.size(), tmpl.prefix.size() + trimmed.size()};
}

PromptTemplate build_mask_template(const MaskTemplateConfig& config) {
  if (config.mask_count < 1) {
    throw Error(Errc::TemplateParse, "mask_count must be >= 1");
  }
  std::string suffix = "\" means ";
  for (int i = 0; i < config.mask_count; ++i) suffix.append(kMaskText);
  suffix.append(eos_text(config.eos));
  return PromptTemplate{
      "mask_" + std::to_string(config.mask_count) + "_" + std::string(eos_name(config.eos)),
      std::string(kThisSentence), std::move(suffix),
      CaptureRule::mask_tokens(config.mask_count), Family::Discriminative};
}

const std::vector<PromptTemplate>& registry() {
  static const std::vector<PromptTemplate> templates = make_registry();
  return templates;
}

std::optional<PromptTemplate> find_template(std::string_view id) {
  for (const auto& t : registry()) {
    if (t.id == id) return t;
  }
  return parse_mask_id(id);
}

std::string display_name(std::string_view template_id) {
  if (template_id == "prompt_eol") return "PromptEOL";
  if (template_id == "prompt_sth") return "PromptSTH";
  if (template_id == "prompt_sum") return "PromptSUM";
  if (template_id == "pretended_cot") return "Pretended CoT";
  if (template_id == "knowledge_enhancement") return "Knowledge Enhancement";
  return std::string(template_id);
}

std::string_view eos_name(Eos eos) {
  switch (eos) {
    case Eos::None: return "none";
    case Eos::Sep: return "sep";
    case Eos::Period: return "period";
    case Eos::Exclamation: return "bang";
    case Eos::Question: return "question";
  }
  return "none";
}

std::optional<Eos> parse_eos(std::string_view name) {
  if (name == "none") return Eos::None;
  if (name == "sep" || name == "[SEP]") return Eos::Sep;
  if (name == "period" || name == ".") return Eos::Period;
  if (name == "bang" || name == "exclamation" || name == "!") return Eos::Exclamation;
  if (name == "question" || name == "?") return Eos::Question;
  return std::nullopt;
}

PromptTemplate template_from_pattern(std::string id, Family family, CaptureRule capture,
                                     std::string_view pattern) {
  const auto slot = pattern.find(kSentenceSlot);
  if (slot == std::string_view::npos ||
      pattern.find(kSentenceSlot, slot + kSentenceSlot.size()) != std::string_view::npos) {
    throw Error(Errc::TemplateParse, "pattern for '" + id + "' must contain exactly one [X]");
  }
  if ((family == Family::Generative) != (capture.kind == CaptureRule::Kind::LastToken)) {
    throw Error(Errc::TemplateParse,
                "template '" + id + "': generative templates capture the last token, "
                "discriminative templates capture mask tokens");
  }
  return PromptTemplate{std::move(id), std::string(pattern.substr(0, slot)),
                        std::string(pattern.substr(slot + kSentenceSlot.size())), capture,
                        family};
}

std::vector<PromptTemplate> parse_template_config(std::string_view text) {
  struct Pending {
    std::optional<std::string> id, family, capture, pattern;
    std::size_t first_line = 0;
  };
  std::vector<PromptTemplate> out;
  Pending cur;

  auto flush = [&] {
    if (!cur.id && !cur.family && !cur.capture && !cur.pattern) return;
    const auto where = "record at line " + std::to_string(cur.first_line);
    if (!cur.id || !cur.family || !cur.pattern) {
      throw Error(Errc::TemplateParse, where + ": id, family and pattern are required");
    }
    Family family;
    if (*cur.family == "generative") {
      family = Family::Generative;
    } else if (*cur.family == "discriminative") {
      family = Family::Discriminative;
    } else {
      throw Error(Errc::TemplateParse, where + ": unknown family '" + *cur.family + "'");
    }
    CaptureRule capture = cur.capture ? parse_capture(*cur.capture, cur.first_line)
                                      : CaptureRule::last_token();
    out.push_back(template_from_pattern(*cur.id, family, capture, *cur.pattern));
    cur = Pending{};
  };

  std::size_t lineno = 0;
  for (auto line : text::split_lines(text)) {
    ++lineno;
    if (text::trim(line).empty()) {
      flush();
      continue;
    }
    if (text::trim(line).starts_with('#')) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::TemplateParse, "line " + std::to_string(lineno) + ": expected key=value");
    }
    const auto key = text::trim(line.substr(0, eq));
    const auto value = line.substr(eq + 1);
    if (!cur.first_line) cur.first_line = lineno;
    auto assign = [&](std::optional<std::string>& slot, std::string v) {
      if (slot) {
        throw Error(Errc::TemplateParse,
                    "line " + std::to_string(lineno) + ": duplicate key '" + std::string(key) + "'");
      }
      slot = std::move(v);
    };
    if (key == "id") {
      assign(cur.id, std::string(text::trim(value)));
    } else if (key == "family") {
      assign(cur.family, std::string(text::trim(value)));
    } else if (key == "capture") {
      assign(cur.capture, std::string(text::trim(value)));
    } else if (key == "pattern") {
      assign(cur.pattern, std::string(value));
    } else {
      throw Error(Errc::TemplateParse,
                  "line " + std::to_string(lineno) + ": unknown key '" + std::string(key) + "'");
    }
  }
  flush();
  return out;
}

std::vector<PromptTemplate> load_template_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingFile, path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_template_config(buf.str());
}

}  // namespace peb
