#include "peb/analysis.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <json.hpp>

#include "peb/error.hpp"
#include "peb/metrics.hpp"

namespace peb {
namespace {

bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c < 0; }

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string_view token_class_name(TokenClass cls) {
  switch (cls) {
    case TokenClass::Core: return "core";
    case TokenClass::Modifier: return "modifier";
    case TokenClass::Other: return "other";
  }
  return "other";
}

std::vector<TokenContribution> token_contributions(const PromptStates& states,
                                                   const SentenceEmbedding& embedding,
                                                   Span sentence_span) {
  const auto* vectors = states.layer(embedding.provenance.layer);
  if (vectors == nullptr) {
    throw Error(Errc::LayerMissing,
                "layer " + std::to_string(embedding.provenance.layer) + " not in response");
  }
  const auto [begin, end] = sentence_span;
  std::vector<TokenContribution> out;
  for (std::size_t i = 0; i < states.tokens.size() && i < states.offsets.size(); ++i) {
    const auto [a, b] = states.offsets[i];
    if (a >= end || b <= begin || a == b) continue;
    TokenContribution c;
    c.token = states.tokens[i];
    c.span = {std::max(a, begin) - begin, std::min(b, end) - begin};
    c.similarity = cosine(std::span<const float>(embedding.vector), std::span<const float>((*vectors)[i]));
    out.push_back(std::move(c));
  }
  if (out.empty()) throw Error(Errc::SpanEmpty, "no tokens inside the sentence span");

  double min_sim = out.front().similarity;
  for (const auto& c : out) min_sim = std::min(min_sim, c.similarity);
  const double shift = std::max(0.0, -min_sim);
  std::vector<double> shifted;
  for (const auto& c : out) shifted.push_back(c.similarity + shift);
  const double total = pairwise_sum(shifted);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].proportion = total > 0.0 ? shifted[i] / total : 1.0 / static_cast<double>(out.size());
  }
  return out;
}

std::vector<TokenContribution> classify_tokens(std::vector<TokenContribution> contributions,
                                               const std::vector<Span>& core_spans) {
  for (auto& c : contributions) {
    const bool core = std::any_of(core_spans.begin(), core_spans.end(), [&](const Span& s) {
      return c.span.first < s.second && s.first < c.span.second;
    });
    c.cls = core ? TokenClass::Core : TokenClass::Modifier;
  }
  return contributions;
}

std::vector<Span> word_spans(std::string_view sentence, const std::vector<std::string>& words) {
  std::vector<Span> out;
  for (const auto& w : words) {
    if (w.empty()) continue;
    for (auto at = sentence.find(w); at != std::string_view::npos; at = sentence.find(w, at + 1)) {
      const auto end = at + w.size();
      const bool left = at == 0 || !is_word_char(sentence[at - 1]);
      const bool right = end == sentence.size() || !is_word_char(sentence[end]);
      if (left && right) out.emplace_back(at, end);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<TokenContribution> merge_by_offset(const std::vector<TokenContribution>& contributions,
                                               std::string_view sentence) {
  std::vector<TokenContribution> out;
  std::size_t pieces = 0;
  for (const auto& c : contributions) {
    if (!out.empty() && out.back().span.second == c.span.first) {
      auto& w = out.back();
      w.span.second = c.span.second;
      w.similarity = (w.similarity * static_cast<double>(pieces) + c.similarity) /
                     static_cast<double>(pieces + 1);
      w.proportion += c.proportion;
      if (c.cls == TokenClass::Core) w.cls = TokenClass::Core;
      ++pieces;
    } else {
      out.push_back(c);
      pieces = 1;
    }
  }
  for (auto& w : out) {
    w.token = std::string(sentence.substr(w.span.first, w.span.second - w.span.first));
  }
  return out;
}

double core_mass(const std::vector<TokenContribution>& contributions) {
  std::vector<double> core;
  for (const auto& c : contributions) {
    if (c.cls == TokenClass::Core) core.push_back(c.proportion);
  }
  return std::clamp(pairwise_sum(core), 0.0, 1.0);
}

std::string contributions_csv(const std::vector<TokenContribution>& contributions) {
  std::string out = "token,start,end,similarity,proportion,class\n";
  for (const auto& c : contributions) {
    out += csv_field(c.token) + ',' + std::to_string(c.span.first) + ',' +
           std::to_string(c.span.second) + ',' + fmt_double(c.similarity) + ',' +
           fmt_double(c.proportion) + ',' + std::string(token_class_name(c.cls)) + '\n';
  }
  return out;
}

std::string report_json(const std::vector<ContributionReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json tokens = nlohmann::json::array();
    for (const auto& c : r.contributions) {
      tokens.push_back({{"token", c.token},
                        {"start", c.span.first},
                        {"end", c.span.second},
                        {"similarity", c.similarity},
                        {"proportion", c.proportion},
                        {"class", token_class_name(c.cls)}});
    }
    arr.push_back({{"sentence", r.sentence},
                   {"template", r.template_id},
                   {"core_mass", r.core_mass},
                   {"tokens", std::move(tokens)}});
  }
  return arr.dump(2) + "\n";
}

}  // namespace peb
