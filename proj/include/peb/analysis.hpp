#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "peb/backend.hpp"
#include "peb/pooling.hpp"

namespace peb {

enum class TokenClass { Core, Modifier, Other };

std::string_view token_class_name(TokenClass cls);

struct TokenContribution {
  std::string token;
  Span span;  // relative to the original (trimmed) sentence
  double similarity = 0.0;
  double proportion = 0.0;
  TokenClass cls = TokenClass::Other;
};

struct ContributionReport {
  std::string sentence;
  std::string template_id;
  std::vector<TokenContribution> contributions;
  double core_mass = 0.0;
};

// Cosine similarity between the embedding and every token that overlaps
// sentence_span (a span of the rendered prompt), at the embedding's layer.
// Proportions are taken after shifting similarities by max(0, -min) so the
// total is positive; if every shifted value is zero the mass is split evenly.
// Token spans are clipped to the sentence and rebased onto it.
// Throws SpanEmpty, LayerMissing.
std::vector<TokenContribution> token_contributions(const PromptStates& states,
                                                   const SentenceEmbedding& embedding,
                                                   Span sentence_span);

// Tokens overlapping any core span become Core, the rest Modifier.
std::vector<TokenContribution> classify_tokens(std::vector<TokenContribution> contributions,
                                               const std::vector<Span>& core_spans);

// Whole-word occurrences of each word in the sentence. Words are matched
// case-sensitively at ASCII word boundaries.
std::vector<Span> word_spans(std::string_view sentence, const std::vector<std::string>& words);

// Joins adjacent tokens whose spans touch (no gap) into one word entry,
// summing similarity-derived proportions. Similarity of a merged entry is the
// mean of its pieces. A word is Core if any piece is.
std::vector<TokenContribution> merge_by_offset(const std::vector<TokenContribution>& contributions,
                                               std::string_view sentence);

double core_mass(const std::vector<TokenContribution>& contributions);

std::string contributions_csv(const std::vector<TokenContribution>& contributions);
std::string report_json(const std::vector<ContributionReport>& reports);

}  // namespace peb
