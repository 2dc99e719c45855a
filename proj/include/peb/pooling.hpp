#pragma once

#include <string>
#include <vector>

#include "peb/backend.hpp"
#include "peb/templates.hpp"

namespace peb {

enum class PoolRule { LastToken, MeanOverMasks };

std::string_view pool_rule_name(PoolRule rule);

struct ExtractionSpec {
  int layer = -1;
  PoolRule rule = PoolRule::LastToken;
  bool normalize = false;

  bool operator==(const ExtractionSpec&) const = default;
};

// Layer -1 for PromptEOL and the other plain templates; the penultimate
// layer for the two prefixed EOL variants.
ExtractionSpec default_extraction(const PromptTemplate& tmpl);

struct Provenance {
  std::string model_id;
  std::string template_id;
  int layer = -1;
  PoolRule rule = PoolRule::LastToken;
  bool normalize = false;

  bool operator==(const Provenance&) const = default;
};

struct SentenceEmbedding {
  std::vector<float> vector;
  Provenance provenance;
};

struct PoolOptions {
  std::string model_id;
  std::string mask_token = std::string(kMaskText);
};

// Token indices of the template's mask tokens: exact token-text matches
// first, falling back to tokens whose offsets overlap a mask occurrence in
// the prompt. The last mask_count hits are returned, so mask text inside the
// sentence itself is ignored. Throws MaskPositionsNotFound.
std::vector<std::size_t> locate_masks(const PromptStates& states, int mask_count,
                                      std::string_view mask_token);

// Throws LayerMissing, MaskPositionsNotFound, ConfigError (rule/template mismatch).
SentenceEmbedding pool(const PromptStates& states, const ExtractionSpec& spec,
                       const PromptTemplate& tmpl, const PoolOptions& options = {});

// In-place L2 normalization; computed in double, stored as float.
void l2_normalize(std::vector<float>& v);

}  // namespace peb
