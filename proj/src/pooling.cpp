#include "peb/pooling.hpp"

#include <cmath>
#include <set>

#include "peb/error.hpp"

namespace peb {

std::string_view pool_rule_name(PoolRule rule) {
  return rule == PoolRule::LastToken ? "last" : "mask-mean";
}

ExtractionSpec default_extraction(const PromptTemplate& tmpl) {
  ExtractionSpec spec;
  if (tmpl.capture.kind == CaptureRule::Kind::MaskTokens) {
    spec.rule = PoolRule::MeanOverMasks;
  }
  if (tmpl.id == "pretended_cot" || tmpl.id == "knowledge_enhancement") spec.layer = -2;
  return spec;
}

std::vector<std::size_t> locate_masks(const PromptStates& states, int mask_count,
                                      std::string_view mask_token) {
  const auto want = static_cast<std::size_t>(mask_count);
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < states.tokens.size(); ++i) {
    if (states.tokens[i] == mask_token) hits.push_back(i);
  }
  if (hits.size() < want && !mask_token.empty() && states.offsets.size() == states.tokens.size()) {
    std::set<std::size_t> by_offset;
    for (auto at = states.prompt.find(mask_token); at != std::string::npos;
         at = states.prompt.find(mask_token, at + 1)) {
      const auto end = at + mask_token.size();
      for (std::size_t i = 0; i < states.offsets.size(); ++i) {
        const auto [a, b] = states.offsets[i];
        if (a < end && at < b) by_offset.insert(i);
      }
    }
    if (by_offset.size() > hits.size()) hits.assign(by_offset.begin(), by_offset.end());
  }
  if (hits.size() < want) {
    throw Error(Errc::MaskPositionsNotFound, "found " + std::to_string(hits.size()) +
                                                 " mask tokens, template declares " +
                                                 std::to_string(mask_count));
  }
  return {hits.end() - static_cast<std::ptrdiff_t>(want), hits.end()};
}

void l2_normalize(std::vector<float>& v) {
  double norm2 = 0.0;
  for (float x : v) norm2 += static_cast<double>(x) * x;
  if (norm2 == 0.0) throw Error(Errc::ZeroVector, "cannot normalize a zero vector");
  const double norm = std::sqrt(norm2);
  for (auto& x : v) x = static_cast<float>(x / norm);
}

SentenceEmbedding pool(const PromptStates& states, const ExtractionSpec& spec,
                       const PromptTemplate& tmpl, const PoolOptions& options) {
  const auto* vectors = states.layer(spec.layer);
  if (vectors == nullptr) {
    throw Error(Errc::LayerMissing, "layer " + std::to_string(spec.layer) + " not in response");
  }
  if (vectors->empty()) throw Error(Errc::SpanEmpty, "response has no tokens");

  SentenceEmbedding out;
  out.provenance = {options.model_id, tmpl.id, spec.layer, spec.rule, spec.normalize};
  if (spec.rule == PoolRule::LastToken) {
    out.vector = vectors->back();
  } else {
    if (tmpl.capture.kind != CaptureRule::Kind::MaskTokens) {
      throw Error(Errc::ConfigError, "template '" + tmpl.id + "' has no mask tokens to pool");
    }
    const auto positions = locate_masks(states, tmpl.capture.mask_count, options.mask_token);
    std::vector<double> sum(vectors->front().size(), 0.0);
    for (auto pos : positions) {
      const auto& v = (*vectors)[pos];
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += v[k];
    }
    out.vector.resize(sum.size());
    const auto n = static_cast<double>(positions.size());
    for (std::size_t k = 0; k < sum.size(); ++k) out.vector[k] = static_cast<float>(sum[k] / n);
  }
  if (spec.normalize) l2_normalize(out.vector);
  return out;
}

}  // namespace peb
