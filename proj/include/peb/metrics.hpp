#pragma once

#include <span>
#include <utility>
#include <vector>

namespace peb {

// Correlations reported x100, as in STS result tables.
struct MetricReport {
  double spearman_x100 = 0.0;
  double pearson_x100 = 0.0;
  std::size_t n = 0;
};

// Sum with fixed-shape pairwise recursion; deterministic for a given length.
double pairwise_sum(std::span<const double> values);

// Throws LengthMismatch, ZeroVector.
double cosine(std::span<const float> a, std::span<const float> b);
double cosine(std::span<const double> a, std::span<const double> b);

// 1-based average ranks; tied values share the mean of their rank range.
std::vector<double> average_ranks(std::span<const double> values);

// Throws LengthMismatch (including n < 2), DegenerateInput.
double pearson(std::span<const double> xs, std::span<const double> ys);
double spearman(std::span<const double> xs, std::span<const double> ys);

MetricReport score(std::span<const double> predicted, std::span<const double> gold);

// Tolerance on the unit norm expected of alignment/uniformity inputs.
inline constexpr double kNormTolerance = 1e-4;

using EmbeddingRef = std::span<const float>;

// Mean squared distance between paired embeddings. Inputs must be unit-norm.
// Throws EmptyInput, NotNormalized, LengthMismatch.
double alignment(std::span<const std::pair<EmbeddingRef, EmbeddingRef>> pairs);

// log of the mean of exp(-2 |x - y|^2) over unordered distinct pairs.
// Throws EmptyInput (fewer than two), NotNormalized, LengthMismatch.
// Rows are processed by up to `threads` workers; the result does not depend
// on the thread count.
double uniformity(std::span<const EmbeddingRef> embeddings, unsigned threads = 1);

}  // namespace peb
