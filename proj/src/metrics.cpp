#include "peb/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <string>
#include <thread>

#include "peb/error.hpp"

namespace peb {
namespace {

template <typename T>
double cosine_impl(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw Error(Errc::LengthMismatch,
                "cosine of vectors with lengths " + std::to_string(a.size()) + " and " +
                    std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (na == 0.0 || nb == 0.0) throw Error(Errc::ZeroVector, "cosine of a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

void check_series(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) {
    throw Error(Errc::LengthMismatch,
                std::to_string(xs.size()) + " vs " + std::to_string(ys.size()) + " values");
  }
  if (xs.size() < 2) throw Error(Errc::LengthMismatch, "correlation needs at least two values");
}

double squared_distance(EmbeddingRef a, EmbeddingRef b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    d += diff * diff;
  }
  return d;
}

void check_unit(EmbeddingRef v) {
  double n2 = 0.0;
  for (float x : v) n2 += static_cast<double>(x) * x;
  if (std::abs(std::sqrt(n2) - 1.0) > kNormTolerance) {
    throw Error(Errc::NotNormalized, "embedding norm " + std::to_string(std::sqrt(n2)));
  }
}

}  // namespace

double pairwise_sum(std::span<const double> values) {
  constexpr std::size_t kLeaf = 32;
  if (values.size() <= kLeaf) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const auto half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double cosine(std::span<const float> a, std::span<const float> b) { return cosine_impl(a, b); }
double cosine(std::span<const double> a, std::span<const double> b) { return cosine_impl(a, b); }

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i + 1;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    // positions i..j-1 share ranks i+1..j
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  check_series(xs, ys);
  const auto n = static_cast<double>(xs.size());
  const double mx = pairwise_sum(xs) / n;
  const double my = pairwise_sum(ys) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double dx = xs[i] - mx, dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(Errc::DegenerateInput, "constant series");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double spearman(std::span<const double> xs, std::span<const double> ys) {
  check_series(xs, ys);
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  return pearson(rx, ry);
}

MetricReport score(std::span<const double> predicted, std::span<const double> gold) {
  return {100.0 * spearman(predicted, gold), 100.0 * pearson(predicted, gold), predicted.size()};
}

double alignment(std::span<const std::pair<EmbeddingRef, EmbeddingRef>> pairs) {
  if (pairs.empty()) throw Error(Errc::EmptyInput, "alignment needs at least one pair");
  std::vector<double> distances;
  distances.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    if (a.size() != b.size()) throw Error(Errc::LengthMismatch, "paired embeddings differ in length");
    check_unit(a);
    check_unit(b);
    distances.push_back(squared_distance(a, b));
  }
  return pairwise_sum(distances) / static_cast<double>(pairs.size());
}

double uniformity(std::span<const EmbeddingRef> embeddings, unsigned threads) {
  const auto n = embeddings.size();
  if (n < 2) throw Error(Errc::EmptyInput, "uniformity needs at least two embeddings");
  for (const auto& e : embeddings) {
    if (e.size() != embeddings.front().size()) {
      throw Error(Errc::LengthMismatch, "embeddings differ in length");
    }
    check_unit(e);
  }
  // row_sums[i] = sum over j > i, each row summed in a fixed order.
  std::vector<double> row_sums(n - 1);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    std::vector<double> terms;
    for (auto i = next++; i < n - 1; i = next++) {
      terms.clear();
      for (std::size_t j = i + 1; j < n; ++j) {
        terms.push_back(std::exp(-2.0 * squared_distance(embeddings[i], embeddings[j])));
      }
      row_sums[i] = pairwise_sum(terms);
    }
  };
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < std::max(1u, threads); ++t) pool.emplace_back(worker);
    worker();
  }
  const double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  return std::log(pairwise_sum(row_sums) / pairs);
}

}  // namespace peb
