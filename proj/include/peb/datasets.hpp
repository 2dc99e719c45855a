#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace peb {

struct SentencePair {
  std::string sentence1;
  std::string sentence2;
  double gold = 0.0;

  bool operator==(const SentencePair&) const = default;
};

struct Subset {
  std::string name;
  std::vector<SentencePair> pairs;

  bool operator==(const Subset&) const = default;
};

struct Benchmark {
  std::string name;
  std::vector<Subset> subsets;
  std::size_t dropped = 0;  // pairs skipped for blank gold scores

  std::size_t size() const;
  std::vector<SentencePair> all_pairs() const;
};

// STS12..STS16, STSB-dev, STSB-test, SICKR.
const std::vector<std::string>& benchmark_names();
// The seven benchmarks averaged in reports, in report column order.
const std::vector<std::string>& standard_benchmarks();
std::string benchmark_display_name(std::string_view name);

// Reads the SentEval directory layout rooted at root_dir (the directory
// holding STS/ and SICK/). Subsets of STS12-16 are discovered from the
// STS.input.<subset>.txt / STS.gs.<subset>.txt pairs and sorted by name.
// Throws MissingFile, MalformedLine, GoldOutOfRange, ConfigError.
Benchmark load_senteval_sts(const std::filesystem::path& root_dir, std::string_view name);

// Normalized layout: <root>/<name>/<subset>.tsv with lines
// sentence1 TAB sentence2 TAB gold.
Benchmark load_normalized(const std::filesystem::path& root_dir, std::string_view name);
void write_normalized(const std::filesystem::path& root_dir, const Benchmark& benchmark);

// Converts every benchmark found under a SentEval root; returns what was
// written. Benchmarks whose files are absent are skipped.
std::vector<Benchmark> import_senteval(const std::filesystem::path& src,
                                       const std::filesystem::path& dst);

// Pairs with gold >= threshold, order preserved. Throws ThresholdOutOfRange
// unless threshold is in [0, 5].
std::vector<SentencePair> filter_similar(const std::vector<SentencePair>& pairs, double threshold);

}  // namespace peb
