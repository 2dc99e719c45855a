#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "peb/analysis.hpp"
#include "peb/error.hpp"
#include "peb/backend.hpp"
#include "peb/datasets.hpp"
#include "peb/pooling.hpp"
#include "peb/store.hpp"
#include "peb/templates.hpp"

namespace peb {

enum class Aggregation { All, Mean };
enum class OutputFormat { Markdown, Csv, Json };
enum class DataLayout { Normalized, SentEval };

std::string_view aggregation_name(Aggregation a);
std::string_view format_name(OutputFormat f);

struct RunConfig {
  std::string backend = "mock";
  std::vector<std::string> templates{"prompt_eol"};
  std::vector<PromptTemplate> extra_templates;  // loaded from a template file
  std::optional<int> layer;                     // overrides per-template defaults
  bool normalize = false;
  std::vector<std::string> benchmarks;
  Aggregation aggregation = Aggregation::All;
  std::filesystem::path data_dir;
  DataLayout layout = DataLayout::Normalized;
  std::optional<std::filesystem::path> cache_dir;
  OutputFormat format = OutputFormat::Markdown;
  std::size_t batch_size = 64;
  unsigned threads = 1;
  double threshold = 4.5;  // alignment pairs: gold >= threshold
  std::string timestamp;   // filled by the caller; see report_timestamp()
};

// SOURCE_DATE_EPOCH when set, otherwise the current time, as ISO-8601 UTC.
std::string report_timestamp();

// Resolves template ids against built-ins, the mask family and
// config.extra_templates. Throws ConfigError for unknown ids.
std::vector<PromptTemplate> resolve_templates(const RunConfig& config);
ExtractionSpec extraction_for(const PromptTemplate& tmpl, const RunConfig& config);

// Embeds sentences through a backend, reading and filling an optional cache.
class Embedder {
 public:
  Embedder(Backend& backend, EmbeddingStore* cache, std::size_t batch_size = 64);

  std::vector<SentenceEmbedding> embed(const PromptTemplate& tmpl, const ExtractionSpec& spec,
                                       const std::vector<std::string>& sentences);

  std::size_t cache_hits() const { return hits_; }
  std::size_t cache_misses() const { return misses_; }

 private:
  Backend& backend_;
  EmbeddingStore* cache_;
  std::size_t batch_size_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

struct BenchmarkScore {
  std::string benchmark;
  bool ok = false;
  std::string error;
  double spearman_x100 = 0.0;
  double pearson_x100 = 0.0;
  std::size_t n = 0;
  // Per-subset Spearman x100, reported in `mean` aggregation.
  std::vector<std::pair<std::string, double>> subsets;
};

struct TemplateRow {
  std::string template_id;
  ExtractionSpec spec;
  std::vector<BenchmarkScore> scores;
  std::optional<double> average;  // absent if any benchmark failed
  bool flagged = false;
};

struct ReportMeta {
  std::string command;
  std::string model_id;
  std::string backend_kind;
  int hidden_size = 0;
  int num_layers = 0;
  std::string aggregation;
  std::string timestamp;
  std::string config_digest;
};

struct EvalReport {
  ReportMeta meta;
  std::vector<std::string> benchmarks;
  std::vector<TemplateRow> rows;

  bool complete() const;
};

struct AlignUniformRow {
  std::string template_id;
  int layer = -1;
  std::optional<double> spearman_x100;  // average over the scored benchmarks
  double alignment = 0.0;
  double uniformity = 0.0;
  std::size_t aligned_pairs = 0;
  std::size_t embeddings = 0;
};

struct AlignUniformReport {
  ReportMeta meta;
  double threshold = 4.5;
  std::vector<std::string> spearman_benchmarks;
  std::vector<AlignUniformRow> rows;
};

struct SweepRow {
  int mask_count = 1;
  Eos eos = Eos::Period;
  std::string template_id;
  double spearman_x100 = 0.0;
  bool flagged = false;
};

struct SweepReport {
  ReportMeta meta;
  int layer = -1;
  std::vector<SweepRow> rows;
};

struct AnalyzeReport {
  ReportMeta meta;
  std::vector<ContributionReport> reports;
};

// Loads one benchmark per the config's data layout.
Benchmark load_benchmark(const RunConfig& config, std::string_view name);

// SHA-256 over everything that determines a report's numbers and layout:
// backend identity, templates and their patterns, extraction, benchmarks,
// aggregation, format and command-specific parameters. The cache location
// and the timestamp are excluded.
std::string config_digest(const RunConfig& config, std::string_view command,
                          const BackendDescriptor& backend, std::string_view params = {});

EvalReport eval_sts(const RunConfig& config, Backend& backend, Embedder& embedder);
AlignUniformReport eval_align_uniform(const RunConfig& config, Backend& backend, Embedder& embedder);
SweepReport sweep_mask_templates(const RunConfig& config, Backend& backend, Embedder& embedder,
                                 const std::vector<int>& counts, const std::vector<Eos>& eos_set);
AnalyzeReport analyze_tokens(const RunConfig& config, Backend& backend, const std::string& sentence,
                             const std::vector<std::string>& core_words, bool merge_words);

std::string render_report(const EvalReport& report, OutputFormat format);
std::string render_report(const AlignUniformReport& report, OutputFormat format);
std::string render_report(const SweepReport& report, OutputFormat format);
std::string render_report(const AnalyzeReport& report, OutputFormat format);

}  // namespace peb

namespace peb {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitBackend = 3;
inline constexpr int kExitData = 4;

int exit_code_for(Errc code);

}  // namespace peb
