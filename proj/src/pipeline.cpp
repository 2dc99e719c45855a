#include "peb/pipeline.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <map>
#include <unordered_map>

#include <json.hpp>

#include "peb/digest.hpp"
#include "peb/error.hpp"
#include "peb/metrics.hpp"
#include "text_util.hpp"

namespace peb {
namespace {

using nlohmann::json;

bool is_data_error(Errc code) {
  switch (code) {
    case Errc::MissingFile:
    case Errc::MalformedLine:
    case Errc::GoldOutOfRange:
    case Errc::DegenerateInput:
    case Errc::LengthMismatch:
      return true;
    default:
      return false;
  }
}

ReportMeta make_meta(const RunConfig& config, std::string_view command, const Backend& backend,
                     std::string_view params) {
  const auto& d = backend.descriptor();
  ReportMeta m;
  m.command = std::string(command);
  m.model_id = d.model_id;
  m.backend_kind = d.kind == BackendDescriptor::Kind::Http ? "http" : "mock";
  m.hidden_size = d.hidden_size;
  m.num_layers = d.num_layers;
  m.aggregation = std::string(aggregation_name(config.aggregation));
  m.timestamp = config.timestamp;
  m.config_digest = config_digest(config, command, d, params);
  return m;
}

std::string mask_token_of(const Backend& backend) {
  const auto& token = backend.descriptor().mask_token;
  return token.empty() ? std::string(kMaskText) : token;
}

// Spearman/Pearson x100 for one benchmark under the configured aggregation.
BenchmarkScore score_benchmark(const Benchmark& benchmark, const PromptTemplate& tmpl,
                               const ExtractionSpec& spec, Aggregation aggregation,
                               Embedder& embedder) {
  BenchmarkScore out;
  out.benchmark = benchmark.name;
  std::vector<std::string> sentences;
  for (const auto& s : benchmark.subsets) {
    for (const auto& p : s.pairs) {
      sentences.push_back(p.sentence1);
      sentences.push_back(p.sentence2);
    }
  }
  const auto embeddings = embedder.embed(tmpl, spec, sentences);

  std::size_t cursor = 0;
  std::vector<double> all_pred, all_gold;
  std::vector<double> subset_spearman, subset_pearson;
  for (const auto& s : benchmark.subsets) {
    std::vector<double> pred, gold;
    for (const auto& p : s.pairs) {
      pred.push_back(cosine(std::span<const float>(embeddings[cursor].vector),
                            std::span<const float>(embeddings[cursor + 1].vector)));
      gold.push_back(p.gold);
      cursor += 2;
    }
    if (aggregation == Aggregation::Mean) {
      const auto r = score(pred, gold);
      subset_spearman.push_back(r.spearman_x100);
      subset_pearson.push_back(r.pearson_x100);
      out.subsets.emplace_back(s.name, r.spearman_x100);
    }
    all_pred.insert(all_pred.end(), pred.begin(), pred.end());
    all_gold.insert(all_gold.end(), gold.begin(), gold.end());
  }
  out.n = all_pred.size();
  if (aggregation == Aggregation::All) {
    const auto r = score(all_pred, all_gold);
    out.spearman_x100 = r.spearman_x100;
    out.pearson_x100 = r.pearson_x100;
  } else {
    out.spearman_x100 = pairwise_sum(subset_spearman) / static_cast<double>(subset_spearman.size());
    out.pearson_x100 = pairwise_sum(subset_pearson) / static_cast<double>(subset_pearson.size());
  }
  out.ok = true;
  return out;
}

ExtractionSpec canonical_spec(ExtractionSpec spec, const Backend& backend) {
  spec.layer = canonical_layer(spec.layer, backend.descriptor().num_layers);
  return spec;
}

}  // namespace

std::string_view aggregation_name(Aggregation a) { return a == Aggregation::All ? "all" : "mean"; }

std::string_view format_name(OutputFormat f) {
  switch (f) {
    case OutputFormat::Markdown: return "markdown";
    case OutputFormat::Csv: return "csv";
    case OutputFormat::Json: return "json";
  }
  return "markdown";
}

std::string report_timestamp() {
  std::time_t t = 0;
  if (const char* epoch = std::getenv("SOURCE_DATE_EPOCH"); epoch && *epoch) {
    t = static_cast<std::time_t>(std::strtoll(epoch, nullptr, 10));
  } else {
    t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  }
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<PromptTemplate> resolve_templates(const RunConfig& config) {
  if (config.templates.empty()) throw Error(Errc::ConfigError, "no templates requested");
  std::vector<PromptTemplate> out;
  for (const auto& id : config.templates) {
    const auto extra = std::find_if(config.extra_templates.begin(), config.extra_templates.end(),
                                    [&](const PromptTemplate& t) { return t.id == id; });
    if (extra != config.extra_templates.end()) {
      out.push_back(*extra);
    } else if (auto t = find_template(id)) {
      out.push_back(std::move(*t));
    } else {
      throw Error(Errc::ConfigError, "unknown template id '" + id + "'");
    }
  }
  return out;
}

ExtractionSpec extraction_for(const PromptTemplate& tmpl, const RunConfig& config) {
  auto spec = default_extraction(tmpl);
  if (config.layer) spec.layer = *config.layer;
  spec.normalize = config.normalize;
  return spec;
}

Embedder::Embedder(Backend& backend, EmbeddingStore* cache, std::size_t batch_size)
    : backend_(backend), cache_(cache), batch_size_(std::max<std::size_t>(1, batch_size)) {}

std::vector<SentenceEmbedding> Embedder::embed(const PromptTemplate& tmpl,
                                               const ExtractionSpec& spec,
                                               const std::vector<std::string>& sentences) {
  const auto& desc = backend_.descriptor();
  const Provenance provenance{desc.model_id, tmpl.id, spec.layer, spec.rule, spec.normalize};
  const PoolOptions pool_options{desc.model_id, mask_token_of(backend_)};

  std::vector<SentenceEmbedding> out(sentences.size());
  std::vector<std::string> pending;  // unique trimmed sentences, first-seen order
  std::unordered_map<std::string, std::vector<std::size_t>> waiting;
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const std::string trimmed(text::trim(sentences[i]));
    if (trimmed.empty()) throw Error(Errc::EmptySentence, "sentence " + std::to_string(i));
    if (auto it = waiting.find(trimmed); it != waiting.end()) {
      it->second.push_back(i);
      ++misses_;
      continue;
    }
    if (cache_ != nullptr) {
      if (auto v = cache_->get(CacheKey::make(provenance, trimmed))) {
        out[i] = SentenceEmbedding{std::move(*v), provenance};
        ++hits_;
        continue;
      }
    }
    ++misses_;
    pending.push_back(trimmed);
    waiting[trimmed].push_back(i);
  }

  const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  for (std::size_t begin = 0; begin < pending.size(); begin += batch_size_) {
    const auto end = std::min(pending.size(), begin + batch_size_);
    HiddenStatesRequest request;
    request.layers = {spec.layer};
    request.want_offsets = spec.rule == PoolRule::MeanOverMasks;
    for (auto k = begin; k < end; ++k) request.prompts.push_back(render(tmpl, pending[k]));
    const auto response = backend_.fetch_hidden_states(request);
    if (response.size() != request.prompts.size()) {
      throw Error(Errc::ProtocolError, "backend returned " + std::to_string(response.size()) +
                                           " results for " + std::to_string(request.prompts.size()) +
                                           " prompts");
    }
    for (auto k = begin; k < end; ++k) {
      auto emb = pool(response[k - begin], spec, tmpl, pool_options);
      if (cache_ != nullptr) {
        cache_->put(CacheEntry{CacheKey::make(provenance, pending[k]), emb.vector, now,
                               desc.fingerprint.empty() ? desc.model_id : desc.fingerprint});
      }
      for (auto idx : waiting[pending[k]]) out[idx] = emb;
    }
  }
  return out;
}

bool EvalReport::complete() const {
  for (const auto& r : rows) {
    if (!r.average) return false;
  }
  return true;
}

Benchmark load_benchmark(const RunConfig& config, std::string_view name) {
  return config.layout == DataLayout::SentEval ? load_senteval_sts(config.data_dir, name)
                                               : load_normalized(config.data_dir, name);
}

std::string config_digest(const RunConfig& config, std::string_view command,
                          const BackendDescriptor& backend, std::string_view params) {
  json j;
  j["command"] = command;
  j["backend"] = {{"kind", backend.kind == BackendDescriptor::Kind::Http ? "http" : "mock"},
                  {"spec", config.backend},
                  {"model_id", backend.model_id},
                  {"hidden_size", backend.hidden_size},
                  {"num_layers", backend.num_layers},
                  {"mask_token", backend.mask_token}};
  json templates = json::array();
  for (const auto& t : resolve_templates(config)) {
    const auto spec = extraction_for(t, config);
    templates.push_back({{"id", t.id},
                         {"pattern", t.pattern()},
                         {"layer", spec.layer},
                         {"rule", pool_rule_name(spec.rule)},
                         {"normalize", spec.normalize}});
  }
  j["templates"] = std::move(templates);
  j["benchmarks"] = config.benchmarks;
  j["aggregation"] = aggregation_name(config.aggregation);
  j["layout"] = config.layout == DataLayout::SentEval ? "senteval" : "normalized";
  j["format"] = format_name(config.format);
  j["params"] = params;
  return sha256_hex(j.dump());
}

EvalReport eval_sts(const RunConfig& config, Backend& backend, Embedder& embedder) {
  if (config.benchmarks.empty()) throw Error(Errc::ConfigError, "no benchmarks requested");
  const auto templates = resolve_templates(config);

  std::map<std::string, Benchmark> loaded;
  std::map<std::string, std::string> load_errors;
  for (const auto& name : config.benchmarks) {
    try {
      loaded.emplace(name, load_benchmark(config, name));
    } catch (const Error& e) {
      if (!is_data_error(e.code())) throw;
      load_errors.emplace(name, e.what());
    }
  }

  EvalReport report;
  report.meta = make_meta(config, "eval", backend, {});
  report.benchmarks = config.benchmarks;
  for (const auto& tmpl : templates) {
    TemplateRow row;
    row.template_id = tmpl.id;
    row.spec = canonical_spec(extraction_for(tmpl, config), backend);
    row.flagged = tmpl.flagged();
    std::vector<double> values;
    for (const auto& name : config.benchmarks) {
      BenchmarkScore s;
      s.benchmark = name;
      if (auto err = load_errors.find(name); err != load_errors.end()) {
        s.error = err->second;
      } else {
        try {
          s = score_benchmark(loaded.at(name), tmpl, row.spec, config.aggregation, embedder);
          values.push_back(s.spearman_x100);
        } catch (const Error& e) {
          if (!is_data_error(e.code())) throw;
          s.error = e.what();
        }
      }
      row.scores.push_back(std::move(s));
    }
    if (values.size() == config.benchmarks.size()) {
      row.average = pairwise_sum(values) / static_cast<double>(values.size());
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

AlignUniformReport eval_align_uniform(const RunConfig& config, Backend& backend,
                                      Embedder& embedder) {
  if (!(config.threshold >= 0.0 && config.threshold <= 5.0)) {
    throw Error(Errc::ThresholdOutOfRange,
                "threshold " + std::to_string(config.threshold) + " not in [0, 5]");
  }
  const auto templates = resolve_templates(config);
  const auto stsb = load_benchmark(config, "STSB-test");
  const auto pairs = stsb.all_pairs();

  AlignUniformReport report;
  report.meta = make_meta(config, "align-uniform", backend,
                          "threshold=" + std::to_string(config.threshold));
  report.threshold = config.threshold;
  report.spearman_benchmarks = config.benchmarks;

  std::map<std::string, Benchmark> scored;
  bool spearman_ok = true;
  for (const auto& name : config.benchmarks) {
    try {
      scored.emplace(name, load_benchmark(config, name));
    } catch (const Error& e) {
      if (!is_data_error(e.code())) throw;
      spearman_ok = false;
    }
  }

  for (const auto& tmpl : templates) {
    auto spec = canonical_spec(extraction_for(tmpl, config), backend);
    spec.normalize = true;

    std::vector<std::string> sentences;
    for (const auto& p : pairs) {
      sentences.push_back(p.sentence1);
      sentences.push_back(p.sentence2);
    }
    const auto embeddings = embedder.embed(tmpl, spec, sentences);

    std::vector<EmbeddingRef> all;
    for (const auto& e : embeddings) all.emplace_back(e.vector);
    std::vector<std::pair<EmbeddingRef, EmbeddingRef>> similar;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      if (pairs[i].gold >= config.threshold) similar.emplace_back(all[2 * i], all[2 * i + 1]);
    }

    AlignUniformRow row;
    row.template_id = tmpl.id;
    row.layer = spec.layer;
    row.alignment = alignment(similar);
    row.uniformity = uniformity(all, config.threads);
    row.aligned_pairs = similar.size();
    row.embeddings = all.size();
    if (spearman_ok && !config.benchmarks.empty()) {
      std::vector<double> values;
      bool ok = true;
      for (const auto& name : config.benchmarks) {
        try {
          values.push_back(
              score_benchmark(scored.at(name), tmpl, spec, config.aggregation, embedder).spearman_x100);
        } catch (const Error& e) {
          if (!is_data_error(e.code())) throw;
          ok = false;
        }
      }
      if (ok) row.spearman_x100 = pairwise_sum(values) / static_cast<double>(values.size());
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

SweepReport sweep_mask_templates(const RunConfig& config, Backend& backend, Embedder& embedder,
                                 const std::vector<int>& counts, const std::vector<Eos>& eos_set) {
  if (!backend.descriptor().mask_capable()) {
    throw Error(Errc::BackendNotMaskCapable,
                "model '" + backend.descriptor().model_id + "' reports no mask token");
  }
  if (counts.empty() || eos_set.empty()) throw Error(Errc::ConfigError, "empty sweep grid");
  for (int c : counts) {
    if (c < 1) throw Error(Errc::ConfigError, "mask count must be >= 1");
  }
  const auto dev = load_benchmark(config, "STSB-dev");

  std::string params = "counts=";
  for (int c : counts) params += std::to_string(c) + ",";
  params += ";eos=";
  for (auto e : eos_set) params += std::string(eos_name(e)) + ",";

  SweepReport report;
  RunConfig digest_config = config;
  digest_config.templates = {"mask_1_period"};
  digest_config.benchmarks = {"STSB-dev"};
  report.meta = make_meta(digest_config, "sweep-mask", backend, params);
  report.layer = canonical_layer(config.layer.value_or(-1), backend.descriptor().num_layers);
  for (auto eos : eos_set) {
    for (int count : counts) {
      const auto tmpl = build_mask_template({count, eos});
      const ExtractionSpec spec{report.layer, PoolRule::MeanOverMasks, config.normalize};
      const auto s = score_benchmark(dev, tmpl, spec, Aggregation::All, embedder);
      report.rows.push_back({count, eos, tmpl.id, s.spearman_x100, tmpl.flagged()});
    }
  }
  return report;
}

AnalyzeReport analyze_tokens(const RunConfig& config, Backend& backend, const std::string& sentence,
                             const std::vector<std::string>& core_words, bool merge_words) {
  const auto templates = resolve_templates(config);
  const std::string trimmed(text::trim(sentence));
  if (trimmed.empty()) throw Error(Errc::EmptySentence, "nothing to analyze");

  std::string params = "sentence=" + trimmed + ";core=";
  for (const auto& w : core_words) params += w + ",";
  params += merge_words ? ";merge" : "";

  AnalyzeReport report;
  RunConfig digest_config = config;
  digest_config.benchmarks.clear();
  report.meta = make_meta(digest_config, "analyze", backend, params);
  const auto core_spans = word_spans(trimmed, core_words);
  const PoolOptions pool_options{backend.descriptor().model_id, mask_token_of(backend)};

  for (const auto& tmpl : templates) {
    const auto spec = canonical_spec(extraction_for(tmpl, config), backend);
    HiddenStatesRequest request{{render(tmpl, trimmed)}, {spec.layer}, true};
    const auto response = backend.fetch_hidden_states(request);
    if (response.size() != 1) throw Error(Errc::ProtocolError, "expected one result");
    const auto embedding = pool(response.front(), spec, tmpl, pool_options);
    auto contributions = classify_tokens(
        token_contributions(response.front(), embedding, sentence_span(tmpl, trimmed)), core_spans);
    if (merge_words) contributions = merge_by_offset(contributions, trimmed);
    ContributionReport r;
    r.sentence = trimmed;
    r.template_id = tmpl.id;
    r.core_mass = core_mass(contributions);
    r.contributions = std::move(contributions);
    report.reports.push_back(std::move(r));
  }
  return report;
}

}  // namespace peb

namespace peb {

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::ConfigError:
    case Errc::TemplateNotFound:
    case Errc::TemplateParse:
    case Errc::ThresholdOutOfRange:
    case Errc::EmptySentence:
      return kExitConfig;
    case Errc::ConnectFailed:
    case Errc::ProtocolError:
    case Errc::LayerOutOfRange:
    case Errc::NonFiniteValues:
    case Errc::BackendNotMaskCapable:
    case Errc::LayerMissing:
    case Errc::MaskPositionsNotFound:
      return kExitBackend;
    default:
      return kExitData;
  }
}

}  // namespace peb
