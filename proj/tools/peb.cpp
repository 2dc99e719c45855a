// peb: prompt-based sentence embedding evaluation.

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "peb/pipeline.hpp"

namespace {

using namespace peb;

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : std::move(fallback);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int to_int(std::string_view s) {
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw Error(Errc::ConfigError, "not an integer: '" + std::string(s) + "'");
  }
  return v;
}

// "1..4" or "1,2,4"
std::vector<int> parse_counts(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    if (const auto dots = item.find(".."); dots != std::string::npos) {
      const int lo = to_int(std::string_view(item).substr(0, dots));
      const int hi = to_int(std::string_view(item).substr(dots + 2));
      if (lo > hi) throw Error(Errc::ConfigError, "empty range " + item);
      for (int c = lo; c <= hi; ++c) out.push_back(c);
    } else {
      out.push_back(to_int(item));
    }
  }
  return out;
}

std::vector<std::string> expand_benchmarks(const std::string& s) {
  if (s == "all") return standard_benchmarks();
  auto out = split_list(s);
  for (const auto& b : out) {
    const auto& known = benchmark_names();
    if (std::find(known.begin(), known.end(), b) == known.end()) {
      throw Error(Errc::ConfigError, "unknown benchmark '" + b + "'");
    }
  }
  return out;
}

struct CommonOptions {
  std::string backend = env_or("PEB_BACKEND_URL", "mock");
  std::string templates;
  std::string template_file;
  std::string benchmarks;
  std::string data_dir = env_or("PEB_DATA_DIR", "data");
  std::string layout = "normalized";
  std::string cache_dir = env_or("PEB_CACHE_DIR", "");
  std::string aggregation = "all";
  std::string format = "markdown";
  std::string out;
  std::optional<int> layer;
  bool normalize = false;
  std::size_t batch_size = 64;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
};

void add_common(CLI::App* cmd, CommonOptions& o, const std::string& default_templates,
                const std::string& default_benchmarks) {
  o.templates = default_templates;
  o.benchmarks = default_benchmarks;
  cmd->add_option("--backend", o.backend, "mock[:seed=N,dim=N,layers=N,mask=TEXT] or http://host:port")
      ->capture_default_str();
  cmd->add_option("--templates", o.templates, "comma-separated template ids")->capture_default_str();
  cmd->add_option("--template-file", o.template_file, "extra templates (id/family/capture/pattern records)");
  cmd->add_option("--benchmarks", o.benchmarks, "comma-separated benchmark names or 'all'")
      ->capture_default_str();
  cmd->add_option("--data", o.data_dir, "dataset root (PEB_DATA_DIR)")->capture_default_str();
  cmd->add_option("--layout", o.layout, "dataset layout")
      ->check(CLI::IsMember({"normalized", "senteval"}))
      ->capture_default_str();
  cmd->add_option("--cache", o.cache_dir, "embedding cache directory (PEB_CACHE_DIR)");
  cmd->add_option("--aggregation", o.aggregation, "STS12-16 subset aggregation")
      ->check(CLI::IsMember({"all", "mean"}))
      ->capture_default_str();
  cmd->add_option("--format", o.format, "report format")
      ->check(CLI::IsMember({"markdown", "csv", "json"}))
      ->capture_default_str();
  cmd->add_option("--out", o.out, "write the report here instead of stdout");
  cmd->add_option("--layer", o.layer, "hidden layer for every template (negative counts from the end)");
  cmd->add_flag("--normalize", o.normalize, "L2-normalize embeddings before scoring");
  cmd->add_option("--batch-size", o.batch_size, "prompts per backend request")->capture_default_str();
  cmd->add_option("--threads", o.threads, "worker threads for pairwise metrics");
}

RunConfig make_config(const CommonOptions& o) {
  RunConfig c;
  c.backend = o.backend;
  c.templates = split_list(o.templates);
  if (!o.template_file.empty()) c.extra_templates = load_template_config(o.template_file);
  c.layer = o.layer;
  c.normalize = o.normalize;
  c.benchmarks = o.benchmarks.empty() ? std::vector<std::string>{} : expand_benchmarks(o.benchmarks);
  c.aggregation = o.aggregation == "mean" ? Aggregation::Mean : Aggregation::All;
  c.data_dir = o.data_dir;
  c.layout = o.layout == "senteval" ? DataLayout::SentEval : DataLayout::Normalized;
  if (!o.cache_dir.empty()) c.cache_dir = o.cache_dir;
  c.format = o.format == "csv" ? OutputFormat::Csv
             : o.format == "json" ? OutputFormat::Json
                                  : OutputFormat::Markdown;
  c.batch_size = o.batch_size;
  c.threads = o.threads;
  c.timestamp = report_timestamp();
  return c;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error(Errc::StoreIo, "cannot write " + path);
}

// Backend, optional cache and embedder for one command.
struct Session {
  std::unique_ptr<Backend> backend;
  std::unique_ptr<EmbeddingStore> cache;
  std::unique_ptr<Embedder> embedder;

  explicit Session(const RunConfig& c) {
    resolve_templates(c);  // surface unknown ids before connecting
    backend = open_backend(c.backend);
    if (c.cache_dir) cache = std::make_unique<EmbeddingStore>(*c.cache_dir, EmbeddingStore::Mode::ReadWrite);
    embedder = std::make_unique<Embedder>(*backend, cache.get(), c.batch_size);
  }

  ~Session() {
    if (cache) {
      std::cerr << "cache: " << embedder->cache_hits() << " hits, " << embedder->cache_misses()
                << " misses\n";
    }
  }
};

int run(int argc, char** argv) {
  CLI::App app{"Prompt-based sentence embedding evaluation"};
  app.require_subcommand(1);

  CommonOptions eval_opts;
  auto* eval = app.add_subcommand("eval", "Spearman x100 over STS benchmarks");
  add_common(eval, eval_opts, "prompt_eol", "all");

  CommonOptions metrics_opts;
  double threshold = 4.5;
  auto* metrics = app.add_subcommand("metrics", "semantic-space metrics");
  metrics->require_subcommand(1);
  auto* align = metrics->add_subcommand("align-uniform", "alignment and uniformity on STS-B test");
  add_common(align, metrics_opts, "prompt_eol", "STSB-test");
  align->add_option("--threshold", threshold, "minimum gold score of aligned pairs")->capture_default_str();

  CommonOptions sweep_opts;
  std::string counts = "1..4";
  std::string eos = "period,bang,question";
  auto* sweep = app.add_subcommand("sweep-mask", "mask count x terminal character grid on STS-B dev");
  add_common(sweep, sweep_opts, "", "");
  sweep->add_option("--counts", counts, "mask counts, e.g. 1..4 or 1,2")->capture_default_str();
  sweep->add_option("--eos", eos, "none,sep,period,bang,question")->capture_default_str();

  CommonOptions analyze_opts;
  std::string sentence;
  std::string core;
  bool merge_words = false;
  auto* analyze = app.add_subcommand("analyze", "per-token cosine contribution to the embedding");
  add_common(analyze, analyze_opts, "prompt_eol,knowledge_enhancement", "");
  analyze->add_option("--sentence", sentence, "sentence to analyze")->required();
  analyze->add_option("--core", core, "comma-separated core words");
  analyze->add_flag("--merge-words", merge_words, "merge touching sub-word tokens by offset");

  std::string import_layout = "senteval", import_src, import_dst;
  auto* import = app.add_subcommand("import", "convert a SentEval data tree to normalized TSV");
  import->add_option("--layout", import_layout)->check(CLI::IsMember({"senteval"}))->capture_default_str();
  import->add_option("--src", import_src, "SentEval data root")->required();
  import->add_option("--dst", import_dst, "output root")->required();

  std::string cache_dir = env_or("PEB_CACHE_DIR", "");
  auto* cache = app.add_subcommand("cache", "inspect the embedding cache");
  cache->require_subcommand(1);
  cache->add_option("--cache", cache_dir, "cache directory (PEB_CACHE_DIR)");
  auto* cache_stats = cache->add_subcommand("stats", "record counts");
  auto* cache_verify = cache->add_subcommand("verify", "check every record checksum");
  for (auto* sub : {cache_stats, cache_verify}) sub->add_option("--cache", cache_dir, "cache directory");

  std::string render_template, render_sentence;
  auto* render_cmd = app.add_subcommand("render", "print a rendered prompt");
  render_cmd->add_option("--template", render_template)->required();
  render_cmd->add_option("--sentence", render_sentence)->required();

  auto* list_cmd = app.add_subcommand("templates", "list built-in templates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  if (*eval) {
    const auto config = make_config(eval_opts);
    Session s(config);
    const auto report = eval_sts(config, *s.backend, *s.embedder);
    emit(render_report(report, config.format), eval_opts.out);
    return report.complete() ? kExitOk : kExitData;
  }
  if (*align) {
    auto config = make_config(metrics_opts);
    config.threshold = threshold;
    if (!(threshold >= 0.0 && threshold <= 5.0)) {
      throw Error(Errc::ThresholdOutOfRange, "threshold must lie in [0, 5]");
    }
    Session s(config);
    emit(render_report(eval_align_uniform(config, *s.backend, *s.embedder), config.format),
         metrics_opts.out);
    return kExitOk;
  }
  if (*sweep) {
    auto config = make_config(sweep_opts);
    config.templates = {"mask_1_period"};
    std::vector<Eos> eos_set;
    for (const auto& name : split_list(eos)) {
      const auto e = parse_eos(name);
      if (!e) throw Error(Errc::ConfigError, "unknown terminal character '" + name + "'");
      eos_set.push_back(*e);
    }
    Session s(config);
    emit(render_report(sweep_mask_templates(config, *s.backend, *s.embedder, parse_counts(counts), eos_set),
                       config.format),
         sweep_opts.out);
    return kExitOk;
  }
  if (*analyze) {
    const auto config = make_config(analyze_opts);
    resolve_templates(config);
    auto backend = open_backend(config.backend);
    emit(render_report(analyze_tokens(config, *backend, sentence, split_list(core), merge_words),
                       config.format),
         analyze_opts.out);
    return kExitOk;
  }
  if (*import) {
    for (const auto& b : import_senteval(import_src, import_dst)) {
      std::cout << b.name << ": " << b.size() << " pairs in " << b.subsets.size() << " subsets, "
                << b.dropped << " dropped\n";
    }
    return kExitOk;
  }
  if (*cache) {
    if (cache_dir.empty()) throw Error(Errc::ConfigError, "no cache directory (--cache or PEB_CACHE_DIR)");
    EmbeddingStore store(cache_dir, EmbeddingStore::Mode::ReadOnly);
    if (*cache_stats) {
      const auto st = store.stats();
      std::cout << "records: " << st.records << "\nlog bytes: " << st.log_bytes
                << "\nskipped tail bytes: " << st.skipped_tail_bytes
                << "\ncorrupt records: " << st.corrupt_records << "\n";
      for (const auto& [m, n] : st.per_model) std::cout << "model " << m << ": " << n << "\n";
      for (const auto& [t, n] : st.per_template) std::cout << "template " << t << ": " << n << "\n";
      return kExitOk;
    }
    if (*cache_verify) {
      const auto v = store.verify();
      std::cout << "good records: " << v.good << "\ncorrupt records: " << v.corrupt
                << "\ntruncated tail bytes: " << v.truncated_tail_bytes
                << "\nindex consistent: " << (v.index_consistent ? "yes" : "no") << "\n";
      for (const auto& p : v.problems) std::cout << "problem: " << p << "\n";
      return v.ok() ? kExitOk : kExitData;
    }
  }
  if (*render_cmd) {
    const auto t = find_template(render_template);
    if (!t) throw Error(Errc::ConfigError, "unknown template id '" + render_template + "'");
    std::cout << render(*t, render_sentence) << "\n";
    return kExitOk;
  }
  if (*list_cmd) {
    for (const auto& t : registry()) std::cout << t.id << "\t" << t.pattern() << "\n";
    std::cout << "mask_<n>_<none|sep|period|bang|question>\t" << build_mask_template({1, Eos::Period}).pattern()
              << " (n masks)\n";
    return kExitOk;
  }
  return kExitConfig;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const peb::Error& e) {
    std::cerr << "peb: " << e.what() << "\n";
    return peb::exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "peb: " << e.what() << "\n";
    return peb::kExitData;
  }
}
