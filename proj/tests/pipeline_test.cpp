#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "peb/metrics.hpp"
#include "peb/pipeline.hpp"
#include "test_util.hpp"

using namespace peb;
namespace fs = std::filesystem;

namespace {

const fs::path kMini = fs::path(PEB_TEST_DATA_DIR) / "mini";

// Returns a hand-placed vector for each prompt, chosen by which sentence the
// prompt contains. Every prompt is a single token.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(std::map<std::string, std::vector<float>> vectors)
      : vectors_(std::move(vectors)) {
    descriptor_.model_id = "scripted";
    descriptor_.hidden_size = 2;
    descriptor_.num_layers = 1;
  }
  const BackendDescriptor& descriptor() const override { return descriptor_; }
  HiddenStatesResponse fetch_hidden_states(const HiddenStatesRequest& request) override {
    HiddenStatesResponse out;
    for (const auto& p : request.prompts) {
      PromptStates s;
      s.prompt = p;
      s.tokens = {p};
      s.offsets = {{0, p.size()}};
      for (const auto& [sentence, v] : vectors_) {
        if (p.find("\"" + sentence + "\"") != std::string::npos) s.states[-1] = {v};
      }
      EXPECT_EQ(s.states.size(), 1u) << p;
      out.push_back(std::move(s));
    }
    return out;
  }

 private:
  BackendDescriptor descriptor_;
  std::map<std::string, std::vector<float>> vectors_;
};

RunConfig mini_config(std::vector<std::string> benchmarks = {"STSB-test"}) {
  RunConfig c;
  c.data_dir = kMini;
  c.benchmarks = std::move(benchmarks);
  c.timestamp = "2024-01-01T00:00:00Z";
  return c;
}

Errc error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return Errc::ConfigError;
}

}  // namespace

TEST(Eval, FourPairOracle) {
  // Cosines 0.9, 0.1, 0.5, 0.5 against gold 4, 1, 2, 3. Tied cosines come
  // from identical vectors so they tie exactly.
  test::TempDir tmp;
  test::write_file(tmp / "STSB-test/test.tsv", "p1a\tp1b\t4\np2a\tp2b\t1\np3a\tp3b\t2\np4a\tp4b\t3\n");
  auto at = [](double c) { return std::vector<float>{static_cast<float>(c), static_cast<float>(std::sqrt(1 - c * c))}; };
  ScriptedBackend backend({{"p1a", {1, 0}}, {"p1b", at(0.9)}, {"p2a", {1, 0}}, {"p2b", at(0.1)},
                           {"p3a", {1, 0}}, {"p3b", at(0.5)}, {"p4a", {1, 0}}, {"p4b", at(0.5)}});
  auto config = mini_config();
  config.data_dir = tmp.path();
  Embedder embedder(backend, nullptr);
  const auto report = eval_sts(config, backend, embedder);
  ASSERT_EQ(report.rows.size(), 1u);
  const auto& score = report.rows[0].scores.at(0);
  ASSERT_TRUE(score.ok) << score.error;
  EXPECT_EQ(score.n, 4u);
  // 100 * 3 / sqrt(10), cross-checked with scipy.stats.spearmanr
  EXPECT_NEAR(score.spearman_x100, 94.86832980505139, 1e-9);
  EXPECT_NEAR(*report.rows[0].average, 94.86832980505139, 1e-9);
}

TEST(Eval, DeterministicAcrossRuns) {
  auto config = mini_config({"STS12", "STSB-test", "SICKR"});
  config.templates = {"prompt_eol", "pretended_cot"};
  std::string first;
  for (int run = 0; run < 3; ++run) {
    MockBackend backend({});
    Embedder embedder(backend, nullptr);
    const auto report = eval_sts(config, backend, embedder);
    ASSERT_EQ(report.rows.size(), 2u);
    EXPECT_EQ(report.rows[1].spec.layer, -2);
    EXPECT_TRUE(report.complete());
    const auto text = render_report(report, OutputFormat::Json);
    if (run == 0) first = text;
    EXPECT_EQ(text, first);
  }
}

TEST(Eval, MissingBenchmarkIsReportedNotFatal) {
  test::TempDir tmp;
  fs::copy(kMini / "STSB-test", tmp / "STSB-test");
  auto config = mini_config({"STS12", "STSB-test"});
  config.data_dir = tmp.path();
  MockBackend backend({});
  Embedder embedder(backend, nullptr);
  const auto report = eval_sts(config, backend, embedder);
  EXPECT_FALSE(report.complete());
  EXPECT_FALSE(report.rows[0].scores[0].ok);
  EXPECT_TRUE(report.rows[0].scores[1].ok);
  EXPECT_FALSE(report.rows[0].average.has_value());
  const auto md = render_report(report, OutputFormat::Markdown);
  EXPECT_NE(md.find("STS12"), std::string::npos);
}

TEST(Eval, UnknownTemplateIsConfigError) {
  auto config = mini_config();
  config.templates = {"no_such_template"};
  MockBackend backend({});
  Embedder embedder(backend, nullptr);
  EXPECT_EQ(error_of([&] { eval_sts(config, backend, embedder); }), Errc::ConfigError);
  EXPECT_EQ(exit_code_for(Errc::ConfigError), kExitConfig);
  EXPECT_EQ(exit_code_for(Errc::ConnectFailed), kExitBackend);
  EXPECT_EQ(exit_code_for(Errc::MissingFile), kExitData);
}

TEST(Eval, CachedRunMatchesColdRun) {
  test::TempDir cache;
  auto config = mini_config({"STSB-test", "STS13"});
  std::string cold, warm;
  {
    MockBackend backend({});
    EmbeddingStore store(cache.path(), EmbeddingStore::Mode::ReadWrite);
    Embedder embedder(backend, &store);
    cold = render_report(eval_sts(config, backend, embedder), OutputFormat::Markdown);
    EXPECT_EQ(embedder.cache_hits(), 0u);
    EXPECT_GT(embedder.cache_misses(), 0u);
  }
  {
    MockBackend backend({});
    EmbeddingStore store(cache.path(), EmbeddingStore::Mode::ReadWrite);
    Embedder embedder(backend, &store);
    warm = render_report(eval_sts(config, backend, embedder), OutputFormat::Markdown);
    EXPECT_GT(embedder.cache_hits(), 0u);
    EXPECT_EQ(embedder.cache_misses(), 0u);
  }
  EXPECT_EQ(cold, warm);
}

TEST(Eval, ConfigDigestIgnoresCacheAndTimestamp) {
  MockBackend backend({});
  auto a = mini_config();
  auto b = a;
  b.cache_dir = "/somewhere";
  b.timestamp = "1999-01-01T00:00:00Z";
  EXPECT_EQ(config_digest(a, "eval", backend.descriptor()), config_digest(b, "eval", backend.descriptor()));
  b.templates = {"prompt_sum"};
  EXPECT_NE(config_digest(a, "eval", backend.descriptor()), config_digest(b, "eval", backend.descriptor()));
}

TEST(AlignUniform, MatchesDirectSums) {
  auto config = mini_config();
  MockBackend backend({});
  Embedder embedder(backend, nullptr);
  const auto report = eval_align_uniform(config, backend, embedder);
  ASSERT_EQ(report.rows.size(), 1u);
  const auto& row = report.rows[0];

  const auto tmpl = *find_template("prompt_eol");
  const auto pairs = load_normalized(kMini, "STSB-test").all_pairs();
  auto embed = [&](const std::string& s) {
    auto v = mock_states({}, render(tmpl, s), {-1}).states.at(-1).back();
    double n2 = 0;
    for (float x : v) n2 += double(x) * x;
    for (auto& x : v) x = float(x / std::sqrt(n2));
    return v;
  };
  std::vector<std::vector<float>> all;
  std::vector<std::pair<std::vector<float>, std::vector<float>>> similar;
  for (const auto& p : pairs) {
    all.push_back(embed(p.sentence1));
    all.push_back(embed(p.sentence2));
    if (p.gold >= 4.5) similar.emplace_back(all[all.size() - 2], all.back());
  }
  EXPECT_EQ(row.embeddings, 100u);
  EXPECT_EQ(row.aligned_pairs, similar.size());
  EXPECT_NEAR(row.alignment, double(test::oracle::alignment_direct(similar)), 1e-9);
  EXPECT_NEAR(row.uniformity, double(test::oracle::uniformity_direct(all)), 1e-9);
  ASSERT_TRUE(row.spearman_x100.has_value());
}

TEST(AlignUniform, ThresholdBounds) {
  auto config = mini_config();
  config.threshold = 5.1;
  MockBackend backend({});
  Embedder embedder(backend, nullptr);
  EXPECT_EQ(error_of([&] { eval_align_uniform(config, backend, embedder); }), Errc::ThresholdOutOfRange);
}

TEST(Sweep, TwelveCellGridIsDeterministic) {
  const std::vector<Eos> eos{Eos::Period, Eos::Exclamation, Eos::Question};
  std::string first;
  for (int run = 0; run < 2; ++run) {
    MockBackend backend({});
    Embedder embedder(backend, nullptr);
    const auto report = sweep_mask_templates(mini_config(), backend, embedder, {1, 2, 3, 4}, eos);
    ASSERT_EQ(report.rows.size(), 12u);
    EXPECT_EQ(report.rows[0].template_id, "mask_1_period");
    EXPECT_EQ(report.rows[11].template_id, "mask_4_question");
    for (const auto& r : report.rows) EXPECT_FALSE(r.flagged);
    const auto text = render_report(report, OutputFormat::Markdown);
    if (run == 0) first = text;
    EXPECT_EQ(text, first);
  }
  MockBackend backend({});
  Embedder embedder(backend, nullptr);
  const auto wide = sweep_mask_templates(mini_config(), backend, embedder, {5}, {Eos::None});
  EXPECT_TRUE(wide.rows.at(0).flagged);
}

TEST(Sweep, NeedsMaskCapableBackend) {
  MockOptions o;
  o.mask_token = "";
  MockBackend backend(o);
  Embedder embedder(backend, nullptr);
  EXPECT_EQ(error_of([&] { sweep_mask_templates(mini_config(), backend, embedder, {1}, {Eos::Period}); }),
            Errc::BackendNotMaskCapable);
}

TEST(Analyze, ReportsCoreMass) {
  RunConfig config = mini_config();
  config.templates = {"prompt_eol"};
  MockBackend backend({});
  const auto report = analyze_tokens(config, backend, "a man is driving a car", {"man", "driving", "car"}, false);
  ASSERT_EQ(report.reports.size(), 1u);
  EXPECT_NEAR(report.reports[0].core_mass, 0.10575311097927817 + 0.10210144669481774 + 0.3210084815450075, 1e-6);
}
