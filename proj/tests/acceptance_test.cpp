// Acceptance gate. One line per criterion: PASS, FAIL or UNVERIFIED, then
// the evidence. Exit status is non-zero only when something FAILs.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "peb/analysis.hpp"
#include "peb/datasets.hpp"
#include "peb/digest.hpp"
#include "peb/metrics.hpp"
#include "peb/store.hpp"
#include "peb/templates.hpp"
#include "test_util.hpp"

using namespace peb;
namespace fs = std::filesystem;
namespace oracle = peb::test::oracle;

namespace {

enum class Verdict { Pass, Fail, Unverified };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

Outcome check(bool ok, std::string detail) { return {ok ? Verdict::Pass : Verdict::Fail, std::move(detail)}; }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

std::vector<EmbeddingRef> refs(const std::vector<std::vector<float>>& xs) {
  return {xs.begin(), xs.end()};
}

std::vector<std::pair<EmbeddingRef, EmbeddingRef>> refs(
    const std::vector<std::pair<std::vector<float>, std::vector<float>>>& ps) {
  std::vector<std::pair<EmbeddingRef, EmbeddingRef>> out;
  for (const auto& [a, b] : ps) out.emplace_back(a, b);
  return out;
}

Outcome template_goldens() {
  const auto t0 = std::chrono::steady_clock::now();
  std::istringstream in(test::read_file(PEB_TEST_DATA_DIR "/templates.golden"));
  std::string line;
  std::size_t builtins = 0, grid = 0, bad = 0;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    const auto id = line.substr(0, tab);
    const auto t = find_template(id);
    if (!t || t->pattern() != line.substr(tab + 1)) {
      ++bad;
      continue;
    }
    if (t->capture.kind == CaptureRule::Kind::LastToken) ++builtins;
    if (id.ends_with("_period") || id.ends_with("_bang") || id.ends_with("_question")) ++grid;
  }
  // the literal EOL prompt, independent of the golden file
  const bool eol = render(*find_template("prompt_eol"), "a man is driving a car") ==
                   "This sentence : \"a man is driving a car\" means in one word:\"";
  const double secs = seconds_since(t0);
  return check(bad == 0 && builtins == 5 && grid == 12 && eol && secs < 1.0,
               std::to_string(builtins) + " built-ins, " + std::to_string(grid) + " grid cells, " +
                   std::to_string(bad) + " mismatches, " + fmt(secs) + " s");
}

Outcome metric_oracles() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1001);
  std::size_t violations = 0, instances = 0;
  // spearman with heavy ties, pearson on continuous data
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 30);
    std::uniform_int_distribution<int> small(0, 5);
    std::normal_distribution<double> g;
    std::vector<double> xs(n), ys(n), px(n), py(n);
    for (int i = 0; i < n; ++i) {
      xs[i] = small(rng);
      ys[i] = small(rng) + 0.5 * xs[i];
      px[i] = g(rng);
      py[i] = px[i] + g(rng);
    }
    xs[0] = 0, xs[1] = 5, ys[0] = 0, ys[1] = 9;  // never constant
    if (std::abs(spearman(xs, ys) - double(oracle::spearman_brute(xs, ys))) > 1e-12) ++violations;
    if (std::abs(pearson(px, py) - double(oracle::pearson_direct(px, py))) > 1e-12) ++violations;
    instances += 2;
  }
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t dim = 2 + rng() % 12;
    std::vector<std::pair<std::vector<float>, std::vector<float>>> pairs;
    std::vector<std::vector<float>> xs;
    for (int i = 0, n = 1 + int(rng() % 8); i < n; ++i) {
      pairs.emplace_back(test::random_unit(rng, dim), test::random_unit(rng, dim));
    }
    for (int i = 0, n = 2 + int(rng() % 10); i < n; ++i) xs.push_back(test::random_unit(rng, dim));
    if (std::abs(alignment(refs(pairs)) - double(oracle::alignment_direct(pairs))) > 1e-9) ++violations;
    if (std::abs(uniformity(refs(xs)) - double(oracle::uniformity_direct(xs))) > 1e-9) ++violations;
    instances += 2;
  }
  const double secs = seconds_since(t0);
  return check(violations == 0 && secs < 10.0, std::to_string(instances) + " instances, " +
                                                   std::to_string(violations) + " violations, " +
                                                   fmt(secs) + " s");
}

Outcome invariance_suite() {
  std::mt19937_64 rng(2002);
  std::uniform_real_distribution<double> u(-2, 2);
  std::size_t monotone = 0, rotation = 0, scale = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> xs(25), ys(25), ex(25), cube(25), affine(25);
    for (int i = 0; i < 25; ++i) {
      xs[i] = u(rng);
      ys[i] = xs[i] + u(rng);
      ex[i] = std::exp(xs[i]);
      cube[i] = ys[i] * ys[i] * ys[i];
      affine[i] = 3.0 * xs[i] + 11.0;
    }
    const double base = spearman(xs, ys);
    if (std::abs(spearman(ex, ys) - base) > 1e-12 || std::abs(spearman(xs, cube) - base) > 1e-12 ||
        std::abs(spearman(affine, ys) - base) > 1e-12) {
      ++monotone;
    }
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t dim = 3 + rng() % 10;
    const test::GivensRotation rot(rng, dim);
    std::vector<std::vector<float>> xs, rx;
    for (int i = 0; i < 8; ++i) {
      xs.push_back(test::random_unit(rng, dim));
      rx.push_back(rot.apply(xs.back()));
    }
    std::vector<std::pair<std::vector<float>, std::vector<float>>> p, rp;
    for (int i = 0; i < 8; i += 2) {
      p.emplace_back(xs[i], xs[i + 1]);
      rp.emplace_back(rx[i], rx[i + 1]);
    }
    // rotated vectors are stored as float32, which bounds agreement
    if (std::abs(alignment(refs(p)) - alignment(refs(rp))) > 1e-5 ||
        std::abs(uniformity(refs(xs)) - uniformity(refs(rx))) > 1e-5) {
      ++rotation;
    }
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng() % 6;
    PromptStates s, scaled;
    for (std::size_t i = 0; i < n; ++i) {
      s.tokens.push_back("t" + std::to_string(i));
      s.offsets.emplace_back(2 * i, 2 * i + 1);
      s.states[-1].push_back(test::random_unit(rng, 8));
      auto v = s.states[-1].back();
      const float k = std::uniform_real_distribution<float>(0.1f, 10.0f)(rng);
      for (auto& x : v) x *= k;
      scaled.states[-1].push_back(v);
    }
    scaled.tokens = s.tokens;
    scaled.offsets = s.offsets;
    SentenceEmbedding e;
    e.vector = test::random_unit(rng, 8);
    const auto a = token_contributions(s, e, {0, 2 * n});
    for (auto& x : e.vector) x *= 4.0f;
    const auto b = token_contributions(scaled, e, {0, 2 * n});
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(a[i].proportion - b[i].proportion) > 1e-5) {
        ++scale;
        break;
      }
    }
  }
  return check(monotone + rotation + scale == 0,
               "violations: monotone " + std::to_string(monotone) + "/100, rotation " +
                   std::to_string(rotation) + "/100, contribution scale " + std::to_string(scale) + "/100");
}

Outcome trivial_anchors() {
  const std::vector<float> e1{1, 0, 0}, e2{0, 1, 0};
  const std::vector<std::pair<EmbeddingRef, EmbeddingRef>> ortho{{e1, e2}}, same{{e1, e1}};
  const std::vector<EmbeddingRef> two{e1, e2}, twins{e1, e1};
  const double a = alignment(ortho), u = uniformity(two), a0 = alignment(same), u0 = uniformity(twins);
  return check(std::abs(a - 2.0) <= 1e-12 && std::abs(u + 4.0) <= 1e-12 && a0 == 0.0 && u0 == 0.0,
               "alignment(orthogonal) " + fmt(a) + ", uniformity(orthogonal) " + fmt(u) +
                   ", identical " + fmt(a0) + "/" + fmt(u0));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + PEB_CLI_PATH + "\" " + args + " 2>/dev/null";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome pipeline_determinism() {
  test::TempDir tmp;
  ::setenv("SOURCE_DATE_EPOCH", "1700000000", 1);
  const auto mini = fs::path(PEB_TEST_DATA_DIR) / "mini";
  const auto pairs = load_normalized(mini, "STSB-test").size();
  const std::string common = "eval --backend mock:seed=7 --benchmarks STSB-test --templates prompt_eol,pretended_cot --data \"" +
                             mini.string() + "\" --cache \"" + (tmp / "cache").string() + "\"";
  std::vector<std::string> reports;
  for (int run = 0; run < 3; ++run) {
    const auto out = tmp / ("run" + std::to_string(run) + ".md");
    const int rc = run_cli(common + " --out \"" + out.string() + "\"");
    if (rc != 0) return {Verdict::Fail, "peb eval exited " + std::to_string(rc) + " on run " + std::to_string(run)};
    reports.push_back(test::read_file(out));
  }
  // run 0 is cold; runs 1 and 2 are served from the cache. A run with no
  // cache at all must agree too.
  const std::string uncached = "eval --backend mock:seed=7 --benchmarks STSB-test --templates prompt_eol,pretended_cot --data \"" +
                               mini.string() + "\" --out \"" + (tmp / "nocache.md").string() + "\"";
  if (const int rc = run_cli(uncached); rc != 0) return {Verdict::Fail, "uncached peb eval exited " + std::to_string(rc)};
  reports.push_back(test::read_file(tmp / "nocache.md"));
  EmbeddingStore store(tmp / "cache", EmbeddingStore::Mode::ReadOnly);
  const bool same = std::all_of(reports.begin(), reports.end(), [&](const auto& r) { return r == reports[0]; }) &&
                    !reports[0].empty();
  return check(same && pairs == 50 && store.size() > 0,
               std::to_string(pairs) + "-pair mini-benchmark, 3 runs (1 cold, 2 cached, " +
                   std::to_string(store.size()) + " cached vectors) plus 1 uncached, reports " +
                   (same ? "byte-identical, sha256 " + sha256_hex(reports[0]).substr(0, 16) : "differ"));
}

Outcome cache_integrity() {
  test::TempDir tmp;
  std::mt19937_64 rng(3003);
  std::vector<CacheEntry> entries;
  for (int i = 0; i < 10000; ++i) {
    CacheEntry e;
    e.key = CacheKey::make({"m", "prompt_eol", -1, PoolRule::LastToken, false}, "sentence " + std::to_string(i));
    e.vector = test::random_unit(rng, 32);
    entries.push_back(std::move(e));
  }
  auto exact = [](const std::optional<std::vector<float>>& got, const std::vector<float>& want) {
    return got && got->size() == want.size() &&
           std::memcmp(got->data(), want.data(), want.size() * sizeof(float)) == 0;
  };
  std::size_t mismatches = 0;
  {
    EmbeddingStore store(tmp.path(), EmbeddingStore::Mode::ReadWrite);
    for (const auto& e : entries) store.put(e);
  }
  {
    EmbeddingStore store(tmp.path(), EmbeddingStore::Mode::ReadOnly);
    for (const auto& e : entries) mismatches += !exact(store.get(e.key), e.vector);
  }
  const auto log = tmp / "records.log";
  fs::resize_file(log, fs::file_size(log) - 10);
  EmbeddingStore store(tmp.path(), EmbeddingStore::Mode::ReadOnly);
  std::size_t intact = 0;
  for (std::size_t i = 0; i + 1 < entries.size(); ++i) intact += exact(store.get(entries[i].key), entries[i].vector);
  const bool last_gone = !store.get(entries.back().key).has_value();
  const bool warned = !store.warnings().empty();
  return check(mismatches == 0 && warned && last_gone && intact == entries.size() - 1,
               "10000 vectors, " + std::to_string(mismatches) + " round-trip mismatches; after truncation: " +
                   (warned ? "warning raised, " : "no warning, ") + std::to_string(intact) +
                   " of 9999 earlier records intact");
}

Outcome dataset_loader() {
  // blank gold handling on the bundled SentEval-layout fixture
  const auto fixture = fs::path(PEB_TEST_DATA_DIR) / "senteval";
  const auto sts12 = load_senteval_sts(fixture, "STS12");
  const auto stsb = load_senteval_sts(fixture, "STSB-test");
  const bool blanks = sts12.dropped == 1 && sts12.size() == 4 && stsb.dropped == 1 && stsb.size() == 2;
  const std::string blank_note = std::string("blank-gold fixtures ") + (blanks ? "ok" : "WRONG");
  if (!blanks) return {Verdict::Fail, blank_note};

  const char* root = std::getenv("PEB_SENTEVAL_DIR");
  if (root == nullptr || !fs::exists(fs::path(root) / "STS" / "STSBenchmark" / "sts-test.csv")) {
    return {Verdict::Unverified, blank_note + "; canonical STS-B test file not available "
                                              "(set PEB_SENTEVAL_DIR to a SentEval data root)"};
  }
  const auto canonical = load_senteval_sts(root, "STSB-test");
  return check(canonical.size() == 1379, blank_note + "; canonical STS-B test: " +
                                             std::to_string(canonical.size()) + " pairs, " +
                                             std::to_string(canonical.dropped) + " blank gold");
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"template goldens", template_goldens},
      {"metric oracle equivalence", metric_oracles},
      {"metric invariance suite", invariance_suite},
      {"trivial anchors", trivial_anchors},
      {"pipeline determinism", pipeline_determinism},
      {"cache integrity", cache_integrity},
      {"dataset loader", dataset_loader},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {Verdict::Fail, std::string("exception: ") + e.what()};
    }
    const char* tag = o.verdict == Verdict::Pass ? "PASS" : o.verdict == Verdict::Fail ? "FAIL" : "UNVERIFIED";
    failed += o.verdict == Verdict::Fail;
    std::cout << tag << "  " << name << ": " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
