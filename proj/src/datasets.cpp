#include "peb/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "peb/error.hpp"
#include "text_util.hpp"

namespace peb {
namespace fs = std::filesystem;
namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingFile, path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string where(const fs::path& file, std::size_t line) {
  return file.string() + ":" + std::to_string(line);
}

// Empty optional for a blank score.
std::optional<double> parse_gold(std::string_view field, const fs::path& file, std::size_t line) {
  field = text::trim(field);
  if (field.empty()) return std::nullopt;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw Error(Errc::MalformedLine, where(file, line) + ": bad score '" + std::string(field) + "'");
  }
  if (!(value >= 0.0 && value <= 5.0)) {
    throw Error(Errc::GoldOutOfRange, where(file, line) + ": score " + std::string(field));
  }
  return value;
}

std::string sentence_field(std::string_view field, const fs::path& file, std::size_t line) {
  if (text::trim(field).empty()) {
    throw Error(Errc::MalformedLine, where(file, line) + ": empty sentence");
  }
  return std::string(field);
}

struct StsLayout {
  std::string_view name;
  std::string_view dir;
};

constexpr StsLayout kStsDirs[] = {
    {"STS12", "STS12-en-test"}, {"STS13", "STS13-en-test"}, {"STS14", "STS14-en-test"},
    {"STS15", "STS15-en-test"}, {"STS16", "STS16-en-test"},
};

Benchmark load_sts_year(const fs::path& dir, std::string_view name) {
  if (!fs::is_directory(dir)) throw Error(Errc::MissingFile, dir.string());
  constexpr std::string_view in_head = "STS.input.";
  constexpr std::string_view tail = ".txt";
  std::vector<std::string> subsets;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto file = entry.path().filename().string();
    if (file.starts_with(in_head) && file.ends_with(tail) && file.size() > in_head.size() + tail.size()) {
      subsets.push_back(file.substr(in_head.size(), file.size() - in_head.size() - tail.size()));
    }
  }
  std::sort(subsets.begin(), subsets.end());
  if (subsets.empty()) throw Error(Errc::MissingFile, (dir / "STS.input.*.txt").string());

  Benchmark b;
  b.name = std::string(name);
  for (const auto& subset : subsets) {
    const auto input_path = dir / ("STS.input." + subset + ".txt");
    const auto gs_path = dir / ("STS.gs." + subset + ".txt");
    const auto input = read_file(input_path);
    const auto gs = read_file(gs_path);
    const auto input_lines = text::split_lines(input);
    const auto gs_lines = text::split_lines(gs);
    if (input_lines.size() != gs_lines.size()) {
      throw Error(Errc::MalformedLine, gs_path.string() + ": " + std::to_string(gs_lines.size()) +
                                           " scores for " + std::to_string(input_lines.size()) +
                                           " sentence pairs");
    }
    Subset s{subset, {}};
    for (std::size_t i = 0; i < input_lines.size(); ++i) {
      const auto gold = parse_gold(gs_lines[i], gs_path, i + 1);
      if (!gold) {
        ++b.dropped;
        continue;
      }
      const auto fields = text::split(input_lines[i], '\t');
      if (fields.size() < 2) {
        throw Error(Errc::MalformedLine, where(input_path, i + 1) + ": expected two tab-separated sentences");
      }
      s.pairs.push_back({sentence_field(fields[0], input_path, i + 1),
                         sentence_field(fields[1], input_path, i + 1), *gold});
    }
    if (!s.pairs.empty()) b.subsets.push_back(std::move(s));
  }
  return b;
}

// Tab-separated rows; column indices select sentence1, sentence2, gold.
Subset load_tsv(const fs::path& path, std::string subset, std::size_t c1, std::size_t c2,
                std::size_t cg, bool skip_header, std::size_t& dropped) {
  const auto content = read_file(path);
  Subset s{std::move(subset), {}};
  std::size_t lineno = 0;
  const auto need = std::max({c1, c2, cg}) + 1;
  for (auto line : text::split_lines(content)) {
    ++lineno;
    if (skip_header && lineno == 1) continue;
    if (text::trim(line).empty()) continue;
    const auto fields = text::split(line, '\t');
    if (fields.size() < need) {
      throw Error(Errc::MalformedLine, where(path, lineno) + ": expected at least " +
                                           std::to_string(need) + " tab-separated fields");
    }
    const auto gold = parse_gold(fields[cg], path, lineno);
    if (!gold) {
      ++dropped;
      continue;
    }
    s.pairs.push_back({sentence_field(fields[c1], path, lineno),
                       sentence_field(fields[c2], path, lineno), *gold});
  }
  return s;
}

void require_nonempty(const Benchmark& b, const fs::path& where_from) {
  if (b.subsets.empty()) {
    throw Error(Errc::MissingFile, where_from.string() + ": no scored pairs for " + b.name);
  }
  for (const auto& s : b.subsets) {
    if (s.pairs.empty()) {
      throw Error(Errc::MalformedLine, where_from.string() + ": subset " + s.name + " is empty");
    }
  }
}

std::string format_gold(double gold) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, gold);
  return std::string(buf, ptr);
}

}  // namespace

std::size_t Benchmark::size() const {
  std::size_t n = 0;
  for (const auto& s : subsets) n += s.pairs.size();
  return n;
}

std::vector<SentencePair> Benchmark::all_pairs() const {
  std::vector<SentencePair> out;
  out.reserve(size());
  for (const auto& s : subsets) out.insert(out.end(), s.pairs.begin(), s.pairs.end());
  return out;
}

const std::vector<std::string>& benchmark_names() {
  static const std::vector<std::string> names{"STS12", "STS13", "STS14", "STS15", "STS16",
                                              "STSB-dev", "STSB-test", "SICKR"};
  return names;
}

const std::vector<std::string>& standard_benchmarks() {
  static const std::vector<std::string> names{"STS12", "STS13", "STS14", "STS15",
                                              "STS16", "STSB-test", "SICKR"};
  return names;
}

std::string benchmark_display_name(std::string_view name) {
  static const std::map<std::string_view, std::string_view> names{
      {"STS12", "STS-12"}, {"STS13", "STS-13"}, {"STS14", "STS-14"},  {"STS15", "STS-15"},
      {"STS16", "STS-16"}, {"STSB-test", "STS-B"}, {"STSB-dev", "STS-B dev"}, {"SICKR", "SICK-R"}};
  const auto it = names.find(name);
  return std::string(it == names.end() ? name : it->second);
}

Benchmark load_senteval_sts(const fs::path& root_dir, std::string_view name) {
  for (const auto& layout : kStsDirs) {
    if (layout.name == name) {
      const auto dir = root_dir / "STS" / layout.dir;
      auto b = load_sts_year(dir, name);
      require_nonempty(b, dir);
      return b;
    }
  }
  Benchmark b;
  b.name = std::string(name);
  fs::path file;
  if (name == "STSB-dev" || name == "STSB-test") {
    const std::string split = name == "STSB-dev" ? "dev" : "test";
    file = root_dir / "STS" / "STSBenchmark" / ("sts-" + split + ".csv");
    // genre, filename, year, id, score, sentence1, sentence2[, sources...]
    b.subsets.push_back(load_tsv(file, split, 5, 6, 4, false, b.dropped));
  } else if (name == "SICKR") {
    file = root_dir / "SICK" / "SICK_test_annotated.txt";
    // pair_ID, sentence_A, sentence_B, relatedness_score, entailment_judgment
    b.subsets.push_back(load_tsv(file, "test", 1, 2, 3, true, b.dropped));
  } else {
    throw Error(Errc::ConfigError, "unknown benchmark '" + std::string(name) + "'");
  }
  require_nonempty(b, file);
  return b;
}

Benchmark load_normalized(const fs::path& root_dir, std::string_view name) {
  const auto dir = root_dir / std::string(name);
  if (!fs::is_directory(dir)) throw Error(Errc::MissingFile, dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".tsv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Benchmark b;
  b.name = std::string(name);
  for (const auto& f : files) {
    auto s = load_tsv(f, f.stem().string(), 0, 1, 2, false, b.dropped);
    if (!s.pairs.empty()) b.subsets.push_back(std::move(s));
  }
  require_nonempty(b, dir);
  return b;
}

void write_normalized(const fs::path& root_dir, const Benchmark& benchmark) {
  const auto dir = root_dir / benchmark.name;
  fs::create_directories(dir);
  for (const auto& s : benchmark.subsets) {
    const auto path = dir / (s.name + ".tsv");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::MissingFile, "cannot write " + path.string());
    for (const auto& p : s.pairs) {
      for (const auto* sentence : {&p.sentence1, &p.sentence2}) {
        if (sentence->find_first_of("\t\n\r") != std::string::npos) {
          throw Error(Errc::MalformedLine,
                      path.string() + ": sentence contains a tab or line break: " + *sentence);
        }
      }
      out << p.sentence1 << '\t' << p.sentence2 << '\t' << format_gold(p.gold) << '\n';
    }
  }
}

std::vector<Benchmark> import_senteval(const fs::path& src, const fs::path& dst) {
  std::vector<Benchmark> written;
  for (const auto& name : benchmark_names()) {
    Benchmark b;
    try {
      b = load_senteval_sts(src, name);
    } catch (const Error& e) {
      if (e.code() == Errc::MissingFile) continue;
      throw;
    }
    write_normalized(dst, b);
    written.push_back(std::move(b));
  }
  return written;
}

std::vector<SentencePair> filter_similar(const std::vector<SentencePair>& pairs, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 5.0)) {
    throw Error(Errc::ThresholdOutOfRange, "threshold " + format_gold(threshold) + " not in [0, 5]");
  }
  std::vector<SentencePair> out;
  std::copy_if(pairs.begin(), pairs.end(), std::back_inserter(out),
               [threshold](const SentencePair& p) { return p.gold >= threshold; });
  return out;
}

}  // namespace peb
