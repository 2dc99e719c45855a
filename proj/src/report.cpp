#include <algorithm>
#include <cstdio>

#include <json.hpp>

#include "peb/pipeline.hpp"

namespace peb {
namespace {

using nlohmann::json;

std::string fixed2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s = buf;
  if (s == "-0.00") s = "0.00";
  return s;
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string eos_display(Eos eos) {
  switch (eos) {
    case Eos::None: return "None";
    case Eos::Sep: return "[SEP]";
    case Eos::Period: return ".";
    case Eos::Exclamation: return "!";
    case Eos::Question: return "?";
  }
  return "";
}

std::string method_name(const std::string& id, bool flagged) {
  return display_name(id) + (flagged ? " (*)" : "");
}

std::string meta_markdown(const ReportMeta& m) {
  std::string out;
  out += "- model: " + m.model_id + " (" + m.backend_kind + ", hidden " +
         std::to_string(m.hidden_size) + ", layers " + std::to_string(m.num_layers) + ")\n";
  out += "- timestamp: " + m.timestamp + "\n";
  out += "- config digest: " + m.config_digest + "\n";
  return out;
}

json meta_json(const ReportMeta& m) {
  return {{"command", m.command},         {"model_id", m.model_id},
          {"backend", m.backend_kind},    {"hidden_size", m.hidden_size},
          {"num_layers", m.num_layers},   {"aggregation", m.aggregation},
          {"timestamp", m.timestamp},     {"config_digest", m.config_digest}};
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

bool any_flagged(const EvalReport& r) {
  for (const auto& row : r.rows) {
    if (row.flagged) return true;
  }
  return false;
}

}  // namespace

std::string render_report(const EvalReport& r, OutputFormat format) {
  if (format == OutputFormat::Json) {
    json rows = json::array();
    for (const auto& row : r.rows) {
      json scores = json::array();
      for (const auto& s : row.scores) {
        json js{{"benchmark", s.benchmark}, {"status", s.ok ? "ok" : "error"}};
        if (s.ok) {
          js["spearman_x100"] = s.spearman_x100;
          js["pearson_x100"] = s.pearson_x100;
          js["n"] = s.n;
          if (!s.subsets.empty()) {
            json subsets = json::object();
            for (const auto& [name, v] : s.subsets) subsets[name] = v;
            js["subsets"] = std::move(subsets);
          }
        } else {
          js["error"] = s.error;
        }
        scores.push_back(std::move(js));
      }
      rows.push_back({{"template", row.template_id},
                      {"method", display_name(row.template_id)},
                      {"layer", row.spec.layer},
                      {"rule", pool_rule_name(row.spec.rule)},
                      {"normalize", row.spec.normalize},
                      {"flagged", row.flagged},
                      {"scores", std::move(scores)},
                      {"average", row.average ? json(*row.average) : json(nullptr)}});
    }
    json out{{"meta", meta_json(r.meta)}, {"benchmarks", r.benchmarks}, {"rows", std::move(rows)}};
    return out.dump(2) + "\n";
  }

  if (format == OutputFormat::Csv) {
    std::string out = "template,method,layer,benchmark,spearman_x100,pearson_x100,n,status\n";
    for (const auto& row : r.rows) {
      const auto prefix = row.template_id + "," + csv_escape(display_name(row.template_id)) + "," +
                          std::to_string(row.spec.layer) + ",";
      for (const auto& s : row.scores) {
        out += prefix + s.benchmark + ",";
        if (s.ok) {
          out += fixed2(s.spearman_x100) + "," + fixed2(s.pearson_x100) + "," + std::to_string(s.n) + ",ok\n";
        } else {
          out += ",,,error\n";
        }
      }
      out += prefix + "Avg.," + (row.average ? fixed2(*row.average) : "") + ",,," +
             (row.average ? "ok" : "incomplete") + "\n";
    }
    return out;
  }

  std::string out = "# STS evaluation (Spearman x100)\n\n";
  out += meta_markdown(r.meta);
  out += "- aggregation: " + r.meta.aggregation + "\n";
  bool normalized = false;
  for (const auto& row : r.rows) normalized = normalized || row.spec.normalize;
  out += std::string("- scoring: cosine on ") + (normalized ? "L2-normalized" : "raw") + " embeddings\n\n";
  out += "| Method | Layer |";
  std::string rule = "|---|---:|";
  for (const auto& b : r.benchmarks) {
    out += " " + benchmark_display_name(b) + " |";
    rule += "---:|";
  }
  out += " Avg. |\n" + rule + "---:|\n";
  for (const auto& row : r.rows) {
    out += "| " + method_name(row.template_id, row.flagged) + " | " + std::to_string(row.spec.layer) + " |";
    for (const auto& s : row.scores) out += " " + (s.ok ? fixed2(s.spearman_x100) : "n/a") + " |";
    out += " " + (row.average ? fixed2(*row.average) : "n/a") + " |\n";
  }
  if (any_flagged(r)) {
    out += "\n(*) mask count above " + std::to_string(kMaxSweptMaskCount) + "\n";
  }
  std::vector<std::string> failures;
  for (const auto& row : r.rows) {
    for (const auto& s : row.scores) {
      if (s.ok) continue;
      auto line = "- " + s.benchmark + ": " + s.error + "\n";
      if (std::find(failures.begin(), failures.end(), line) == failures.end()) failures.push_back(line);
    }
  }
  if (!failures.empty()) {
    out += "\nFailed benchmarks:\n";
    for (const auto& f : failures) out += f;
  }
  return out;
}

std::string render_report(const AlignUniformReport& r, OutputFormat format) {
  if (format == OutputFormat::Json) {
    json rows = json::array();
    for (const auto& row : r.rows) {
      rows.push_back({{"template", row.template_id},
                      {"method", display_name(row.template_id)},
                      {"layer", row.layer},
                      {"spearman_x100", row.spearman_x100 ? json(*row.spearman_x100) : json(nullptr)},
                      {"alignment", row.alignment},
                      {"uniformity", row.uniformity},
                      {"aligned_pairs", row.aligned_pairs},
                      {"embeddings", row.embeddings}});
    }
    json out{{"meta", meta_json(r.meta)},
             {"threshold", r.threshold},
             {"normalized", true},
             {"spearman_benchmarks", r.spearman_benchmarks},
             {"rows", std::move(rows)}};
    return out.dump(2) + "\n";
  }
  if (format == OutputFormat::Csv) {
    std::string out = "template,method,layer,spearman_x100,alignment,uniformity,aligned_pairs,embeddings\n";
    for (const auto& row : r.rows) {
      out += row.template_id + "," + csv_escape(display_name(row.template_id)) + "," +
             std::to_string(row.layer) + "," + (row.spearman_x100 ? fixed2(*row.spearman_x100) : "") +
             "," + fixed4(row.alignment) + "," + fixed4(row.uniformity) + "," +
             std::to_string(row.aligned_pairs) + "," + std::to_string(row.embeddings) + "\n";
    }
    return out;
  }
  std::string out = "# Alignment and uniformity (STS-B test)\n\n";
  out += meta_markdown(r.meta);
  out += "- alignment pairs: gold >= " + fixed2(r.threshold) + "\n";
  out += "- embeddings: L2-normalized\n";
  out += "- spearman: mean over";
  for (const auto& b : r.spearman_benchmarks) out += " " + benchmark_display_name(b);
  out += " (aggregation " + r.meta.aggregation + ")\n\n";
  out += "| Methods | Layer Index | Spearman | Alignment | Uniformity |\n";
  out += "|---|---:|---:|---:|---:|\n";
  for (const auto& row : r.rows) {
    out += "| " + display_name(row.template_id) + " | " + std::to_string(row.layer) + " | " +
           (row.spearman_x100 ? fixed2(*row.spearman_x100) : "n/a") + " | " + fixed4(row.alignment) +
           " | " + fixed4(row.uniformity) + " |\n";
  }
  return out;
}

std::string render_report(const SweepReport& r, OutputFormat format) {
  if (format == OutputFormat::Json) {
    json rows = json::array();
    for (const auto& row : r.rows) {
      rows.push_back({{"mask_count", row.mask_count},
                      {"eos", eos_name(row.eos)},
                      {"template", row.template_id},
                      {"spearman_x100", row.spearman_x100},
                      {"flagged", row.flagged}});
    }
    json out{{"meta", meta_json(r.meta)}, {"layer", r.layer}, {"benchmark", "STSB-dev"},
             {"rows", std::move(rows)}};
    return out.dump(2) + "\n";
  }
  if (format == OutputFormat::Csv) {
    std::string out = "mask_count,eos,template,stsb_dev_spearman_x100\n";
    for (const auto& row : r.rows) {
      out += std::to_string(row.mask_count) + "," + std::string(eos_name(row.eos)) + "," +
             row.template_id + "," + fixed2(row.spearman_x100) + "\n";
    }
    return out;
  }
  std::string out = "# Mask template sweep (STS-B dev, Spearman x100)\n\n";
  out += meta_markdown(r.meta);
  out += "- layer: " + std::to_string(r.layer) + "\n\n";
  out += "| [MASK] | EOS | STS-B dev |\n|---:|:---:|---:|\n";
  for (const auto& row : r.rows) {
    out += "| " + std::to_string(row.mask_count) + (row.flagged ? " (*)" : "") + " | " +
           eos_display(row.eos) + " | " + fixed2(row.spearman_x100) + " |\n";
  }
  return out;
}

std::string render_report(const AnalyzeReport& r, OutputFormat format) {
  if (format == OutputFormat::Json) return report_json(r.reports);
  if (format == OutputFormat::Csv) {
    std::string out;
    for (const auto& rep : r.reports) {
      if (r.reports.size() > 1) out += "# template=" + rep.template_id + "\n";
      out += contributions_csv(rep.contributions);
    }
    return out;
  }
  std::string out = "# Token contributions\n\n";
  out += meta_markdown(r.meta);
  for (const auto& rep : r.reports) {
    out += "\n## " + display_name(rep.template_id) + "\n\n";
    out += "sentence: " + rep.sentence + "\n\ncore mass: " + fixed4(rep.core_mass) + "\n\n";
    out += "| Token | Span | Similarity | Proportion | Class |\n|---|---|---:|---:|---|\n";
    for (const auto& c : rep.contributions) {
      out += "| " + c.token + " | " + std::to_string(c.span.first) + "-" + std::to_string(c.span.second) +
             " | " + fixed4(c.similarity) + " | " + fixed4(c.proportion) + " | " +
             std::string(token_class_name(c.cls)) + " |\n";
    }
  }
  return out;
}

}  // namespace peb
