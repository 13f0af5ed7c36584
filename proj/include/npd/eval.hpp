#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "npd/error.hpp"

namespace npd::eval {

/// counts[t][p]: samples of true class t predicted as p.
struct ConfusionMatrix {
  std::vector<std::vector<std::uint64_t>> counts;
  std::vector<std::string> class_names;

  std::size_t classes() const noexcept { return counts.size(); }
  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts)
      for (auto c : row) t += c;
    return t;
  }
};

inline ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, int k,
                                 std::vector<std::string> class_names = {}) {
  if (preds.size() != labels.size()) throw ValueError("confusion: length mismatch");
  if (preds.empty()) throw ValueError("confusion: no samples");
  if (k < 1) throw ValueError("confusion: need at least one class");
  ConfusionMatrix cm;
  cm.counts.assign(static_cast<std::size_t>(k), std::vector<std::uint64_t>(static_cast<std::size_t>(k), 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || preds[i] >= k || labels[i] < 0 || labels[i] >= k) {
      throw ValueError("confusion: class value out of range at index " + std::to_string(i));
    }
    ++cm.counts[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(preds[i])];
  }
  if (class_names.empty()) {
    for (int c = 0; c < k; ++c) class_names.push_back(std::to_string(c));
  }
  if (class_names.size() != static_cast<std::size_t>(k)) throw ValueError("confusion: class name count mismatch");
  cm.class_names = std::move(class_names);
  return cm;
}

struct ClassScores {
  std::string name;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::uint64_t support = 0;
};

struct EvalReport {
  std::vector<ClassScores> per_class;
  double macro_f1 = 0;
  double weighted_f1 = 0;
  double accuracy = 0;
  std::string model_tag;
  std::string embedding_tag;
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

/// Per-class precision/recall/F1 with 0/0 := 0, plus macro and
/// support-weighted F1 and accuracy.
inline EvalReport scores(const ConfusionMatrix& cm) {
  const auto k = cm.classes();
  const auto total = cm.total();
  if (total == 0) throw ValueError("scores: empty confusion matrix");
  EvalReport report;
  double trace = 0, macro = 0, weighted = 0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = static_cast<double>(cm.counts[c][c]), predicted = 0, actual = 0;
    for (std::size_t o = 0; o < k; ++o) {
      predicted += static_cast<double>(cm.counts[o][c]);
      actual += static_cast<double>(cm.counts[c][o]);
    }
    ClassScores s;
    s.name = c < cm.class_names.size() ? cm.class_names[c] : std::to_string(c);
    s.precision = safe_ratio(tp, predicted);
    s.recall = safe_ratio(tp, actual);
    s.f1 = safe_ratio(2.0 * s.precision * s.recall, s.precision + s.recall);
    s.support = static_cast<std::uint64_t>(actual);
    trace += tp;
    macro += s.f1;
    weighted += s.f1 * actual;
    report.per_class.push_back(std::move(s));
  }
  report.macro_f1 = macro / static_cast<double>(k);
  report.weighted_f1 = weighted / static_cast<double>(total);
  report.accuracy = trace / static_cast<double>(total);
  return report;
}

enum class F1Variant { Macro, Weighted };

inline double f1_of(const EvalReport& r, F1Variant v) { return v == F1Variant::Macro ? r.macro_f1 : r.weighted_f1; }

/// Descending by the chosen F1, then accuracy, then model_tag ascending.
inline std::vector<EvalReport> rank_reports(std::vector<EvalReport> reports, F1Variant variant = F1Variant::Macro) {
  if (reports.empty()) throw ValueError("rank_reports: no reports");
  std::stable_sort(reports.begin(), reports.end(), [variant](const EvalReport& a, const EvalReport& b) {
    const double fa = f1_of(a, variant), fb = f1_of(b, variant);
    if (fa != fb) return fa > fb;
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    return a.model_tag < b.model_tag;
  });
  return reports;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : r.per_class) {
    classes.push_back({{"name", c.name}, {"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1},
                       {"support", c.support}});
  }
  return {{"model", r.model_tag},       {"embedding", r.embedding_tag}, {"accuracy", r.accuracy},
          {"macro_f1", r.macro_f1},     {"weighted_f1", r.weighted_f1}, {"per_class", classes}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.model_tag = j.at("model").get<std::string>();
  r.embedding_tag = j.at("embedding").get<std::string>();
  r.accuracy = j.at("accuracy").get<double>();
  r.macro_f1 = j.at("macro_f1").get<double>();
  r.weighted_f1 = j.at("weighted_f1").get<double>();
  for (const auto& c : j.at("per_class")) {
    r.per_class.push_back({c.at("name").get<std::string>(), c.at("precision").get<double>(),
                           c.at("recall").get<double>(), c.at("f1").get<double>(),
                           c.at("support").get<std::uint64_t>()});
  }
  return r;
}

inline nlohmann::json to_json(const ConfusionMatrix& cm) {
  return {{"classes", cm.class_names}, {"counts", cm.counts}};
}

namespace detail {

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", v * 100.0);
  return buf;
}

inline std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

}  // namespace detail

/// One results table: Word Embedding | Model | F1 Score | Accuracy, in ranked order.
inline std::string render_table(const std::string& title, std::span<const EvalReport> ranked,
                                F1Variant variant = F1Variant::Macro) {
  std::vector<std::array<std::string, 4>> rows;
  rows.push_back({"Word Embedding", "Model", "F1 Score", "Accuracy"});
  for (const auto& r : ranked) {
    rows.push_back({r.embedding_tag, r.model_tag, detail::percent(f1_of(r, variant)), detail::percent(r.accuracy)});
  }
  std::array<std::size_t, 4> width{};
  for (const auto& row : rows)
    for (std::size_t c = 0; c < 4; ++c) width[c] = std::max(width[c], row[c].size());
  std::size_t line_width = 0;
  for (auto w : width) line_width += w + 3;
  const std::string rule(line_width - 3, '-');

  std::string out = title + "\n" + rule + "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < 4; ++c) {
      out += detail::pad(rows[i][c], width[c]);
      if (c < 3) out += " | ";
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += "\n";
    if (i == 0) out += rule + "\n";
  }
  out += rule + "\n";
  return out;
}

}  // namespace npd::eval
