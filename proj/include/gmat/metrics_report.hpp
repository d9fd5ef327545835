#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmat/embedding.hpp"
#include "gmat/error.hpp"

namespace gmat {

/// One-vs-rest ROC AUC for a single score column, via average ranks
/// (tied pos/neg pairs count 1/2).
inline double binary_auc(const std::vector<double>& scores, const std::vector<bool>& positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0, rank_sum = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (positive[i]) {
      pos += 1;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorCode::DegenerateLabels, "AUC needs positives and negatives");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

inline std::set<int> present_classes(const std::vector<int>& labels) { return {labels.begin(), labels.end()}; }

/// Macro one-vs-rest AUC over the classes present in `labels`.
inline double auc_macro(const Matrix& scores, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(scores.rows()) != labels.size()) throw Error(ErrorCode::LengthMismatch, "scores/labels length mismatch");
  for (int l : labels) {
    if (l < 0 || l >= scores.cols()) throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(l));
  }
  const auto present = present_classes(labels);
  if (present.size() < 2) throw Error(ErrorCode::DegenerateLabels, "AUC needs at least two distinct labels");
  double total = 0;
  for (int c : present) {
    std::vector<double> col(labels.size());
    std::vector<bool> pos(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      col[i] = scores(static_cast<Eigen::Index>(i), c);
      pos[i] = labels[i] == c;
    }
    total += binary_auc(col, pos);
  }
  return total / static_cast<double>(present.size());
}

/// Macro F1 over the classes present in `labels`; per class
/// F1 = 2TP / (2TP + FP + FN).
inline double f1_macro(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "preds/labels length mismatch");
  require(!labels.empty(), ErrorCode::InvalidArgument, "need at least one sample");
  const auto present = present_classes(labels);
  double total = 0;
  for (int c : present) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool p = preds[i] == c, t = labels[i] == c;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    total += 2 * tp / (2 * tp + fp + fn);
  }
  return total / static_cast<double>(present.size());
}

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.size() != labels.size()) throw Error(ErrorCode::LengthMismatch, "preds/labels length mismatch");
  require(!labels.empty(), ErrorCode::InvalidArgument, "need at least one sample");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

struct MetricTriple {
  double auc = 0, f1 = 0, acc = 0;
};

inline MetricTriple compute_metrics(const Matrix& scores, const std::vector<int>& preds, const std::vector<int>& labels) {
  return {auc_macro(scores, labels), f1_macro(preds, labels), accuracy(preds, labels)};
}

struct MeanStd {
  double mean = 0, std = 0;
};

/// Mean and population standard deviation.
inline MeanStd mean_std(const std::vector<double>& xs) {
  require(!xs.empty(), ErrorCode::InvalidArgument, "need at least one run");
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double ss = 0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / n)};
}

inline std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f ± %.4f", mean, std);
  return buf;
}

inline std::string format_mean_std(const MeanStd& m) { return format_mean_std(m.mean, m.std); }

struct ReportRow {
  std::string condition;    // key in the JSON report
  std::string model;        // first table column
  std::string description;  // second table column
  MeanStd auc, f1, acc;
  std::vector<MetricTriple> runs;
};

inline ReportRow aggregate(const std::vector<MetricTriple>& runs, std::string condition = "", std::string model = "",
                           std::string description = "") {
  std::vector<double> a, f, c;
  for (const auto& r : runs) {
    a.push_back(r.auc);
    f.push_back(r.f1);
    c.push_back(r.acc);
  }
  return {std::move(condition), std::move(model), std::move(description), mean_std(a), mean_std(f), mean_std(c), runs};
}

/// Rows of mean±std metrics plus the axis the spread was measured over.
struct EvalReport {
  std::vector<ReportRow> rows;
  std::size_t n_seeds = 0;
  std::string seed_axis;  // e.g. "regenerate", "bootstrap", "training_seed"
  std::string config_hash;
  std::string title;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& row : r.rows) {
    j[row.condition] = {{"auc_mean", row.auc.mean}, {"auc_std", row.auc.std}, {"f1_mean", row.f1.mean},
                        {"f1_std", row.f1.std},     {"acc_mean", row.acc.mean}, {"acc_std", row.acc.std}};
  }
  j["_meta"] = {{"n_seeds", r.n_seeds},
                {"seed_axis", r.seed_axis},
                {"std", "population"},
                {"config_hash", r.config_hash},
                {"title", r.title}};
  return j;
}

inline std::string report_json(const EvalReport& r) { return to_json(r).dump(2) + "\n"; }

/// Plain-text table: Model | Description Type | AUC | F1 | Accuracy.
inline std::string report_table(const EvalReport& r) {
  std::vector<std::vector<std::string>> cells = {{"Model", "Description Type", "AUC", "F1 Score", "Accuracy"}};
  for (const auto& row : r.rows) {
    cells.push_back({row.model, row.description, format_mean_std(row.auc), format_mean_std(row.f1), format_mean_std(row.acc)});
  }
  // Display width: count UTF-8 lead bytes only.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths(5, 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < 5; ++i) widths[i] = std::max(widths[i], width(line[i]));
  std::string out;
  if (!r.title.empty()) out += r.title + "\n";
  for (std::size_t li = 0; li < cells.size(); ++li) {
    for (std::size_t i = 0; i < 5; ++i) {
      if (i) out += " | ";
      out += cells[li][i] + std::string(widths[i] - width(cells[li][i]), ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += "\n";
    if (li == 0) {
      for (std::size_t i = 0; i < 5; ++i) {
        if (i) out += "-|-";
        out += std::string(widths[i], '-');
      }
      out += "\n";
    }
  }
  out += "(mean ± population std over " + std::to_string(r.n_seeds) + " " + r.seed_axis + " seeds)\n";
  return out;
}

}  // namespace gmat
