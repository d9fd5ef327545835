#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "gmat/bag_data.hpp"
#include "gmat/embedding.hpp"
#include "gmat/error.hpp"
#include "gmat/metrics_report.hpp"
#include "gmat/mil_core.hpp"
#include "gmat/rng.hpp"

namespace gmat {

struct PoolingSpec {
  enum class Kind { Mean, TopkMean };
  Kind kind = Kind::TopkMean;
  int k = 16;
};

inline PoolingSpec mean_pooling() { return {PoolingSpec::Kind::Mean, 1}; }
inline PoolingSpec topk_pooling(int k) {
  require(k >= 1, ErrorCode::InvalidArgument, "top-k pooling needs k >= 1");
  return {PoolingSpec::Kind::TopkMean, k};
}

/// Per-column slide score: mean over patches, or mean of the min(N, k)
/// largest patch scores.
inline Vector pool_scores(const Matrix& scores, const PoolingSpec& pooling) {
  require(scores.rows() >= 1, ErrorCode::InvalidArgument, "pooling needs at least one patch");
  Vector out(scores.cols());
  auto column_mean = [&](Eigen::Index c) {
    double s = 0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) s += scores(i, c);
    return s / static_cast<double>(scores.rows());
  };
  if (pooling.kind == PoolingSpec::Kind::Mean) {
    for (Eigen::Index c = 0; c < scores.cols(); ++c) out[c] = column_mean(c);
    return out;
  }
  require(pooling.k >= 1, ErrorCode::InvalidArgument, "top-k pooling needs k >= 1");
  const auto k = std::min<Eigen::Index>(scores.rows(), pooling.k);
  std::vector<double> col(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index c = 0; c < scores.cols(); ++c) {
    for (Eigen::Index i = 0; i < scores.rows(); ++i) col[static_cast<std::size_t>(i)] = scores(i, c);
    if (k < scores.rows()) {
      std::nth_element(col.begin(), col.begin() + k, col.end(), std::greater<>());
      std::sort(col.begin(), col.begin() + k, std::greater<>());
    }
    // Keeping every patch must reproduce Mean bit for bit.
    if (k == scores.rows()) {
      out[c] = column_mean(c);
      continue;
    }
    double s = 0;
    for (Eigen::Index i = 0; i < k; ++i) s += col[static_cast<std::size_t>(i)];
    out[c] = s / static_cast<double>(k);
  }
  return out;
}

/// Frozen-encoder patch embeddings of one slide.
struct EmbeddedBag {
  std::string slide_id;
  int label = 0;
  std::array<Matrix, 2> patches;
};

inline EmbeddedBag embed_bag(const Bag& bag, const ImageEncoder& encoder) {
  EmbeddedBag e{bag.slide_id, bag.label, {}};
  for (auto s : kScales) e.patches[static_cast<std::size_t>(s)] = encoder.encode(to_double(bag.features(s)));
  return e;
}

struct ZeroShotResult {
  std::array<Vector, 2> scale_logits;
  Vector logits;
  int prediction = 0;
};

inline void check_fusion(const Eigen::Vector2d& fusion) {
  require(fusion.minCoeff() >= 0.0 && std::abs(fusion.sum() - 1.0) <= 1e-9, ErrorCode::InvalidArgument,
          "fusion weights must be convex");
}

/// Description-list scoring: cosine similarity (tau = 1), per-class mean over
/// descriptions, pooling over patches, fixed convex fusion of the scales.
inline ZeroShotResult zeroshot_slide(const EmbeddedBag& bag, const TextBanks& banks, const PoolingSpec& pooling,
                                     const Eigen::Vector2d& fusion = Eigen::Vector2d(0.5, 0.5)) {
  check_fusion(fusion);
  ZeroShotResult r;
  r.logits = Vector::Zero(banks[0].num_classes);
  for (std::size_t s = 0; s < 2; ++s) {
    const Matrix sim = similarity(bag.patches[s], banks[s].desc_embs, 1.0);
    r.scale_logits[s] = pool_scores(class_scores(sim, banks[s].class_of, banks[s].num_classes), pooling);
    r.logits += fusion[static_cast<Eigen::Index>(s)] * r.scale_logits[s];
  }
  r.prediction = predict(r.logits);
  return r;
}

/// Single-prompt scoring: prompts[s] is C×D with one embedded prompt per
/// class, compared directly with every patch.
inline ZeroShotResult zeroshot_slide_single(const EmbeddedBag& bag, const std::array<Matrix, 2>& prompts,
                                            const PoolingSpec& pooling,
                                            const Eigen::Vector2d& fusion = Eigen::Vector2d(0.5, 0.5)) {
  check_fusion(fusion);
  ZeroShotResult r;
  r.logits = Vector::Zero(prompts[0].rows());
  for (std::size_t s = 0; s < 2; ++s) {
    r.scale_logits[s] = pool_scores(similarity(bag.patches[s], prompts[s], 1.0), pooling);
    r.logits += fusion[static_cast<Eigen::Index>(s)] * r.scale_logits[s];
  }
  r.prediction = predict(r.logits);
  return r;
}

inline std::array<Matrix, 2> embed_single_prompts(const SinglePromptSet& prompts, const TextEncoder& encoder) {
  return {make_single_bank(prompts, Scale::X5, encoder).desc_embs, make_single_bank(prompts, Scale::X10, encoder).desc_embs};
}

/// Everything one zero-shot comparison needs for one seed.
struct ZeroShotInputs {
  std::vector<Bag> bags;
  TextBanks list_banks;
  std::array<Matrix, 2> single_prompts;
};

using ZeroShotSource = std::function<ZeroShotInputs(std::uint64_t seed)>;

namespace detail {

template <typename ScoreFn>
MetricTriple zeroshot_metrics(const std::vector<EmbeddedBag>& bags, ScoreFn score) {
  std::vector<const EmbeddedBag*> order;
  for (const auto& b : bags) order.push_back(&b);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->slide_id < b->slide_id; });
  std::vector<int> labels, preds;
  std::vector<Vector> rows;
  for (const auto* b : order) {
    auto r = score(*b);
    labels.push_back(b->label);
    preds.push_back(r.prediction);
    rows.push_back(std::move(r.logits));
  }
  if (present_classes(labels).size() < 2) throw Error(ErrorCode::DegenerateLabels, "zero-shot evaluation needs two classes");
  Matrix scores(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) scores.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return compute_metrics(scores, preds, labels);
}

}  // namespace detail

/// Runs the single-prompt and description-list conditions over identical
/// bags for each seed and reports mean ± std per condition.
inline EvalReport zeroshot_eval(const ZeroShotSource& source, const ImageEncoder& encoder, const PoolingSpec& pooling,
                                const std::vector<std::uint64_t>& seeds, const std::string& seed_axis = "regenerate",
                                const Eigen::Vector2d& fusion = Eigen::Vector2d(0.5, 0.5)) {
  require(!seeds.empty(), ErrorCode::InvalidArgument, "need at least one seed");
  std::vector<MetricTriple> single_runs, list_runs;
  for (auto seed : seeds) {
    const auto in = source(seed);
    std::vector<EmbeddedBag> embedded;
    for (const auto& b : in.bags) embedded.push_back(embed_bag(b, encoder));
    single_runs.push_back(detail::zeroshot_metrics(
        embedded, [&](const EmbeddedBag& b) { return zeroshot_slide_single(b, in.single_prompts, pooling, fusion); }));
    list_runs.push_back(detail::zeroshot_metrics(
        embedded, [&](const EmbeddedBag& b) { return zeroshot_slide(b, in.list_banks, pooling, fusion); }));
  }
  EvalReport rep;
  rep.title = "Zero-shot";
  rep.n_seeds = seeds.size();
  rep.seed_axis = seed_axis;
  rep.rows.push_back(aggregate(single_runs, "single", "Zero-shot", "Single Class Description"));
  rep.rows.push_back(aggregate(list_runs, "list", "Zero-shot", "Description List"));
  return rep;
}

/// Label-stratified bootstrap resample of a fixed bag set.
inline std::vector<Bag> stratified_bootstrap(const std::vector<Bag>& bags, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < bags.size(); ++i) by_label[bags[i].label].push_back(i);
  Rng rng(seed);
  std::vector<Bag> out;
  int draw = 0;
  for (const auto& [label, idx] : by_label) {
    for (std::size_t i = 0; i < idx.size(); ++i) {
      Bag b = bags[idx[rng.index(idx.size())]];
      b.slide_id += "#b" + std::to_string(draw++);
      out.push_back(std::move(b));
    }
  }
  return out;
}

/// Fixed-bag variant: seeds drive bootstrap resampling.
inline EvalReport zeroshot_eval(const std::vector<Bag>& bags, const TextBanks& list_banks,
                                const std::array<Matrix, 2>& single_prompts, const ImageEncoder& encoder,
                                const PoolingSpec& pooling, const std::vector<std::uint64_t>& seeds,
                                const Eigen::Vector2d& fusion = Eigen::Vector2d(0.5, 0.5)) {
  if (present_classes([&] {
        std::vector<int> l;
        for (const auto& b : bags) l.push_back(b.label);
        return l;
      }()).size() < 2) {
    throw Error(ErrorCode::DegenerateLabels, "zero-shot evaluation needs two classes");
  }
  ZeroShotSource src = [&](std::uint64_t seed) {
    return ZeroShotInputs{stratified_bootstrap(bags, seed), list_banks, single_prompts};
  };
  return zeroshot_eval(src, encoder, pooling, seeds, "bootstrap", fusion);
}

}  // namespace gmat
