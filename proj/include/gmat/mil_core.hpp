#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmat/bag_data.hpp"
#include "gmat/description_store.hpp"
#include "gmat/embedding.hpp"
#include "gmat/error.hpp"
#include "gmat/rng.hpp"

namespace gmat {

// ---------------------------------------------------------------------------
// Text side
// ---------------------------------------------------------------------------

/// Frozen description embeddings for one scale: row j belongs to class
/// class_of[j]. Class indices follow the sorted class labels.
struct TextBank {
  Matrix desc_embs;
  std::vector<int> class_of;
  int num_classes = 0;
};

/// One bank per magnification; both entries may hold the same data.
using TextBanks = std::array<TextBank, 2>;

inline void check_text_bank(const TextBank& bank) {
  require(bank.num_classes >= 1, ErrorCode::InvalidArgument, "text bank has no classes");
  require(static_cast<Eigen::Index>(bank.class_of.size()) == bank.desc_embs.rows(), ErrorCode::DimMismatch,
          "class_of length must equal the number of description rows");
  std::vector<int> count(static_cast<std::size_t>(bank.num_classes), 0);
  for (int c : bank.class_of) {
    if (c < 0 || c >= bank.num_classes) throw Error(ErrorCode::LabelOutOfRange, "description class index out of range");
    ++count[static_cast<std::size_t>(c)];
  }
  for (std::size_t c = 0; c < count.size(); ++c) {
    if (count[c] == 0) throw Error(ErrorCode::EmptyClass, "class " + std::to_string(c) + " has no descriptions");
  }
}

inline TextBank make_text_bank(const DescriptionSet& set, const TextEncoder& encoder) {
  TextBank bank;
  std::vector<std::string> all;
  int c = 0;
  for (const auto& [label, list] : set.entries) {
    for (const auto& s : list.sentences) {
      all.push_back(s);
      bank.class_of.push_back(c);
    }
    ++c;
  }
  bank.num_classes = c;
  bank.desc_embs = encoder.encode(all);
  check_text_bank(bank);
  return bank;
}

/// Bank with exactly one row per class, taken from a single-prompt set.
inline TextBank make_single_bank(const SinglePromptSet& prompts, Scale scale, const TextEncoder& encoder) {
  TextBank bank;
  std::vector<std::string> texts;
  for (const auto& [label, p] : prompts.entries) {
    texts.push_back(scale == Scale::X5 ? p.scale_5x : p.scale_10x);
    bank.class_of.push_back(bank.num_classes++);
  }
  bank.desc_embs = encoder.encode(texts);
  return bank;
}

inline TextBanks shared_banks(TextBank bank) { return {bank, bank}; }

// ---------------------------------------------------------------------------
// Components
// ---------------------------------------------------------------------------

/// S[i,j] = tau * <p_i, d_j>.
inline Matrix similarity(const Matrix& patch_embs, const Matrix& desc_embs, double tau) {
  if (patch_embs.cols() != desc_embs.cols()) {
    throw Error(ErrorCode::DimMismatch, "patch and description embeddings differ in dimension");
  }
  return tau * patch_embs * desc_embs.transpose();
}

/// score[i,c] = mean of S[i,j] over descriptions j of class c.
inline Matrix class_scores(const Matrix& sim, std::span<const int> class_of, int num_classes) {
  require(static_cast<Eigen::Index>(class_of.size()) == sim.cols(), ErrorCode::DimMismatch,
          "class_of length must equal similarity columns");
  std::vector<int> count(static_cast<std::size_t>(num_classes), 0);
  for (int c : class_of) {
    if (c < 0 || c >= num_classes) throw Error(ErrorCode::LabelOutOfRange, "description class index out of range");
    ++count[static_cast<std::size_t>(c)];
  }
  Matrix out = Matrix::Zero(sim.rows(), num_classes);
  for (Eigen::Index j = 0; j < sim.cols(); ++j) out.col(class_of[static_cast<std::size_t>(j)]) += sim.col(j);
  for (int c = 0; c < num_classes; ++c) {
    if (count[static_cast<std::size_t>(c)] == 0) throw Error(ErrorCode::EmptyClass, "class " + std::to_string(c) + " has no descriptions");
    out.col(c) /= static_cast<double>(count[static_cast<std::size_t>(c)]);
  }
  return out;
}

/// Gated-attention parameters for one scale: V, U are L×D, w has length L.
struct AttentionParams {
  Matrix V;
  Matrix U;
  Vector w;
};

inline Vector softmax(const Vector& z) {
  const double m = z.maxCoeff();
  Vector e = (z.array() - m).exp().matrix();
  return e / e.sum();
}

inline double logsumexp(const Vector& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

/// Raw attention scores z_i = w . (tanh(V h_i) * sigmoid(U h_i)).
inline Vector attention_scores(const Matrix& h, const AttentionParams& att) {
  if (h.cols() != att.V.cols() || h.cols() != att.U.cols()) throw Error(ErrorCode::DimMismatch, "attention input dim mismatch");
  const Matrix t = (h * att.V.transpose()).array().tanh().matrix();
  const Matrix q = (1.0 / (1.0 + (-(h * att.U.transpose()).array()).exp())).matrix();
  return t.cwiseProduct(q) * att.w;
}

/// Softmax-normalized gated attention over the patches of one bag.
inline Vector gated_attention(const Matrix& h, const AttentionParams& att) {
  require(h.rows() >= 1, ErrorCode::InvalidArgument, "attention needs at least one patch");
  return softmax(attention_scores(h, att));
}

/// logit[c] = sum_i a_i * score[i,c].
inline Vector slide_logits(const Matrix& scores, const Vector& weights) {
  if (scores.rows() != weights.size()) throw Error(ErrorCode::DimMismatch, "attention weights do not match patch count");
  return scores.transpose() * weights;
}

/// -log softmax(logits)[label].
inline double loss(const Vector& logits, int label) {
  if (label < 0 || label >= logits.size()) throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label));
  return logsumexp(logits) - logits[label];
}

/// Argmax with the lowest index winning exact ties.
inline int predict(const Vector& logits) {
  int best = 0;
  for (int c = 1; c < logits.size(); ++c)
    if (logits[c] > logits[best]) best = c;
  return best;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct ModelConfig {
  int attention_dim = 32;
  double init_tau = 10.0;
  bool use_projection = true;
  bool train_projection = true;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"attention_dim", m.attention_dim},
          {"init_tau", m.init_tau},
          {"use_projection", m.use_projection},
          {"train_projection", m.train_projection},
          {"seed", m.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.attention_dim = j.value("attention_dim", m.attention_dim);
  m.init_tau = j.value("init_tau", m.init_tau);
  m.use_projection = j.value("use_projection", m.use_projection);
  m.train_projection = j.value("train_projection", m.train_projection);
  m.seed = j.value("seed", m.seed);
  return m;
}

/// Everything the classifier learns. tau = exp(log_tau) keeps the similarity
/// scale positive; fusion weights are softmax(fusion_logits).
struct GmatParams {
  Matrix proj;  // F×D; empty when the projection is disabled
  bool train_proj = true;
  std::array<AttentionParams, 2> attention;
  double log_tau = 0.0;
  Eigen::Vector2d fusion_logits = Eigen::Vector2d::Zero();

  double tau() const { return std::exp(log_tau); }
  Eigen::Vector2d fusion() const { return softmax(fusion_logits); }
  bool has_proj() const { return proj.size() > 0; }
  int embed_dim() const { return static_cast<int>(attention[0].V.cols()); }
  int attention_dim() const { return static_cast<int>(attention[0].V.rows()); }
};

/// Identity when F == D, otherwise a seeded matrix with orthonormal columns
/// (F >= D) or rows (F < D).
inline Matrix init_projection(int feature_dim, int embed_dim, std::uint64_t seed) {
  if (feature_dim == embed_dim) return Matrix::Identity(feature_dim, embed_dim);
  const int big = std::max(feature_dim, embed_dim), small = std::min(feature_dim, embed_dim);
  Matrix g = seeded_projection(big, small, seed);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  return feature_dim >= embed_dim ? Matrix(q) : Matrix(q.transpose());
}

inline GmatParams init_params(const ModelConfig& cfg, int feature_dim, int embed_dim) {
  require(cfg.attention_dim >= 1, ErrorCode::SpecInvalid, "attention_dim must be at least 1");
  require(cfg.init_tau > 0.0, ErrorCode::SpecInvalid, "init_tau must be positive");
  GmatParams p;
  if (cfg.use_projection) {
    p.proj = init_projection(feature_dim, embed_dim, derive_seed(cfg.seed, 1));
  } else {
    require(feature_dim == embed_dim, ErrorCode::DimMismatch, "without a projection features must have the embedding dim");
  }
  p.train_proj = cfg.use_projection && cfg.train_projection;
  for (int s = 0; s < 2; ++s) {
    auto& a = p.attention[static_cast<std::size_t>(s)];
    a.V = seeded_projection(cfg.attention_dim, embed_dim, derive_seed(cfg.seed, 10 + s));
    a.U = seeded_projection(cfg.attention_dim, embed_dim, derive_seed(cfg.seed, 20 + s));
    a.w = seeded_projection(cfg.attention_dim, 1, derive_seed(cfg.seed, 30 + s)).col(0) /
          std::sqrt(static_cast<double>(cfg.attention_dim));
  }
  p.log_tau = std::log(cfg.init_tau);
  return p;
}

/// Same shapes as `like`, all zeros.
inline GmatParams zeros_like(const GmatParams& like) {
  GmatParams g;
  g.proj = Matrix::Zero(like.proj.rows(), like.proj.cols());
  g.train_proj = like.train_proj;
  for (std::size_t s = 0; s < 2; ++s) {
    g.attention[s].V = Matrix::Zero(like.attention[s].V.rows(), like.attention[s].V.cols());
    g.attention[s].U = Matrix::Zero(like.attention[s].U.rows(), like.attention[s].U.cols());
    g.attention[s].w = Vector::Zero(like.attention[s].w.size());
  }
  g.log_tau = 0.0;
  g.fusion_logits.setZero();
  return g;
}

/// Visits every trainable scalar in declared order: proj (if trainable),
/// then V, U, w for 5x and 10x, then log_tau, then the two fusion logits.
template <typename P, typename Fn>
void for_each_trainable(P& p, Fn&& fn) {
  if (p.train_proj && p.proj.size() > 0)
    for (Eigen::Index i = 0; i < p.proj.size(); ++i) fn(p.proj.data()[i]);
  for (auto& a : p.attention) {
    for (Eigen::Index i = 0; i < a.V.size(); ++i) fn(a.V.data()[i]);
    for (Eigen::Index i = 0; i < a.U.size(); ++i) fn(a.U.data()[i]);
    for (Eigen::Index i = 0; i < a.w.size(); ++i) fn(a.w.data()[i]);
  }
  fn(p.log_tau);
  fn(p.fusion_logits[0]);
  fn(p.fusion_logits[1]);
}

inline std::vector<double> flatten(const GmatParams& p) {
  std::vector<double> out;
  for_each_trainable(p, [&](const double& x) { out.push_back(x); });
  return out;
}

inline void unflatten(GmatParams& p, std::span<const double> values) {
  std::size_t i = 0;
  for_each_trainable(p, [&](double& x) {
    require(i < values.size(), ErrorCode::DimMismatch, "flat parameter vector too short");
    x = values[i++];
  });
  require(i == values.size(), ErrorCode::DimMismatch, "flat parameter vector too long");
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct ScaleTrace {
  Matrix similarity;    // N×M
  Matrix class_scores;  // N×C
  Vector attention;     // N
  Vector logits;        // C
};

struct ForwardTrace {
  std::array<ScaleTrace, 2> scales;
  Vector fused;
};

inline Matrix to_double(const FeatureMatrix& f) { return f.cast<double>(); }

/// Patch embeddings after the optional projection, L2-normalized.
inline Matrix embed_patches(const Matrix& features, const GmatParams& p) {
  require_finite(features, "bag features");
  Matrix h;
  if (p.has_proj()) {
    if (features.cols() != p.proj.rows()) throw Error(ErrorCode::DimMismatch, "feature dim does not match projection");
    h = features * p.proj;
  } else {
    if (features.cols() != p.embed_dim()) throw Error(ErrorCode::DimMismatch, "feature dim does not match embedding dim");
    h = features;
  }
  normalize_rows(h);
  return h;
}

inline ForwardTrace forward(const Bag& bag, const TextBanks& banks, const GmatParams& p) {
  ForwardTrace tr;
  const auto alpha = p.fusion();
  const double tau = p.tau();
  tr.fused = Vector::Zero(banks[0].num_classes);
  require(banks[0].num_classes == banks[1].num_classes, ErrorCode::DimMismatch, "scale banks disagree on class count");
  for (auto scale : kScales) {
    const auto s = static_cast<std::size_t>(scale);
    auto& st = tr.scales[s];
    const Matrix h = embed_patches(to_double(bag.features(scale)), p);
    st.similarity = similarity(h, banks[s].desc_embs, tau);
    st.class_scores = class_scores(st.similarity, banks[s].class_of, banks[s].num_classes);
    st.attention = gated_attention(h, p.attention[s]);
    st.logits = slide_logits(st.class_scores, st.attention);
    tr.fused += alpha[static_cast<Eigen::Index>(s)] * st.logits;
  }
  return tr;
}

struct LossAndGrad {
  double loss = 0.0;
  GmatParams grad;
};

/// Exact gradient of loss(forward(bag), label) with respect to every
/// trainable parameter. Text embeddings are constants.
inline LossAndGrad loss_and_grad(const Bag& bag, const TextBanks& banks, const GmatParams& p, int label) {
  const int C = banks[0].num_classes;
  if (label < 0 || label >= C) throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label));
  const auto alpha = p.fusion();
  const double tau = p.tau();

  struct Cache {
    Matrix x, hr, h, t, q, scores;
    Vector norms, a, logits;
  };
  std::array<Cache, 2> cache;
  Vector fused = Vector::Zero(C);
  for (auto scale : kScales) {
    const auto s = static_cast<std::size_t>(scale);
    auto& c = cache[s];
    c.x = to_double(bag.features(scale));
    require_finite(c.x, "bag features");
    c.hr = p.has_proj() ? Matrix(c.x * p.proj) : c.x;
    if (c.hr.cols() != banks[s].desc_embs.cols()) throw Error(ErrorCode::DimMismatch, "embedding dim mismatch");
    c.norms = c.hr.rowwise().norm();
    if (!(c.norms.minCoeff() > 0.0)) throw Error(ErrorCode::NonFiniteInput, "zero-norm patch embedding");
    c.h = c.norms.cwiseInverse().asDiagonal() * c.hr;
    const Matrix sim = similarity(c.h, banks[s].desc_embs, tau);
    c.scores = class_scores(sim, banks[s].class_of, C);
    const auto& att = p.attention[s];
    c.t = (c.h * att.V.transpose()).array().tanh().matrix();
    c.q = (1.0 / (1.0 + (-(c.h * att.U.transpose()).array()).exp())).matrix();
    c.a = softmax(c.t.cwiseProduct(c.q) * att.w);
    c.logits = c.scores.transpose() * c.a;
    fused += alpha[static_cast<Eigen::Index>(s)] * c.logits;
  }

  LossAndGrad out;
  out.loss = loss(fused, label);
  out.grad = zeros_like(p);
  auto& g = out.grad;

  Vector dfused = softmax(fused);
  dfused[label] -= 1.0;

  Eigen::Vector2d dalpha;
  for (std::size_t s = 0; s < 2; ++s) dalpha[static_cast<Eigen::Index>(s)] = dfused.dot(cache[s].logits);
  g.fusion_logits = alpha.cwiseProduct((dalpha.array() - alpha.dot(dalpha)).matrix());

  for (std::size_t s = 0; s < 2; ++s) {
    const auto& c = cache[s];
    const auto& bank = banks[s];
    const auto& att = p.attention[s];
    auto& ga = g.attention[s];

    const Vector dlog = alpha[static_cast<Eigen::Index>(s)] * dfused;
    const Vector da = c.scores * dlog;
    const Matrix dscores = c.a * dlog.transpose();
    const Vector dz = c.a.cwiseProduct((da.array() - c.a.dot(da)).matrix());

    const Matrix gate = c.t.cwiseProduct(c.q);
    ga.w = gate.transpose() * dz;
    const Matrix dgate = dz * att.w.transpose();
    const Matrix dpre_t = dgate.cwiseProduct(c.q).cwiseProduct((1.0 - c.t.array().square()).matrix());
    const Matrix dpre_q = dgate.cwiseProduct(c.t).cwiseProduct((c.q.array() * (1.0 - c.q.array())).matrix());
    ga.V = dpre_t.transpose() * c.h;
    ga.U = dpre_q.transpose() * c.h;
    Matrix dh = dpre_t * att.V + dpre_q * att.U;

    // Back through the per-class mean: each description column receives
    // its class's gradient divided by the class size.
    std::vector<int> count(static_cast<std::size_t>(C), 0);
    for (int k : bank.class_of) ++count[static_cast<std::size_t>(k)];
    Matrix dsim(c.h.rows(), bank.desc_embs.rows());
    for (Eigen::Index j = 0; j < dsim.cols(); ++j) {
      const int k = bank.class_of[static_cast<std::size_t>(j)];
      dsim.col(j) = dscores.col(k) / static_cast<double>(count[static_cast<std::size_t>(k)]);
    }
    const Matrix cos = c.h * bank.desc_embs.transpose();
    g.log_tau += tau * dsim.cwiseProduct(cos).sum();
    dh += tau * dsim * bank.desc_embs;

    if (p.train_proj && p.has_proj()) {
      Matrix dhr(dh.rows(), dh.cols());
      for (Eigen::Index i = 0; i < dh.rows(); ++i) {
        const double proj_len = c.h.row(i).dot(dh.row(i));
        dhr.row(i) = (dh.row(i) - proj_len * c.h.row(i)) / c.norms[i];
      }
      g.proj += c.x.transpose() * dhr;
    }
  }
  return out;
}

/// Fused-logit prediction for one bag.
inline int predict(const Bag& bag, const TextBanks& banks, const GmatParams& p) { return predict(forward(bag, banks, p).fused); }

}  // namespace gmat
