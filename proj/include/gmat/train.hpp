#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmat/bag_data.hpp"
#include "gmat/error.hpp"
#include "gmat/hashing.hpp"
#include "gmat/metrics_report.hpp"
#include "gmat/mil_core.hpp"
#include "gmat/rng.hpp"

namespace gmat {

struct TrainConfig {
  std::string optimizer = "adam";  // adam | sgd
  double lr = 1e-3;
  int max_epochs = 100;
  int patience = 10;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"optimizer", t.optimizer}, {"lr", t.lr},       {"max_epochs", t.max_epochs}, {"patience", t.patience},
          {"seed", t.seed},           {"beta1", t.beta1}, {"beta2", t.beta2},           {"eps", t.eps}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.optimizer = j.value("optimizer", t.optimizer);
  t.lr = j.value("lr", t.lr);
  t.max_epochs = j.value("max_epochs", t.max_epochs);
  t.patience = j.value("patience", t.patience);
  t.seed = j.value("seed", t.seed);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.eps = j.value("eps", t.eps);
  return t;
}

struct EpochLog {
  int epoch = 0;
  double train_loss = 0;
  double val_auc = 0;
  double val_f1 = 0;
  double val_acc = 0;
  double val_loss = 0;
  std::string optimizer;
};

inline nlohmann::json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},   {"train_loss", e.train_loss}, {"val_auc", e.val_auc},
          {"val_f1", e.val_f1}, {"val_acc", e.val_acc},       {"val_loss", e.val_loss},
          {"optimizer", e.optimizer}};
}

inline std::string log_jsonl(const std::vector<EpochLog>& log) {
  std::string out;
  for (const auto& e : log) out += to_json(e).dump() + "\n";
  return out;
}

/// Fused logits for a set of bags, ordered by slide_id.
struct Predictions {
  std::vector<std::string> slide_ids;
  Matrix scores;
  std::vector<int> preds;
  std::vector<int> labels;
};

inline Predictions predict_all(const std::vector<Bag>& bags, const TextBanks& banks, const GmatParams& p) {
  std::vector<const Bag*> order;
  for (const auto& b : bags) order.push_back(&b);
  std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->slide_id < b->slide_id; });
  Predictions out;
  out.scores.resize(static_cast<Eigen::Index>(order.size()), banks[0].num_classes);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto fused = forward(*order[i], banks, p).fused;
    out.scores.row(static_cast<Eigen::Index>(i)) = fused.transpose();
    out.slide_ids.push_back(order[i]->slide_id);
    out.preds.push_back(predict(fused));
    out.labels.push_back(order[i]->label);
  }
  return out;
}

inline MetricTriple evaluate(const std::vector<Bag>& bags, const TextBanks& banks, const GmatParams& p) {
  const auto pr = predict_all(bags, banks, p);
  return compute_metrics(pr.scores, pr.preds, pr.labels);
}

/// Adam (or plain SGD) over the flat trainable vector.
class Optimizer {
 public:
  Optimizer(TrainConfig cfg, std::size_t n) : cfg_(std::move(cfg)), m_(n, 0.0), v_(n, 0.0) {
    require(cfg_.optimizer == "adam" || cfg_.optimizer == "sgd", ErrorCode::ConfigError,
            "optimizer must be adam or sgd");
  }

  void step(std::vector<double>& x, const std::vector<double>& g) {
    ++t_;
    if (cfg_.optimizer == "sgd") {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= cfg_.lr * g[i];
      return;
    }
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < x.size(); ++i) {
      m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * g[i];
      v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * g[i] * g[i];
      x[i] -= cfg_.lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  int t_ = 0;
};

struct TrainResult {
  GmatParams params;
  std::vector<EpochLog> log;
  int best_epoch = 0;
};

/// One bag per step, bag order reshuffled each epoch from the seed. Keeps
/// the parameters of the best validation epoch and stops after `patience`
/// epochs without improvement. Epochs are ranked by validation macro AUC
/// (accuracy when the validation set holds a single class), then by lower
/// validation loss, since AUC saturates at 1.0 long before the argmax
/// settles.
inline TrainResult train(const std::vector<Bag>& train_bags, const std::vector<Bag>& val_bags, const TextBanks& banks,
                         const GmatParams& init, const TrainConfig& cfg) {
  if (train_bags.empty()) throw Error(ErrorCode::NoTrainData, "training split is empty");
  require(cfg.max_epochs >= 1 && cfg.patience >= 1, ErrorCode::ConfigError, "max_epochs and patience must be positive");
  check_text_bank(banks[0]);
  check_text_bank(banks[1]);

  TrainResult res;
  GmatParams p = init;
  auto x = flatten(p);
  Optimizer opt(cfg, x.size());
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_bags.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::pair<double, double> best{-kInf, -kInf};
  res.params = p;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    rng.shuffle(order);
    double total = 0;
    for (auto i : order) {
      const auto& bag = train_bags[i];
      auto lg = loss_and_grad(bag, banks, p, bag.label);
      total += lg.loss;
      opt.step(x, flatten(lg.grad));
      unflatten(p, x);
    }
    EpochLog e;
    e.epoch = epoch;
    e.optimizer = cfg.optimizer;
    e.train_loss = total / static_cast<double>(train_bags.size());
    std::pair<double, double> score{0.0, -e.train_loss};
    if (!val_bags.empty()) {
      const auto pr = predict_all(val_bags, banks, p);
      e.val_f1 = f1_macro(pr.preds, pr.labels);
      e.val_acc = accuracy(pr.preds, pr.labels);
      e.val_auc = present_classes(pr.labels).size() >= 2 ? auc_macro(pr.scores, pr.labels) : e.val_acc;
      for (Eigen::Index i = 0; i < pr.scores.rows(); ++i) {
        e.val_loss += loss(Vector(pr.scores.row(i).transpose()), pr.labels[static_cast<std::size_t>(i)]);
      }
      e.val_loss /= static_cast<double>(pr.scores.rows());
      score = {e.val_auc, -e.val_loss};
    }
    res.log.push_back(e);
    if (score > best) {
      best = score;
      res.params = p;
      res.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  return res;
}

inline TrainResult train(const std::vector<Bag>& bags, const DatasetSplit& split, const TextBanks& banks,
                         const GmatParams& init, const TrainConfig& cfg) {
  if (split.train.empty()) throw Error(ErrorCode::NoTrainData, "training split is empty");
  return train(select_bags(bags, split.train), select_bags(bags, split.val), banks, init, cfg);
}

// ---------------------------------------------------------------------------
// Checkpoint: u32 LE header length, compact JSON header, then every tensor as
// little-endian f32 in the order listed under "shapes".
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fn>
void for_each_tensor(GmatParams& p, Fn&& fn) {
  fn("proj", p.proj.data(), p.proj.rows(), p.proj.cols());
  const char* names[2][3] = {{"V_5x", "U_5x", "w_5x"}, {"V_10x", "U_10x", "w_10x"}};
  for (std::size_t s = 0; s < 2; ++s) {
    auto& a = p.attention[s];
    fn(names[s][0], a.V.data(), a.V.rows(), a.V.cols());
    fn(names[s][1], a.U.data(), a.U.rows(), a.U.cols());
    fn(names[s][2], a.w.data(), a.w.size(), Eigen::Index{1});
  }
  fn("log_tau", &p.log_tau, Eigen::Index{1}, Eigen::Index{1});
  fn("fusion_logits", p.fusion_logits.data(), Eigen::Index{2}, Eigen::Index{1});
}

}  // namespace detail

struct Checkpoint {
  GmatParams params;
  std::string config_hash;
  int epoch = 0;
};

inline std::string encode_checkpoint(const GmatParams& params, const std::string& config_hash, int epoch) {
  GmatParams p = params;
  nlohmann::json shapes = nlohmann::json::array();
  std::string blob;
  detail::for_each_tensor(p, [&](const char* name, double* data, Eigen::Index rows, Eigen::Index cols) {
    shapes.push_back({{"name", name}, {"shape", {rows, cols}}});
    for (Eigen::Index i = 0; i < rows * cols; ++i) detail::put_f32_le(blob, static_cast<float>(data[i]));
  });
  const nlohmann::json header = {{"format", "gmat-checkpoint-1"},
                                 {"shapes", shapes},
                                 {"config_hash", config_hash},
                                 {"epoch", epoch},
                                 {"train_proj", params.train_proj}};
  const auto h = header.dump();
  std::string out;
  detail::put_u32_le(out, static_cast<std::uint32_t>(h.size()));
  return out + h + blob;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::FormatError, "checkpoint truncated");
  const auto hlen = detail::get_u32_le(bytes, 0);
  if (bytes.size() < 4 + static_cast<std::size_t>(hlen)) throw Error(ErrorCode::FormatError, "checkpoint header truncated");
  const auto header = nlohmann::json::parse(bytes.begin() + 4, bytes.begin() + 4 + hlen, nullptr, false);
  if (header.is_discarded() || header.value("format", "") != "gmat-checkpoint-1") {
    throw Error(ErrorCode::FormatError, "not a checkpoint header");
  }
  Checkpoint ck;
  try {
    ck.config_hash = header.at("config_hash").get<std::string>();
    ck.epoch = header.at("epoch").get<int>();
    ck.params.train_proj = header.at("train_proj").get<bool>();
    std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> shape;
    for (const auto& s : header.at("shapes")) {
      shape[s.at("name").get<std::string>()] = {s.at("shape").at(0).get<Eigen::Index>(), s.at("shape").at(1).get<Eigen::Index>()};
    }
    auto& p = ck.params;
    auto dims = [&](const char* n) { return shape.at(n); };
    p.proj.resize(dims("proj").first, dims("proj").second);
    const char* names[2][3] = {{"V_5x", "U_5x", "w_5x"}, {"V_10x", "U_10x", "w_10x"}};
    for (std::size_t s = 0; s < 2; ++s) {
      p.attention[s].V.resize(dims(names[s][0]).first, dims(names[s][0]).second);
      p.attention[s].U.resize(dims(names[s][1]).first, dims(names[s][1]).second);
      p.attention[s].w.resize(dims(names[s][2]).first);
    }
  } catch (const std::exception& e) {
    throw Error(ErrorCode::FormatError, std::string("checkpoint header: ") + e.what());
  }
  std::size_t pos = 4 + hlen;
  detail::for_each_tensor(ck.params, [&](const char*, double* data, Eigen::Index rows, Eigen::Index cols) {
    const auto n = static_cast<std::size_t>(rows * cols);
    if (pos + 4 * n > bytes.size()) throw Error(ErrorCode::FormatError, "checkpoint payload truncated");
    for (std::size_t i = 0; i < n; ++i, pos += 4) data[i] = detail::get_f32_le(bytes, pos);
  });
  if (pos != bytes.size()) throw Error(ErrorCode::FormatError, "checkpoint has trailing bytes");
  return ck;
}

inline void save_checkpoint(const GmatParams& p, const std::string& path, const std::string& config_hash, int epoch) {
  write_file(path, encode_checkpoint(p, config_hash, epoch));
}

inline Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace gmat
