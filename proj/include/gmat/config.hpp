#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmat/agent_pipeline.hpp"
#include "gmat/bag_data.hpp"
#include "gmat/embedding.hpp"
#include "gmat/error.hpp"
#include "gmat/hashing.hpp"
#include "gmat/mil_core.hpp"
#include "gmat/train.hpp"
#include "gmat/zero_shot.hpp"

namespace gmat {

inline constexpr int kConfigVersion = 1;

/// One run record: every knob a command reads, loaded from JSON and then
/// overridden by command-line flags.
struct RunConfig {
  EncoderSpec encoder;
  EncoderKind image_encoder = EncoderKind::External;
  SynthSpec synth;
  std::string manifest;
  std::string descriptions;
  std::string single_descriptions;
  ModelConfig model;
  TrainConfig train;
  std::array<double, 3> split = {0.6, 0.2, 0.2};
  PoolingSpec pooling = topk_pooling(16);
  PipelineConfig pipeline;
  std::size_t chunk_size = 300;
  std::vector<std::string> class_labels;
  std::string aliases;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  std::string out = "out";
};

inline nlohmann::json to_json(const PoolingSpec& p) {
  return {{"kind", p.kind == PoolingSpec::Kind::Mean ? "mean" : "topk"}, {"k", p.k}};
}

inline PoolingSpec pooling_from_json(const nlohmann::json& j) {
  const auto kind = j.value("kind", std::string("topk"));
  if (kind == "mean") return mean_pooling();
  if (kind == "topk") return topk_pooling(j.value("k", 16));
  throw Error(ErrorCode::ConfigError, "pooling kind must be mean or topk");
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"_version", kConfigVersion},
          {"encoder", to_json(c.encoder)},
          {"image_encoder", to_string(c.image_encoder)},
          {"synth", to_json(c.synth)},
          {"manifest", c.manifest},
          {"descriptions", c.descriptions},
          {"single_descriptions", c.single_descriptions},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"split", c.split},
          {"pooling", to_json(c.pooling)},
          {"pipeline", to_json(c.pipeline)},
          {"chunk_size", c.chunk_size},
          {"class_labels", c.class_labels},
          {"aliases", c.aliases},
          {"seeds", c.seeds},
          {"out", c.out}};
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig p;
  p.grounding_budget_chars = j.value("grounding_budget_chars", p.grounding_budget_chars);
  p.max_revisions = j.value("max_revisions", p.max_revisions);
  p.max_retries = j.value("max_retries", p.max_retries);
  p.max_length = j.value("max_length", p.max_length);
  p.seed = j.value("seed", p.seed);
  p.rules.min_sentences = j.value("min_sentences", p.rules.min_sentences);
  p.rules.max_sentences = j.value("max_sentences", p.rules.max_sentences);
  p.rules.max_sentence_chars = j.value("max_sentence_chars", p.rules.max_sentence_chars);
  p.banned_phrases = j.value("banned_phrases", p.banned_phrases);
  return p;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  if (!j.contains("_version")) throw Error(ErrorCode::ConfigError, "config is missing \"_version\"");
  if (j.at("_version") != kConfigVersion) {
    throw Error(ErrorCode::ConfigError, "unsupported config version " + j.at("_version").dump());
  }
  RunConfig c;
  try {
    if (j.contains("encoder")) c.encoder = encoder_spec_from_json(j.at("encoder"));
    if (j.contains("image_encoder")) c.image_encoder = parse_encoder_kind(j.at("image_encoder").get<std::string>());
    if (j.contains("synth")) c.synth = synth_spec_from_json(j.at("synth"));
    c.manifest = j.value("manifest", c.manifest);
    c.descriptions = j.value("descriptions", c.descriptions);
    c.single_descriptions = j.value("single_descriptions", c.single_descriptions);
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("split")) c.split = j.at("split").get<std::array<double, 3>>();
    if (j.contains("pooling")) c.pooling = pooling_from_json(j.at("pooling"));
    if (j.contains("pipeline")) c.pipeline = pipeline_config_from_json(j.at("pipeline"));
    c.chunk_size = j.value("chunk_size", c.chunk_size);
    c.class_labels = j.value("class_labels", c.class_labels);
    c.aliases = j.value("aliases", c.aliases);
    c.seeds = j.value("seeds", c.seeds);
    c.out = j.value("out", c.out);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config: ") + e.what());
  }
  if (c.seeds.empty()) throw Error(ErrorCode::ConfigError, "config needs at least one seed");
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  auto j = nlohmann::json::parse(read_file(path), nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::ConfigError, "config is not valid JSON: " + path);
  return run_config_from_json(j);
}

/// Throws ConfigError naming the first referenced path that does not exist.
inline void require_paths_exist(const std::vector<std::string>& paths) {
  for (const auto& p : paths) {
    if (!p.empty() && !std::filesystem::exists(p)) throw Error(ErrorCode::ConfigError, "path does not exist: " + p);
  }
}

/// Hash of everything that affects results; the output location is excluded.
inline std::string config_hash(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("out");
  return sha256_hex(j.dump());
}

}  // namespace gmat
