#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gmat/error.hpp"
#include "gmat/hashing.hpp"
#include "gmat/text.hpp"

namespace gmat {

/// Coarse-to-fine ordering used for finalized sentences.
enum class Stage { General = 0, Microscopic = 1, Molecular = 2, Clinical = 3, Unknown = 4 };

inline constexpr std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::General: return "general";
    case Stage::Microscopic: return "microscopic";
    case Stage::Molecular: return "molecular";
    case Stage::Clinical: return "clinical";
    case Stage::Unknown: return "unknown";
  }
  return "unknown";
}

inline Stage parse_stage(std::string_view s) {
  const auto l = text::to_lower(text::trim(s));
  if (l == "general") return Stage::General;
  if (l == "microscopic") return Stage::Microscopic;
  if (l == "molecular") return Stage::Molecular;
  if (l == "clinical") return Stage::Clinical;
  return Stage::Unknown;
}

struct DescriptionRules {
  std::size_t min_sentences = 4;
  std::size_t max_sentences = 24;
  std::size_t max_sentence_chars = 300;
};

inline constexpr std::string_view kMarkdownMarkers = "*#`|";

inline bool has_markdown(std::string_view s) { return s.find_first_of(kMarkdownMarkers) != std::string_view::npos; }

struct ClassDescriptionList {
  std::string class_label;
  std::vector<std::string> sentences;
  std::vector<Stage> stages;  // empty, or one tag per sentence

  bool operator==(const ClassDescriptionList&) const = default;
};

struct DescriptionMeta {
  std::string generator = "manual";  // multi_agent | single_agent | manual
  std::string created = "1970-01-01T00:00:00Z";
  std::string config_hash;
  std::map<std::string, int> revisions;

  bool operator==(const DescriptionMeta&) const = default;
};

/// The class-keyed description artifact. Class keys iterate in sorted order,
/// which is also the class-index order used by every downstream model.
struct DescriptionSet {
  std::map<std::string, ClassDescriptionList> entries;
  std::optional<DescriptionMeta> meta;

  std::vector<std::string> class_labels() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : entries) out.push_back(k);
    return out;
  }

  bool operator==(const DescriptionSet&) const = default;
};

/// Per-class baseline prompt pair (one text per magnification).
struct SinglePrompt {
  std::string scale_5x;
  std::string scale_10x;
  bool operator==(const SinglePrompt&) const = default;
};

struct SinglePromptSet {
  std::map<std::string, SinglePrompt> entries;
};

inline std::vector<Violation> check_class_list(const ClassDescriptionList& list, const DescriptionRules& rules) {
  std::vector<Violation> out;
  const auto& label = list.class_label;
  const auto n = list.sentences.size();
  if (n == 0) {
    out.push_back({label, -1, "empty_list"});
  } else if (n < rules.min_sentences) {
    out.push_back({label, -1, "too_few_sentences"});
  } else if (n > rules.max_sentences) {
    out.push_back({label, -1, "too_many_sentences"});
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = list.sentences[i];
    const int idx = static_cast<int>(i);
    if (text::is_blank(s)) out.push_back({label, idx, "empty_sentence"});
    if (s.size() > rules.max_sentence_chars) out.push_back({label, idx, "too_long"});
    if (has_markdown(s)) out.push_back({label, idx, "markdown"});
  }
  return out;
}

inline std::vector<Violation> check_description_set(const DescriptionSet& set, const DescriptionRules& rules) {
  std::vector<Violation> out;
  if (set.entries.empty()) out.push_back({"", -1, "no_classes"});
  for (const auto& [label, list] : set.entries) {
    auto v = check_class_list(list, rules);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

inline nlohmann::json to_json(const DescriptionSet& set) {
  nlohmann::json j = nlohmann::json::object();
  nlohmann::json stages = nlohmann::json::object();
  for (const auto& [label, list] : set.entries) {
    j[label] = list.sentences;
    if (!list.stages.empty()) {
      auto& arr = stages[label] = nlohmann::json::array();
      for (auto s : list.stages) arr.push_back(std::string(to_string(s)));
    }
  }
  if (set.meta) {
    nlohmann::json m = {{"generator", set.meta->generator},
                        {"created", set.meta->created},
                        {"config_hash", set.meta->config_hash}};
    if (!set.meta->revisions.empty()) m["revisions"] = set.meta->revisions;
    if (!stages.empty()) m["stages"] = stages;
    j["_meta"] = m;
  }
  return j;
}

/// Canonical bytes: sorted keys, two-space indent, trailing newline.
inline std::string canonical_json(const DescriptionSet& set) { return to_json(set).dump(2) + "\n"; }

namespace detail {

inline nlohmann::json parse_rejecting_duplicate_classes(std::string_view raw, std::vector<Violation>& dups) {
  std::set<std::string> seen;
  auto cb = [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json& parsed) {
    if (event == nlohmann::json::parse_event_t::key && depth == 1) {
      const auto key = parsed.get<std::string>();
      if (!seen.insert(key).second) dups.push_back({key, -1, "duplicate_class"});
    }
    return true;
  };
  try {
    return nlohmann::json::parse(raw.begin(), raw.end(), cb);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("not valid JSON: ") + e.what());
  }
}

inline DescriptionMeta parse_meta(const nlohmann::json& m, std::map<std::string, std::vector<Stage>>& stages) {
  if (!m.is_object()) throw Error(ErrorCode::SchemaError, "_meta must be an object");
  DescriptionMeta meta;
  try {
    meta.generator = m.at("generator").get<std::string>();
    meta.created = m.at("created").get<std::string>();
    meta.config_hash = m.at("config_hash").get<std::string>();
    if (m.contains("revisions")) meta.revisions = m.at("revisions").get<std::map<std::string, int>>();
    if (m.contains("stages")) {
      for (const auto& [label, arr] : m.at("stages").items()) {
        auto& dst = stages[label];
        for (const auto& s : arr) dst.push_back(parse_stage(s.get<std::string>()));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("_meta: ") + e.what());
  }
  static const std::set<std::string> kGenerators = {"multi_agent", "single_agent", "manual"};
  if (!kGenerators.contains(meta.generator)) {
    throw Error(ErrorCode::SchemaError, "_meta.generator must be multi_agent, single_agent or manual");
  }
  return meta;
}

}  // namespace detail

/// Parses and checks a description artifact. Structural problems raise
/// SchemaError; rule failures are collected and raised together.
inline DescriptionSet validate(std::string_view raw_json, const DescriptionRules& rules = {}) {
  std::vector<Violation> violations;
  const auto j = detail::parse_rejecting_duplicate_classes(raw_json, violations);
  if (!j.is_object()) throw Error(ErrorCode::SchemaError, "top level must be an object");

  DescriptionSet set;
  std::map<std::string, std::vector<Stage>> stages;
  for (const auto& [key, value] : j.items()) {
    if (key == "_meta") {
      set.meta = detail::parse_meta(value, stages);
      continue;
    }
    if (!value.is_array()) throw Error(ErrorCode::SchemaError, "value for '" + key + "' must be an array of strings");
    ClassDescriptionList list;
    list.class_label = key;
    for (const auto& s : value) {
      if (!s.is_string()) throw Error(ErrorCode::SchemaError, "non-string sentence under '" + key + "'");
      list.sentences.push_back(s.get<std::string>());
    }
    set.entries.emplace(key, std::move(list));
  }
  for (auto& [label, tags] : stages) {
    auto it = set.entries.find(label);
    if (it == set.entries.end()) throw Error(ErrorCode::SchemaError, "_meta.stages names unknown class '" + label + "'");
    if (tags.size() != it->second.sentences.size()) {
      throw Error(ErrorCode::SchemaError, "_meta.stages length mismatch for '" + label + "'");
    }
    it->second.stages = std::move(tags);
  }
  auto rule_violations = check_description_set(set, rules);
  violations.insert(violations.end(), rule_violations.begin(), rule_violations.end());
  if (!violations.empty()) throw ValidationError(std::move(violations));
  return set;
}

inline void save_descriptions(const DescriptionSet& set, const std::string& path) {
  write_file(path, canonical_json(set));
}

inline DescriptionSet load_descriptions(const std::string& path, const DescriptionRules& rules = {}) {
  return validate(read_file(path), rules);
}

/// Baseline reduction: one prompt per class taken from the first
/// general-stage sentence (sentence 0 when no stage tags exist).
inline SinglePromptSet as_single(const DescriptionSet& set) {
  SinglePromptSet out;
  for (const auto& [label, list] : set.entries) {
    require(!list.sentences.empty(), ErrorCode::InvalidArgument, "class '" + label + "' has no sentences");
    std::size_t pick = 0;
    if (!list.stages.empty()) {
      auto it = std::find(list.stages.begin(), list.stages.end(), Stage::General);
      if (it != list.stages.end()) pick = static_cast<std::size_t>(it - list.stages.begin());
    }
    out.entries[label] = {list.sentences[pick], list.sentences[pick]};
  }
  return out;
}

inline nlohmann::json to_json(const SinglePromptSet& s) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [label, p] : s.entries) j[label] = {{"scale_5x", p.scale_5x}, {"scale_10x", p.scale_10x}};
  return j;
}

inline SinglePromptSet single_prompts_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorCode::SchemaError, "single prompt set must be an object");
  SinglePromptSet s;
  try {
    for (const auto& [label, p] : j.items()) {
      SinglePrompt sp{p.at("scale_5x").get<std::string>(), p.at("scale_10x").get<std::string>()};
      if (text::is_blank(sp.scale_5x) || text::is_blank(sp.scale_10x)) {
        throw Error(ErrorCode::SchemaError, "blank single prompt for '" + label + "'");
      }
      s.entries[label] = std::move(sp);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SchemaError, std::string("single prompt set: ") + e.what());
  }
  return s;
}

}  // namespace gmat
