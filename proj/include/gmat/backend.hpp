#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "gmat/error.hpp"
#include "gmat/hashing.hpp"
#include "gmat/text.hpp"

namespace gmat {

/// Any text generator the agents can talk to.
class TextGenBackend {
 public:
  virtual ~TextGenBackend() = default;

  virtual std::string generate(const std::string& prompt, int max_length, std::uint64_t seed) = 0;
  virtual std::string name() const = 0;
  /// True when identical (prompt, max_length, seed) always yield identical text.
  virtual bool deterministic() const { return false; }
  /// True when generate() may be called from several threads at once.
  virtual bool concurrent_safe() const { return false; }
};

// Every agent prompt opens with "ROLE: <NAME>" on its first line.
inline constexpr std::string_view kRolePlanning = "PLANNING";
inline constexpr std::string_view kRoleGenerate = "GENERATE";
inline constexpr std::string_view kRoleVerify = "VERIFY";
inline constexpr std::string_view kRoleFinalize = "FINALIZE";
inline constexpr std::string_view kRoleSingle = "SINGLE";

inline std::string prompt_role(std::string_view prompt) {
  const auto nl = prompt.find('\n');
  auto first = text::trim(prompt.substr(0, nl));
  constexpr std::string_view kPrefix = "ROLE:";
  if (first.substr(0, kPrefix.size()) != kPrefix) return "";
  return std::string(text::trim(first.substr(kPrefix.size())));
}

/// Keyword heuristic used by the mock to tag a sentence with its stage.
inline std::string_view guess_stage(std::string_view sentence) {
  static const std::vector<std::string> kMolecular = {
      "gene", "genes", "mutation", "mutations", "chromosome", "chromosomal", "deletion", "loss", "gain",
      "molecular", "expression", "immunohistochemistry", "immunostain", "positive", "negative", "trisomy",
      "amplification", "methylation", "pathway", "vhl", "met", "egfr", "kras", "tp53", "ck7", "cd117", "ttf1",
      "p40", "napsa"};
  static const std::vector<std::string> kClinical = {
      "prognosis", "prognostic", "patients", "patient", "survival", "treatment", "therapy", "clinical",
      "outcome", "outcomes", "smokers", "smoking", "age", "metastasis", "metastatic", "aggressive", "incidence"};
  static const std::vector<std::string> kMicroscopic = {
      "cells", "cell", "cytoplasm", "nuclei", "nuclear", "nucleoli", "papillae", "papillary", "architecture",
      "microscopic", "microscopically", "glands", "glandular", "keratin", "keratinization", "stroma",
      "vasculature", "macrophages", "eosinophilic", "acinar", "halos", "membranes", "bridges", "histology"};
  const auto ws = text::words(sentence);
  const std::set<std::string> present(ws.begin(), ws.end());
  auto any = [&](const std::vector<std::string>& keys) {
    for (const auto& k : keys)
      if (present.contains(k)) return true;
    return false;
  };
  if (any(kMolecular)) return "molecular";
  if (any(kClinical)) return "clinical";
  if (any(kMicroscopic)) return "microscopic";
  return "general";
}

/// Template-driven backend that answers every agent role from the text in its
/// prompt. It never contacts a model and is used by all tests and CI runs.
///
/// Behaviour per role: PLANNING emits a fixed four-section plan; GENERATE
/// copies the grounding sentences, dropping any sentence that contains a
/// phrase quoted in an error issue; VERIFY approves the draft verbatim;
/// FINALIZE and SINGLE emit stage-tagged sentences.
class MockBackend final : public TextGenBackend {
 public:
  std::string generate(const std::string& prompt, int max_length, std::uint64_t seed) override {
    const auto role = prompt_role(prompt);
    const auto sections = text::parse_sections(prompt);
    auto section = [&](const std::string& name) -> std::string {
      auto it = sections.find(name);
      return it == sections.end() ? std::string() : it->second;
    };
    std::string out;
    if (role == kRolePlanning) {
      out = plan(section("CLASS"), section("GROUNDING"), seed);
    } else if (role == kRoleGenerate) {
      out = "## DRAFT\n" + draft(section("GROUNDING"), section("ISSUES"));
    } else if (role == kRoleVerify) {
      out = "## VERDICT\nPASS\n## CORRECTED\n" + section("DRAFT") + "\n## ISSUES\n(none)\n";
    } else if (role == kRoleFinalize) {
      out = "## SENTENCES\n" + tagged(section("DESCRIPTION"));
    } else if (role == kRoleSingle) {
      out = "## SENTENCES\n" + tagged(grounding_text(section("GROUNDING")));
    } else {
      throw Error(ErrorCode::BackendFailure, "mock backend: unknown role '" + role + "'");
    }
    if (max_length > 0 && out.size() > static_cast<std::size_t>(max_length)) out.resize(static_cast<std::size_t>(max_length));
    return out;
  }

  std::string name() const override { return "mock"; }
  bool deterministic() const override { return true; }
  bool concurrent_safe() const override { return true; }

 private:
  static std::string grounding_text(const std::string& grounding) {
    std::string out;
    for (const auto& line : text::split_lines(grounding)) {
      if (text::trim(line) == "---") {
        out.push_back('\n');
        continue;
      }
      out += line;
      out.push_back('\n');
    }
    return out;
  }

  static std::string plan(const std::string& label, const std::string& grounding, std::uint64_t seed) {
    static const char* kOpeners[] = {"Description plan for", "Writing guide for", "Structured outline for"};
    const auto passages = text::split_sentences(grounding_text(grounding)).size();
    std::string out;
    out += "## SUMMARY\n";
    out += std::string(kOpeners[seed % 3]) + " " + label + ", grounded in " + std::to_string(passages) +
           " reference sentences. Cover overview, microscopic features, molecular findings and clinical context.\n";
    out += "## RULES\n- Describe the overall tumor appearance first.\n- Describe cell and tissue features before "
           "molecular findings.\n- Use only terminology present in the reference passages.\n";
    out += "## CLINICAL\n- Molecular alterations and immunoprofile\n- Clinical behavior and prognosis\n";
    out += "## VALIDATION\n- Every sentence is supported by a reference passage.\n- No hedging language.\n";
    return out;
  }

  static std::vector<std::string> flagged_phrases(const std::string& issues) {
    std::vector<std::string> out;
    for (const auto& item : text::bullet_items(issues)) {
      if (text::to_lower(item).rfind("error:", 0) != 0) continue;
      const auto a = item.find('"');
      const auto b = a == std::string::npos ? a : item.find('"', a + 1);
      if (b != std::string::npos) out.push_back(item.substr(a + 1, b - a - 1));
    }
    return out;
  }

  static std::string draft(const std::string& grounding, const std::string& issues) {
    const auto flagged = flagged_phrases(issues);
    std::vector<std::string> keep;
    for (auto& s : text::split_sentences(grounding_text(grounding))) {
      bool drop = false;
      for (const auto& p : flagged) drop = drop || text::contains_term(s, p);
      if (!drop) keep.push_back(std::move(s));
    }
    return text::join(keep, " ") + "\n";
  }

  static std::string tagged(const std::string& body) {
    std::string out;
    for (const auto& s : text::split_sentences(body)) {
      out += "[" + std::string(guess_stage(s)) + "] " + s + "\n";
    }
    return out;
  }
};

/// Replays canned responses. A JSON array is consumed in call order; a JSON
/// object maps lowercase role names to arrays consumed per role.
class ScriptedBackend final : public TextGenBackend {
 public:
  explicit ScriptedBackend(const nlohmann::json& script) {
    try {
      if (script.is_array()) {
        sequential_ = script.get<std::vector<std::string>>();
      } else if (script.is_object()) {
        by_role_ = script.get<std::map<std::string, std::vector<std::string>>>();
      } else {
        throw Error(ErrorCode::ConfigError, "scripted backend needs an array or object of responses");
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ConfigError, std::string("scripted backend: ") + e.what());
    }
  }

  static std::unique_ptr<ScriptedBackend> from_file(const std::string& path) {
    auto j = nlohmann::json::parse(read_file(path), nullptr, false);
    if (j.is_discarded()) throw Error(ErrorCode::ConfigError, "response file is not valid JSON: " + path);
    return std::make_unique<ScriptedBackend>(j);
  }

  std::string generate(const std::string& prompt, int, std::uint64_t) override {
    std::lock_guard lock(mu_);
    if (!by_role_.empty()) {
      const auto role = text::to_lower(prompt_role(prompt));
      auto it = by_role_.find(role);
      auto& pos = role_pos_[role];
      if (it == by_role_.end() || pos >= it->second.size()) {
        throw Error(ErrorCode::BackendFailure, "scripted backend exhausted for role '" + role + "'");
      }
      return it->second[pos++];
    }
    if (pos_ >= sequential_.size()) throw Error(ErrorCode::BackendFailure, "scripted backend exhausted");
    return sequential_[pos_++];
  }

  std::string name() const override { return "scripted"; }
  bool deterministic() const override { return true; }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    std::size_t n = pos_;
    for (const auto& [_, p] : role_pos_) n += p;
    return n;
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::string> sequential_;
  std::map<std::string, std::vector<std::string>> by_role_;
  std::size_t pos_ = 0;
  std::map<std::string, std::size_t> role_pos_;
};

/// Name -> factory lookup so runs can pick a backend from config.
class BackendRegistry {
 public:
  using Factory = std::function<std::unique_ptr<TextGenBackend>(const nlohmann::json& options)>;

  static BackendRegistry with_builtins() {
    BackendRegistry r;
    r.add("mock", [](const nlohmann::json&) { return std::make_unique<MockBackend>(); });
    r.add("scripted", [](const nlohmann::json& opts) -> std::unique_ptr<TextGenBackend> {
      if (opts.contains("responses") && opts.at("responses").is_string()) {
        return ScriptedBackend::from_file(opts.at("responses").get<std::string>());
      }
      if (opts.contains("responses")) return std::make_unique<ScriptedBackend>(opts.at("responses"));
      throw Error(ErrorCode::ConfigError, "scripted backend requires a 'responses' option");
    });
    return r;
  }

  void add(std::string name, Factory f) { factories_[std::move(name)] = std::move(f); }

  std::unique_ptr<TextGenBackend> create(const std::string& name, const nlohmann::json& options = {}) const {
    auto it = factories_.find(name);
    if (it == factories_.end()) throw Error(ErrorCode::ConfigError, "unknown backend '" + name + "'");
    return it->second(options);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : factories_) out.push_back(k);
    return out;
  }

 private:
  std::map<std::string, Factory> factories_;
};

}  // namespace gmat
