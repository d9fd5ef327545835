#pragma once

#include <algorithm>
#include <cstdint>
#include <future>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "gmat/backend.hpp"
#include "gmat/description_store.hpp"
#include "gmat/error.hpp"
#include "gmat/hashing.hpp"
#include "gmat/knowledge_base.hpp"
#include "gmat/rng.hpp"
#include "gmat/text.hpp"

namespace gmat {

struct PlanDocument {
  std::string class_label;
  std::string structure_outline;
  std::vector<std::string> analysis_rules;
  std::vector<std::string> required_clinical_items;
  std::vector<std::string> validation_steps;

  bool operator==(const PlanDocument&) const = default;
};

struct DraftDescription {
  std::string class_label;
  std::string body;
  int revision = 0;
};

enum class Severity { Error, Warning };

struct Issue {
  Severity severity = Severity::Warning;
  std::string note;
  bool operator==(const Issue&) const = default;
};

struct VerificationReport {
  std::string class_label;
  bool passed = false;
  std::string corrected_body;
  std::vector<Issue> issues;

  std::size_t count(Severity s) const {
    return static_cast<std::size_t>(std::count_if(issues.begin(), issues.end(), [&](const Issue& i) { return i.severity == s; }));
  }
};

struct PipelineConfig {
  std::size_t grounding_budget_chars = 1200;
  int max_revisions = 2;
  int max_retries = 1;
  int max_length = 8192;
  std::uint64_t seed = 0;
  DescriptionRules rules;
  std::vector<std::string> banned_phrases = {"might be", "unclear"};
  std::string created = "1970-01-01T00:00:00Z";
  bool parallel_classes = false;
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"grounding_budget_chars", c.grounding_budget_chars},
          {"max_revisions", c.max_revisions},
          {"max_retries", c.max_retries},
          {"max_length", c.max_length},
          {"seed", c.seed},
          {"min_sentences", c.rules.min_sentences},
          {"max_sentences", c.rules.max_sentences},
          {"max_sentence_chars", c.rules.max_sentence_chars},
          {"banned_phrases", c.banned_phrases}};
}

/// One line of the pipeline trace log.
struct TraceRecord {
  std::string class_label;
  std::string role;
  int revision = 0;
  std::string prompt_hash;
  std::string output_hash;
};

inline nlohmann::json to_json(const TraceRecord& r) {
  return {{"class", r.class_label},
          {"role", r.role},
          {"revision", r.revision},
          {"prompt_hash", r.prompt_hash},
          {"output_hash", r.output_hash}};
}

inline std::string trace_jsonl(const std::vector<TraceRecord>& trace) {
  std::string out;
  for (const auto& r : trace) out += to_json(r).dump() + "\n";
  return out;
}

namespace detail {

inline const std::set<std::string>& stopwords() {
  static const std::set<std::string> kWords = {
      "with", "that", "this", "from", "have", "has", "been", "were", "which", "their", "there", "these", "those",
      "into", "than", "then", "they", "them", "also", "more", "most", "some", "such", "when", "where", "while",
      "other", "over", "under", "between", "within", "without", "about", "often", "usually", "typically",
      "commonly", "frequently", "show", "shows", "showing", "seen", "found", "composed", "characterized",
      "include", "includes", "including", "present", "presents", "may", "can", "does", "each", "both", "only",
      "very", "well", "much", "many", "less", "least", "like", "being", "your", "will", "would", "should"};
  return kWords;
}

/// Lowercase content words (4+ letters, not a stopword, not numeric).
inline std::set<std::string> key_terms(std::string_view s) {
  std::set<std::string> out;
  for (auto& w : text::words(s)) {
    if (w.size() < 4 || stopwords().contains(w)) continue;
    if (std::all_of(w.begin(), w.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) continue;
    out.insert(std::move(w));
  }
  return out;
}

inline std::string strip_markdown(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (kMarkdownMarkers.find(c) != std::string_view::npos) continue;
    out.push_back(c);
  }
  auto t = std::string(text::trim(out));
  if (t.size() >= 2 && (t[0] == '-' || t[0] == '+') && t[1] == ' ') t.erase(0, 2);
  return text::collapse_spaces(t);
}

inline std::string clamp_sentence(std::string s, std::size_t max_chars) {
  if (s.size() <= max_chars) return s;
  std::size_t cut = max_chars - 1;
  while (cut > 0 && s[cut] != ' ') --cut;
  if (cut == 0) cut = max_chars - 1;
  while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
  s.resize(cut);
  while (!s.empty() && (s.back() == ' ' || s.back() == ',' || s.back() == ';' || s.back() == ':')) s.pop_back();
  s.push_back('.');
  return s;
}

}  // namespace detail

/// Cleans stage-tagged backend output ("[stage] sentence" per line) into a
/// ClassDescriptionList: markdown stripped, sentences split and clamped, then
/// stably ordered general -> microscopic -> molecular -> clinical -> untagged.
inline ClassDescriptionList finalize_sentences(const std::string& class_label, const std::string& backend_output,
                                               const DescriptionRules& rules) {
  const auto sections = text::parse_sections(backend_output);
  auto it = sections.find("SENTENCES");
  const std::string body = it == sections.end() ? backend_output : it->second;

  std::vector<std::pair<Stage, std::string>> tagged;
  for (const auto& raw : text::split_lines(body)) {
    std::string_view line = text::trim(raw);
    Stage stage = Stage::Unknown;
    if (!line.empty() && line.front() == '[') {
      const auto close = line.find(']');
      if (close != std::string_view::npos) {
        stage = parse_stage(line.substr(1, close - 1));
        line = text::trim(line.substr(close + 1));
      }
    }
    for (const auto& s : text::split_sentences(detail::strip_markdown(line))) {
      auto cleaned = detail::clamp_sentence(detail::strip_markdown(s), rules.max_sentence_chars);
      if (!text::is_blank(cleaned)) tagged.emplace_back(stage, std::move(cleaned));
    }
  }
  std::stable_sort(tagged.begin(), tagged.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  if (tagged.size() > rules.max_sentences) tagged.resize(rules.max_sentences);
  if (tagged.empty()) throw Error(ErrorCode::EmptyAfterCleanup, "no sentences left for '" + class_label + "'");
  if (tagged.size() < rules.min_sentences) {
    throw Error(ErrorCode::EmptyAfterCleanup, "only " + std::to_string(tagged.size()) + " sentences left for '" +
                                                  class_label + "', need " + std::to_string(rules.min_sentences));
  }
  ClassDescriptionList list;
  list.class_label = class_label;
  for (auto& [stage, s] : tagged) {
    list.stages.push_back(stage);
    list.sentences.push_back(std::move(s));
  }
  return list;
}

/// The four-role description workflow (plan, generate, verify, finalize) and
/// its single-agent ablation, over any TextGenBackend.
class AgentPipeline {
 public:
  AgentPipeline(const KnowledgeBase& kb, TextGenBackend& backend, PipelineConfig config = {})
      : kb_(kb), backend_(backend), config_(std::move(config)) {}

  const PipelineConfig& config() const { return config_; }
  const std::vector<TraceRecord>& trace() const { return trace_; }
  const std::map<std::string, int>& revisions() const { return revisions_; }

  PlanDocument run_planning(const std::string& class_label) { return run_planning(class_label, trace_); }

  DraftDescription run_generate(const PlanDocument& plan, const std::vector<Issue>& feedback = {}, int revision = 0) {
    return run_generate(plan, feedback, revision, trace_);
  }

  VerificationReport run_verify(const DraftDescription& draft) { return run_verify(draft, trace_); }

  ClassDescriptionList run_finalize(const VerificationReport& report, const std::string& class_label) {
    return run_finalize(report, class_label, trace_);
  }

  /// Full workflow for every class; verification failures loop back into
  /// generation with the issue list until approval or max_revisions.
  DescriptionSet run_pipeline(const std::vector<std::string>& class_labels) {
    auto results = for_each_class(class_labels, [this](const std::string& label, std::vector<TraceRecord>& trace) {
      return describe_class(label, trace);
    });
    DescriptionSet set;
    set.meta = meta("multi_agent");
    for (auto& [label, r] : results) {
      revisions_[label] = r.revision;
      set.meta->revisions[label] = r.revision;
      set.entries[label] = std::move(r.list);
    }
    return set;
  }

  /// Ablation: one prompt per class from grounding straight to a sentence
  /// list, with no plan and no review.
  DescriptionSet run_single_agent(const std::vector<std::string>& class_labels) {
    auto results = for_each_class(class_labels, [this](const std::string& label, std::vector<TraceRecord>& trace) {
      return ClassResult{single_agent_class(label, trace), 0};
    });
    DescriptionSet set;
    set.meta = meta("single_agent");
    for (auto& [label, r] : results) set.entries[label] = std::move(r.list);
    return set;
  }

  std::string config_hash() const { return sha256_hex(to_json(config_).dump()); }

 private:
  struct ClassResult {
    ClassDescriptionList list;
    int revision = 0;
  };

  DescriptionMeta meta(const std::string& generator) const {
    DescriptionMeta m;
    m.generator = generator;
    m.created = config_.created;
    m.config_hash = config_hash();
    return m;
  }

  template <typename Fn>
  std::map<std::string, ClassResult> for_each_class(const std::vector<std::string>& labels, Fn fn) {
    std::map<std::string, ClassResult> results;
    std::map<std::string, std::vector<TraceRecord>> traces;
    if (config_.parallel_classes && backend_.concurrent_safe() && labels.size() > 1) {
      std::map<std::string, std::future<ClassResult>> futures;
      for (const auto& l : labels) {
        auto& tr = traces[l];
        futures.emplace(l, std::async(std::launch::async, [&fn, l, &tr] { return fn(l, tr); }));
      }
      for (auto& [l, f] : futures) results.emplace(l, f.get());
    } else {
      for (const auto& l : labels) results.emplace(l, fn(l, traces[l]));
    }
    for (auto& [_, t] : traces) trace_.insert(trace_.end(), t.begin(), t.end());
    return results;
  }

  std::uint64_t call_seed(const std::string& label, std::string_view role, int revision, int attempt) const {
    const auto key = label + "|" + std::string(role) + "|" + std::to_string(revision) + "|" + std::to_string(attempt);
    return derive_seed(config_.seed, seeded_hash64(key, 0));
  }

  std::string call(const std::string& label, std::string_view role, int revision, int attempt,
                   const std::string& prompt, std::vector<TraceRecord>& trace) {
    auto out = backend_.generate(prompt, config_.max_length, call_seed(label, role, revision, attempt));
    trace.push_back({label, text::to_lower(role), revision, sha256_hex(prompt), sha256_hex(out)});
    return out;
  }

  std::vector<KnowledgeChunk> grounding(const std::string& label, std::size_t budget) const {
    auto chunks = kb_.query(label, budget);
    if (chunks.empty()) {
      throw Error(ErrorCode::NoGroundingChunks, "no knowledge base chunks within budget for '" + label + "'");
    }
    return chunks;
  }

  static std::string grounding_section(const std::vector<KnowledgeChunk>& chunks) {
    std::string out = "## GROUNDING\n";
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      if (i) out += "---\n";
      out += chunks[i].text + "\n";
    }
    return out;
  }

  static std::string plan_text(const PlanDocument& p) {
    std::string out = "### Summary\n" + p.structure_outline + "\n### Rules\n";
    for (const auto& r : p.analysis_rules) out += "- " + r + "\n";
    out += "### Clinical items\n";
    for (const auto& r : p.required_clinical_items) out += "- " + r + "\n";
    out += "### Validation\n";
    for (const auto& r : p.validation_steps) out += "- " + r + "\n";
    return out;
  }

  static std::string issue_line(const Issue& i) {
    return std::string(i.severity == Severity::Error ? "error: " : "warning: ") + i.note;
  }

  PlanDocument run_planning(const std::string& label, std::vector<TraceRecord>& trace) {
    if (!kb_.has_class(label)) throw Error(ErrorCode::UnknownClass, "class '" + label + "' is not in the knowledge base");
    if (kb_.tagged_count(label) == 0) {
      throw Error(ErrorCode::NoGroundingChunks, "class '" + label + "' has no tagged chunks");
    }
    const auto chunks = grounding(label, config_.grounding_budget_chars);
    std::string prompt = "ROLE: " + std::string(kRolePlanning) + "\n## CLASS\n" + label + "\n" +
                         grounding_section(chunks) +
                         "## INSTRUCTIONS\nWrite a markdown plan for describing this cancer type with exactly these "
                         "sections: ## SUMMARY (structure outline), ## RULES (cell and tissue analysis rules, one "
                         "bullet each), ## CLINICAL (required clinical information), ## VALIDATION (quality checks).\n";
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      const auto out = call(label, kRolePlanning, 0, attempt, prompt, trace);
      const auto s = text::parse_sections(out);
      auto get = [&](const char* k) { auto it = s.find(k); return it == s.end() ? std::string() : it->second; };
      PlanDocument plan;
      plan.class_label = label;
      plan.structure_outline = get("SUMMARY");
      plan.analysis_rules = text::bullet_items(get("RULES"));
      plan.required_clinical_items = text::bullet_items(get("CLINICAL"));
      plan.validation_steps = text::bullet_items(get("VALIDATION"));
      if (!plan.structure_outline.empty() && !plan.analysis_rules.empty() && !plan.required_clinical_items.empty() &&
          !plan.validation_steps.empty()) {
        return plan;
      }
    }
    throw Error(ErrorCode::PlanParseFailure, "planning output for '" + label + "' lacked required sections after " +
                                                 std::to_string(config_.max_retries + 1) + " attempt(s)");
  }

  DraftDescription run_generate(const PlanDocument& plan, const std::vector<Issue>& feedback, int revision,
                                std::vector<TraceRecord>& trace) {
    const auto chunks = grounding(plan.class_label, config_.grounding_budget_chars);
    std::string prompt = "ROLE: " + std::string(kRoleGenerate) + "\n## CLASS\n" + plan.class_label + "\n## PLAN\n" +
                         plan_text(plan) + grounding_section(chunks);
    if (!feedback.empty()) {
      prompt += "## ISSUES\n";
      for (const auto& i : feedback) prompt += "- " + issue_line(i) + "\n";
    }
    prompt += "## INSTRUCTIONS\nFollow the plan and write the class description as prose under ## DRAFT, using only "
              "facts from the grounding passages and resolving every listed issue.\n";
    const auto out = call(plan.class_label, kRoleGenerate, revision, 0, prompt, trace);
    const auto s = text::parse_sections(out);
    auto it = s.find("DRAFT");
    std::string body(text::trim(it == s.end() ? std::string_view(out) : std::string_view(it->second)));
    if (body.empty()) throw Error(ErrorCode::GenerationEmpty, "generate agent returned no text for '" + plan.class_label + "'");
    return {plan.class_label, std::move(body), revision};
  }

  /// Mechanical checks on the text that will be finalized: banned phrases are
  /// errors, content words absent from every grounding chunk are warnings.
  std::vector<Issue> mechanical_checks(const std::string& label, const std::string& body) const {
    std::vector<Issue> issues;
    const auto sentences = text::split_sentences(body);
    for (const auto& s : sentences) {
      for (const auto& phrase : config_.banned_phrases) {
        if (text::contains_term(s, phrase)) {
          issues.push_back({Severity::Error, "banned phrase \"" + phrase + "\" in: " + s});
        }
      }
    }
    std::set<std::string> grounded;
    for (const auto& c : kb_.query(label, kb_.total_chars() + 1)) {
      auto t = detail::key_terms(c.text);
      grounded.insert(t.begin(), t.end());
    }
    for (const auto& term : class_terms(label, kb_.aliases())) {
      auto t = detail::key_terms(term);
      grounded.insert(t.begin(), t.end());
    }
    std::set<std::string> ungrounded;
    for (const auto& s : sentences) {
      for (const auto& t : detail::key_terms(s))
        if (!grounded.contains(t)) ungrounded.insert(t);
    }
    for (const auto& t : ungrounded) issues.push_back({Severity::Warning, "ungrounded term \"" + t + "\""});
    return issues;
  }

  VerificationReport run_verify(const DraftDescription& draft, std::vector<TraceRecord>& trace) {
    require(!text::is_blank(draft.body), ErrorCode::InvalidArgument, "draft body is empty");
    const auto chunks = grounding(draft.class_label, config_.grounding_budget_chars);
    const std::string prompt =
        "ROLE: " + std::string(kRoleVerify) + "\n## CLASS\n" + draft.class_label + "\n## DRAFT\n" + draft.body + "\n" +
        grounding_section(chunks) +
        "## INSTRUCTIONS\nReview the draft for medical accuracy, completeness and consistent terminology. Reply with "
        "## VERDICT (PASS or FAIL), ## CORRECTED (the corrected description) and ## ISSUES (one '- error: ...' or "
        "'- warning: ...' per line, or (none)).\n";
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      const auto out = call(draft.class_label, kRoleVerify, draft.revision, attempt, prompt, trace);
      const auto s = text::parse_sections(out);
      auto verdict = s.find("VERDICT");
      auto corrected = s.find("CORRECTED");
      if (verdict == s.end() || corrected == s.end() || text::is_blank(corrected->second)) continue;
      const auto v = text::to_lower(text::trim(verdict->second));
      if (v != "pass" && v != "fail") continue;

      VerificationReport report;
      report.class_label = draft.class_label;
      report.corrected_body = corrected->second;
      if (auto it = s.find("ISSUES"); it != s.end()) {
        for (const auto& item : text::bullet_items(it->second)) {
          const auto l = text::to_lower(item);
          if (l.rfind("error:", 0) == 0) {
            report.issues.push_back({Severity::Error, std::string(text::trim(item.substr(6)))});
          } else if (l.rfind("warning:", 0) == 0) {
            report.issues.push_back({Severity::Warning, std::string(text::trim(item.substr(8)))});
          }
        }
      }
      auto mech = mechanical_checks(draft.class_label, report.corrected_body);
      report.issues.insert(report.issues.end(), mech.begin(), mech.end());
      report.passed = v == "pass" && report.count(Severity::Error) == 0;
      return report;
    }
    throw Error(ErrorCode::VerifyParseFailure, "verify output for '" + draft.class_label + "' could not be parsed");
  }

  ClassDescriptionList run_finalize(const VerificationReport& report, const std::string& label,
                                    std::vector<TraceRecord>& trace) {
    if (!report.passed) throw Error(ErrorCode::NotApproved, "description for '" + label + "' was not approved");
    const std::string prompt =
        "ROLE: " + std::string(kRoleFinalize) + "\n## CLASS\n" + label + "\n## DESCRIPTION\n" + report.corrected_body +
        "\n## INSTRUCTIONS\nConvert the description into short plain clinical sentences under ## SENTENCES, one per "
        "line, each prefixed with its stage tag: [general], [microscopic], [molecular] or [clinical]. Remove all "
        "markdown.\n";
    return finalize_sentences(label, call(label, kRoleFinalize, 0, 0, prompt, trace), config_.rules);
  }

  ClassResult describe_class(const std::string& label, std::vector<TraceRecord>& trace) {
    const auto plan = run_planning(label, trace);
    std::vector<Issue> feedback;
    for (int revision = 0; revision <= config_.max_revisions; ++revision) {
      const auto draft = run_generate(plan, feedback, revision, trace);
      const auto report = run_verify(draft, trace);
      if (report.passed) return {run_finalize(report, label, trace), revision};
      feedback = report.issues;
    }
    throw Error(ErrorCode::MaxRevisionsExceeded, label);
  }

  ClassDescriptionList single_agent_class(const std::string& label, std::vector<TraceRecord>& trace) {
    if (!kb_.has_class(label)) throw Error(ErrorCode::UnknownClass, "class '" + label + "' is not in the knowledge base");
    const auto chunks = grounding(label, config_.grounding_budget_chars);
    const std::string prompt =
        "ROLE: " + std::string(kRoleSingle) + "\n## CLASS\n" + label + "\n" + grounding_section(chunks) +
        "## INSTRUCTIONS\nExtract a list of short clinical sentences describing this class under ## SENTENCES, one "
        "per line, each prefixed with [general], [microscopic], [molecular] or [clinical].\n";
    const auto out = call(label, kRoleSingle, 0, 0, prompt, trace);
    if (text::is_blank(out)) throw Error(ErrorCode::GenerationEmpty, "single agent returned no text for '" + label + "'");
    return finalize_sentences(label, out, config_.rules);
  }

  const KnowledgeBase& kb_;
  TextGenBackend& backend_;
  PipelineConfig config_;
  std::vector<TraceRecord> trace_;
  std::map<std::string, int> revisions_;
};

}  // namespace gmat
