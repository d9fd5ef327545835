#include <gtest/gtest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "gmat/gmat.hpp"

using namespace gmat;

namespace {

const std::string kFixtures = GMAT_FIXTURES;
const std::vector<std::string> kRcc = {"KICH", "KIRC", "KIRP"};

SourceDocument doc(const std::string& name) {
  return {name, name, read_file(kFixtures + "/kb/" + name + ".txt"), name};
}

KnowledgeBase fixture_kb() {
  return KnowledgeBase::build({doc("renal_tumors"), doc("lung_tumors")}, kRcc, load_alias_table(kFixtures + "/aliases.json"),
                              300);
}

KnowledgeBase adversarial_kb() {
  return KnowledgeBase::build({doc("adversarial")}, kRcc, load_alias_table(kFixtures + "/aliases.json"), 300);
}

// Passes calls through and keeps every prompt.
class Recorder final : public TextGenBackend {
 public:
  explicit Recorder(TextGenBackend& inner) : inner_(inner) {}
  std::string generate(const std::string& prompt, int max_length, std::uint64_t seed) override {
    prompts.push_back(prompt);
    return inner_.generate(prompt, max_length, seed);
  }
  std::string name() const override { return "recorder"; }
  std::vector<std::string> prompts;

 private:
  TextGenBackend& inner_;
};

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::InvalidArgument;
}

const char* kPlan = "## SUMMARY\nOutline.\n## RULES\n- r\n## CLINICAL\n- c\n## VALIDATION\n- v\n";
const char* kFail = "## VERDICT\nFAIL\n## CORRECTED\nText.\n## ISSUES\n- error: inaccurate\n";

}  // namespace

TEST(Agents, PlanningWithMockIsCompleteAndRepeatable) {
  const auto kb = fixture_kb();
  MockBackend m1, m2;
  AgentPipeline a(kb, m1), b(kb, m2);
  const auto p = a.run_planning("KIRC");
  EXPECT_FALSE(p.structure_outline.empty());
  EXPECT_FALSE(p.analysis_rules.empty());
  EXPECT_FALSE(p.required_clinical_items.empty());
  EXPECT_FALSE(p.validation_steps.empty());
  EXPECT_EQ(p, b.run_planning("KIRC"));
}

TEST(Agents, PlanningWithoutTaggedChunksFails) {
  const auto kb = adversarial_kb();
  MockBackend m;
  AgentPipeline p(kb, m);
  EXPECT_EQ(code_of([&] { p.run_planning("KICH"); }), ErrorCode::NoGroundingChunks);
  EXPECT_EQ(code_of([&] { p.run_planning("LUAD"); }), ErrorCode::UnknownClass);
}

TEST(Agents, MalformedPlanTwiceWithOneRetryFails) {
  const auto kb = fixture_kb();
  ScriptedBackend s(nlohmann::json::array({"## SUMMARY\nonly this\n", "no sections at all", kPlan}));
  PipelineConfig cfg;
  cfg.max_retries = 1;
  AgentPipeline p(kb, s, cfg);
  EXPECT_EQ(code_of([&] { p.run_planning("KIRC"); }), ErrorCode::PlanParseFailure);
  EXPECT_EQ(s.calls(), 2u);
}

TEST(Agents, MalformedPlanThenValidPlanRecovers) {
  const auto kb = fixture_kb();
  ScriptedBackend s(nlohmann::json::array({"garbage", kPlan}));
  AgentPipeline p(kb, s);
  EXPECT_EQ(p.run_planning("KIRC").analysis_rules, std::vector<std::string>{"r"});
}

TEST(Agents, MockDraftEchoesGroundingSentences) {
  const auto kb = fixture_kb();
  MockBackend m;
  AgentPipeline p(kb, m);
  const auto draft = p.run_generate(p.run_planning("KIRC"));
  EXPECT_EQ(draft.revision, 0);
  for (const auto& c : kb.query("KIRC", p.config().grounding_budget_chars)) {
    for (const auto& s : text::split_sentences(c.text)) EXPECT_NE(draft.body.find(s), std::string::npos) << s;
  }
}

TEST(Agents, WhitespaceDraftIsGenerationEmpty) {
  const auto kb = fixture_kb();
  ScriptedBackend s(nlohmann::json{{"planning", {kPlan}}, {"generate", {"  \n\t "}}});
  AgentPipeline p(kb, s);
  const auto plan = p.run_planning("KIRC");
  EXPECT_EQ(code_of([&] { p.run_generate(plan); }), ErrorCode::GenerationEmpty);
}

TEST(Agents, GeneratePromptCarriesTopChunksWithinBudget) {
  const AliasTable aliases = {{"KIRC", {"clear cell", "ccRCC"}}};
  auto pad = [](std::string s) {
    while (s.size() < 200) s += " filler";
    s.resize(200);
    return s;
  };
  std::vector<KnowledgeChunk> chunks = {
      {"k#0000", "k", pad("KIRC alone"), {"KIRC"}, 0},
      {"k#0001", "k", pad("KIRC clear cell ccRCC"), {"KIRC"}, 0},
      {"k#0002", "k", pad("KIRC and clear cell"), {"KIRC"}, 0},
      {"k#0003", "k", pad("ccRCC only"), {"KIRC"}, 0},
  };
  const auto kb = KnowledgeBase::from_parts({"KIRC"}, chunks, aliases);
  PipelineConfig cfg;
  cfg.grounding_budget_chars = 500;
  MockBackend mock;
  Recorder rec(mock);
  AgentPipeline p(kb, rec, cfg);
  p.run_generate(p.run_planning("KIRC"));
  const auto& prompt = rec.prompts.back();

  // Oracle: scores 1, 3, 2, 1; two 200-char chunks fit in 500.
  std::vector<std::string> expect = {"k#0001", "k#0002"};
  std::vector<std::string> present;
  for (const auto& c : chunks)
    if (prompt.find(c.text) != std::string::npos) present.push_back(c.chunk_id);
  EXPECT_EQ(present, expect);
}

TEST(Agents, VerifyPassesGroundedDraft) {
  const auto kb = fixture_kb();
  MockBackend m;
  AgentPipeline p(kb, m);
  const auto chunks = kb.query("KIRC", 1000);
  const auto r = p.run_verify({"KIRC", text::split_sentences(chunks[0].text)[0], 0});
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.count(Severity::Error), 0u);
  EXPECT_EQ(r.count(Severity::Warning), 0u);
}

TEST(Agents, VerifyFlagsBannedPhrase) {
  const auto kb = fixture_kb();
  MockBackend m;
  AgentPipeline p(kb, m);
  const auto r = p.run_verify({"KIRC", "Clear cell carcinoma might be malignant.", 0});
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.count(Severity::Error), 1u);
}

TEST(Agents, VerifyWarnsOnExactlyTheUngroundedTerms) {
  const AliasTable aliases = {{"KIRC", {"clear cell"}}};
  const auto kb = KnowledgeBase::from_parts(
      {"KIRC"}, {{"c#0000", "c", "Clear cell tumor cells have abundant clear cytoplasm.", {"KIRC"}, 8}}, aliases);
  MockBackend m;
  AgentPipeline p(kb, m);
  const auto r = p.run_verify({"KIRC", "Tumor cells have abundant glycogen.", 0});
  // Hand enumeration: draft terms {tumor, cells, abundant, glycogen}; chunk and
  // alias terms {clear, cell, tumor, cells, abundant, cytoplasm, kirc}.
  ASSERT_EQ(r.count(Severity::Warning), 1u);
  EXPECT_EQ(r.issues.back().note, "ungrounded term \"glycogen\"");
  EXPECT_TRUE(r.passed);
}

TEST(Agents, VerifyParseFailureAfterRetries) {
  const auto kb = fixture_kb();
  ScriptedBackend s(nlohmann::json::array({"## VERDICT\nMAYBE\n## CORRECTED\nx\n", "nothing"}));
  AgentPipeline p(kb, s);
  EXPECT_EQ(code_of([&] { p.run_verify({"KIRC", "Clear cell.", 0}); }), ErrorCode::VerifyParseFailure);
}

TEST(Agents, FinalizeStripsMarkdown) {
  DescriptionRules rules;
  rules.min_sentences = 1;
  const auto list = finalize_sentences("KIRC", "## SENTENCES\n[general] **Clear cell** tumor.\n", rules);
  EXPECT_EQ(list.sentences, std::vector<std::string>{"Clear cell tumor."});
}

TEST(Agents, FinalizeRejectsUnapprovedReport) {
  const auto kb = fixture_kb();
  MockBackend m;
  AgentPipeline p(kb, m);
  VerificationReport r{"KIRC", false, "Body.", {}};
  EXPECT_EQ(code_of([&] { p.run_finalize(r, "KIRC"); }), ErrorCode::NotApproved);
}

TEST(Agents, FinalizeOrdersScrambledStagesStably) {
  const std::vector<std::pair<std::string, int>> lines = {
      {"clinical", 3}, {"molecular", 2}, {"general", 0}, {"microscopic", 1}, {"clinical", 3}, {"general", 0}};
  std::string body = "## SENTENCES\n";
  for (std::size_t i = 0; i < lines.size(); ++i) body += "[" + lines[i].first + "] Sentence " + std::to_string(i) + ".\n";
  DescriptionRules rules;
  const auto list = finalize_sentences("KIRC", body, rules);

  std::vector<std::size_t> order(lines.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return lines[a].second < lines[b].second; });
  ASSERT_EQ(list.sentences.size(), order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    EXPECT_EQ(list.sentences[i], "Sentence " + std::to_string(order[i]) + ".");
    EXPECT_EQ(static_cast<int>(list.stages[i]), lines[order[i]].second);
  }
}

TEST(Agents, FinalizeTooFewSentencesIsEmptyAfterCleanup) {
  EXPECT_EQ(code_of([&] { finalize_sentences("KIRC", "## SENTENCES\n**\n", {}); }), ErrorCode::EmptyAfterCleanup);
  EXPECT_EQ(code_of([&] { finalize_sentences("KIRC", "[general] One. Two.", {}); }), ErrorCode::EmptyAfterCleanup);
}

TEST(Agents, FinalizedSentencesAreCleanOnRandomOutputs) {
  Rng rng(5);
  const std::string alphabet = "abc def*#`|.  [general] [clinical]\n-";
  DescriptionRules rules;
  rules.min_sentences = 1;
  rules.max_sentence_chars = 40;
  int checked = 0;
  for (int t = 0; t < 500; ++t) {
    std::string raw;
    const auto n = rng.index(400);
    for (std::size_t i = 0; i < n; ++i) raw.push_back(alphabet[rng.index(alphabet.size())]);
    try {
      const auto list = finalize_sentences("X", raw, rules);
      ++checked;
      EXPECT_TRUE(check_class_list(list, rules).empty()) << raw;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::EmptyAfterCleanup);
    }
  }
  EXPECT_GT(checked, 100);
}

TEST(Agents, MockPipelineCoversRccWithNoRevisions) {
  const auto kb = fixture_kb();
  MockBackend m;
  AgentPipeline p(kb, m);
  const auto set = p.run_pipeline(kRcc);
  EXPECT_EQ(set.class_labels(), kRcc);
  for (const auto& l : kRcc) EXPECT_EQ(p.revisions().at(l), 0);
  ASSERT_TRUE(set.meta.has_value());
  EXPECT_EQ(set.meta->generator, "multi_agent");
  EXPECT_NO_THROW(validate(canonical_json(set)));
}

TEST(Agents, VerifyFailingEveryRevisionExceedsLimit) {
  const auto kb = fixture_kb();
  PipelineConfig cfg;
  cfg.max_revisions = 2;
  ScriptedBackend s(nlohmann::json{{"planning", {kPlan}},
                                   {"generate", {"Draft.", "Draft.", "Draft."}},
                                   {"verify", {kFail, kFail, kFail}}});
  AgentPipeline p(kb, s, cfg);
  EXPECT_EQ(code_of([&] { p.run_pipeline({"KIRC"}); }), ErrorCode::MaxRevisionsExceeded);
  EXPECT_EQ(s.calls(), 7u);
}

TEST(Agents, RevisionLoopFeedsIssuesBack) {
  const auto kb = fixture_kb();
  const std::string pass =
      "## VERDICT\nPASS\n## CORRECTED\nClear cell tumor. Clear cytoplasm. Renal mass. Clear cell carcinoma.\n## ISSUES\n(none)\n";
  ScriptedBackend s(nlohmann::json{{"planning", {kPlan}},
                                   {"generate", {"Draft.", "Draft two."}},
                                   {"verify", {kFail, pass}},
                                   {"finalize", {"## SENTENCES\n[general] A.\n[general] B.\n[clinical] C.\n[general] D.\n"}}});
  Recorder rec(s);
  AgentPipeline p(kb, rec);
  const auto set = p.run_pipeline({"KIRC"});
  EXPECT_EQ(p.revisions().at("KIRC"), 1);
  EXPECT_EQ(set.meta->revisions.at("KIRC"), 1);
  EXPECT_EQ(set.entries.at("KIRC").sentences, (std::vector<std::string>{"A.", "B.", "D.", "C."}));
  const auto second_generate = std::find_if(rec.prompts.rbegin(), rec.prompts.rend(),
                                            [](const auto& pr) { return prompt_role(pr) == kRoleGenerate; });
  ASSERT_NE(second_generate, rec.prompts.rend());
  EXPECT_NE(second_generate->find("## ISSUES\n- error: inaccurate"), std::string::npos);
}

TEST(Agents, PipelineIsByteIdenticalAcrossRunsAndScheduling) {
  const auto kb = fixture_kb();
  MockBackend m1, m2, m3;
  PipelineConfig par;
  par.parallel_classes = true;
  AgentPipeline a(kb, m1), b(kb, m2), c(kb, m3, par);
  const auto x = canonical_json(a.run_pipeline(kRcc));
  EXPECT_EQ(x, canonical_json(b.run_pipeline(kRcc)));
  const auto y = canonical_json(c.run_pipeline(kRcc));
  EXPECT_EQ(x, y);
  EXPECT_EQ(trace_jsonl(a.trace()), trace_jsonl(c.trace()));
}

TEST(Agents, TraceHasOneLinePerAgentCall) {
  const auto kb = fixture_kb();
  MockBackend m;
  AgentPipeline p(kb, m);
  p.run_pipeline({"KIRC"});
  ASSERT_EQ(p.trace().size(), 4u);
  const std::vector<std::string> roles = {"planning", "generate", "verify", "finalize"};
  for (std::size_t i = 0; i < roles.size(); ++i) EXPECT_EQ(p.trace()[i].role, roles[i]);
  const auto lines = text::split_lines(trace_jsonl(p.trace()));
  for (const auto& l : lines) {
    if (l.empty()) continue;
    const auto j = nlohmann::json::parse(l);
    for (const auto* k : {"class", "role", "revision", "prompt_hash", "output_hash"}) EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_EQ(j["prompt_hash"].get<std::string>().size(), 64u);
  }
}

TEST(Agents, SingleAgentKeepsWhatVerifyRemoves) {
  const auto kb = adversarial_kb();
  MockBackend m1, m2;
  AgentPipeline a(kb, m1), b(kb, m2);
  const auto multi = a.run_pipeline({"KIRC"});
  const auto single = b.run_single_agent({"KIRC"});
  EXPECT_EQ(single.meta->generator, "single_agent");
  EXPECT_NE(multi.entries.at("KIRC").sentences, single.entries.at("KIRC").sentences);
  auto has = [](const DescriptionSet& s) { return canonical_json(s).find("might be") != std::string::npos; };
  EXPECT_FALSE(has(multi));
  EXPECT_TRUE(has(single));
  EXPECT_EQ(a.revisions().at("KIRC"), 1);
}

TEST(Agents, SingleAgentEmptyClassListGivesEmptySet) {
  const auto kb = fixture_kb();
  MockBackend m;
  AgentPipeline p(kb, m);
  EXPECT_TRUE(p.run_single_agent({}).entries.empty());
}

TEST(Agents, SentenceCountsWithinBoundsOnAllFixtures) {
  const PipelineConfig cfg;
  for (const auto& kb : {fixture_kb(), adversarial_kb()}) {
    for (bool multi : {true, false}) {
      for (const auto& label : kRcc) {
        if (kb.tagged_count(label) == 0) continue;
        MockBackend m;
        AgentPipeline p(kb, m, cfg);
        const auto set = multi ? p.run_pipeline({label}) : p.run_single_agent({label});
        const auto n = set.entries.at(label).sentences.size();
        EXPECT_GE(n, cfg.rules.min_sentences);
        EXPECT_LE(n, cfg.rules.max_sentences);
      }
    }
  }
}

TEST(Agents, RegistryBuildsBuiltinsByName) {
  const auto r = BackendRegistry::with_builtins();
  EXPECT_EQ(r.names(), (std::vector<std::string>{"mock", "scripted"}));
  EXPECT_EQ(r.create("mock")->name(), "mock");
  auto s = r.create("scripted", {{"responses", {"one"}}});
  EXPECT_EQ(s->generate("x", 10, 0), "one");
  EXPECT_EQ(code_of([&] { s->generate("x", 10, 0); }), ErrorCode::BackendFailure);
  EXPECT_EQ(code_of([&] { r.create("vendor"); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([&] { r.create("scripted"); }), ErrorCode::ConfigError);
}
