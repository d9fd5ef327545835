// gmat: command-line entry point for description generation, synthetic data,
// training and evaluation. Commands exchange data through files only.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gmat/gmat.hpp"

namespace fs = std::filesystem;
using namespace gmat;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

struct CommonFlags {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run config");
  cmd->add_option("--seed", f.seeds, "seed(s); overrides the config seed list")->delimiter(',');
  cmd->add_option("--out", f.out, "output file or directory");
}

RunConfig resolve(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) cfg = load_run_config(f.config);
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  if (!f.out.empty()) cfg.out = f.out;
  return cfg;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create directory " + dir.string() + ": " + ec.message());
}

void ensure_parent(const std::string& file) {
  const auto parent = fs::path(file).parent_path();
  if (!parent.empty()) ensure_dir(parent);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s + ",") {
    if (c == ',') {
      auto t = text::trim(cur);
      if (!t.empty()) out.emplace_back(t);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  return out;
}

/// Description lists feeding the model may hold as few sentences as there
/// are facets, so the loader only insists on one.
DescriptionSet load_model_descriptions(const std::string& path) {
  DescriptionRules rules;
  rules.min_sentences = 1;
  return load_descriptions(path, rules);
}

void write_report(const EvalReport& rep, const fs::path& dir) {
  ensure_dir(dir);
  write_file((dir / "report.json").string(), report_json(rep));
  const auto table = report_table(rep);
  write_file((dir / "report.txt").string(), table);
  std::cout << table;
}

// ---------------------------------------------------------------------------
// kb-ingest
// ---------------------------------------------------------------------------

struct KbIngestArgs {
  CommonFlags common;
  std::vector<std::string> inputs;
  std::string labels;
  std::string aliases;
  std::optional<std::size_t> chunk_size;
};

int cmd_kb_ingest(const KbIngestArgs& a) {
  auto cfg = resolve(a.common);
  if (!a.labels.empty()) cfg.class_labels = split_list(a.labels);
  if (!a.aliases.empty()) cfg.aliases = a.aliases;
  if (a.chunk_size) cfg.chunk_size = *a.chunk_size;
  if (cfg.class_labels.empty()) throw Error(ErrorCode::ConfigError, "kb-ingest needs --labels or class_labels in the config");
  require_paths_exist(a.inputs);
  require_paths_exist({cfg.aliases});

  std::vector<SourceDocument> docs;
  for (const auto& path : a.inputs) {
    SourceDocument d;
    d.doc_id = fs::path(path).stem().string();
    d.title = d.doc_id;
    d.body = read_file(path);
    d.provenance = fs::path(path).filename().string();
    docs.push_back(std::move(d));
  }
  const AliasTable aliases = cfg.aliases.empty() ? AliasTable{} : load_alias_table(cfg.aliases);
  const auto kb = KnowledgeBase::build(docs, cfg.class_labels, aliases, cfg.chunk_size);
  const auto out = cfg.out == "out" ? std::string("kb.json") : cfg.out;
  ensure_parent(out);
  save_knowledge_base(kb, out);
  std::printf("%zu chunks from %zu documents -> %s\n", kb.chunks().size(), docs.size(), out.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// generate / ablate helpers
// ---------------------------------------------------------------------------

struct BackendArgs {
  std::string backend = "mock";
  std::string responses;
};

std::unique_ptr<TextGenBackend> make_backend(const BackendArgs& b) {
  nlohmann::json opts = nlohmann::json::object();
  if (!b.responses.empty()) {
    require_paths_exist({b.responses});
    opts["responses"] = b.responses;
  }
  return BackendRegistry::with_builtins().create(b.backend, opts);
}

DescriptionSet run_generation(const KnowledgeBase& kb, const RunConfig& cfg, const BackendArgs& b, const std::string& mode,
                              const std::vector<std::string>& labels, std::vector<TraceRecord>* trace) {
  auto backend = make_backend(b);
  auto pc = cfg.pipeline;
  pc.seed = cfg.seeds.front();
  AgentPipeline pipeline(kb, *backend, pc);
  DescriptionSet set;
  if (mode == "multi") {
    set = pipeline.run_pipeline(labels);
  } else if (mode == "single") {
    set = pipeline.run_single_agent(labels);
  } else {
    throw Error(ErrorCode::ConfigError, "--mode must be multi or single");
  }
  if (trace) *trace = pipeline.trace();
  return set;
}

struct GenerateArgs {
  CommonFlags common;
  std::string kb;
  std::string mode = "multi";
  BackendArgs backend;
  std::string trace;
  std::string labels;
};

int cmd_generate(const GenerateArgs& a) {
  const auto cfg = resolve(a.common);
  require_paths_exist({a.kb});
  const auto kb = load_knowledge_base(a.kb);
  const auto labels = a.labels.empty() ? kb.class_labels() : split_list(a.labels);
  std::vector<TraceRecord> trace;
  const auto set = run_generation(kb, cfg, a.backend, a.mode, labels, &trace);
  const auto out = cfg.out == "out" ? std::string("descriptions.json") : cfg.out;
  ensure_parent(out);
  save_descriptions(set, out);
  if (!a.trace.empty()) {
    ensure_parent(a.trace);
    write_file(a.trace, trace_jsonl(trace));
  }
  std::size_t n = 0;
  for (const auto& [_, l] : set.entries) n += l.sentences.size();
  std::printf("%zu classes, %zu sentences (%s) -> %s\n", set.entries.size(), n, a.mode.c_str(), out.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

struct ValidateArgs {
  CommonFlags common;
  std::string file;
  std::optional<std::size_t> min_sentences;
};

int cmd_validate(const ValidateArgs& a) {
  const auto cfg = resolve(a.common);
  auto rules = cfg.pipeline.rules;
  if (a.min_sentences) rules.min_sentences = *a.min_sentences;
  const auto raw = read_file(a.file);
  try {
    const auto set = validate(raw, rules);
    std::printf("ok: %zu classes\n", set.entries.size());
    return kExitOk;
  } catch (const ValidationError& e) {
    for (const auto& v : e.violations()) {
      std::printf("violation class=%s sentence=%d rule=%s\n", v.class_label.c_str(), v.sentence_index, v.rule.c_str());
    }
    throw;
  }
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthArgs {
  CommonFlags common;
  std::string codebook;
};

int cmd_synth(const SynthArgs& a) {
  auto cfg = resolve(a.common);
  auto spec = cfg.synth;
  spec.seed = cfg.seeds.front();
  std::optional<DescriptionSet> codebook;
  if (!a.codebook.empty()) codebook = load_model_descriptions(a.codebook);
  const TextEncoder encoder(cfg.encoder);
  const auto ds = synth_dataset(spec, encoder, codebook ? &*codebook : nullptr);
  const fs::path dir = cfg.out;
  ensure_dir(dir);
  save_dataset(ds.bags, dir);
  save_descriptions(ds.descriptions, (dir / "descriptions.json").string());
  write_file((dir / "single_descriptions.json").string(), to_json(as_single(ds.descriptions)).dump(2) + "\n");
  write_file((dir / "synth_spec.json").string(), to_json(spec).dump(2) + "\n");
  std::printf("%zu slides, %zu classes -> %s\n", ds.bags.size(), ds.class_names.size(), dir.string().c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train / eval
// ---------------------------------------------------------------------------

struct ModelArgs {
  CommonFlags common;
  std::string manifest;
  std::string descriptions;
  std::optional<int> epochs;
  std::optional<double> lr;
};

RunConfig resolve_model(const ModelArgs& a) {
  auto cfg = resolve(a.common);
  if (!a.manifest.empty()) cfg.manifest = a.manifest;
  if (!a.descriptions.empty()) cfg.descriptions = a.descriptions;
  if (a.epochs) cfg.train.max_epochs = *a.epochs;
  if (a.lr) cfg.train.lr = *a.lr;
  if (cfg.manifest.empty()) throw Error(ErrorCode::ConfigError, "need --manifest or manifest in the config");
  if (cfg.descriptions.empty()) throw Error(ErrorCode::ConfigError, "need --descriptions or descriptions in the config");
  require_paths_exist({cfg.manifest, cfg.descriptions});
  return cfg;
}

std::string checkpoint_name(std::uint64_t seed) { return "checkpoint_s" + std::to_string(seed) + ".gckpt"; }

int feature_dim(const std::vector<Bag>& bags) {
  if (bags.empty()) throw Error(ErrorCode::NoTrainData, "dataset has no slides");
  return static_cast<int>(bags.front().features_5x.cols());
}

struct TrainedRun {
  std::uint64_t seed;
  MetricTriple test;
};

/// Trains one model per seed on a shared patient split and scores each on
/// the test split.
std::vector<TrainedRun> train_seeds(const std::vector<Bag>& bags, const DescriptionSet& descriptions, const RunConfig& cfg,
                                    const fs::path& dir) {
  const TextEncoder encoder(cfg.encoder);
  const auto banks = shared_banks(make_text_bank(descriptions, encoder));
  const auto split = patient_split(bags, cfg.split, cfg.seeds.front());
  write_file((dir / "split.json").string(), to_json(split).dump(2) + "\n");
  const auto train_bags = select_bags(bags, split.train);
  const auto val_bags = select_bags(bags, split.val);
  const auto test_bags = select_bags(bags, split.test);
  const auto hash = config_hash(cfg);
  std::vector<TrainedRun> runs;
  for (auto seed : cfg.seeds) {
    auto mc = cfg.model;
    mc.seed = seed;
    auto tc = cfg.train;
    tc.seed = seed;
    const auto init = init_params(mc, feature_dim(bags), encoder.dim());
    const auto res = train(train_bags, val_bags, banks, init, tc);
    save_checkpoint(res.params, (dir / checkpoint_name(seed)).string(), hash, res.best_epoch);
    write_file((dir / ("train_log_s" + std::to_string(seed) + ".jsonl")).string(), log_jsonl(res.log));
    const auto m = evaluate(test_bags, banks, res.params);
    std::printf("seed %llu: best epoch %d of %zu, test auc %.4f f1 %.4f acc %.4f\n",
                static_cast<unsigned long long>(seed), res.best_epoch, res.log.size(), m.auc, m.f1, m.acc);
    runs.push_back({seed, m});
  }
  return runs;
}

int cmd_train(const ModelArgs& a) {
  const auto cfg = resolve_model(a);
  const auto bags = load_dataset(cfg.manifest);
  const auto descriptions = load_model_descriptions(cfg.descriptions);
  const fs::path dir = cfg.out;
  ensure_dir(dir);
  write_file((dir / "run_config.json").string(), to_json(cfg).dump(2) + "\n");
  train_seeds(bags, descriptions, cfg, dir);
  return kExitOk;
}

struct EvalArgs {
  ModelArgs model;
  std::string checkpoints;
};

int cmd_eval(const EvalArgs& a) {
  const auto cfg = resolve_model(a.model);
  if (a.checkpoints.empty()) throw Error(ErrorCode::ConfigError, "eval needs --checkpoints <train output dir>");
  const fs::path ck_dir = a.checkpoints;
  require_paths_exist({(ck_dir / "split.json").string()});
  const auto bags = load_dataset(cfg.manifest);
  const auto split = split_from_json(nlohmann::json::parse(read_file((ck_dir / "split.json").string())));
  const auto test_bags = select_bags(bags, split.test);
  const TextEncoder encoder(cfg.encoder);
  const auto banks = shared_banks(make_text_bank(load_model_descriptions(cfg.descriptions), encoder));
  std::vector<MetricTriple> runs;
  for (auto seed : cfg.seeds) {
    const auto path = (ck_dir / checkpoint_name(seed)).string();
    require_paths_exist({path});
    runs.push_back(evaluate(test_bags, banks, load_checkpoint(path).params));
  }
  EvalReport rep;
  rep.title = "Fine-tuned";
  rep.n_seeds = runs.size();
  rep.seed_axis = "training_seed";
  rep.config_hash = config_hash(cfg);
  rep.rows.push_back(aggregate(runs, "finetuned", "GMAT", "Description List"));
  write_report(rep, cfg.out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// zeroshot
// ---------------------------------------------------------------------------

struct ZeroShotArgs {
  CommonFlags common;
  std::string manifest;
  std::string descriptions;
  std::string single;
  std::string pooling;
  std::optional<int> k;
};

int cmd_zeroshot(const ZeroShotArgs& a) {
  auto cfg = resolve(a.common);
  if (!a.manifest.empty()) cfg.manifest = a.manifest;
  if (!a.descriptions.empty()) cfg.descriptions = a.descriptions;
  if (!a.single.empty()) cfg.single_descriptions = a.single;
  if (!a.pooling.empty()) {
    nlohmann::json p = {{"kind", a.pooling}};
    if (a.k) p["k"] = *a.k;
    cfg.pooling = pooling_from_json(p);
  } else if (a.k) {
    cfg.pooling = topk_pooling(*a.k);
  }
  require_paths_exist({cfg.manifest, cfg.descriptions, cfg.single_descriptions});
  const TextEncoder text_encoder(cfg.encoder);

  auto single_of = [&](const DescriptionSet& list) {
    if (cfg.single_descriptions.empty()) return as_single(list);
    return single_prompts_from_json(nlohmann::json::parse(read_file(cfg.single_descriptions)));
  };

  EvalReport rep;
  if (!cfg.manifest.empty()) {
    if (cfg.descriptions.empty()) throw Error(ErrorCode::ConfigError, "zeroshot over a manifest needs --descriptions");
    const auto bags = load_dataset(cfg.manifest);
    const auto list = load_model_descriptions(cfg.descriptions);
    const ImageEncoder image_encoder({cfg.encoder.name, cfg.encoder.dim, cfg.encoder.seed, cfg.image_encoder}, feature_dim(bags));
    rep = zeroshot_eval(bags, shared_banks(make_text_bank(list, text_encoder)),
                        embed_single_prompts(single_of(list), text_encoder), image_encoder, cfg.pooling, cfg.seeds);
  } else {
    // No dataset given: regenerate synthetic data for every seed.
    const int fdim = cfg.synth.feature_dim > 0 ? cfg.synth.feature_dim : cfg.synth.dim;
    const ImageEncoder image_encoder({cfg.encoder.name, cfg.encoder.dim, cfg.encoder.seed, cfg.image_encoder}, fdim);
    ZeroShotSource source = [&](std::uint64_t seed) {
      auto spec = cfg.synth;
      spec.seed = seed;
      auto ds = synth_dataset(spec, text_encoder);
      return ZeroShotInputs{std::move(ds.bags), shared_banks(make_text_bank(ds.descriptions, text_encoder)),
                            embed_single_prompts(as_single(ds.descriptions), text_encoder)};
    };
    rep = zeroshot_eval(source, image_encoder, cfg.pooling, cfg.seeds);
  }
  rep.config_hash = config_hash(cfg);
  write_report(rep, cfg.out);
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateArgs {
  CommonFlags common;
  std::string kb;
  BackendArgs backend;
  bool zeroshot = false;
};

int cmd_ablate(const AblateArgs& a) {
  const auto cfg = resolve(a.common);
  require_paths_exist({a.kb});
  const auto kb = load_knowledge_base(a.kb);
  const fs::path dir = cfg.out;
  ensure_dir(dir);
  const TextEncoder text_encoder(cfg.encoder);

  EvalReport rep;
  rep.title = a.zeroshot ? "Ablation (zero-shot)" : "Ablation (fine-tuned)";
  rep.seed_axis = a.zeroshot ? "regenerate" : "training_seed";
  rep.n_seeds = cfg.seeds.size();
  rep.config_hash = config_hash(cfg);
  const std::pair<const char*, const char*> modes[] = {{"single", "Single-agent"}, {"multi", "Multi-agent"}};
  for (const auto& [mode, label] : modes) {
    const auto set = run_generation(kb, cfg, a.backend, mode, kb.class_labels(), nullptr);
    save_descriptions(set, (dir / ("descriptions_" + std::string(mode) + ".json")).string());
    auto spec = cfg.synth;
    spec.seed = cfg.seeds.front();
    std::vector<MetricTriple> runs;
    if (a.zeroshot) {
      const int fdim = spec.feature_dim > 0 ? spec.feature_dim : spec.dim;
      const ImageEncoder image_encoder({cfg.encoder.name, cfg.encoder.dim, cfg.encoder.seed, cfg.image_encoder}, fdim);
      ZeroShotSource source = [&](std::uint64_t seed) {
        auto s = spec;
        s.seed = seed;
        auto ds = synth_dataset(s, text_encoder, &set);
        auto full = shared_banks(make_text_bank(set, text_encoder));
        return ZeroShotInputs{std::move(ds.bags), full, embed_single_prompts(as_single(set), text_encoder)};
      };
      const auto zs = zeroshot_eval(source, image_encoder, cfg.pooling, cfg.seeds);
      auto row = zs.rows.at(1);
      row.condition = mode;
      row.model = "Zero-shot";
      row.description = label;
      rep.rows.push_back(row);
      continue;
    }
    // Fine-tuned: one synthetic cohort per description set, facets drawn
    // from that set's sentences; the model's text side is the full set.
    const auto ds = synth_dataset(spec, text_encoder, &set);
    const auto sub = dir / mode;
    ensure_dir(sub);
    for (const auto& r : train_seeds(ds.bags, set, cfg, sub)) runs.push_back(r.test);
    rep.rows.push_back(aggregate(runs, mode, "GMAT", label));
  }
  write_report(rep, dir);
  return kExitOk;
}

// ---------------------------------------------------------------------------

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::IoError:
    case ErrorCode::ConfigError:
    case ErrorCode::FormatError:
      return kExitIo;
    default:
      return kExitValidation;
  }
}

void print_error(std::string_view code, std::string_view message) {
  const nlohmann::json j = {{"error", code}, {"message", message}};
  std::cerr << j.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grounded description generation and dual-scale vision-language MIL"};
  app.require_subcommand(1);

  KbIngestArgs kb_args;
  auto* kb_cmd = app.add_subcommand("kb-ingest", "chunk and tag text documents into a knowledge base");
  add_common(kb_cmd, kb_args.common);
  kb_cmd->add_option("inputs", kb_args.inputs, "text files")->required();
  kb_cmd->add_option("--labels", kb_args.labels, "comma separated class labels");
  kb_cmd->add_option("--aliases", kb_args.aliases, "alias table JSON");
  kb_cmd->add_option("--chunk-size", kb_args.chunk_size, "maximum chunk length in characters");

  GenerateArgs gen_args;
  auto* gen_cmd = app.add_subcommand("generate", "generate class description lists");
  add_common(gen_cmd, gen_args.common);
  gen_cmd->add_option("--kb", gen_args.kb, "knowledge base JSON")->required();
  gen_cmd->add_option("--mode", gen_args.mode, "multi or single")->check(CLI::IsMember({"multi", "single"}));
  gen_cmd->add_option("--backend", gen_args.backend.backend, "text backend name");
  gen_cmd->add_option("--responses", gen_args.backend.responses, "scripted backend response file");
  gen_cmd->add_option("--trace", gen_args.trace, "write the agent trace as JSON lines");
  gen_cmd->add_option("--labels", gen_args.labels, "comma separated subset of classes");

  ValidateArgs val_args;
  auto* val_cmd = app.add_subcommand("validate", "check a description JSON file");
  add_common(val_cmd, val_args.common);
  val_cmd->add_option("file", val_args.file, "description JSON")->required();
  val_cmd->add_option("--min-sentences", val_args.min_sentences, "minimum sentences per class");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic dataset with planted facets");
  add_common(synth_cmd, synth_args.common);
  synth_cmd->add_option("--descriptions", synth_args.codebook, "draw classes and facet sentences from this file");

  ModelArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "fine-tune the classifier, one model per seed");
  add_common(train_cmd, train_args.common);
  train_cmd->add_option("--manifest", train_args.manifest, "dataset manifest.json");
  train_cmd->add_option("--descriptions", train_args.descriptions, "description JSON");
  train_cmd->add_option("--epochs", train_args.epochs, "maximum epochs");
  train_cmd->add_option("--lr", train_args.lr, "learning rate");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "score trained checkpoints on the test split");
  add_common(eval_cmd, eval_args.model.common);
  eval_cmd->add_option("--manifest", eval_args.model.manifest, "dataset manifest.json");
  eval_cmd->add_option("--descriptions", eval_args.model.descriptions, "description JSON");
  eval_cmd->add_option("--checkpoints", eval_args.checkpoints, "directory written by train");

  ZeroShotArgs zs_args;
  auto* zs_cmd = app.add_subcommand("zeroshot", "compare single-prompt and description-list zero-shot");
  add_common(zs_cmd, zs_args.common);
  zs_cmd->add_option("--manifest", zs_args.manifest, "dataset manifest.json (synthetic when omitted)");
  zs_cmd->add_option("--descriptions", zs_args.descriptions, "description JSON");
  zs_cmd->add_option("--single", zs_args.single, "single prompt JSON");
  zs_cmd->add_option("--pooling", zs_args.pooling, "mean or topk")->check(CLI::IsMember({"mean", "topk"}));
  zs_cmd->add_option("--k", zs_args.k, "patches kept by topk pooling");

  AblateArgs ab_args;
  auto* ab_cmd = app.add_subcommand("ablate", "compare multi-agent and single-agent descriptions");
  add_common(ab_cmd, ab_args.common);
  ab_cmd->add_option("--kb", ab_args.kb, "knowledge base JSON")->required();
  ab_cmd->add_option("--backend", ab_args.backend.backend, "text backend name");
  ab_cmd->add_option("--responses", ab_args.backend.responses, "scripted backend response file");
  ab_cmd->add_flag("--zeroshot", ab_args.zeroshot, "compare in zero-shot instead of fine-tuned mode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("UsageError", e.what());
    return kExitIo;
  }

  try {
    if (kb_cmd->parsed()) return cmd_kb_ingest(kb_args);
    if (gen_cmd->parsed()) return cmd_generate(gen_args);
    if (val_cmd->parsed()) return cmd_validate(val_args);
    if (synth_cmd->parsed()) return cmd_synth(synth_args);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (zs_cmd->parsed()) return cmd_zeroshot(zs_args);
    if (ab_cmd->parsed()) return cmd_ablate(ab_args);
  } catch (const Error& e) {
    print_error(to_string(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    print_error("ConfigError", e.what());
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    print_error("IoError", e.what());
    return kExitIo;
  }
  return kExitIo;
}
