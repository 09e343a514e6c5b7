// priorforge command-line tool.
//
// Exit codes: 0 ok, 1 module error, 2 bad flags or configuration. Errors are
// printed as a single line "error: <Kind>: <message>" on stderr.

#include "priorforge/analysis.hpp"
#include "priorforge/archive.hpp"
#include "priorforge/checkpoint.hpp"
#include "priorforge/config_io.hpp"
#include "priorforge/errors.hpp"
#include "priorforge/experiment.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace priorforge;

namespace {

constexpr int kExitModule = 1;
constexpr int kExitConfig = 2;

// Seed precedence: --seed, then PRIORFORGE_SEED, then 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  const char* env = std::getenv("PRIORFORGE_SEED");
  if (!env || !*env) return 0;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(env, &used);
    if (used != std::string(env).size()) throw std::invalid_argument(env);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("PRIORFORGE_SEED is not an unsigned integer: ") + env);
  }
}

// File outputs get a sibling "<file>.run-manifest.json"; directories hold
// their own run-manifest.json.
fs::path manifest_path_for(const fs::path& out) {
  if (fs::is_directory(out)) return out / "run-manifest.json";
  return fs::path(out.string() + ".run-manifest.json");
}

void refuse_existing_file(const fs::path& out, bool force) {
  if (fs::exists(out) && !force) throw IoError("output " + out.string() + " already exists (pass --force to overwrite)");
  if (fs::is_directory(out)) throw IoError("output " + out.string() + " is a directory");
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
}

struct Invocation {
  std::string command;
  std::vector<std::string> argv;  // everything after the program name
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write_manifest(const fs::path& out, const json& options, std::uint64_t seed) const {
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_json_file(manifest_path_for(out), {{"command", command},
                                             {"argv", argv},
                                             {"options", options},
                                             {"config_hash", config_hash(options)},
                                             {"seed", seed},
                                             {"wall_time_s", wall},
                                             {"version", PRIORFORGE_VERSION}});
  }
};

Mixture mixture_from_arg(const std::string& arg) {
  if (fs::path(arg).extension() == ".json" || fs::is_regular_file(arg)) return mixture_from_json(read_json_file(arg));
  return Mixture::single(parse_prior_kind(arg));
}

// Every subdirectory of `dir` holding a checkpoint, sorted by name.
std::vector<std::pair<std::string, fs::path>> checkpoints_in(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("models directory " + dir.string() + " does not exist");
  std::vector<std::pair<std::string, fs::path>> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json")) out.emplace_back(e.path().filename().string(), e.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ConfigError("no checkpoints under " + dir.string());
  return out;
}

// "name=path" or a bare path named by its last component.
std::pair<std::string, fs::path> named_path(const std::string& arg) {
  const auto eq = arg.find('=');
  if (eq != std::string::npos) return {arg.substr(0, eq), arg.substr(eq + 1)};
  fs::path p(arg);
  auto name = p.filename().string();
  if (name.empty()) name = p.parent_path().filename().string();
  return {name, p};
}

struct TableSource {
  std::string suite;
  std::vector<std::string> data;
  std::string target;

  void add_flags(CLI::App* app) {
    app->add_option("--suite", suite, "suite.json listing CSV tables");
    app->add_option("--data", data, "CSV table (repeatable)");
    app->add_option("--target", target, "target column for --data tables (default: last)");
  }

  std::vector<DatasetSpec> specs() const {
    std::vector<DatasetSpec> out;
    if (!suite.empty()) out = load_suite(suite);
    for (const auto& d : data) {
      DatasetSpec s;
      s.path = d;
      s.name = s.path.stem().string();
      if (!target.empty()) s.target = target;
      out.push_back(std::move(s));
    }
    if (out.empty()) throw ConfigError("give --suite or at least one --data table");
    for (const auto& s : out)
      if (!fs::exists(s.path)) throw ConfigError("table " + s.path.string() + " does not exist");
    return out;
  }

  json to_json() const { return {{"suite", suite}, {"data", data}, {"target", target}}; }
};

json perf_json(const PerfVector& p) { return priorforge::to_json(p); }

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string prior;
  std::string task = "cls";
  int count = 1;
  std::optional<std::uint64_t> seed;
  std::string out;
  int min_features = 2, max_features = kMaxFeatures;
  int min_rows = 64, max_rows = kMaxRows;
  int max_classes = kMaxClasses;
  int jobs = 1;
  bool force = false;
};

void cmd_generate(const GenerateArgs& a, const Invocation& inv) {
  const Mixture mix = mixture_from_arg(a.prior);
  const TaskFamily task = parse_task_family(a.task == "cls" ? "classification" : a.task == "reg" ? "regression" : a.task);
  if (a.count < 1) throw ConfigError("--count must be >= 1");
  if (a.jobs < 1) throw ConfigError("--jobs must be >= 1");
  ConfigRanges ranges;
  ranges.min_features = a.min_features;
  ranges.max_features = a.max_features;
  ranges.min_rows = a.min_rows;
  ranges.max_rows = a.max_rows;
  ranges.max_classes = a.max_classes;
  ranges.validate();
  const std::uint64_t seed = resolve_seed(a.seed);

  std::vector<ArchiveEntry> entries(static_cast<std::size_t>(a.count));
  const Rng root = Rng(seed).child("generate");
  parallel_for(a.count, a.jobs, [&](int k) {
    Rng rng = root.child(static_cast<std::uint64_t>(k));
    entries[k].seed = rng.seed();
    entries[k].table = mixture_sample(mix, task, rng, ranges);
  });

  prepare_output_dir(a.out, a.force);
  write_archive(a.out, entries);
  inv.write_manifest(a.out,
                     {{"prior", a.prior},
                      {"mixture", to_json(mix)},
                      {"task", std::string(to_string(task))},
                      {"count", a.count},
                      {"ranges", to_json(ranges)}},
                     seed);
}

// ---------------------------------------------------------------------------

struct PretrainArgs {
  std::string prior;
  std::string mixture;
  std::string config;
  std::string train;
  std::optional<int> steps;
  std::optional<int> batch;
  std::optional<std::uint64_t> seed;
  std::string resume;
  std::string out;
  bool force = false;
  bool quiet = false;
};

void cmd_pretrain(const PretrainArgs& a, const Invocation& inv) {
  if (a.prior.empty() == a.mixture.empty()) throw ConfigError("give exactly one of --prior and --mixture");
  const Mixture mix = a.mixture.empty() ? Mixture::single(parse_prior_kind(a.prior)) : mixture_from_arg(a.mixture);
  TfmConfig cfg = a.config.empty() ? TfmConfig{} : tfm_config_from_json(read_json_file(a.config));
  TrainHp hp = a.train.empty() ? TrainHp{} : train_hp_from_json(read_json_file(a.train));
  if (a.steps) hp.steps = *a.steps;
  if (a.batch) hp.batch = *a.batch;
  cfg.validate();
  hp.validate();

  TrainState state;
  std::uint64_t seed = 0;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume);
    if (!a.config.empty() && !(state.model.config == cfg))
      throw ConfigError("--config does not match the checkpoint being resumed");
    seed = state.seed;
  } else {
    seed = resolve_seed(a.seed);
    state = init_train_state(cfg, seed);
  }
  const int remaining = hp.steps - state.step;
  if (remaining < 0) throw ConfigError("checkpoint is already past --steps");
  prepare_output_dir(a.out, a.force);

  const int every = std::max(1, hp.steps / 20);
  train_steps(state, mix, hp, remaining, [&](const TrainState& s) {
    if (a.quiet || s.step % every != 0) return;
    double recent = 0.0;
    const int w = std::min<int>(every, static_cast<int>(s.loss_history.size()));
    for (int k = 0; k < w; ++k) recent += s.loss_history[s.loss_history.size() - 1 - k];
    std::cerr << "step " << s.step << " loss " << recent / w << '\n';
  });
  if (!state.model.all_finite()) throw DegenerateFitError("training diverged");
  const json options = {{"mixture", to_json(mix)},
                        {"tfm", to_json(state.model.config)},
                        {"train", to_json(hp)},
                        {"resume", a.resume}};
  save_checkpoint(a.out, state, {{"mixture", to_json(mix)}, {"train", to_json(hp)}});
  inv.write_manifest(a.out, options, seed);
}

// ---------------------------------------------------------------------------

struct GmatrixArgs {
  std::string models;
  std::string metric = "auc";
  int tables = 100;
  int rows = 1000;
  int support = 800;
  std::optional<int> query;
  int max_features = kMaxFeatures;
  int max_classes = kMaxClasses;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string out;
  bool force = false;
};

void cmd_gmatrix(const GmatrixArgs& a, const Invocation& inv) {
  GenProtocol proto;
  proto.metric = parse_metric(a.metric);
  proto.tables = a.tables;
  proto.rows = a.rows;
  proto.support = a.support;
  proto.query = a.query.value_or(a.rows - a.support);
  proto.ranges.max_features = a.max_features;
  proto.ranges.max_classes = a.max_classes;
  const std::uint64_t seed = resolve_seed(a.seed);
  proto.seed = seed;
  proto.validate();
  if (a.jobs < 1) throw ConfigError("--jobs must be >= 1");

  // Only directories named after a prior take part; e.g. "mixture" is skipped.
  std::vector<PriorKind> priors;
  std::vector<fs::path> paths;
  const auto found = checkpoints_in(a.models);
  for (auto kind : kAllPriors)
    for (const auto& [name, path] : found)
      if (name == to_string(kind)) {
        priors.push_back(kind);
        paths.push_back(path);
      }
  if (priors.empty()) throw ConfigError("no checkpoint under " + a.models + " is named after a prior");
  refuse_existing_file(a.out, a.force);

  std::vector<TfmModel> models;
  for (const auto& p : paths) models.push_back(load_model(p));
  std::vector<const TfmModel*> ptrs;
  for (const auto& m : models) ptrs.push_back(&m);
  const auto g = gen_matrix(priors, ptrs, proto, a.jobs);
  write_json_file(a.out, to_json(g));
  inv.write_manifest(a.out, {{"models", a.models}, {"protocol", to_json(proto)}}, seed);
}

// ---------------------------------------------------------------------------

struct PerfArgs {
  std::string models_dir;
  std::vector<std::string> models;
  TableSource tables;
  std::string metric = "auc";
  int splits = 10;
  double support_frac = 0.8;
  int max_rows = 512;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string out;
  bool force = false;
};

struct LoadedModels {
  std::vector<std::string> names;
  std::vector<TfmModel> models;
  std::vector<NamedModel> named() const {
    std::vector<NamedModel> out;
    for (std::size_t i = 0; i < names.size(); ++i) out.push_back({names[i], &models[i]});
    return out;
  }
};

PerfProtocol perf_protocol(const PerfArgs& a, std::uint64_t seed) {
  PerfProtocol p;
  p.metric = parse_metric(a.metric);
  p.splits = a.splits;
  p.support_frac = a.support_frac;
  p.max_rows = a.max_rows;
  p.seed = seed;
  p.validate();
  if (a.jobs < 1) throw ConfigError("--jobs must be >= 1");
  return p;
}

std::vector<std::pair<std::string, fs::path>> model_paths(const PerfArgs& a) {
  std::vector<std::pair<std::string, fs::path>> paths;
  if (!a.models_dir.empty()) paths = checkpoints_in(a.models_dir);
  for (const auto& m : a.models) paths.push_back(named_path(m));
  if (paths.empty()) throw ConfigError("give --models DIR or at least one --model");
  for (const auto& [name, path] : paths)
    if (!fs::exists(path / "manifest.json")) throw ConfigError(path.string() + " is not a checkpoint");
  return paths;
}

LoadedModels load_models(const std::vector<std::pair<std::string, fs::path>>& paths) {
  LoadedModels out;
  for (const auto& [name, path] : paths) {
    out.names.push_back(name);
    out.models.push_back(load_model(path));
  }
  return out;
}

json perf_options(const PerfArgs& a, const PerfProtocol& proto,
                  const std::vector<std::pair<std::string, fs::path>>& paths) {
  json models = json::object();
  for (const auto& [name, path] : paths) models[name] = path.string();
  return {{"models", models}, {"tables", a.tables.to_json()}, {"protocol", to_json(proto)}};
}

void cmd_perfvec(const PerfArgs& a, const Invocation& inv) {
  const std::uint64_t seed = resolve_seed(a.seed);
  const auto proto = perf_protocol(a, seed);
  const auto paths = model_paths(a);
  const auto specs = a.tables.specs();
  refuse_existing_file(a.out, a.force);

  const auto loaded = load_models(paths);
  const auto p = perf_vector(loaded.named(), load_real_tables(specs), proto, a.jobs);
  write_json_file(a.out, perf_json(p));
  inv.write_manifest(a.out, perf_options(a, proto, paths), seed);
}

// Like perfvec, but also ranks the models and prints a short table.
void cmd_eval(const PerfArgs& a, const Invocation& inv) {
  const std::uint64_t seed = resolve_seed(a.seed);
  const auto proto = perf_protocol(a, seed);
  const auto paths = model_paths(a);
  const auto specs = a.tables.specs();
  refuse_existing_file(a.out, a.force);

  const auto loaded = load_models(paths);
  const auto p = perf_vector(loaded.named(), load_real_tables(specs), proto, a.jobs);
  json report = {{"perf", perf_json(p)}};
  if (p.models.size() >= 2) {
    const auto lb = perf_leaderboard(p, derive_seed(seed, "leaderboard"));
    report["leaderboard"] = to_json(lb);
    for (const auto& e : lb.entries)
      std::cout << e.model << "  elo " << e.elo << "  winrate " << e.winrate << "  racc " << e.racc << '\n';
  } else {
    std::cout << p.models[0] << "  " << to_string(p.metric) << ' ' << p.values(0) << '\n';
  }
  write_json_file(a.out, report);
  inv.write_manifest(a.out, perf_options(a, proto, paths), seed);
}

// ---------------------------------------------------------------------------

struct SelectArgs {
  std::string g;
  std::string p;
  int k = 0;
  std::string out;
  bool force = false;
};

// P may be a perfvec report or a plain {"prior": value} object.
Vector p_for_priors(const json& pj, const std::vector<PriorKind>& priors) {
  const json& values = pj.contains("values") ? pj.at("values") : pj;
  Vector p(static_cast<Eigen::Index>(priors.size()));
  for (std::size_t i = 0; i < priors.size(); ++i) {
    const std::string name(to_string(priors[i]));
    if (!values.contains(name) || !values.at(name).is_number()) throw ConfigError("P has no value for prior " + name);
    p(static_cast<Eigen::Index>(i)) = values.at(name).get<double>();
  }
  return p;
}

void cmd_select(const SelectArgs& a, const Invocation& inv) {
  GenMatrix g;
  Vector p;
  try {
    g = gen_matrix_from_json(read_json_file(a.g));
    p = p_for_priors(read_json_file(a.p), g.priors);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("cannot read G/P: ") + e.what());
  }
  const int k = a.k > 0 ? a.k : static_cast<int>(g.priors.size());
  if (!a.out.empty()) refuse_existing_file(a.out, a.force);
  json order = json::array();
  for (int idx : select_priors(g.values, p, k)) order.push_back(std::string(to_string(g.priors[idx])));
  std::cout << order.dump() << '\n';
  if (!a.out.empty()) {
    write_json_file(a.out, {{"k", k}, {"order", order}});
    inv.write_manifest(a.out, {{"g", a.g}, {"p", a.p}, {"k", k}}, 0);
  }
}

// ---------------------------------------------------------------------------

struct GridArgs {
  std::string model;
  std::string data;
  std::string target;
  int resolution = 200;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
};

void cmd_grid(const GridArgs& a, const Invocation& inv) {
  if (a.resolution < 2) throw ConfigError("--resolution must be >= 2");
  if (!fs::exists(a.data)) throw ConfigError("table " + a.data + " does not exist");
  if (!fs::exists(fs::path(a.model) / "manifest.json")) throw ConfigError(a.model + " is not a checkpoint");
  const std::uint64_t seed = resolve_seed(a.seed);
  refuse_existing_file(a.out, a.force);
  IngestOptions opt;
  if (!a.target.empty()) opt.target_column = a.target;
  const Table table = ingest_csv(a.data, opt);
  const TfmModel model = load_model(a.model);
  Rng rng = Rng(seed).child("grid");
  write_decision_grid_csv(a.out, decision_grid(model, table, a.resolution, rng));
  inv.write_manifest(a.out,
                     {{"model", a.model}, {"data", a.data}, {"target", a.target}, {"resolution", a.resolution}},
                     seed);
}

// ---------------------------------------------------------------------------

struct ExperimentArgs {
  std::string config;
  std::string out;
  std::optional<int> jobs;
  bool force = false;
  bool quiet = false;
};

void cmd_experiment(const ExperimentArgs& a) {
  const fs::path path(a.config);
  RunConfig cfg = run_config_from_json(read_json_file(path), path.parent_path());
  if (!a.out.empty()) cfg.out = a.out;
  if (a.jobs) cfg.jobs = *a.jobs;
  if (cfg.out.empty()) throw ConfigError("experiment needs an output directory (\"out\" or --out)");
  cfg.validate();
  const auto r = run_experiment(cfg, a.force, a.quiet ? nullptr : &std::cerr);
  std::cout << summary_markdown(r);
}

std::string one_line(std::string s) {
  for (auto& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

int run(const std::vector<std::string>& args);

struct ReplayArgs {
  std::string manifest;
  std::string out;
  bool force = false;
};

int cmd_replay(const ReplayArgs& a) {
  const json m = read_json_file(a.manifest);
  if (!m.contains("argv") || !m.at("argv").is_array()) throw ConfigError(a.manifest + " has no argv to replay");
  auto argv = m.at("argv").get<std::vector<std::string>>();
  if (!a.out.empty()) {
    bool replaced = false;
    for (std::size_t i = 0; i + 1 < argv.size(); ++i)
      if (argv[i] == "--out") {
        argv[i + 1] = a.out;
        replaced = true;
      }
    if (!replaced) throw ConfigError("the recorded command has no --out to replace");
  }
  if (a.force && std::find(argv.begin(), argv.end(), "--force") == argv.end()) argv.push_back("--force");
  // Pin the recorded seed so PRIORFORGE_SEED cannot change the replay.
  if (m.contains("seed") && std::find(argv.begin(), argv.end(), "--seed") == argv.end() && argv[0] != "select") {
    argv.push_back("--seed");
    argv.push_back(std::to_string(m.at("seed").get<std::uint64_t>()));
  }
  return run(argv);
}

int run(const std::vector<std::string>& args) {
  CLI::App app{"Synthetic tabular priors, toy tabular transformers and prior-quality analysis"};
  app.set_version_flag("--version", PRIORFORGE_VERSION);
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "sample synthetic tables into an archive");
  gen->add_option("--prior", ga.prior, "prior name or mixture.json")->required();
  gen->add_option("--task", ga.task, "cls or reg")->check(CLI::IsMember({"cls", "reg", "classification", "regression"}));
  gen->add_option("--count", ga.count, "number of tables");
  gen->add_option("--seed", ga.seed);
  gen->add_option("--min-features", ga.min_features);
  gen->add_option("--max-features", ga.max_features);
  gen->add_option("--min-rows", ga.min_rows);
  gen->add_option("--max-rows", ga.max_rows);
  gen->add_option("--max-classes", ga.max_classes);
  gen->add_option("--jobs", ga.jobs);
  gen->add_option("--out", ga.out, "archive directory")->required();
  gen->add_flag("--force", ga.force, "replace an existing output");

  PretrainArgs pa;
  auto* pre = app.add_subcommand("pretrain", "pretrain a model on a prior or mixture");
  pre->add_option("--prior", pa.prior, "single prior");
  pre->add_option("--mixture", pa.mixture, "mixture.json or prior name");
  pre->add_option("--config", pa.config, "model config JSON");
  pre->add_option("--train", pa.train, "training hyperparameter JSON");
  pre->add_option("--steps", pa.steps, "total steps");
  pre->add_option("--batch", pa.batch, "tables per step");
  pre->add_option("--seed", pa.seed);
  pre->add_option("--resume", pa.resume, "continue from this checkpoint");
  pre->add_option("--out", pa.out, "checkpoint directory")->required();
  pre->add_flag("--force", pa.force);
  pre->add_flag("--quiet", pa.quiet);

  GmatrixArgs gm;
  auto* gmat = app.add_subcommand("gmatrix", "cross-prior generalizability matrix");
  gmat->add_option("--models", gm.models, "directory of checkpoints named after priors")->required();
  gmat->add_option("--metric", gm.metric);
  gmat->add_option("--tables", gm.tables, "tables per cell");
  gmat->add_option("--rows", gm.rows);
  gmat->add_option("--support", gm.support);
  gmat->add_option("--query", gm.query, "default: rows - support");
  gmat->add_option("--max-features", gm.max_features);
  gmat->add_option("--max-classes", gm.max_classes);
  gmat->add_option("--seed", gm.seed);
  gmat->add_option("--jobs", gm.jobs);
  gmat->add_option("--out", gm.out, "G.json")->required();
  gmat->add_flag("--force", gm.force);

  auto perf_flags = [](CLI::App* sub, PerfArgs& p) {
    sub->add_option("--models", p.models_dir, "directory of checkpoints");
    sub->add_option("--model", p.models, "checkpoint, optionally name=path (repeatable)");
    p.tables.add_flags(sub);
    sub->add_option("--metric", p.metric);
    sub->add_option("--splits", p.splits);
    sub->add_option("--support-frac", p.support_frac);
    sub->add_option("--max-rows", p.max_rows);
    sub->add_option("--seed", p.seed);
    sub->add_option("--jobs", p.jobs);
    sub->add_option("--out", p.out)->required();
    sub->add_flag("--force", p.force);
  };
  PerfArgs pv, ev;
  auto* perf = app.add_subcommand("perfvec", "score models on real tables");
  perf_flags(perf, pv);
  auto* eval = app.add_subcommand("eval", "score and rank models on real tables");
  perf_flags(eval, ev);

  SelectArgs sa;
  auto* sel = app.add_subcommand("select", "greedy forward prior selection");
  sel->add_option("--g", sa.g, "G.json")->required();
  sel->add_option("--p", sa.p, "P.json")->required();
  sel->add_option("--k", sa.k, "priors to select (default: all)");
  sel->add_option("--out", sa.out, "selection JSON");
  sel->add_flag("--force", sa.force);

  GridArgs gr;
  auto* grid = app.add_subcommand("grid", "decision-boundary grid over a 2-feature table");
  grid->add_option("--model", gr.model, "checkpoint")->required();
  grid->add_option("--data", gr.data, "CSV table with two features")->required();
  grid->add_option("--target", gr.target);
  grid->add_option("--resolution", gr.resolution);
  grid->add_option("--seed", gr.seed);
  grid->add_option("--out", gr.out, "grid.csv")->required();
  grid->add_flag("--force", gr.force);

  ExperimentArgs xa;
  auto* exp = app.add_subcommand("experiment", "pretrain, G, P, selection and leaderboard in one report");
  exp->add_option("--config", xa.config, "run.json")->required();
  exp->add_option("--out", xa.out, "report directory (overrides the config)");
  exp->add_option("--jobs", xa.jobs);
  exp->add_flag("--force", xa.force);
  exp->add_flag("--quiet", xa.quiet);

  ReplayArgs ra;
  auto* rep = app.add_subcommand("replay", "rerun the command recorded in a run manifest");
  rep->add_option("manifest", ra.manifest)->required();
  rep->add_option("--out", ra.out, "write to a different output");
  rep->add_flag("--force", ra.force);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  Invocation inv;
  inv.argv = args;
  inv.command = args.front();
  if (*gen) cmd_generate(ga, inv);
  else if (*pre) cmd_pretrain(pa, inv);
  else if (*gmat) cmd_gmatrix(gm, inv);
  else if (*perf) cmd_perfvec(pv, inv);
  else if (*eval) cmd_eval(ev, inv);
  else if (*sel) cmd_select(sa, inv);
  else if (*grid) cmd_grid(gr, inv);
  else if (*exp) cmd_experiment(xa);
  else if (*rep) return cmd_replay(ra);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  try {
    return run(args);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << '\n';
    return kExitConfig;
  } catch (const Error& e) {
    std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << '\n';
    return kExitModule;
  } catch (const std::exception& e) {
    std::cerr << "error: InternalError: " << one_line(e.what()) << '\n';
    return kExitModule;
  }
}
