#include "priorforge/experiment.hpp"

#include "priorforge/archive.hpp"
#include "priorforge/checkpoint.hpp"
#include "priorforge/config_io.hpp"
#include "priorforge/errors.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace priorforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t global, std::string_view purpose, std::string_view name) {
  Rng r = Rng(global).child(std::string(purpose));
  if (!name.empty()) r = r.child(std::string(name));
  return r.seed();
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!force) throw IoError("output " + dir.string() + " already exists (pass --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

// ---------------------------------------------------------------------------
// Real tables

std::vector<DatasetSpec> load_suite(const fs::path& suite_json) {
  const json j = read_json_file(suite_json);
  if (!j.contains("tables") || !j.at("tables").is_array()) throw ConfigError(suite_json.string() + ": missing tables[]");
  std::vector<DatasetSpec> specs;
  for (const auto& t : j.at("tables")) {
    DatasetSpec s;
    s.path = suite_json.parent_path() / t.at("file").get<std::string>();
    s.name = t.value("name", s.path.stem().string());
    if (t.contains("target")) s.target = t.at("target").get<std::string>();
    specs.push_back(std::move(s));
  }
  return specs;
}

std::vector<RealTable> load_real_tables(const std::vector<DatasetSpec>& specs) {
  std::vector<RealTable> out;
  for (const auto& s : specs) {
    IngestOptions opt;
    opt.target_column = s.target;
    Table t = ingest_csv(s.path, opt);
    if (t.cols() > kMaxFeatures)
      throw CapError(s.name + " has " + std::to_string(t.cols()) +
                     " features; drop columns or cap with column subsampling to at most 16");
    out.push_back({s.name, std::move(t)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config

namespace {

GenProtocol gen_protocol_from_json(const json& j) {
  check_keys(j, {"tables", "rows", "support", "query", "metric", "ranges"}, "gmatrix");
  GenProtocol p;
  p.tables = j.value("tables", p.tables);
  p.rows = j.value("rows", p.rows);
  p.support = j.value("support", p.support);
  p.query = j.value("query", p.rows - p.support);
  if (j.contains("metric")) p.metric = parse_metric(j.at("metric").get<std::string>());
  if (j.contains("ranges")) p.ranges = config_ranges_from_json(j.at("ranges"));
  p.validate();
  return p;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(std::isfinite(m(i, j)) ? json(m(i, j)) : json(nullptr));
    rows.push_back(std::move(r));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j.at(0).size()) : 0;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j.at(i).size()) != cols) throw ConfigError("ragged matrix in JSON");
    for (Eigen::Index k = 0; k < cols; ++k) {
      const auto& v = j.at(i).at(k);
      m(i, k) = v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
    }
  }
  return m;
}

}  // namespace

json to_json(const GenProtocol& p) {
  return {{"tables", p.tables},   {"rows", p.rows}, {"support", p.support},        {"query", p.query},
          {"seed", p.seed},       {"metric", std::string(to_string(p.metric))}, {"ranges", to_json(p.ranges)}};
}

json to_json(const PerfProtocol& p) {
  return {{"splits", p.splits},
          {"support_frac", p.support_frac},
          {"max_rows", p.max_rows},
          {"seed", p.seed},
          {"metric", std::string(to_string(p.metric))}};
}

void RunConfig::validate() const {
  if (priors.empty()) throw ConfigError("experiment needs at least one prior");
  tfm.validate();
  train.validate();
  gmatrix.validate();
  perfvec.validate();
  if (datasets.empty()) throw ConfigError("experiment needs at least one real table for the performance vector");
  for (const auto& d : datasets)
    if (!fs::exists(d.path)) throw ConfigError("dataset " + d.path.string() + " does not exist");
  if (select_k < 0 || select_k > static_cast<int>(priors.size())) throw ConfigError("select_k out of range");
  if (jobs < 1) throw ConfigError("jobs must be >= 1");
  if (is_classification_metric(gmatrix.metric) != (train.task == TaskFamily::Classification) ||
      is_classification_metric(perfvec.metric) != (train.task == TaskFamily::Classification))
    throw ConfigError("metrics must match the training task");
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  check_keys(j, {"seed", "priors", "mixture", "tfm", "train", "gmatrix", "perfvec", "select_k", "jobs", "out"},
             "experiment config");
  RunConfig c;
  try {
    c.seed = j.value("seed", std::uint64_t{0});
    if (const char* env = std::getenv("PRIORFORGE_SEED"); env && *env) {
      const std::string text(env);
      if (text.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("PRIORFORGE_SEED is not an unsigned integer: " + text);
      c.seed = std::stoull(text);
    }
    if (j.contains("priors")) {
      c.priors.clear();
      for (const auto& p : j.at("priors")) c.priors.push_back(parse_prior_kind(p.get<std::string>()));
    }
    if (j.contains("mixture")) c.mixture = mixture_from_json(j.at("mixture"));
    if (j.contains("tfm")) c.tfm = tfm_config_from_json(j.at("tfm"));
    if (j.contains("train")) c.train = train_hp_from_json(j.at("train"));
    if (j.contains("gmatrix")) c.gmatrix = gen_protocol_from_json(j.at("gmatrix"));
    if (j.contains("perfvec")) {
      const auto& pj = j.at("perfvec");
      check_keys(pj, {"splits", "support_frac", "max_rows", "metric", "suite", "datasets"}, "perfvec");
      c.perfvec.splits = pj.value("splits", c.perfvec.splits);
      c.perfvec.support_frac = pj.value("support_frac", c.perfvec.support_frac);
      c.perfvec.max_rows = pj.value("max_rows", c.perfvec.max_rows);
      if (pj.contains("metric")) c.perfvec.metric = parse_metric(pj.at("metric").get<std::string>());
      if (pj.contains("suite")) {
        const auto suite = load_suite(base_dir / pj.at("suite").get<std::string>());
        c.datasets.insert(c.datasets.end(), suite.begin(), suite.end());
      }
      if (pj.contains("datasets")) {
        for (const auto& d : pj.at("datasets")) {
          DatasetSpec s;
          s.path = base_dir / d.at("path").get<std::string>();
          s.name = d.value("name", s.path.stem().string());
          if (d.contains("target")) s.target = d.at("target").get<std::string>();
          c.datasets.push_back(std::move(s));
        }
      }
    }
    c.select_k = j.value("select_k", 0);
    c.jobs = j.value("jobs", 1);
    if (j.contains("out")) c.out = base_dir / j.at("out").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw ConfigError("PRIORFORGE_SEED is not an unsigned integer");
  } catch (const std::out_of_range&) {
    throw ConfigError("PRIORFORGE_SEED is out of range");
  }
  c.gmatrix.seed = derive_seed(c.seed, "gmatrix");
  c.perfvec.seed = derive_seed(c.seed, "perfvec");
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  json priors = json::array();
  for (auto p : c.priors) priors.push_back(std::string(to_string(p)));
  json datasets = json::array();
  for (const auto& d : c.datasets) {
    json e = {{"name", d.name}, {"file", d.path.filename().string()}};
    if (d.target) e["target"] = *d.target;
    datasets.push_back(std::move(e));
  }
  return {{"seed", c.seed},
          {"priors", priors},
          {"mixture", to_json(c.mixture)},
          {"tfm", to_json(c.tfm)},
          {"train", to_json(c.train)},
          {"gmatrix", to_json(c.gmatrix)},
          {"perfvec", to_json(c.perfvec)},
          {"datasets", datasets},
          {"select_k", c.select_k}};
}

// ---------------------------------------------------------------------------
// Report JSON

json to_json(const GenMatrix& g) {
  json priors = json::array();
  for (auto p : g.priors) priors.push_back(std::string(to_string(p)));
  json counts = json::array();
  for (Eigen::Index i = 0; i < g.counts.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < g.counts.cols(); ++j) r.push_back(g.counts(i, j));
    counts.push_back(std::move(r));
  }
  return {{"priors", priors},
          {"metric", std::string(to_string(g.metric))},
          {"protocol", to_json(g.protocol)},
          {"values", matrix_json(g.values)},
          {"stderr", matrix_json(g.stderrs)},
          {"counts", counts}};
}

GenMatrix gen_matrix_from_json(const json& j) {
  GenMatrix g;
  try {
    for (const auto& p : j.at("priors")) g.priors.push_back(parse_prior_kind(p.get<std::string>()));
    g.metric = parse_metric(j.value("metric", "auc"));
    g.values = matrix_from_json(j.at("values"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("G matrix JSON: ") + e.what());
  }
  const auto m = static_cast<Eigen::Index>(g.priors.size());
  if (g.values.rows() != m || g.values.cols() != m) throw DimError("G matrix is not square over its priors");
  if (!g.values.allFinite()) throw ConfigError("G matrix has non-finite entries");
  return g;
}

json to_json(const PerfVector& p) {
  json values = json::object();
  for (std::size_t i = 0; i < p.models.size(); ++i) values[p.models[i]] = p.values(static_cast<Eigen::Index>(i));
  return {{"models", p.models},
          {"tables", p.tables},
          {"metric", std::string(to_string(p.metric))},
          {"protocol", to_json(p.protocol)},
          {"values", values},
          {"per_table", matrix_json(p.per_table)}};
}

PerfVector perf_vector_from_json(const json& j) {
  PerfVector p;
  try {
    p.models = j.at("models").get<std::vector<std::string>>();
    p.metric = parse_metric(j.value("metric", "auc"));
    p.values.resize(static_cast<Eigen::Index>(p.models.size()));
    for (std::size_t i = 0; i < p.models.size(); ++i)
      p.values(static_cast<Eigen::Index>(i)) = j.at("values").at(p.models[i]).get<double>();
    if (j.contains("tables")) p.tables = j.at("tables").get<std::vector<std::string>>();
    if (j.contains("per_table")) p.per_table = matrix_from_json(j.at("per_table"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("performance vector JSON: ") + e.what());
  }
  return p;
}

json to_json(const Leaderboard& lb) {
  json entries = json::array();
  for (const auto& e : lb.entries) {
    entries.push_back({{"model", e.model},
                       {"avg_rank", e.avg_rank},
                       {"elo", e.elo},
                       {"elo_ci", {e.elo_lo, e.elo_hi}},
                       {"winrate", e.winrate},
                       {"racc", e.racc},
                       {"champion_delta", e.champion_delta},
                       {"mean_error", e.mean_error}});
  }
  return {{"models", lb.models}, {"datasets", lb.datasets}, {"errors", matrix_json(lb.errors)}, {"entries", entries}};
}

// ---------------------------------------------------------------------------
// Driver

namespace {

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

std::string summary_markdown(const ExperimentResult& r) {
  std::ostringstream md;
  const auto& g = r.g;
  const auto m = static_cast<Eigen::Index>(g.priors.size());
  md << "# Prior analysis\n\n";
  md << "Rows: model trained on the prior. Columns: test tables drawn from the prior. Metric: "
     << to_string(g.metric) << " over " << g.protocol.tables << " tables per cell (N=" << g.protocol.rows
     << ", s=" << g.protocol.support << ", q=" << g.protocol.query << ").\n\n";
  md << "| trained on |";
  for (auto p : g.priors) md << ' ' << to_string(p) << " |";
  md << " P (" << to_string(r.p.metric) << ") |\n|---|";
  for (Eigen::Index j = 0; j <= m; ++j) md << "---|";
  md << '\n';
  for (Eigen::Index i = 0; i < m; ++i) {
    md << "| " << to_string(g.priors[i]) << " |";
    for (Eigen::Index j = 0; j < m; ++j) md << ' ' << fixed(g.values(i, j)) << " |";
    md << ' ' << fixed(r.p.values(i)) << " |\n";
  }
  md << "\nDiagonal (self-predictability, lower = more diverse):";
  for (Eigen::Index i = 0; i < m; ++i) md << ' ' << to_string(g.priors[i]) << '=' << fixed(g.values(i, i));
  md << "\n\nColumn mean of off-diagonal entries (lower = more distinctive):";
  for (Eigen::Index j = 0; j < m; ++j) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < m; ++i)
      if (i != j) s += g.values(i, j);
    md << ' ' << to_string(g.priors[j]) << '=' << (m > 1 ? fixed(s / static_cast<double>(m - 1)) : "n/a");
  }
  md << "\n\nForward selection order:";
  for (std::size_t k = 0; k < r.selection.size(); ++k) md << (k ? " -> " : " ") << to_string(r.selection[k]);
  md << "\n\n## Leaderboard on real tables\n\n";
  md << "| model | P | avg rank | Elo (95% CI) | winrate | RAcc | CΔ % |\n|---|---|---|---|---|---|---|\n";
  for (std::size_t i = 0; i < r.leaderboard.entries.size(); ++i) {
    const auto& e = r.leaderboard.entries[i];
    const auto it = std::find(r.p.models.begin(), r.p.models.end(), e.model);
    const double pv = r.p.values(static_cast<Eigen::Index>(it - r.p.models.begin()));
    md << "| " << e.model << " | " << fixed(pv) << " | " << fixed(e.avg_rank, 2) << " | " << fixed(e.elo, 0) << " ("
       << fixed(e.elo_lo, 0) << ", " << fixed(e.elo_hi, 0) << ") | " << fixed(e.winrate) << " | " << fixed(e.racc)
       << " | " << fixed(e.champion_delta, 1) << " |\n";
  }
  return md.str();
}

Leaderboard perf_leaderboard(const PerfVector& p, std::uint64_t seed) {
  // Only tables where every model had a usable split.
  std::vector<std::string> kept;
  std::vector<Eigen::Index> cols;
  for (Eigen::Index t = 0; t < p.per_table.cols(); ++t) {
    if (p.per_table.col(t).allFinite()) {
      kept.push_back(p.tables[t]);
      cols.push_back(t);
    }
  }
  Matrix errors(p.per_table.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const Vector col = p.per_table.col(cols[c]);
    errors.col(static_cast<Eigen::Index>(c)) = higher_is_better(p.metric) ? Vector(1.0 - col.array()) : col;
  }
  RankingOptions ro;
  ro.seed = seed;
  return ranking_metrics(p.models, kept, errors, ro);
}

ExperimentResult run_experiment(const RunConfig& config, bool force, std::ostream* log) {
  config.validate();
  const bool write = !config.out.empty();
  if (write) prepare_output_dir(config.out, force);

  ExperimentResult r;
  for (auto p : config.priors) r.model_names.emplace_back(to_string(p));
  r.model_names.emplace_back("mixture");
  const int n_models = static_cast<int>(r.model_names.size());
  r.states.resize(static_cast<std::size_t>(n_models));

  const auto real = load_real_tables(config.datasets);

  parallel_for(n_models, config.jobs, [&](int i) {
    const bool is_mix = i == n_models - 1;
    const Mixture mix = is_mix ? config.mixture : Mixture::single(config.priors[i]);
    TrainState state = init_train_state(config.tfm, derive_seed(config.seed, "pretrain", r.model_names[i]));
    const int every = std::max(1, config.train.steps / 10);
    train_steps(state, mix, config.train, config.train.steps, [&](const TrainState& s) {
      if (log && config.jobs == 1 && (s.step % every == 0)) {
        double recent = 0.0;
        const int w = std::min<int>(every, static_cast<int>(s.loss_history.size()));
        for (int k = 0; k < w; ++k) recent += s.loss_history[s.loss_history.size() - 1 - k];
        *log << "pretrain " << r.model_names[i] << " step " << s.step << " loss " << fixed(recent / w, 4) << '\n'
             << std::flush;
      }
    });
    if (!state.model.all_finite()) throw DegenerateFitError("model " + r.model_names[i] + " diverged");
    if (write) save_checkpoint(config.out / "models" / r.model_names[i], state, {{"mixture", to_json(mix)}});
    r.states[i] = std::move(state);
  });

  std::vector<const TfmModel*> prior_models;
  for (std::size_t i = 0; i < config.priors.size(); ++i) prior_models.push_back(&r.states[i].model);
  if (log) *log << "gmatrix " << config.priors.size() << "x" << config.priors.size() << '\n' << std::flush;
  r.g = gen_matrix(config.priors, prior_models, config.gmatrix, config.jobs);

  std::vector<NamedModel> named;
  for (int i = 0; i < n_models; ++i) named.push_back({r.model_names[i], &r.states[i].model});
  if (log) *log << "perfvec over " << real.size() << " tables\n" << std::flush;
  r.p = perf_vector(named, real, config.perfvec, config.jobs);

  const int k = config.select_k > 0 ? config.select_k : static_cast<int>(config.priors.size());
  const Vector p_priors = r.p.values.head(static_cast<Eigen::Index>(config.priors.size()));
  for (int idx : select_priors(r.g.values, p_priors, k)) r.selection.push_back(config.priors[idx]);

  r.leaderboard = perf_leaderboard(r.p, derive_seed(config.seed, "leaderboard"));

  if (write) {
    const json cfg = to_json(config);
    write_json_file(config.out / "config.json", cfg);
    write_json_file(config.out / "G.json", to_json(r.g));
    write_json_file(config.out / "P.json", to_json(r.p));
    json sel = json::array();
    for (auto p : r.selection) sel.push_back(std::string(to_string(p)));
    json p_used = json::object();
    for (std::size_t i = 0; i < config.priors.size(); ++i)
      p_used[std::string(to_string(config.priors[i]))] = p_priors(static_cast<Eigen::Index>(i));
    write_json_file(config.out / "selection.json", {{"k", k}, {"order", sel}, {"P", p_used}});
    write_json_file(config.out / "leaderboard.json", to_json(r.leaderboard));
    std::ofstream(config.out / "summary.md", std::ios::binary) << summary_markdown(r);
    write_json_file(config.out / "run-manifest.json", {{"command", "experiment"},
                                                        {"config_hash", config_hash(cfg)},
                                                        {"seed", config.seed},
                                                        {"version", PRIORFORGE_VERSION},
                                                        {"config", cfg}});
  }
  return r;
}

}  // namespace priorforge
