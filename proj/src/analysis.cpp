#include "priorforge/analysis.hpp"

#include "priorforge/archive.hpp"
#include "priorforge/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

namespace priorforge {

double score_episode(MetricKind metric, const Prediction& pred, const Episode& episode) {
  const Vector y = episode.raw_query_targets();
  const std::span<const double> labels(y.data(), static_cast<std::size_t>(y.size()));
  const bool cls = episode.table->task.is_classification();
  if (cls != is_classification_metric(metric))
    throw ConfigError("metric " + std::string(to_string(metric)) + " does not fit the table's task");
  switch (metric) {
    case MetricKind::AUC: return auc_ovo(pred.probs, labels);
    case MetricKind::ACC: return classification_metrics(pred.probs, labels).acc;
    case MetricKind::CE: return classification_metrics(pred.probs, labels).ce;
    default: break;
  }
  const auto rm = regression_metrics(std::span<const double>(pred.values.data(), pred.values.size()), labels);
  if (metric == MetricKind::R2) return rm.r2;
  if (metric == MetricKind::RMSE) return rm.rmse;
  return rm.mae;
}

namespace {

bool query_has_two_classes(const Episode& ep) {
  if (!ep.table->task.is_classification()) return true;
  std::set<double> seen;
  for (int i : ep.query_idx) {
    seen.insert(ep.table->target(i));
    if (seen.size() >= 2) return true;
  }
  return false;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(jobs, n); ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------

void GenProtocol::validate() const {
  if (tables < 1) throw ConfigError("gmatrix tables must be >= 1");
  if (support < 1 || query < 1 || support + query > rows)
    throw ConfigError("gmatrix support/query must be >= 1 and fit in rows");
  if (rows > kMaxEvalRows) throw ConfigError("gmatrix rows must be <= " + std::to_string(kMaxEvalRows));
  ranges.validate();
}

double GenMatrix::at(PriorKind trained, PriorKind tested) const {
  const auto find = [&](PriorKind k) {
    const auto it = std::find(priors.begin(), priors.end(), k);
    if (it == priors.end()) throw ConfigError("prior " + std::string(to_string(k)) + " not in matrix");
    return static_cast<Eigen::Index>(it - priors.begin());
  };
  return values(find(trained), find(tested));
}

Episode gen_test_episode(PriorKind prior, int index, const GenProtocol& protocol, bool* usable) {
  const TaskFamily family =
      is_classification_metric(protocol.metric) ? TaskFamily::Classification : TaskFamily::Regression;
  const Rng root = Rng(protocol.seed).child("gmatrix").child(std::string(to_string(prior))).child(
      static_cast<std::uint64_t>(index));
  auto draw = [&](const Rng& base) {
    Rng cfg_rng = base.child("config");
    DatasetConfig cfg = sample_dataset_config(family, cfg_rng, protocol.ranges);
    cfg.n_rows = protocol.rows;
    Rng table_rng = base.child("table");
    auto table = std::make_shared<const Table>(sample_prior(prior, cfg, table_rng));
    Rng split_rng = base.child("split");
    return make_episode(std::move(table), protocol.support, protocol.query, split_rng);
  };
  Episode ep = draw(root);
  bool ok = query_has_two_classes(ep);
  if (!ok) {
    ep = draw(root.child("retry"));
    ok = query_has_two_classes(ep);
  }
  if (usable) *usable = ok;
  return ep;
}

GenMatrix gen_matrix(const std::vector<PriorKind>& priors, const std::vector<const TfmModel*>& models,
                     const GenProtocol& protocol, int jobs) {
  protocol.validate();
  if (priors.size() != models.size() || priors.empty())
    throw ConfigError("gen_matrix needs one model per prior");
  const int m = static_cast<int>(priors.size());
  GenMatrix g;
  g.priors = priors;
  g.metric = protocol.metric;
  g.protocol = protocol;
  g.values.setZero(m, m);
  g.stderrs.setZero(m, m);
  g.counts.setZero(m, m);
  g.scores.assign(m, std::vector<std::vector<double>>(m));

  parallel_for(m, jobs, [&](int j) {
    for (int t = 0; t < protocol.tables; ++t) {
      bool usable = true;
      const Episode ep = gen_test_episode(priors[j], t, protocol, &usable);
      if (!usable) continue;
      const EpisodeInputs inputs = episode_inputs(ep);
      for (int i = 0; i < m; ++i) {
        try {
          const Prediction pred = icl_predict(*models[i], inputs, ep.normalizer);
          g.scores[i][j].push_back(score_episode(protocol.metric, pred, ep));
        } catch (const Error& e) {
          throw Error(e.kind(), "cell (" + std::string(to_string(priors[i])) + ", " +
                                    std::string(to_string(priors[j])) + ") table " + std::to_string(t) + ": " +
                                    e.what());
        }
      }
    }
  });

  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const auto& s = g.scores[i][j];
      if (s.empty())
        throw SingleClassError("cell (" + std::string(to_string(priors[i])) + ", " + std::string(to_string(priors[j])) +
                               ") has no usable tables");
      g.values(i, j) = mean_of(s);
      g.stderrs(i, j) = stderr_of(s);
      g.counts(i, j) = static_cast<int>(s.size());
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

void PerfProtocol::validate() const {
  if (splits < 1) throw ConfigError("perfvec splits must be >= 1");
  if (!(support_frac > 0.0 && support_frac < 1.0)) throw ConfigError("perfvec support_frac must be in (0, 1)");
  if (max_rows < 2 || max_rows > kMaxEvalRows) throw ConfigError("perfvec max_rows out of range");
}

PerfVector perf_vector(const std::vector<NamedModel>& models, const std::vector<RealTable>& tables,
                       const PerfProtocol& protocol, int jobs) {
  protocol.validate();
  if (models.empty() || tables.empty()) throw ConfigError("perf_vector needs models and tables");
  const int m = static_cast<int>(models.size());
  const int nt = static_cast<int>(tables.size());
  PerfVector pv;
  pv.metric = protocol.metric;
  pv.protocol = protocol;
  for (const auto& nm : models) pv.models.push_back(nm.name);
  for (const auto& t : tables) pv.tables.push_back(t.name);
  pv.per_table = Matrix::Constant(m, nt, std::numeric_limits<double>::quiet_NaN());

  parallel_for(nt, jobs, [&](int t) {
    const Rng root = Rng(protocol.seed).child("perfvec").child(tables[t].name);
    Rng cap_rng = root.child("cap");
    CapOptions cap;
    cap.max_rows = protocol.max_rows;
    auto table = std::make_shared<const Table>(cap_table(tables[t].table, cap, cap_rng));
    const int n = table->rows();
    const int s = std::clamp(static_cast<int>(std::lround(protocol.support_frac * n)), 1, n - 1);
    std::vector<std::vector<double>> scores(m);
    for (int k = 0; k < protocol.splits; ++k) {
      Rng split_rng = root.child("split", static_cast<std::uint64_t>(k));
      Episode ep = make_episode(table, s, n - s, split_rng);
      if (!query_has_two_classes(ep)) {
        Rng retry = root.child("retry", static_cast<std::uint64_t>(k));
        ep = make_episode(table, s, n - s, retry);
        if (!query_has_two_classes(ep)) continue;
      }
      const EpisodeInputs inputs = episode_inputs(ep);
      for (int i = 0; i < m; ++i) {
        const Prediction pred = icl_predict(*models[i].model, inputs, ep.normalizer);
        scores[i].push_back(score_episode(protocol.metric, pred, ep));
      }
    }
    for (int i = 0; i < m; ++i)
      if (!scores[i].empty()) pv.per_table(i, t) = mean_of(scores[i]);
  });

  pv.values.resize(m);
  for (int i = 0; i < m; ++i) {
    double sum = 0.0;
    int used = 0;
    for (int t = 0; t < nt; ++t) {
      if (std::isnan(pv.per_table(i, t))) continue;
      sum += pv.per_table(i, t);
      ++used;
    }
    if (used == 0) throw SingleClassError("no usable split on any table for model '" + pv.models[i] + "'");
    pv.values(i) = sum / used;
  }
  return pv;
}

// ---------------------------------------------------------------------------

std::vector<int> select_priors(const Matrix& g, const Vector& p, int k) {
  const int m = static_cast<int>(p.size());
  if (g.rows() != m || g.cols() != m) throw DimError("G must be square and aligned with P");
  if (k < 1 || k > m) throw ConfigError("k must be in [1, " + std::to_string(m) + "]");
  std::vector<int> order;
  std::vector<bool> taken(m, false);
  int first = 0;
  for (int j = 1; j < m; ++j)
    if (p(j) > p(first)) first = j;
  order.push_back(first);
  taken[first] = true;
  while (static_cast<int>(order.size()) < k) {
    int best = -1;
    double best_cover = 0.0;
    for (int j = 0; j < m; ++j) {
      if (taken[j]) continue;
      double cover = -std::numeric_limits<double>::infinity();
      for (int i : order) cover = std::max(cover, g(i, j));
      const bool better = best < 0 || cover < best_cover || (cover == best_cover && p(j) > p(best));
      if (better) {
        best = j;
        best_cover = cover;
      }
    }
    order.push_back(best);
    taken[best] = true;
  }
  return order;
}

// ---------------------------------------------------------------------------

DecisionGrid decision_grid(const TfmModel& model, const Table& table, int resolution, Rng& rng) {
  if (table.cols() != 2) throw DimError("decision grid needs a 2-feature table, got d=" + std::to_string(table.cols()));
  if (!table.task.is_classification()) throw ConfigError("decision grid needs a classification table");
  if (resolution < 2) throw ConfigError("resolution must be >= 2");
  const int n = table.rows();
  const int s = std::clamp(static_cast<int>(std::lround(0.1 * n)), 1, n - 1);
  const Episode ep = make_episode(table, s, n - s, rng);

  const int res = resolution;
  Matrix lattice(static_cast<Eigen::Index>(res) * res, 2);
  double lo[2], hi[2];
  for (int a = 0; a < 2; ++a) {
    lo[a] = table.features.col(a).minCoeff() - 0.5;
    hi[a] = table.features.col(a).maxCoeff() + 0.5;
  }
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c) {
      lattice(r * res + c, 0) = lo[0] + (hi[0] - lo[0]) * c / (res - 1);
      lattice(r * res + c, 1) = lo[1] + (hi[1] - lo[1]) * r / (res - 1);
    }

  EpisodeInputs in;
  in.x_support = ep.support_inputs();
  in.y_support = ep.support_targets();
  in.x_query = ep.normalizer.apply(lattice, true);
  in.task = table.task;
  const Prediction pred = icl_predict(model, in, ep.normalizer);

  DecisionGrid grid;
  grid.resolution = res;
  grid.num_classes = table.task.num_classes;
  grid.rows.resize(lattice.rows(), 3 + grid.num_classes);
  grid.rows.leftCols(2) = lattice;
  grid.rows.middleCols(2, grid.num_classes) = pred.probs;
  grid.rows.col(2 + grid.num_classes) = pred.labels;
  return grid;
}

void write_decision_grid_csv(const std::filesystem::path& path, const DecisionGrid& grid) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "x,y";
  for (int c = 0; c < grid.num_classes; ++c) out << ",p_class" << c;
  out << ",argmax\n";
  for (Eigen::Index r = 0; r < grid.rows.rows(); ++r) {
    for (Eigen::Index c = 0; c < grid.rows.cols(); ++c) out << (c ? "," : "") << format_real(grid.rows(r, c));
    out << '\n';
  }
}

}  // namespace priorforge
