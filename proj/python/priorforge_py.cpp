#include "priorforge/analysis.hpp"
#include "priorforge/checkpoint.hpp"
#include "priorforge/config_io.hpp"
#include "priorforge/errors.hpp"
#include "priorforge/experiment.hpp"
#include "priorforge/metrics.hpp"
#include "priorforge/priors.hpp"
#include "priorforge/tfm.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>

namespace py = pybind11;
using namespace priorforge;

namespace {

Mixture mixture_from(const py::object& prior) {
  if (py::isinstance<py::str>(prior)) return Mixture::single(parse_prior_kind(prior.cast<std::string>()));
  std::map<PriorKind, double> weights;
  for (const auto& [k, v] : prior.cast<py::dict>()) weights[parse_prior_kind(k.cast<std::string>())] = v.cast<double>();
  return Mixture(std::move(weights));
}

py::dict table_dict(const Table& t) {
  py::dict d;
  d["features"] = t.features;
  d["target"] = t.target;
  d["task"] = std::string(to_string(t.task.family));
  d["num_classes"] = t.task.is_classification() ? t.task.num_classes : 0;
  std::vector<int> card;
  for (const auto& c : t.col_kinds) card.push_back(c.cardinality);
  d["cardinalities"] = card;
  d["prior"] = t.prior_tag ? py::object(py::str(std::string(to_string(*t.prior_tag)))) : py::object(py::none());
  return d;
}

// Builds a one-off episode: support rows first, then query rows.
Episode make_icl_episode(const Matrix& x_support, const Vector& y_support, const Matrix& x_query, bool regression) {
  if (x_support.cols() != x_query.cols()) throw DimError("support and query feature counts differ");
  if (x_support.rows() != y_support.size()) throw DimError("support rows and labels differ in length");
  auto table = std::make_shared<Table>();
  const auto s = x_support.rows(), q = x_query.rows();
  table->features.resize(s + q, x_support.cols());
  table->features.topRows(s) = x_support;
  table->features.bottomRows(q) = x_query;
  table->target = Vector::Zero(s + q);
  table->target.head(s) = y_support;
  table->col_kinds.assign(static_cast<std::size_t>(x_support.cols()), ColumnKind::continuous());
  table->task = regression ? TaskKind::regression()
                           : TaskKind::classification(std::max(2, static_cast<int>(y_support.maxCoeff()) + 1));
  std::vector<int> sup(static_cast<std::size_t>(s)), qry(static_cast<std::size_t>(q));
  for (Eigen::Index i = 0; i < s; ++i) sup[i] = static_cast<int>(i);
  for (Eigen::Index i = 0; i < q; ++i) qry[i] = static_cast<int>(s + i);
  return episode_from_indices(std::move(table), std::move(sup), std::move(qry));
}

}  // namespace

PYBIND11_MODULE(_priorforge, m) {
  m.doc() = "Synthetic tabular priors and a toy in-context tabular transformer";
  m.attr("__version__") = PRIORFORGE_VERSION;

  // Messages carry the error kind, e.g. "ConfigError: unknown prior 'x'".
  static py::handle base = py::exception<Error>(m, "PriorforgeError").release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      PyErr_SetString(base.ptr(), (e.kind() + ": " + e.what()).c_str());
    }
  });

  m.attr("PRIORS") = [] {
    std::vector<std::string> names;
    for (auto k : kAllPriors) names.emplace_back(to_string(k));
    return names;
  }();

  m.def(
      "generate",
      [](const py::object& prior, const std::string& task, std::uint64_t seed, int min_features, int max_features,
         int min_rows, int max_rows, int max_classes) {
        ConfigRanges r;
        r.min_features = min_features;
        r.max_features = max_features;
        r.min_rows = min_rows;
        r.max_rows = max_rows;
        r.max_classes = max_classes;
        r.validate();
        Rng rng(seed);
        return table_dict(mixture_sample(mixture_from(prior), parse_task_family(task), rng, r));
      },
      py::arg("prior"), py::arg("task") = "classification", py::arg("seed") = 0, py::arg("min_features") = 2,
      py::arg("max_features") = kMaxFeatures, py::arg("min_rows") = 64, py::arg("max_rows") = kMaxRows,
      py::arg("max_classes") = kMaxClasses,
      "Sample one table from a prior name or a {prior: weight} mixture.");

  py::class_<TfmConfig>(m, "TfmConfig")
      .def(py::init<>())
      .def_property(
          "arch", [](const TfmConfig& c) { return std::string(to_string(c.arch)); },
          [](TfmConfig& c, const std::string& a) { c.arch = parse_arch(a); })
      .def_readwrite("layers", &TfmConfig::layers)
      .def_readwrite("model_dim", &TfmConfig::model_dim)
      .def_readwrite("heads", &TfmConfig::heads)
      .def_readwrite("mlp_ratio", &TfmConfig::mlp_ratio);

  py::class_<TrainHp>(m, "TrainHp")
      .def(py::init<>())
      .def_readwrite("steps", &TrainHp::steps)
      .def_readwrite("batch", &TrainHp::batch)
      .def_readwrite("lr", &TrainHp::lr)
      .def_readwrite("clip_norm", &TrainHp::clip_norm)
      .def_property(
          "task", [](const TrainHp& h) { return std::string(to_string(h.task)); },
          [](TrainHp& h, const std::string& t) { h.task = parse_task_family(t); })
      .def_property(
          "max_rows", [](const TrainHp& h) { return h.ranges.max_rows; },
          [](TrainHp& h, int v) { h.ranges.max_rows = v; })
      .def_property(
          "max_features", [](const TrainHp& h) { return h.ranges.max_features; },
          [](TrainHp& h, int v) { h.ranges.max_features = v; })
      .def_property(
          "max_classes", [](const TrainHp& h) { return h.ranges.max_classes; },
          [](TrainHp& h, int v) { h.ranges.max_classes = v; });

  py::class_<TrainState>(m, "Model")
      .def_static(
          "pretrain",
          [](const py::object& prior, const TfmConfig& config, const TrainHp& hp, std::uint64_t seed) {
            const Mixture mix = mixture_from(prior);
            py::gil_scoped_release release;
            return pretrain(mix, config, hp, seed);
          },
          py::arg("prior"), py::arg("config") = TfmConfig{}, py::arg("hp") = TrainHp{}, py::arg("seed") = 0)
      .def_static("load", [](const std::filesystem::path& dir) { return load_checkpoint(dir); })
      .def("save", [](const TrainState& s, const std::filesystem::path& dir) { save_checkpoint(dir, s); })
      .def_readonly("step", &TrainState::step)
      .def_readonly("seed", &TrainState::seed)
      .def_readonly("loss_history", &TrainState::loss_history)
      .def_property_readonly("parameter_count", [](const TrainState& s) { return s.model.parameter_count(); })
      .def(
          "predict_proba",
          [](const TrainState& s, const Matrix& x_support, const Vector& y_support, const Matrix& x_query) {
            return Matrix(icl_predict(s.model, make_icl_episode(x_support, y_support, x_query, false)).probs);
          },
          py::arg("x_support"), py::arg("y_support"), py::arg("x_query"),
          "Class probabilities for the query rows given labeled support rows.")
      .def(
          "predict",
          [](const TrainState& s, const Matrix& x_support, const Vector& y_support, const Matrix& x_query) {
            return Vector(icl_predict(s.model, make_icl_episode(x_support, y_support, x_query, true)).values);
          },
          py::arg("x_support"), py::arg("y_support"), py::arg("x_query"), "Regression predictions.");

  m.def(
      "auc_ovo", [](const Matrix& probs, const std::vector<double>& labels) { return auc_ovo(probs, labels); },
      py::arg("probs"), py::arg("labels"));

  m.def(
      "select_priors", [](const Matrix& g, const Vector& p, int k) { return select_priors(g, p, k); }, py::arg("g"),
      py::arg("p"), py::arg("k"), "Greedy forward selection; returns indices into the prior list.");

  m.def(
      "leaderboard",
      [](std::vector<std::string> models, std::vector<std::string> datasets, const Matrix& errors, int bootstrap,
         std::uint64_t seed) {
        const auto lb = ranking_metrics(std::move(models), std::move(datasets), errors, {bootstrap, seed});
        py::list out;
        for (const auto& e : lb.entries) {
          py::dict d;
          d["model"] = e.model;
          d["avg_rank"] = e.avg_rank;
          d["elo"] = e.elo;
          d["elo_lo"] = e.elo_lo;
          d["elo_hi"] = e.elo_hi;
          d["winrate"] = e.winrate;
          d["racc"] = e.racc;
          d["champion_delta"] = e.champion_delta;
          d["mean_error"] = e.mean_error;
          out.append(d);
        }
        return out;
      },
      py::arg("models"), py::arg("datasets"), py::arg("errors"), py::arg("bootstrap") = 1000, py::arg("seed") = 0,
      "Ranking metrics from a models x datasets error grid.");
}
