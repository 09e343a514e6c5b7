#include "priorforge/checkpoint.hpp"

#include "priorforge/config_io.hpp"
#include "priorforge/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace priorforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
    return r;
  }
  return v;
}

void write_blob(const fs::path& path, const std::vector<const Matrix*>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const Matrix* m : tensors) {
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(m->data()[i]));
      out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
  }
  if (!out) throw IoError("short write to " + path.string());
}

void read_blob(const fs::path& path, const std::vector<Matrix*>& tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  for (Matrix* m : tensors) {
    for (Eigen::Index i = 0; i < m->size(); ++i) {
      std::uint64_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), sizeof bits);
      if (!in) throw IoError(path.string() + " is truncated");
      m->data()[i] = std::bit_cast<double>(to_le(bits));
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) throw IoError(path.string() + " has trailing bytes");
}

}  // namespace

void save_checkpoint(const fs::path& dir, const TrainState& state, const json& extra) {
  fs::create_directories(dir);
  const auto& model = state.model;
  json index = json::array();
  std::size_t offset = 0;
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& p = model.params[i];
    index.push_back({{"name", model.names[i]}, {"rows", p.rows()}, {"cols", p.cols()}, {"offset", offset}});
    offset += static_cast<std::size_t>(p.size()) * sizeof(double);
  }
  json manifest = {{"format", kCheckpointFormat},
                   {"config", to_json(model.config)},
                   {"step", state.step},
                   {"seed", state.seed},
                   {"parameter_count", model.parameter_count()},
                   {"tensors", index},
                   {"extra", extra}};
  write_json_file(dir / "manifest.json", manifest);

  std::vector<const Matrix*> params;
  for (const auto& p : model.params) params.push_back(&p);
  write_blob(dir / "tensors.bin", params);

  std::vector<const Matrix*> moments;
  for (const auto& m : state.adam_m) moments.push_back(&m);
  for (const auto& v : state.adam_v) moments.push_back(&v);
  write_blob(dir / "optimizer.bin", moments);

  write_json_file(dir / "history.json", json{{"loss", state.loss_history}});
}

namespace {

TrainState read_state(const fs::path& dir, bool with_optimizer) {
  if (!fs::is_regular_file(dir / "manifest.json")) throw IoError(dir.string() + " has no checkpoint manifest");
  const json manifest = read_json_file(dir / "manifest.json");
  if (manifest.value("format", "") != kCheckpointFormat)
    throw IoError(dir.string() + " is not a " + kCheckpointFormat + " checkpoint");
  TrainState state;
  state.step = manifest.at("step").get<int>();
  state.seed = manifest.at("seed").get<std::uint64_t>();
  auto& model = state.model;
  model.config = tfm_config_from_json(manifest.at("config"));
  for (const auto& t : manifest.at("tensors")) {
    model.names.push_back(t.at("name").get<std::string>());
    model.params.emplace_back(t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>());
  }
  // The stored index must match what this build would create.
  Rng probe(0);
  const TfmModel fresh = TfmModel::init(model.config, probe);
  if (fresh.names != model.names) throw IoError(dir.string() + ": tensor index does not match the config");
  for (std::size_t i = 0; i < fresh.params.size(); ++i)
    if (fresh.params[i].rows() != model.params[i].rows() || fresh.params[i].cols() != model.params[i].cols())
      throw IoError(dir.string() + ": shape mismatch for " + model.names[i]);

  std::vector<Matrix*> params;
  for (auto& p : model.params) params.push_back(&p);
  read_blob(dir / "tensors.bin", params);

  if (with_optimizer) {
    for (const auto& p : model.params) {
      state.adam_m.push_back(Matrix::Zero(p.rows(), p.cols()));
      state.adam_v.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
    std::vector<Matrix*> moments;
    for (auto& m : state.adam_m) moments.push_back(&m);
    for (auto& v : state.adam_v) moments.push_back(&v);
    read_blob(dir / "optimizer.bin", moments);
    state.loss_history = read_json_file(dir / "history.json").at("loss").get<std::vector<double>>();
  }
  return state;
}

}  // namespace

TrainState load_checkpoint(const fs::path& dir) { return read_state(dir, true); }

TfmModel load_model(const fs::path& dir) { return read_state(dir, false).model; }

}  // namespace priorforge
