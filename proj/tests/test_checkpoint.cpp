#include "doctest.h"

#include "priorforge/checkpoint.hpp"
#include "priorforge/config_io.hpp"
#include "priorforge/errors.hpp"

#include <filesystem>
#include <fstream>

using namespace priorforge;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TrainState trained_state(Arch arch) {
  TfmConfig cfg;
  cfg.arch = arch;
  cfg.layers = 1;
  cfg.model_dim = 16;
  cfg.heads = 2;
  TrainHp hp;
  hp.batch = 2;
  hp.ranges.max_rows = 80;
  hp.ranges.max_features = 4;
  auto state = init_train_state(cfg, 17);
  train_steps(state, Mixture::single(PriorKind::DSRF), hp, 3);
  return state;
}

}  // namespace

TEST_CASE("checkpoint round trip is exact") {
  for (auto arch : {Arch::OneD, Arch::TwoD}) {
    TempDir dir("priorforge_ckpt_test");
    const auto state = trained_state(arch);
    save_checkpoint(dir.path / "ck", state, {{"note", "x"}});
    CHECK(fs::exists(dir.path / "ck" / "manifest.json"));
    const auto back = load_checkpoint(dir.path / "ck");
    CHECK(back.model == state.model);
    CHECK(back.adam_m == state.adam_m);
    CHECK(back.adam_v == state.adam_v);
    CHECK(back.step == 3);
    CHECK(back.seed == 17);
    CHECK(back.loss_history == state.loss_history);
    CHECK(load_model(dir.path / "ck") == state.model);
    const auto manifest = read_json_file(dir.path / "ck" / "manifest.json");
    CHECK(manifest["format"] == kCheckpointFormat);
    CHECK(manifest["extra"]["note"] == "x");
    CHECK(manifest["parameter_count"] == state.model.parameter_count());
  }
}

TEST_CASE("resumed training matches uninterrupted training") {
  TempDir dir("priorforge_ckpt_resume");
  TfmConfig cfg;
  cfg.layers = 1;
  cfg.model_dim = 16;
  cfg.heads = 2;
  TrainHp hp;
  hp.batch = 2;
  hp.ranges.max_rows = 80;
  hp.ranges.max_features = 4;
  const auto mix = Mixture::single(PriorKind::SCM);
  auto straight = init_train_state(cfg, 5);
  train_steps(straight, mix, hp, 4);
  auto first = init_train_state(cfg, 5);
  train_steps(first, mix, hp, 2);
  save_checkpoint(dir.path / "half", first);
  auto resumed = load_checkpoint(dir.path / "half");
  train_steps(resumed, mix, hp, 2);
  CHECK(resumed.model == straight.model);
  CHECK(resumed.loss_history == straight.loss_history);
}

TEST_CASE("damaged checkpoints are rejected") {
  TempDir dir("priorforge_ckpt_bad");
  const auto state = trained_state(Arch::OneD);
  const auto ck = dir.path / "ck";
  save_checkpoint(ck, state);

  SUBCASE("truncated tensors") {
    fs::resize_file(ck / "tensors.bin", fs::file_size(ck / "tensors.bin") - 8);
    CHECK_THROWS_AS(load_checkpoint(ck), IoError);
  }
  SUBCASE("trailing bytes") {
    std::ofstream(ck / "optimizer.bin", std::ios::app | std::ios::binary) << 'x';
    CHECK_THROWS_AS(load_checkpoint(ck), IoError);
  }
  SUBCASE("wrong format tag") {
    auto manifest = read_json_file(ck / "manifest.json");
    manifest["format"] = "other";
    write_json_file(ck / "manifest.json", manifest);
    CHECK_THROWS_AS(load_model(ck), IoError);
  }
  SUBCASE("missing directory") { CHECK_THROWS_AS(load_model(dir.path / "nope"), IoError); }
}
