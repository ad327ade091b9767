#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bdc/train.hpp"

using namespace bdc;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Small shared dataset, collected once per process.
const std::string& demo_dir() {
  static std::string dir = [] {
    const std::string d = "test_train_data";
    fs::remove_all(d);
    collect_demos("handover", 6, 1, d);
    return d;
  }();
  return dir;
}

TrainConfig tiny_train_config() {
  TrainConfig cfg;
  cfg.task = "handover";
  cfg.chunk_size = 8;
  cfg.frame_count = 2;
  cfg.batch_size = 4;
  cfg.total_steps = 30;
  cfg.warmup_steps = 5;
  cfg.log_every = 10;
  cfg.val_every = 15;
  cfg.width = 32;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  cfg.heads = 4;
  cfg.latent_dim = 8;
  cfg.ff_mult = 2;
  cfg.cnn_c1 = 8;
  cfg.cnn_c2 = 8;
  cfg.cnn_c3 = 8;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST_CASE("learning rate schedule endpoints") {
  TrainConfig cfg;
  cfg.base_lr = 1e-4;
  cfg.warmup_steps = 500;
  cfg.total_steps = 15000;
  CHECK(lr_at(0, cfg) == 0.0);
  CHECK(lr_at(250, cfg) == doctest::Approx(5e-5));
  CHECK(lr_at(500, cfg) == doctest::Approx(1e-4));
  CHECK(lr_at(15000, cfg) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::fabs(lr_at(15000, cfg)) < 1e-12);
}

TEST_CASE("random shift augmentation") {
  Image img;
  img.h = 8;
  img.w = 8;
  img.c = 1;
  img.px.assign(64, 0.0);

  SUBCASE("zero shift is the identity") {
    img.px[3 * 8 + 5] = 1.0;
    Rng rng(1);
    const Image out = random_shift_augment(img, 0, rng);
    CHECK(out.px == img.px);
  }
  SUBCASE("constant images are invariant under any shift") {
    Image flat = img;
    flat.px.assign(64, 0.25);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed);
      CHECK(random_shift_augment(flat, 2, rng).px == flat.px);
    }
  }
  SUBCASE("a (1, 0) shift moves a bright pixel by exactly one column") {
    img.px[4 * 8 + 4] = 1.0;
    // find a seed whose two offset draws give dx = +1, dy = 0
    bool tested = false;
    for (std::uint64_t seed = 0; seed < 200 && !tested; ++seed) {
      Rng probe(seed);
      const int sm = 1;
      const int ox = static_cast<int>(probe.uniform_int(2 * sm + 1));
      const int oy = static_cast<int>(probe.uniform_int(2 * sm + 1));
      if (ox - sm == 1 && oy - sm == 0) {
        Rng rng(seed);
        const Image out = random_shift_augment(img, sm, rng);
        // source x+1 lands at x: bright pixel moves one column left of the
        // sampled offset; verify exact single-column translation
        CHECK(out.px[4 * 8 + 3] == 1.0);
        CHECK(out.px[4 * 8 + 4] == 0.0);
        tested = true;
      }
    }
    CHECK(tested);
  }
  SUBCASE("oversized shift is rejected") {
    Rng rng(1);
    CHECK_THROWS(random_shift_augment(img, 4, rng));
  }
}

TEST_CASE("collect_demos writes successful episodes with a manifest") {
  const std::string dir = "test_collect_demos";
  fs::remove_all(dir);
  const DatasetManifest m = collect_demos("handover", 5, 7, dir);
  CHECK(m.episodes.size() == 5);
  for (const auto& e : m.episodes) CHECK(e.success);
  const DatasetManifest back = read_manifest(dir);
  CHECK(back.episodes.size() == 5);
  CHECK(back.task == "handover");
  const auto eps = load_dataset(dir);
  CHECK(eps.size() == 5);
  CHECK(eps[0].length() == TaskSpec::make(TaskId::handover).episode_len);
  fs::remove_all(dir);
}

TEST_CASE("collect_demos is byte-identical across identical runs") {
  const std::string d1 = "test_collect_a", d2 = "test_collect_b";
  fs::remove_all(d1);
  fs::remove_all(d2);
  collect_demos("side_pick", 3, 11, d1);
  collect_demos("side_pick", 3, 11, d2);
  for (const auto& entry : fs::directory_iterator(d1)) {
    const auto name = entry.path().filename();
    CHECK(read_file(entry.path()) == read_file(fs::path(d2) / name));
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("collect_demos with zero episodes writes an empty manifest") {
  const std::string dir = "test_collect_zero";
  fs::remove_all(dir);
  const DatasetManifest m = collect_demos("dual_pick", 0, 1, dir);
  CHECK(m.episodes.empty());
  CHECK(m.attempts == 0);
  CHECK(fs::exists(fs::path(dir) / "manifest.json"));
  fs::remove_all(dir);
}

TEST_CASE("train config file parsing and overrides") {
  const std::string path = "test_config.cfg";
  {
    std::ofstream os(path);
    os << "# comment line\n";
    os << "task = side_pick\n";
    os << "chunk_size=12\n";
    os << "prediction_weight = 0.5\n";
    os << "K = 50\n";
    os << "S_infer = 5\n";
  }
  TrainConfig cfg = TrainConfig::from_file(path);
  fs::remove(path);
  CHECK(cfg.task == "side_pick");
  CHECK(cfg.chunk_size == 12);
  CHECK(cfg.prediction_weight == 0.5);
  CHECK(cfg.diffusion_steps == 50);
  CHECK(cfg.infer_steps == 5);
  cfg.set("chunk_size", "20");
  CHECK(cfg.chunk_size == 20);
  CHECK_THROWS(cfg.set("no_such_key", "1"));
  {
    std::ofstream os("test_config2.cfg");
    os << cfg.serialize();
  }
  const TrainConfig back = TrainConfig::from_file("test_config2.cfg");
  fs::remove("test_config2.cfg");
  CHECK(back.serialize() == cfg.serialize());
}

TEST_CASE("AdamW with zero gradients shrinks weights by decay only") {
  auto p = Tensor<float>::from({3}, {1.0f, -2.0f, 0.5f}, true);
  AdamW<float> opt({p}, 0.01);
  std::vector<std::vector<float>> zero = {{0.f, 0.f, 0.f}};
  const double lr = 1e-3;
  opt.step(zero, lr);
  CHECK(p.data()[0] == doctest::Approx(1.0 * (1.0 - lr * 0.01)).epsilon(1e-7));
  CHECK(p.data()[1] == doctest::Approx(-2.0 * (1.0 - lr * 0.01)).epsilon(1e-7));
  CHECK(p.data()[2] == doctest::Approx(0.5 * (1.0 - lr * 0.01)).epsilon(1e-7));
}

TEST_CASE("perfect predictions give exactly zero loss") {
  Tape<double> t;
  auto target = Tensor<double>::from({2, 3}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6});
  CHECK(t.l1_loss(target, target).item() == 0.0);
  CHECK(t.mse_loss(target, target).item() == 0.0);
}

TEST_CASE("train_step losses decompose as action + w * video") {
  Trainer<float> trainer(tiny_train_config(), demo_dir(), "test_train_out");
  trainer.prepare();
  const auto batch = trainer.make_batch(1);
  const StepLosses losses = trainer.train_step(batch);
  CHECK(losses.total ==
        doctest::Approx(losses.action + 0.2 * losses.video).epsilon(1e-6));
  CHECK(losses.action > 0.0);
  CHECK(losses.video > 0.0);
}

TEST_CASE("train_step is reproducible for a fixed batch and seed") {
  StepLosses first{}, second{};
  for (int run = 0; run < 2; ++run) {
    Trainer<float> trainer(tiny_train_config(), demo_dir(), "test_train_out");
    trainer.prepare();
    const auto batch = trainer.make_batch(1);
    const StepLosses l = trainer.train_step(batch);
    if (run == 0)
      first = l;
    else
      second = l;
  }
  CHECK(first.action == second.action);
  CHECK(first.video == second.video);
  CHECK(first.total == second.total);
}

TEST_CASE("w = 0 still logs computed video losses and total equals action") {
  TrainConfig cfg = tiny_train_config();
  cfg.prediction_weight = 0.0;
  const std::string out = "test_train_w0";
  fs::remove_all(out);
  Trainer<float> trainer(cfg, demo_dir(), out);
  const TrainResult result = trainer.run();
  CHECK(fs::exists(result.checkpoint_path));
  std::ifstream csv(fs::path(out) / "metrics.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,lr,action_loss,video_loss,total_loss");
  int rows = 0;
  while (std::getline(csv, line)) {
    std::istringstream ls(line);
    std::string step, lr, a, v, tot;
    std::getline(ls, step, ',');
    std::getline(ls, lr, ',');
    std::getline(ls, a, ',');
    std::getline(ls, v, ',');
    std::getline(ls, tot, ',');
    CHECK(std::stod(v) > 0.0);           // computed and logged
    CHECK(std::stod(tot) == std::stod(a));  // but unweighted
    ++rows;
  }
  CHECK(rows == 3);  // steps 10, 20, 30
  fs::remove_all(out);
}

TEST_CASE("two identical runs produce byte-identical loss CSVs") {
  TrainConfig cfg = tiny_train_config();
  cfg.total_steps = 20;
  const std::string out1 = "test_train_rep1", out2 = "test_train_rep2";
  fs::remove_all(out1);
  fs::remove_all(out2);
  Trainer<float>(cfg, demo_dir(), out1).run();
  Trainer<float>(cfg, demo_dir(), out2).run();
  CHECK(read_file(fs::path(out1) / "metrics.csv") ==
        read_file(fs::path(out2) / "metrics.csv"));
  CHECK(read_file(fs::path(out1) / "checkpoint.bin") ==
        read_file(fs::path(out2) / "checkpoint.bin"));
  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("validation does not contribute to normalizer or gradients") {
  // Structural: train/val split is disjoint and covers all episodes.
  TrainConfig cfg = tiny_train_config();
  Trainer<float> trainer(cfg, demo_dir(), "test_train_out");
  trainer.prepare();
  CHECK(trainer.action_norm().fitted);
  // 6 episodes -> 1 validation (6/10 rounded up to at least 1), 5 train.
  // covered indirectly: batches never sample validation episodes; the
  // assertion here is that prepare() fitted stats and a full run still
  // leaves the stored bounds unchanged.
  const auto lo = trainer.action_norm().lo;
  for (int s = 1; s <= 3; ++s) trainer.train_step(trainer.make_batch(s));
  CHECK(trainer.action_norm().lo == lo);
}

TEST_CASE("dataset config mismatch is rejected") {
  TrainConfig cfg = tiny_train_config();
  cfg.frame_count = 9;  // > chunk_size
  CHECK_THROWS(Trainer<float>(cfg, demo_dir(), "x"));
  TrainConfig cfg2 = tiny_train_config();
  cfg2.warmup_steps = 100;
  cfg2.total_steps = 50;
  CHECK_THROWS(Trainer<float>(cfg2, demo_dir(), "x"));
}
