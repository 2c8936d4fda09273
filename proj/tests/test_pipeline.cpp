#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "maeloc/error.hpp"
#include "maeloc/pipeline/config.hpp"
#include "maeloc/pipeline/dataset.hpp"
#include "maeloc/pipeline/evaluate.hpp"
#include "maeloc/pipeline/manifest.hpp"
#include "maeloc/pipeline/plots.hpp"
#include "maeloc/pipeline/train.hpp"
#include "maeloc/room/rir.hpp"
#include "maeloc/room/scene_io.hpp"
#include "maeloc/signal/dsp.hpp"
#include "test_util.hpp"

using namespace maeloc;
using namespace maeloc::pipeline;
namespace fs = std::filesystem;

namespace {

DatasetSpec small_spec(int count, std::size_t length, std::uint64_t seed = 1) {
  DatasetSpec d;
  d.count = count;
  d.seed = seed;
  d.sampler.room_dims = room::Vec3(2.0, 1.8, 1.5);
  d.sampler.length = length;
  d.sampler.t60_min = d.sampler.t60_max = 0.0;
  d.sampler.source_margin = 0.2;
  d.sampler.rir_max_seconds = 0.02;
  return d;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TrainConfig tiny_train(const std::string& run_dir) {
  TrainConfig c = desk_preset();
  c.mask_mode = model::MaskMode::fixed;
  c.augment_mirror = false;
  c.epochs = 4;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.max_shift = 16;
  c.val_fraction = 0.25;
  c.seed = 5;
  c.run_dir = run_dir;
  c.model.d = 16;
  c.model.depth = 1;
  c.model.heads = 2;
  c.model.expansion = 2;
  c.model.N = 64;
  c.model.tau = 8;
  c.model.use_tdoa = false;
  c.loss.lambda_audio = 0.0;
  return c;
}

/// Predicts a fixed point for every frame.
class FixedPredictor : public Predictor {
 public:
  explicit FixedPredictor(room::Vec3 p) : p_(p) {}
  std::string name() const override { return "fixed"; }
  std::vector<FramePrediction> predict(const std::vector<const room::Scene*>&,
                                       const std::vector<const model::Example*>& ex) override {
    std::vector<FramePrediction> out(ex.size());
    for (auto& f : out) f.source = p_;
    return out;
  }

 private:
  room::Vec3 p_;
};

/// Balanced-tag check: every element closes in order and text has no bare '<' or '&'.
bool well_formed_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  bool root_seen = false;
  while (i < s.size()) {
    if (s[i] == '&') {
      const auto semi = s.find(';', i);
      if (semi == std::string::npos) return false;
      const std::string ent = s.substr(i, semi - i + 1);
      if (ent != "&lt;" && ent != "&gt;" && ent != "&amp;" && ent != "&quot;" && ent != "&apos;") return false;
      i = semi + 1;
      continue;
    }
    if (s[i] != '<') {
      ++i;
      continue;
    }
    const auto close = s.find('>', i);
    if (close == std::string::npos) return false;
    std::string tag = s.substr(i + 1, close - i - 1);
    i = close + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?') continue;
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
      continue;
    }
    if (std::count(tag.begin(), tag.end(), '"') % 2 != 0) return false;
    const bool self = tag.back() == '/';
    const std::string name = tag.substr(0, tag.find_first_of(" /"));
    if (stack.empty()) {
      if (root_seen) return false;
      root_seen = true;
    }
    if (!self) stack.push_back(name);
  }
  return root_seen && stack.empty();
}

}  // namespace

TEST_CASE("Key-value configs", "[pipeline][config]") {
  auto kv = KeyValues::parse("# comment\nepochs = 7\nlr=0.002\nmask_mode = random\nuse_tdoa = false\n; other\n");
  CHECK(kv.get("epochs", 0) == 7);
  CHECK(kv.get("lr", 0.0) == Catch::Approx(0.002));
  CHECK(kv.get("missing", std::string("x")) == "x");
  const auto unused = kv.unused();
  CHECK(std::find(unused.begin(), unused.end(), "mask_mode") != unused.end());

  const TrainConfig c = train_config_from(kv);
  CHECK(c.epochs == 7);
  CHECK(c.mask_mode == model::MaskMode::random);
  CHECK_FALSE(c.model.use_tdoa);
  CHECK(c.model.d == 64);  // desk preset underneath
  CHECK(kv.unused().empty());

  const TrainConfig back = train_config_from(to_key_values(c));
  CHECK(to_key_values(back).to_string() == to_key_values(c).to_string());

  const TrainConfig paper = paper_preset();
  CHECK(paper.epochs == 500);
  CHECK(paper.batch_size == 256);
  CHECK(paper.lr == 5e-4);
  CHECK(paper.weight_decay == 0.1);
  const TrainConfig desk = desk_preset();
  CHECK(desk.model.d == 64);
  CHECK(desk.model.depth == 2);
  CHECK(desk.model.N == 512);
  CHECK(desk.batch_size == 32);
  CHECK(desk.epochs == 60);
  CHECK(desk_dataset_spec().count == 2000);

  KeyValues bad;
  bad.set("use_tdoa", "maybe");
  CHECK_THROWS_AS(train_config_from(bad), InvalidArgument);
  CHECK_THROWS_AS(bad.set_assignment("novalue"), InvalidArgument);
  bad.set_assignment(" epochs = 3 ");
  CHECK(bad.get("epochs", 0) == 3);

  DatasetSpec d = small_spec(3, 128);
  KeyValues dk;
  write_dataset_spec(dk, d);
  const DatasetSpec d2 = dataset_spec_from(dk);
  KeyValues dk2;
  write_dataset_spec(dk2, d2);
  CHECK(dk.to_string() == dk2.to_string());
}

TEST_CASE("Dataset generation", "[pipeline][dataset]") {
  const auto dir = maeloc::testing::scratch_dir("dataset");
  DatasetSpec spec = small_spec(100, 256, 3);
  spec.sampler.source = room::SourceKind::speech_shaped;
  spec.sampler.snr_min = 10.0;
  spec.sampler.snr_max = 30.0;
  const auto scenes = build_dataset(spec, dir / "a");

  const auto index = room::read_index(dir / "a");
  REQUIRE(index.size() == 100);
  for (const auto& r : index) {
    CHECK(fs::exists(dir / "a" / (r.id + ".src.wav")));
    for (int m = 1; m <= 6; ++m) {
      CHECK(fs::exists(dir / "a" / (r.id + ".mic" + std::to_string(m) + ".wav")));
      CHECK(fs::exists(dir / "a" / (r.id + ".clean" + std::to_string(m) + ".wav")));
    }
  }
  for (const auto& s : scenes) CHECK(passes_gate(s, spec.gate_db));

  // what comes back from disk is what was generated
  const auto loaded = room::read_dataset(dir / "a");
  REQUIRE(loaded.size() == scenes.size());
  for (std::size_t k = 0; k < scenes.size(); k += 17) {
    CHECK(loaded[k].received[2].samples == scenes[k].received[2].samples);
    CHECK(loaded[k].source_signal.samples == scenes[k].source_signal.samples);
  }

  build_dataset(spec, dir / "b");
  CHECK(read_file(dir / "a" / "index.txt") == read_file(dir / "b" / "index.txt"));
  CHECK(dataset_fingerprint(dir / "a") == dataset_fingerprint(dir / "b"));
  spec.seed = 4;
  spec.count = 5;
  build_dataset(spec, dir / "c");
  CHECK(dataset_fingerprint(dir / "a") != dataset_fingerprint(dir / "c"));
}

TEST_CASE("A strict power gate forces redraws", "[pipeline][dataset]") {
  DatasetSpec spec = small_spec(20, 256, 8);
  spec.sampler.source = room::SourceKind::speech_shaped;
  spec.gate_db = -25.0;
  const auto scenes = generate_scenes(spec);
  REQUIRE(scenes.size() == 20);
  for (const auto& s : scenes) CHECK(passes_gate(s, -25.0));
  spec.gate_db = 50.0;  // above full scale: nothing passes
  spec.count = 1;
  CHECK_THROWS_AS(generate_scenes(spec), DegenerateSignal);
}

TEST_CASE("Augmentation shifts every channel together", "[pipeline][augment]") {
  auto spec = small_spec(10, 512 + 1600, 21);
  spec.sampler.source = room::SourceKind::white;
  const auto scenes = generate_scenes(spec);
  const int tau = scenes[0].room.max_delay_samples();
  AugmentConfig cfg;
  cfg.frame_len = 512;
  cfg.max_shift = 800;

  SECTION("an 800-sample shift moves every channel by 800 samples") {
    Augmentation a;
    a.shift = 800;
    const auto& s = scenes[0];
    const auto out = augment(s, a, cfg);
    auto check = [&](const signal::AudioFrame& before, const signal::AudioFrame& after) {
      for (std::size_t n = 0; n + 800 < before.size(); n += 7) REQUIRE(after.samples[n] == before.samples[n + 800]);
    };
    check(s.source_signal, out.source_signal);
    for (int m = 0; m < 6; ++m) {
      check(s.received[static_cast<std::size_t>(m)], out.received[static_cast<std::size_t>(m)]);
      check(s.clean[static_cast<std::size_t>(m)], out.clean[static_cast<std::size_t>(m)]);
    }
    CHECK(out.source_pos == s.source_pos);
    CHECK(out.mic_pos == s.mic_pos);
  }

  SECTION("shift 0 at infinite SNR is the identity") {
    Augmentation a;
    const auto out = augment(scenes[1], a, cfg);
    CHECK(out.source_signal.samples == scenes[1].source_signal.samples);
    for (int m = 0; m < 6; ++m) CHECK(out.received[static_cast<std::size_t>(m)].samples == scenes[1].received[static_cast<std::size_t>(m)].samples);
  }

  SECTION("pairwise delays survive augmentation") {
    cfg.noise = false;
    int same = 0, total = 0;
    for (std::size_t k = 0; k < scenes.size(); ++k) {
      const auto out = augment(scenes[k], 100 + k, cfg);
      const std::size_t off = window_offset(out.length(), 512, 0);
      auto win = [&](const signal::AudioFrame& f) {
        return signal::AudioFrame(std::vector<double>(f.samples.begin() + static_cast<long>(off),
                                                      f.samples.begin() + static_cast<long>(off) + 512));
      };
      for (int i = 0; i < 6; ++i)
        for (int j = i + 1; j < 6; ++j) {
          const int before = signal::gcc_phat(win(scenes[k].received[static_cast<std::size_t>(i)]),
                                              win(scenes[k].received[static_cast<std::size_t>(j)]), tau)
                                 .argmax_lag();
          const int after = signal::gcc_phat(win(out.received[static_cast<std::size_t>(i)]),
                                             win(out.received[static_cast<std::size_t>(j)]), tau)
                                .argmax_lag();
          // both integer neighbours are valid answers near a half-integer delay
          const double t = scenes[k].tdoa_samples(i + 1, j + 1);
          if (std::abs(std::abs(t - std::floor(t)) - 0.5) < 0.1) continue;
          same += before == after;
          ++total;
          CHECK(std::abs(after - static_cast<int>(std::lround(scenes[k].tdoa_samples(i + 1, j + 1)))) <= 1);
        }
    }
    CHECK(same == total);
  }

  SECTION("the shifted centre window equals an offset window of the original") {
    Augmentation a;
    a.shift = -333;
    const auto out = augment(scenes[2], a, cfg);
    const auto mask = model::sample_mask(6, model::MaskMode::fixed, model::Setup::s1b, 0);
    const auto x = model::make_example(out, mask, 512, window_offset(out.length(), 512, 0), nullptr);
    const auto y = model::make_example(scenes[2], mask, 512, window_offset(out.length(), 512, -333), nullptr);
    CHECK(x.audio == y.audio);
    CHECK(x.target == y.target);
  }

  SECTION("noise lands at the drawn SNR") {
    cfg.noise = true;
    cfg.snr_min = 5.0;
    cfg.snr_max = 5.0;
    cfg.shift = false;
    const auto out = augment(scenes[3], 9, cfg);
    double signal_power = 0.0, noise_power = 0.0;
    for (int m = 0; m < 6; ++m) {
      const auto& before = scenes[3].received[static_cast<std::size_t>(m)].samples;
      const auto& after = out.received[static_cast<std::size_t>(m)].samples;
      for (std::size_t n = 0; n < before.size(); ++n) {
        signal_power += before[n] * before[n];
        noise_power += (after[n] - before[n]) * (after[n] - before[n]);
      }
      CHECK(out.clean[static_cast<std::size_t>(m)].samples == scenes[3].clean[static_cast<std::size_t>(m)].samples);
    }
    CHECK(10.0 * std::log10(signal_power / noise_power) == Catch::Approx(5.0).margin(0.2));
  }

  SECTION("draws stay within the configured range") {
    for (std::uint64_t s = 0; s < 2000; ++s) {
      const auto a = draw_augmentation(cfg, s);
      REQUIRE(std::abs(a.shift) <= 800);
    }
  }

  SECTION("insufficient margin is rejected") {
    const auto short_scenes = generate_scenes(small_spec(1, 1000, 2));
    CHECK_THROWS_AS(augment(short_scenes[0], 1, cfg), InvalidArgument);
    Augmentation a;
    a.shift = 801;
    CHECK_THROWS_AS(augment(scenes[0], a, cfg), InvalidArgument);
  }
}

TEST_CASE("Mirror flips leave shoebox responses unchanged", "[pipeline][augment]") {
  room::Room r;
  r.dims = room::Vec3(4.0, 3.5, 2.5);
  r.t60 = 0.3;
  const room::Vec3 src(0.7, 2.9, 1.1), mic(3.6, 0.4, 2.2);
  const auto ref = room::simulate_rir(r, src, mic, 6, 2000);
  for (int bits = 1; bits < 8; ++bits) {
    Augmentation a;
    for (int k = 0; k < 3; ++k) a.mirror[static_cast<std::size_t>(k)] = (bits >> k) & 1;
    const auto s2 = mirrored(src, r, a), m2 = mirrored(mic, r, a);
    REQUIRE(r.contains(s2));
    const auto h = room::simulate_rir(r, s2, m2, 6, 2000);
    REQUIRE(h.size() == ref.size());
    double diff = 0.0, peak = 0.0;
    for (std::size_t n = 0; n < h.size(); ++n) {
      diff = std::max(diff, std::abs(h[n] - ref[n]));
      peak = std::max(peak, std::abs(ref[n]));
    }
    CHECK(diff <= 1e-9 * peak);
    const auto back = mirrored(s2, r, a);
    CHECK((back - src).norm() < 1e-12);
  }

  auto spec = small_spec(1, 512 + 1600, 5);
  const auto scene = generate_scenes(spec)[0];
  AugmentConfig cfg;
  cfg.frame_len = 512;
  cfg.max_shift = 800;
  cfg.mirror = true;
  int flipped = 0;
  for (std::uint64_t seed = 0; seed < 64; ++seed) {
    const auto a = draw_augmentation(cfg, seed);
    const auto out = augment(scene, a, cfg);
    CHECK(out.source_pos == scene.source_pos);
    CHECK(out.mic_pos == scene.mic_pos);
    flipped += a.mirror[0] + a.mirror[1] + a.mirror[2];
  }
  CHECK(flipped > 64);
  CHECK(flipped < 128);
}

TEST_CASE("Cached features equal per-mask features", "[pipeline][features]") {
  ngcc::NgccConfig nc;
  nc.tau = 12;
  nc.filter_len = 9;
  nc.channels = 4;
  nc.head_hidden = 8;
  ngcc::NgccModel<float> net(nc, 3);
  const auto scenes = generate_scenes(small_spec(4, 64 + 32, 5));
  for (std::uint64_t t = 0; t < 8; ++t) {
    const auto& s = scenes[t % scenes.size()];
    const auto cache = FeatureCache::compute(net, s, 64);
    const auto mask = model::sample_mask(6, model::MaskMode::random, model::Setup::s1a, t);
    const auto direct = model::make_example(s, mask, 64, window_offset(s.length(), 64, 0), &net).features;
    const auto cached = cache.subset(mask.S);
    REQUIRE(cached.size() == direct.size());
    CHECK(cached.computed == direct.computed);
    for (const auto& [key, v] : direct.pairs) {
      const auto& c = cached.at(key.first, key.second);
      for (std::size_t k = 0; k < v.size(); ++k) REQUIRE(c[k] == Catch::Approx(v[k]).margin(1e-6));
    }
  }
}

TEST_CASE("Training writes curves, keeps the best checkpoint and resumes exactly", "[pipeline][train]") {
  const auto scenes = generate_scenes(small_spec(32, 64 + 32, 9));
  const auto dir = maeloc::testing::scratch_dir("train");
  TrainConfig cfg = tiny_train((dir / "full").string());
  cfg.mask_mode = model::MaskMode::fixed;

  const auto full = train(cfg, scenes, nullptr);
  REQUIRE(full.history.size() == 5);

  SECTION("step-0 loss is the squared source distance of the initial model") {
    const auto& r0 = full.history[0];
    CHECK(std::isfinite(r0.val_loss));
    CHECK(r0.val_loss == Catch::Approx(r0.val_source_mse).epsilon(1e-5));
    CHECK(r0.val_loss > 0.0);
  }

  SECTION("files") {
    std::ifstream csv(dir / "full" / "losses.csv");
    std::string line;
    int rows = 0;
    std::getline(csv, line);
    CHECK(line == "epoch,train_loss,val_loss,val_source_mse,seconds");
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == 5);
    CHECK(fs::exists(dir / "full" / "best.bin"));
    auto best = model::load_model((dir / "full" / "best.bin").string());
    std::vector<ag::StateRef<float>> a, b;
    best.state(a);
    const_cast<model::Model<float>&>(full.best).state(b);
    for (std::size_t k = 0; k < a.size(); ++k) REQUIRE(a[k].tensor->data == b[k].tensor->data);
    double best_val = full.history[0].val_loss;
    for (const auto& r : full.history) best_val = std::min(best_val, r.val_loss);
    CHECK(full.best_val_loss == best_val);
  }

  SECTION("run, stop, resume") {
    TrainConfig part = cfg;
    part.run_dir = (dir / "resumed").string();
    TrainHooks hooks;
    hooks.stop_after = 2;
    const auto first = train(part, scenes, nullptr, hooks);
    REQUIRE(first.history.size() == 3);
    part.resume = true;
    const auto second = train(part, scenes, nullptr);
    REQUIRE(second.history.size() == 5);
    for (int e = 1; e <= 4; ++e) {
      CHECK(second.history[static_cast<std::size_t>(e)].train_loss ==
            Catch::Approx(full.history[static_cast<std::size_t>(e)].train_loss).epsilon(1e-6));
      CHECK(second.history[static_cast<std::size_t>(e)].val_loss ==
            Catch::Approx(full.history[static_cast<std::size_t>(e)].val_loss).epsilon(1e-6));
    }
  }

  SECTION("same seed, same run") {
    TrainConfig again = cfg;
    again.run_dir.clear();
    const auto other = train(again, scenes, nullptr);
    for (std::size_t e = 0; e < full.history.size(); ++e) CHECK(other.history[e].val_loss == full.history[e].val_loss);
  }

  SECTION("divergence aborts with a diagnostic") {
    TrainConfig wild = cfg;
    wild.run_dir.clear();
    wild.lr = 1e30;
    wild.weight_decay = 0.0;
    CHECK_THROWS_AS(train(wild, scenes, nullptr), TrainingDiverged);
  }

  SECTION("misconfiguration") {
    TrainConfig tdoa = cfg;
    tdoa.model.use_tdoa = true;
    CHECK_THROWS_AS(train(tdoa, scenes, nullptr), InvalidArgument);
    TrainConfig longer = cfg;
    longer.max_shift = 100;
    CHECK_THROWS_AS(train(longer, scenes, nullptr), InvalidArgument);
  }
}

TEST_CASE("Training reduces the validation loss", "[pipeline][train]") {
  const auto scenes = generate_scenes(small_spec(48, 64 + 32, 12));
  TrainConfig cfg = tiny_train("");
  cfg.epochs = 20;
  cfg.lr = 3e-3;
  cfg.weight_decay = 0.0;
  cfg.mask_mode = model::MaskMode::random;
  const auto r = train(cfg, scenes, nullptr);
  CHECK(r.best_val_loss < 0.5 * r.history[0].val_loss);
}

TEST_CASE("Oracle, centre and truncation", "[pipeline][eval]") {
  auto spec = small_spec(300, 64, 31);
  const auto scenes = generate_scenes(spec);
  EvalOptions o;
  o.N = 64;
  o.seed = 4;

  OraclePredictor oracle;
  const auto ro = evaluate(oracle, scenes, o);
  CHECK(ro.mae_cm.value == 0.0);
  CHECK(ro.acc.value == 1.0);
  CHECK(ro.frames.size() == 300);

  // Monte-Carlo mean distance from the centre of the source box
  CenterPredictor center;
  const auto rc = evaluate(center, scenes, o);
  const room::Vec3 dims = spec.sampler.room_dims;
  const double m = spec.sampler.source_margin;
  std::mt19937_64 rng(77);
  double mc = 0.0;
  const int draws = 400000;
  for (int k = 0; k < draws; ++k) {
    room::Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = std::uniform_real_distribution<double>(m, dims[a] - m)(rng);
    mc += (p - dims / 2.0).norm();
  }
  mc = 100.0 * mc / draws;
  double exact = 0.0, sq = 0.0;
  for (const auto& s : scenes) {
    const double e = 100.0 * (s.source_pos - dims / 2.0).norm();
    exact += e;
    sq += e * e;
  }
  exact /= 300.0;
  const double se = std::sqrt((sq / 300.0 - exact * exact) / 300.0);
  CHECK(rc.mae_cm.value == Catch::Approx(exact).epsilon(1e-12));
  CHECK(std::abs(rc.mae_cm.value - mc) < 4.0 * se);
  CHECK(rc.mae_cm.lo <= rc.mae_cm.value);
  CHECK(rc.mae_cm.hi >= rc.mae_cm.value);
  CHECK(rc.mae_cm.hi - rc.mae_cm.lo < 8.0 * se);

  FixedPredictor far(room::Vec3(100.0, 100.0, 100.0));
  const auto rf = evaluate(far, scenes, o);
  CHECK(rf.mae_cm.value == Catch::Approx(300.0));
  CHECK(rf.acc.value == 0.0);

  int total = 0;
  for (const auto& c : rc.by_snr) total += c.count;
  CHECK(total == 300);
  CHECK(rc.by_m.size() == 1);
  CHECK(rc.by_m[0].key == 6.0);
}

TEST_CASE("Setups differ only through masks", "[pipeline][eval]") {
  const auto scenes = generate_scenes(small_spec(20, 64, 41));
  EvalOptions a;
  a.N = 64;
  a.m_known = 5;
  a.setup = model::Setup::s1a;
  EvalOptions b = a;
  b.setup = model::Setup::s1b;
  for (int f = 0; f < 20; ++f) {
    const auto x = prepare_frame(scenes[static_cast<std::size_t>(f)], f, a, false);
    const auto y = prepare_frame(scenes[static_cast<std::size_t>(f)], f, b, false);
    CHECK(x.scene.mic_pos == y.scene.mic_pos);
    CHECK(x.example.mask.R == y.example.mask.R);
    std::vector<int> s = y.example.mask.S;
    CHECK(s.front() == 0);
    s.erase(s.begin());
    CHECK(s == x.example.mask.S);
    CHECK(x.example.mask.M == 5);
    CHECK(x.example.audio[1] == y.example.audio[1]);
  }
  CenterPredictor c;
  auto ra = evaluate(c, scenes, a);
  auto rb = evaluate(c, scenes, b);
  rb.setup = ra.setup;
  CHECK(ra == rb);

  EvalOptions two = a;
  two.setup = model::Setup::s2a;
  two.m_known = 5;
  OraclePredictor oracle;
  const auto r2 = evaluate(oracle, scenes, two);
  CHECK(r2.mic_count == 20);
  CHECK(r2.mic_mae_cm == 0.0);
  const auto r2c = evaluate(c, scenes, two);
  CHECK(r2c.mic_mae_cm > 50.0);
  CHECK(r2c.mic_mae_cm <= 300.0);

  EvalOptions too_few = a;
  too_few.m_known = 4;
  CHECK_THROWS_AS(evaluate(c, scenes, too_few), InvalidArgument);
}

TEST_CASE("Evaluation is reproducible", "[pipeline][eval]") {
  const auto scenes = generate_scenes(small_spec(30, 512, 51));
  EvalOptions o;
  o.N = 512;
  o.m_known = 5;
  ClassicalPredictor gcc;
  const auto a = evaluate(gcc, scenes, o);
  const auto b = evaluate(gcc, scenes, o);
  CHECK(a == b);
  EvalOptions other = o;
  other.seed = 2;
  CHECK_FALSE(a == evaluate(gcc, scenes, other));
}

TEST_CASE("Classical localisation on clean anechoic scenes", "[pipeline][eval]") {
  auto spec = small_spec(20, 1024, 61);
  spec.sampler.source = room::SourceKind::white;
  const auto scenes = generate_scenes(spec);
  EvalOptions o;
  o.N = 1024;
  ClassicalPredictor gcc;
  const auto r = evaluate(gcc, scenes, o);
  std::vector<double> e;
  for (const auto& f : r.frames) e.push_back(f.error);
  std::nth_element(e.begin(), e.begin() + 10, e.end());
  CHECK(e[10] < 0.05);
}

TEST_CASE("Bootstrap intervals", "[pipeline][eval]") {
  std::vector<double> v = maeloc::testing::white_noise(200, 3);
  for (double& x : v) x = std::abs(x);
  const auto a = bootstrap_mean(v, 1000, 9);
  const auto b = bootstrap_mean(v, 1000, 9);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  CHECK(a.lo <= a.value);
  CHECK(a.value <= a.hi);
  double m = 0.0, s = 0.0;
  for (double x : v) m += x / 200.0;
  for (double x : v) s += (x - m) * (x - m) / 199.0;
  const double se = std::sqrt(s / 200.0);
  CHECK((a.hi - a.lo) == Catch::Approx(2 * 1.96 * se).epsilon(0.2));
  const auto single = bootstrap_mean({4.0}, 1000, 1);
  CHECK(single.lo == 4.0);
  CHECK(single.hi == 4.0);
}

TEST_CASE("Trajectory median filter", "[pipeline][filter]") {
  std::vector<room::Vec3> constant(9, room::Vec3(1.0, 2.0, 3.0));
  CHECK(trajectory_filter(constant, 5) == constant);

  auto spike = constant;
  spike[4] = room::Vec3(50.0, -50.0, 9.0);
  CHECK(trajectory_filter(spike, 5) == constant);

  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int window : {1, 3, 5, 7}) {
    std::vector<room::Vec3> x(23);
    for (auto& p : x) p = room::Vec3(g(rng), g(rng), g(rng));
    const auto y = trajectory_filter(x, window);
    for (int i = 0; i < 23; ++i) {
      const int h = std::min({window / 2, i, 22 - i});
      for (int c = 0; c < 3; ++c) {
        std::vector<double> w;
        for (int k = i - h; k <= i + h; ++k) w.push_back(x[static_cast<std::size_t>(k)][c]);
        std::sort(w.begin(), w.end());
        REQUIRE(y[static_cast<std::size_t>(i)][c] == w[w.size() / 2]);
      }
    }
  }
  CHECK_THROWS_AS(trajectory_filter({}, 5), InvalidArgument);
  CHECK_THROWS_AS(trajectory_filter(constant, 4), InvalidArgument);
}

TEST_CASE("Spearman correlation", "[pipeline][eval]") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 25, 100}) == Catch::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == Catch::Approx(-1.0));
  // textbook example with ties: ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4)
  CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == Catch::Approx(0.9486833).epsilon(1e-6));
  CHECK_THROWS_AS(spearman({1}, {1}), InvalidArgument);
}

TEST_CASE("Plots and curve files", "[pipeline][plots]") {
  auto spec = small_spec(40, 64, 71);
  spec.sampler.snr_min = 0.0;
  spec.sampler.snr_max = 20.0;
  auto scenes = generate_scenes(spec);
  // four SNR conditions, two t60 conditions
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    scenes[k].snr_db = 5.0 * static_cast<double>(k % 4);
    scenes[k].room.t60 = k % 2 ? 0.2 : 0.4;
  }
  EvalOptions o;
  o.N = 64;
  CenterPredictor c;
  OraclePredictor oracle;
  const auto rc = evaluate(c, scenes, o);
  const auto ro = evaluate(oracle, scenes, o);
  const auto dir = maeloc::testing::scratch_dir("plots");
  const auto files = emit_plots({{"center", &rc}, {"oracle", &ro}}, dir);
  CHECK(files.size() == 12);

  auto rows = [&](const std::string& name) {
    std::ifstream in(dir / (name + ".csv"));
    std::string line;
    int n = -1;
    while (std::getline(in, line)) ++n;
    return n;
  };
  CHECK(rows("mae_vs_snr") == 2 * 4);
  CHECK(rows("acc_vs_snr") == 2 * 4);
  CHECK(rows("mae_vs_t60") == 2 * 2);
  CHECK(rows("acc_vs_t60") == 2 * 2);
  CHECK(rows("error_cdf") == 2 * 40);

  const auto cdf = error_cdf("center", rc);
  for (std::size_t k = 1; k < cdf.y.size(); ++k) {
    CHECK(cdf.x[k] >= cdf.x[k - 1]);
    CHECK(cdf.y[k] >= cdf.y[k - 1]);
  }
  CHECK(cdf.y.back() == 1.0);

  for (const auto& f : files)
    if (f.extension() == ".svg") CHECK(well_formed_xml(read_file(f)));
  Panel odd{"x", "a < b & c", "y", {{"l<1>", {0.0, 1.0}, {2.0, 2.0}}}};
  CHECK(well_formed_xml(render_svg(odd)));
  CHECK_FALSE(well_formed_xml("<svg><g></svg></g>"));
  CHECK_THROWS_AS(emit_plots({}, dir), InvalidArgument);
}

TEST_CASE("Hashes and manifests", "[pipeline][manifest]") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const auto dir = maeloc::testing::scratch_dir("manifest");
  {
    std::ofstream f(dir / "a.txt", std::ios::binary);
    f << "abc";
  }
  CHECK(sha256_file(dir / "a.txt") == sha256_hex("abc"));
  Manifest m;
  m.command = "train";
  m.config = {{"epochs", "3"}, {"lr", "0.001"}};
  m.seeds = {{"train", 5}};
  m.artifacts = {"a.txt"};
  const auto first = write_manifest(dir, m);
  const auto second = write_manifest(dir, m);
  CHECK(first == second);
  CHECK(first.find(sha256_hex("abc")) != std::string::npos);
  CHECK(first.find("\"epochs\": \"3\"") != std::string::npos);
  m.artifacts.push_back("missing.bin");
  CHECK_THROWS_AS(write_manifest(dir, m), IoError);
}

TEST_CASE("Reports survive a JSON round trip", "[pipeline][eval]") {
  auto spec = small_spec(12, 64, 81);
  spec.sampler.snr_min = 5.0;
  spec.sampler.snr_max = 15.0;
  const auto scenes = generate_scenes(spec);
  EvalOptions o;
  o.N = 64;
  o.setup = model::Setup::s2a;
  o.m_known = 5;
  CenterPredictor c;
  const auto r = evaluate(c, scenes, o);
  const auto back = report_from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
  CHECK_THROWS_AS(report_from_json("{\"predictor\": 1}"), FormatError);
}
