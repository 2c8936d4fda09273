#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "maeloc/autograd/gradcheck.hpp"
#include "maeloc/autograd/optim.hpp"
#include "maeloc/error.hpp"
#include "maeloc/model/model.hpp"
#include "test_util.hpp"

using namespace maeloc;
using namespace maeloc::model;
using Batch = std::vector<const Example*>;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.d = 16;
  c.depth = 1;
  c.N = 64;
  c.heads = 2;
  c.expansion = 2;
  c.tau = 8;
  c.max_mics = 11;
  return c;
}

/// Random frames and coordinates with consistent synthetic TDOA features.
Example synthetic(const MaskSpec& mask, int N, int tau, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 0.3);
  std::uniform_real_distribution<double> u(0.2, 3.0);
  Example ex;
  ex.mask = mask;
  ex.audio.assign(static_cast<std::size_t>(mask.M + 1), {});
  ex.target.assign(static_cast<std::size_t>(mask.M + 1), {});
  for (int m = 0; m <= mask.M; ++m) {
    ex.coords.emplace_back(u(rng), u(rng), u(rng));
    if (!mask.has_audio(m)) continue;
    for (int n = 0; n < N; ++n) {
      ex.audio[static_cast<std::size_t>(m)].push_back(g(rng));
      ex.target[static_cast<std::size_t>(m)].push_back(g(rng));
    }
  }
  ex.features.tau = tau;
  for (std::size_t a = 0; a < mask.S.size(); ++a)
    for (std::size_t b = a + 1; b < mask.S.size(); ++b) {
      std::vector<double> r(static_cast<std::size_t>(2 * tau + 1));
      double s = 0.0;
      for (double& v : r) s += v = std::exp(2.0 * g(rng));
      for (double& v : r) v /= s;
      ex.features.pairs[{mask.S[a], mask.S[b]}] = r;
      ex.features.pairs[{mask.S[b], mask.S[a]}] = std::vector<double>(r.rbegin(), r.rend());
    }
  return ex;
}

template <typename T>
void randomize(Model<T>& m, std::uint64_t seed, double stddev = 0.2) {
  std::mt19937_64 rng(seed);
  std::vector<ag::Parameter<T>*> ps;
  m.collect(ps);
  for (auto* p : ps) p->value = ag::normal_tensor<T>(p->value.shape, stddev, rng);
}

template <typename T>
std::vector<double> row(const ag::Tensor<T>& t, int r) {
  std::vector<double> out;
  for (int c = 0; c < t.cols(); ++c) out.push_back(static_cast<double>(t.at(r, c)));
  return out;
}

}  // namespace

TEST_CASE("Fixed and setup masks", "[model][mask]") {
  const auto m = sample_mask(11, MaskMode::fixed, Setup::s1a, 0);
  std::vector<int> all(11);
  std::iota(all.begin(), all.end(), 1);
  CHECK(m.S == all);
  CHECK(m.R == all);
  CHECK_FALSE(m.has_audio(0));
  CHECK(sample_mask(11, MaskMode::fixed, Setup::s1b, 0).has_audio(0));

  const auto s2 = setup_mask(8, Setup::s2b, {3, 1, 2, 5, 7});
  CHECK(s2.S.size() == 9);
  CHECK(s2.R == std::vector<int>{1, 2, 3, 5, 7});
  CHECK_THROWS_AS(setup_mask(8, Setup::s2a, {1, 2, 3, 4}), InvalidArgument);
  CHECK_THROWS_AS(sample_mask(4, MaskMode::fixed, Setup::s1a, 0), InvalidArgument);
  CHECK(parse_setup("2b") == Setup::s2b);
  CHECK_THROWS_AS(parse_setup("3"), InvalidArgument);
}

TEST_CASE("Mask validation", "[model][mask]") {
  MaskSpec m;
  m.M = 6;
  m.S = {1, 2, 3, 4, 5, 6};
  m.R = {1, 2, 3, 4, 5, 6};
  CHECK_NOTHROW(m.validate());
  m.R = {0, 1, 2, 3, 4, 5, 6};
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
  m.R = {1, 2, 3, 4, 5};
  m.S = {1, 2, 3, 4, 5};
  CHECK_THROWS_AS(m.validate(), InvalidArgument);  // microphone 6 has nothing
  m.S = {1, 2, 3, 4, 6};
  m.R = {1, 2, 3, 4, 5};
  CHECK_THROWS_AS(m.validate(), InvalidArgument);  // only 4 with both
  m.S = {2, 1, 3, 4, 5, 6};
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
}

TEST_CASE("Random masks respect every invariant", "[model][mask]") {
  for (int M : {6, 11}) {
    int with_source = 0;
    std::vector<int> count_s(static_cast<std::size_t>(M + 1)), count_r(static_cast<std::size_t>(M + 1));
    const int draws = 10000;
    for (int k = 0; k < draws; ++k) {
      const auto m = sample_mask(M, MaskMode::random, Setup::s1a, static_cast<std::uint64_t>(k) * 7919 + M);
      REQUIRE_NOTHROW(m.validate());
      CHECK_FALSE(m.has_coord(0));
      const int s = m.mic_audio_count(), r = static_cast<int>(m.R.size());
      CHECK(s >= std::max(5, M - 3));
      CHECK(r >= std::max(5, M - 3));
      ++count_s[static_cast<std::size_t>(s)];
      ++count_r[static_cast<std::size_t>(r)];
      with_source += m.has_audio(0);
    }
    INFO("M = " << M << " source fraction " << with_source / double(draws));
    CHECK(std::abs(with_source / double(draws) - 0.5) < 0.02);
    if (M == 11)
      for (int k = 8; k <= 11; ++k) CHECK(count_s[static_cast<std::size_t>(k)] > 0);
  }
  CHECK(sample_mask(11, MaskMode::random, Setup::s1a, 5).S == sample_mask(11, MaskMode::random, Setup::s1a, 5).S);
}

TEST_CASE("Encoder token counts", "[model]") {
  auto cfg = tiny_config();
  Model<double> model(cfg, 1);
  std::mt19937_64 rng(2);
  const auto a = synthetic(sample_mask(11, MaskMode::fixed, Setup::s1a, 0), cfg.N, cfg.tau, rng);
  const auto b = synthetic(sample_mask(11, MaskMode::fixed, Setup::s1b, 0), cfg.N, cfg.tau, rng);
  ag::Graph<double> g;
  CHECK(model.embed(g, {&a}).rows() == 22);
  CHECK(model.embed(g, {&b}).rows() == 23);
  CHECK(model.embed(g, {&a, &b}).rows() == 45);
}

TEST_CASE("A zero audio frame embeds to the modality vector", "[model]") {
  auto cfg = tiny_config();
  Model<double> model(cfg, 3);
  std::mt19937_64 rng(4);
  auto ex = synthetic(sample_mask(6, MaskMode::fixed, Setup::s1a, 0), cfg.N, cfg.tau, rng);
  std::fill(ex.audio[3].begin(), ex.audio[3].end(), 0.0);
  ag::Graph<double> g;
  const auto tokens = model.embed(g, {&ex}).value();
  CHECK(row(tokens, 2) == row(ag::Tensor<double>({1, cfg.d}, model.v_enc_audio.value.data), 0));
}

TEST_CASE("Encoder and decoder are permutation equivariant", "[model]") {
  auto cfg = tiny_config();
  cfg.d = 32;
  cfg.depth = 2;
  cfg.heads = 4;
  Model<double> model(cfg, 5);
  randomize(model, 6);
  std::mt19937_64 rng(7);
  const auto x = ag::normal_tensor<double>({9, cfg.d}, 1.0, rng);
  std::vector<int> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    for (auto* net : {&model.encoder, &model.decoder}) {
      ag::Graph<double> g;
      const auto base = (*net)(g, g.constant(x), {{0, 9}}).value();
      const auto moved = (*net)(g, ag::gather_rows(g.constant(x), perm), {{0, 9}}).value();
      for (int i = 0; i < 9; ++i)
        for (int c = 0; c < cfg.d; ++c) CHECK(std::abs(moved.at(i, c) - base.at(perm[static_cast<std::size_t>(i)], c)) < 1e-5);
    }
  }
  cfg.depth = 0;
  Model<double> flat(cfg, 5);
  ag::Graph<double> g;
  CHECK(flat.encode(g, g.constant(x), {{0, 9}}).value().data == x.data);
  CHECK(flat.decode(g, g.constant(x), {{0, 9}}).value().data == x.data);
}

TEST_CASE("Decoder inputs follow the mask case table", "[model]") {
  auto cfg = tiny_config();
  Model<double> model(cfg, 8);
  randomize(model, 9);
  std::mt19937_64 rng(10);
  const auto ex = synthetic(sample_mask(11, MaskMode::fixed, Setup::s1a, 0), cfg.N, cfg.tau, rng);
  ag::Graph<double> g;
  const auto enc = model.encode(g, model.embed(g, {&ex}), {{0, 22}});
  const auto y = model.assemble(g, enc, {&ex}, {0});
  REQUIRE(y.rows() == 24);

  // Source coordinate token in 1a: both source entries are mask tokens.
  auto ua = g.constant(ag::Tensor<double>({1, cfg.d}, model.u_audio.value.data));
  const auto gam = model.gamma_a2c(g, ua).value();
  for (int c = 0; c < cfg.d; ++c) {
    const double expect = model.u_source.value.data[static_cast<std::size_t>(c)] +
                          model.v_dec_coord.value.data[static_cast<std::size_t>(c)] + gam.data[static_cast<std::size_t>(c)];
    CHECK(y.value().at(12, c) == Catch::Approx(expect).margin(1e-12));
  }
  // Fully observed microphone 4: audio token uses encoder output 3 and the
  // coordinate token encoder output 11 + 3.
  auto ta = ag::gather_rows(enc, {3}), tc = ag::gather_rows(enc, {14});
  const auto ya = ag::add_row(ag::add(ta, model.gamma_c2a(g, tc)), g.param(model.v_dec_audio)).value();
  const auto yc = ag::add_row(ag::add(tc, model.gamma_a2c(g, ta)), g.param(model.v_dec_coord)).value();
  for (int c = 0; c < cfg.d; ++c) {
    CHECK(y.value().at(4, c) == Catch::Approx(ya.at(0, c)).margin(1e-12));
    CHECK(y.value().at(16, c) == Catch::Approx(yc.at(0, c)).margin(1e-12));
  }
}

TEST_CASE("Forward output shapes", "[model]") {
  auto cfg = tiny_config();
  Model<double> model(cfg, 11);
  std::mt19937_64 rng(12);
  const auto a = synthetic(sample_mask(11, MaskMode::random, Setup::s1a, 3), cfg.N, cfg.tau, rng);
  const auto b = synthetic(sample_mask(6, MaskMode::fixed, Setup::s1b, 0), cfg.N, cfg.tau, rng);
  ag::Graph<double> g;
  const auto f = model.forward(g, {&a, &b});
  CHECK(f.source.rows() == 2);
  CHECK(f.source.cols() == 3);
  CHECK(f.mics.rows() == 17);
  CHECK(f.recon.rows() == static_cast<int>(a.mask.S.size() + b.mask.S.size()));
  CHECK(f.recon.cols() == cfg.N);
  CHECK(f.z.rows() == 2);
  CHECK(f.q.rows() == 2);
  CHECK(model.phi.fc1.in_features() == 2 * cfg.tau + 1 + 2 * cfg.d);

  const auto preds = predict(model, {&a, &b});
  CHECK(preds[1].mics.size() == 6);
  CHECK(preds[1].recon.size() == 7);
  CHECK(preds[0].recon.front().size() == static_cast<std::size_t>(cfg.N));
}

TEST_CASE("Global pool is the per-dimension maximum", "[model]") {
  auto cfg = tiny_config();
  Model<double> model(cfg, 13);
  randomize(model, 14);
  std::mt19937_64 rng(15);
  const auto ex = synthetic(sample_mask(7, MaskMode::random, Setup::s1a, 1), cfg.N, cfg.tau, rng);
  ag::Graph<double> g;
  const auto f = model.forward(g, {&ex});
  const auto& e = f.encoded.value();
  for (int c = 0; c < cfg.d; ++c) {
    double m = -1e300;
    for (int i = 0; i < e.rows(); ++i) m = std::max(m, e.at(i, c));
    CHECK(f.z.value().at(0, c) == m);
  }
}

TEST_CASE("TDOA pool over two signals", "[model]") {
  auto cfg = tiny_config();
  Model<double> model(cfg, 16);
  randomize(model, 17);
  std::mt19937_64 rng(18);
  Example ex = synthetic(sample_mask(6, MaskMode::fixed, Setup::s1a, 0), cfg.N, cfg.tau, rng);
  ex.mask.S = {2, 5};  // pooling alone does not need a valid mask
  ag::Graph<double> g;
  const auto dec = g.constant(ag::normal_tensor<double>({14, cfg.d}, 1.0, rng));
  const auto q = model.tdoa_pool(g, dec, {&ex}, {0}).value();
  auto embed_pair = [&](int i, int j) {
    auto r = g.constant(ag::Tensor<double>({1, 2 * cfg.tau + 1}, ex.features.at(i, j)));
    return model.phi(g, ag::concat_cols(std::vector<ag::Var<double>>{r, ag::gather_rows(dec, {7 + i}), ag::gather_rows(dec, {7 + j})})).value();
  };
  const auto p25 = embed_pair(2, 5), p52 = embed_pair(5, 2);
  for (int c = 0; c < cfg.d; ++c) CHECK(q.at(0, c) == Catch::Approx(std::max(p25.at(0, c), p52.at(0, c))).margin(1e-12));
  ex.mask.S = {2};
  CHECK_THROWS_AS(model.tdoa_pool(g, dec, {&ex}, {0}), InvalidArgument);
}

TEST_CASE("Predictions are invariant to microphone order", "[model]") {
  auto cfg = tiny_config();
  cfg.d = 32;
  cfg.heads = 4;
  Model<double> model(cfg, 19);
  randomize(model, 20, 0.1);
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int M = 6 + trial % 3;
    const auto ex = synthetic(sample_mask(M, MaskMode::random, Setup::s1a, static_cast<std::uint64_t>(trial)), cfg.N, cfg.tau, rng);
    std::vector<int> perm(static_cast<std::size_t>(M));
    std::iota(perm.begin(), perm.end(), 1);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto moved = permute_example(ex, perm);
    const auto p = predict(model, {&ex}).front(), pm = predict(model, {&moved}).front();
    CHECK((p.source - pm.source).cwiseAbs().maxCoeff() <= 1e-5);
    for (int k = 1; k <= M; ++k)
      CHECK((pm.mics[static_cast<std::size_t>(k - 1)] - p.mics[static_cast<std::size_t>(perm[static_cast<std::size_t>(k - 1)] - 1)])
                .cwiseAbs()
                .maxCoeff() <= 1e-5);
  }
}

TEST_CASE("Loss against closed forms and a scalar oracle", "[model][loss]") {
  auto cfg = tiny_config();
  std::mt19937_64 rng(22);
  const auto ex = synthetic(sample_mask(7, MaskMode::random, Setup::s1a, 9), cfg.N, cfg.tau, rng);
  LossWeights w;
  std::vector<std::vector<double>> recon;
  for (int m : ex.mask.S) recon.push_back(ex.target[static_cast<std::size_t>(m)]);
  std::vector<room::Vec3> mics(ex.coords.begin() + 1, ex.coords.end());
  CHECK(reference_loss(recon, ex.coords[0], mics, ex, w) == 0.0);
  CHECK(reference_loss(recon, ex.coords[0] + room::Vec3(1, 0, 0), mics, ex, w) == 1.0);

  // Graph loss on a batch equals the mean of the scalar evaluations.
  Model<double> model(cfg, 23);
  randomize(model, 24);
  const auto ex2 = synthetic(sample_mask(9, MaskMode::random, Setup::s1a, 4), cfg.N, cfg.tau, rng);
  ag::Graph<double> g;
  const Batch batch{&ex, &ex2};
  const auto f = model.forward(g, batch);
  const double graph_loss = model.loss(g, f, batch, w).value().data[0];
  const auto preds = predict(model, batch);
  double oracle = 0.0;
  for (std::size_t b = 0; b < 2; ++b)
    oracle += reference_loss(preds[b].recon, preds[b].source, preds[b].mics, *batch[b], w) / 2.0;
  CHECK(graph_loss == Catch::Approx(oracle).epsilon(1e-6));

  // With every coordinate known the microphone term vanishes.
  auto full = ex2;
  full.mask = sample_mask(9, MaskMode::fixed, Setup::s1a, 0);
  for (int m = 1; m <= 9; ++m)
    if (full.audio[static_cast<std::size_t>(m)].empty()) {
      full.audio[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(cfg.N), 0.1);
      full.target[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(cfg.N), 0.1);
    }
  for (std::size_t a = 0; a < full.mask.S.size(); ++a)
    for (std::size_t b = 0; b < full.mask.S.size(); ++b)
      if (a != b && !full.features.contains(full.mask.S[a], full.mask.S[b]))
        full.features.pairs[{full.mask.S[a], full.mask.S[b]}] = std::vector<double>(static_cast<std::size_t>(2 * cfg.tau + 1), 1.0 / (2 * cfg.tau + 1));
  const auto pf = predict(model, {&full}).front();
  LossWeights only_mic{0.0, 0.0, 1.0};
  CHECK(reference_loss(pf.recon, pf.source, pf.mics, full, only_mic) == 0.0);
  ag::Graph<double> g2;
  CHECK(model.loss(g2, model.forward(g2, {&full}), {&full}, only_mic).value().data[0] == 0.0);
}

TEST_CASE("End-to-end gradient check", "[model][gradcheck]") {
  auto cfg = tiny_config();
  cfg.max_mics = 5;
  Model<double> model(cfg, 25);
  randomize(model, 26, 0.3);
  std::mt19937_64 rng(27);
  MaskSpec mask = sample_mask(5, MaskMode::fixed, Setup::s1b, 0);
  const auto a = synthetic(mask, cfg.N, cfg.tau, rng);
  mask = sample_mask(5, MaskMode::fixed, Setup::s1a, 0);
  const auto b = synthetic(mask, cfg.N, cfg.tau, rng);
  std::vector<ag::Parameter<double>*> ps;
  model.collect(ps);
  for (bool training : {false, true}) {
    const auto r = ag::grad_check({}, ps, [&](ag::Graph<double>& g, const std::vector<ag::Var<double>>&) {
      const Batch batch{&a, &b};
      return model.loss(g, model.forward(g, batch), batch, LossWeights{});
    }, training);
    INFO("training " << training << " worst " << r.worst << " " << r.max_rel_error);
    CHECK(r.max_rel_error < 1e-3);
  }
}

TEST_CASE("Masked inputs never reach the outputs", "[model]") {
  auto cfg = tiny_config();
  Model<double> model(cfg, 28);
  randomize(model, 29, 0.1);
  std::mt19937_64 rng(30);
  for (int trial = 0; trial < 25; ++trial) {
    auto mask = sample_mask(9, MaskMode::random, Setup::s1a, static_cast<std::uint64_t>(100 + trial));
    auto ex = synthetic(mask, cfg.N, cfg.tau, rng);
    const auto base = predict(model, {&ex}).front();
    auto other = ex;
    std::normal_distribution<double> gn(0.0, 5.0);
    for (int m = 0; m <= 9; ++m) {
      if (!mask.has_audio(m)) other.audio[static_cast<std::size_t>(m)].assign(static_cast<std::size_t>(cfg.N), gn(rng));
      if (m >= 1 && !mask.has_coord(m)) other.coords[static_cast<std::size_t>(m)] += room::Vec3(gn(rng), gn(rng), gn(rng));
    }
    other.coords[0] += room::Vec3(1.0, -2.0, 0.5);
    const auto moved = predict(model, {&other}).front();
    CHECK(moved.source == base.source);
    CHECK(moved.mics == base.mics);
    CHECK(moved.recon == base.recon);
  }
}

TEST_CASE("The model overfits a fixed batch", "[model][train]") {
  ModelConfig cfg = tiny_config();
  cfg.d = 32;
  cfg.heads = 4;
  cfg.N = 128;
  Model<float> model(cfg, 31);
  std::mt19937_64 rng(32);
  std::vector<Example> data;
  for (int k = 0; k < 8; ++k) data.push_back(synthetic(sample_mask(6, MaskMode::fixed, Setup::s1a, 0), cfg.N, cfg.tau, rng));
  Batch batch;
  for (const auto& e : data) batch.push_back(&e);
  std::vector<ag::Parameter<float>*> ps;
  model.collect(ps);
  ag::AdamWOptions o;
  o.lr = 1e-3;
  o.weight_decay = 0.0;
  ag::AdamW<float> opt(ps, o);
  LossWeights w{0.0, 1.0, 1.0};
  double src_mse = 0.0;
  for (int step = 0; step < 1000; ++step) {
    ag::Graph<float> g;
    g.training = true;
    const auto f = model.forward(g, batch);
    g.backward(model.loss(g, f, batch, w));
    opt.step();
    src_mse = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b)
      for (int c = 0; c < 3; ++c)
        src_mse += std::pow(f.source.value().at(static_cast<int>(b), c) - batch[b]->coords[0][c], 2) / 8.0;
  }
  INFO("final source MSE " << src_mse);
  CHECK(src_mse < 1e-3);
}

TEST_CASE("Model checkpoints round trip", "[model][checkpoint]") {
  auto cfg = tiny_config();
  cfg.use_tdoa = false;
  Model<float> model(cfg, 33);
  const auto dir = maeloc::testing::scratch_dir("model");
  save_model((dir / "m.bin").string(), model);
  auto back = load_model((dir / "m.bin").string());
  CHECK_FALSE(back.config.use_tdoa);
  std::vector<ag::StateRef<float>> a, b;
  model.state(a);
  back.state(b);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k].tensor->data == b[k].tensor->data);
  auto dbl = to_double(model);
  CHECK(dbl.w_enc.weight.value.data[5] == static_cast<double>(model.w_enc.weight.value.data[5]));
}

TEST_CASE("Examples from simulated scenes", "[model]") {
  room::SamplerConfig sc;
  sc.length = 700;
  sc.t60_min = sc.t60_max = 0.2;
  sc.snr_min = sc.snr_max = 10.0;
  sc.source = room::SourceKind::white;
  const auto scene = room::sample_scene_random_faces(sc, 3);
  ngcc::NgccConfig nc;
  nc.tau = 274;
  ngcc::NgccModel<float> net(nc, 1);
  auto mask = sample_mask(6, MaskMode::fixed, Setup::s1b, 0);
  const auto ex = make_example(scene, mask, 512, 100, &net);
  double peak = 0.0;
  for (int m = 1; m <= 6; ++m)
    for (double v : ex.audio[static_cast<std::size_t>(m)]) peak = std::max(peak, std::abs(v));
  CHECK(peak == 1.0);
  CHECK(ex.audio[3][7] == scene.received[2].samples[107] / ex.audio_scale);
  CHECK(ex.target[3][7] == scene.clean[2].samples[107] / ex.audio_scale);
  CHECK(ex.features.size() == 42);
  CHECK_THROWS_AS(make_example(scene, mask, 512, 300, &net), InvalidArgument);

  // Masked microphone audio influences nothing, the scale included.
  mask.S = {1, 2, 3, 4, 5};
  auto loud = scene;
  for (double& v : loud.received[5].samples) v *= 100.0;
  const auto e1 = make_example(scene, mask, 512, 0, &net), e2 = make_example(loud, mask, 512, 0, &net);
  CHECK(e1.audio == e2.audio);
  CHECK(e1.audio_scale == e2.audio_scale);

  const auto sub = select_mics(scene, {6, 2, 4, 1, 3});
  CHECK(sub.num_mics() == 5);
  CHECK(sub.mic_pos[0] == scene.mic_pos[5]);
  CHECK(sub.received[1].samples == scene.received[1].samples);
}
