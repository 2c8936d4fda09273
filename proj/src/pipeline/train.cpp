#include "maeloc/pipeline/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "maeloc/autograd/checkpoint.hpp"
#include "maeloc/autograd/optim.hpp"
#include "maeloc/error.hpp"

namespace maeloc::pipeline {

namespace fs = std::filesystem;
using model::Example;

namespace {

std::size_t pair_index(int M, int i, int j) {
  // rows i = 0..M, entries j = i+1..M
  std::size_t k = 0;
  for (int a = 0; a < i; ++a) k += static_cast<std::size_t>(M - a);
  return k + static_cast<std::size_t>(j - i - 1);
}

std::vector<signal::AudioFrame> windows(const room::Scene& scene, int N, std::size_t offset) {
  std::vector<signal::AudioFrame> out;
  for (int k = 0; k <= scene.num_mics(); ++k) {
    const auto& f = ngcc::scene_signal(scene, k);
    if (offset + static_cast<std::size_t>(N) > f.size()) throw InvalidArgument("feature window exceeds the recording");
    out.emplace_back(std::vector<double>(f.samples.begin() + static_cast<long>(offset),
                                         f.samples.begin() + static_cast<long>(offset) + N),
                     f.sample_rate);
  }
  return out;
}

AugmentConfig augment_config(const TrainConfig& c) {
  AugmentConfig a;
  a.frame_len = c.model.N;
  a.max_shift = c.max_shift;
  a.shift = c.augment_shift;
  a.noise = c.augment_noise;
  a.mirror = c.augment_mirror;
  a.snr_min = c.noise_snr_min;
  a.snr_max = c.noise_snr_max;
  return a;
}

std::string fmt(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.9g", v);
  return b;
}

void write_csv(const fs::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,train_loss,val_loss,val_source_mse,seconds\n";
  for (const auto& r : history)
    out << r.epoch << ',' << (r.epoch == 0 ? std::string() : fmt(r.train_loss)) << ',' << fmt(r.val_loss) << ','
        << fmt(r.val_source_mse) << ',' << fmt(r.seconds) << '\n';
}

struct Meta {
  int epoch = 0;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<EpochRecord> history;
};

void write_meta(const fs::path& path, const Meta& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << m.epoch << ' ' << m.best_epoch << ' ' << m.best_val_loss << '\n';
  for (const auto& r : m.history)
    out << r.epoch << ' ' << r.train_loss << ' ' << r.val_loss << ' ' << r.val_source_mse << ' ' << r.seconds << '\n';
}

Meta read_meta(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  Meta m;
  if (!(in >> m.epoch >> m.best_epoch >> m.best_val_loss)) throw FormatError("bad training state " + path.string());
  EpochRecord r;
  while (in >> r.epoch >> r.train_loss >> r.val_loss >> r.val_source_mse >> r.seconds) m.history.push_back(r);
  return m;
}

void save_state(const fs::path& path, model::Model<float>& net, ag::AdamW<float>& opt) {
  std::vector<ag::StateRef<float>> state;
  net.state(state);
  auto tensors = ag::export_state(state);
  auto& states = opt.states();
  for (std::size_t k = 0; k < states.size(); ++k) {
    const std::string name = opt.params()[k]->name;
    tensors.push_back({"adam.m." + name, states[k].m});
    tensors.push_back({"adam.v." + name, states[k].v});
    tensors.push_back({"adam.step." + name, ag::Tensor<float>({1}, std::vector<float>{static_cast<float>(states[k].step)})});
  }
  ag::save_checkpoint(path, tensors);
}

void load_state(const fs::path& path, model::Model<float>& net, ag::AdamW<float>& opt) {
  const auto tensors = ag::load_checkpoint(path);
  std::vector<ag::StateRef<float>> state;
  net.state(state);
  ag::import_state(tensors, state);
  std::vector<ag::StateRef<float>> adam;
  auto& states = opt.states();
  std::vector<ag::Tensor<float>> steps(states.size(), ag::Tensor<float>({1}));
  for (std::size_t k = 0; k < states.size(); ++k) {
    const auto& p = *opt.params()[k];
    states[k].m = ag::Tensor<float>(p.value.shape);
    states[k].v = ag::Tensor<float>(p.value.shape);
    adam.push_back({"adam.m." + p.name, &states[k].m});
    adam.push_back({"adam.v." + p.name, &states[k].v});
    adam.push_back({"adam.step." + p.name, &steps[k]});
  }
  ag::import_state(tensors, adam);
  for (std::size_t k = 0; k < states.size(); ++k) states[k].step = static_cast<long>(steps[k].data[0]);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

}  // namespace

FeatureCache FeatureCache::compute(ngcc::NgccModel<float>& ngcc, const room::Scene& scene, int N) {
  FeatureCache c;
  c.tau = ngcc.config.tau;
  c.M = scene.num_mics();
  std::vector<int> all(static_cast<std::size_t>(c.M + 1));
  std::iota(all.begin(), all.end(), 0);
  const auto map = ngcc::ngcc_features(ngcc, windows(scene, N, window_offset(scene.length(), N, 0)), all);
  c.pairs.resize(pair_index(c.M, c.M - 1, c.M) + 1);
  for (int i = 0; i <= c.M; ++i)
    for (int j = i + 1; j <= c.M; ++j) c.pairs[pair_index(c.M, i, j)] = map.at(i, j);
  return c;
}

ngcc::TdoaFeatureMap FeatureCache::subset(const std::vector<int>& S) const {
  ngcc::TdoaFeatureMap map;
  map.tau = tau;
  for (std::size_t a = 0; a < S.size(); ++a)
    for (std::size_t b = a + 1; b < S.size(); ++b) {
      const int i = std::min(S[a], S[b]), j = std::max(S[a], S[b]);
      const auto& v = pairs.at(pair_index(M, i, j));
      map.pairs[{i, j}] = v;
      map.pairs[{j, i}] = std::vector<double>(v.rbegin(), v.rend());
      ++map.computed;
    }
  return map;
}

void split_indices(int count, double val_fraction, std::uint64_t seed, std::vector<int>& train_idx,
                   std::vector<int>& val_idx) {
  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive(seed, 0x5eed));
  std::shuffle(order.begin(), order.end(), rng);
  int n_val = static_cast<int>(std::lround(val_fraction * count));
  if (val_fraction > 0.0) n_val = std::max(n_val, 1);
  if (n_val >= count) throw InvalidArgument("validation split leaves no training scenes");
  val_idx.assign(order.begin(), order.begin() + n_val);
  train_idx.assign(order.begin() + n_val, order.end());
  std::sort(val_idx.begin(), val_idx.end());
}

Example training_example(const TrainConfig& config, const room::Scene& scene, const FeatureCache* cache,
                         ngcc::NgccModel<float>* ngcc, std::uint64_t draw_seed, bool validation) {
  std::mt19937_64 rng(draw_seed);
  const std::uint64_t mask_seed = rng();
  const std::uint64_t aug_seed = rng();
  const auto mask = model::sample_mask(scene.num_mics(), config.mask_mode, model::Setup::s1a, mask_seed);
  const int N = config.model.N;
  const bool tdoa = config.model.use_tdoa;
  if (tdoa && cache == nullptr && ngcc == nullptr) throw InvalidArgument("TDOA features need an NGCC model");
  AugmentConfig aug_cfg = augment_config(config);
  if (validation) aug_cfg.shift = aug_cfg.noise = aug_cfg.mirror = false;
  const Augmentation aug = draw_augmentation(aug_cfg, aug_seed);
  if (aug_cfg.noise) {
    const room::Scene noisy = augment(scene, aug, aug_cfg);
    Example ex = model::make_example(noisy, mask, N, window_offset(noisy.length(), N, 0), tdoa ? ngcc : nullptr);
    for (auto& p : ex.coords) p = mirrored(p, scene.room, aug);
    return ex;
  }
  const std::size_t offset = window_offset(scene.length(), N, aug.shift);
  if (tdoa && cache == nullptr) {
    Example ex = model::make_example(scene, mask, N, offset, ngcc);
    for (auto& p : ex.coords) p = mirrored(p, scene.room, aug);
    return ex;
  }
  Example ex = model::make_example(scene, mask, N, offset, nullptr);
  if (tdoa) ex.features = cache->subset(mask.S);
  for (auto& p : ex.coords) p = mirrored(p, scene.room, aug);
  return ex;
}

TrainResult train(const TrainConfig& config, const std::vector<room::Scene>& scenes, ngcc::NgccModel<float>* ngcc,
                  const TrainHooks& hooks) {
  config.model.validate();
  auto log = [&](const std::string& s) {
    if (hooks.log) hooks.log(s);
  };
  if (scenes.empty()) throw InvalidArgument("train: empty dataset");
  const bool tdoa = config.model.use_tdoa;
  if (tdoa && ngcc == nullptr) throw InvalidArgument("train: TDOA features enabled but no NGCC model given");
  if (tdoa && ngcc->config.tau != config.model.tau)
    throw InvalidArgument("train: NGCC tau " + std::to_string(ngcc->config.tau) + " differs from model tau " +
                          std::to_string(config.model.tau));
  const std::size_t need = static_cast<std::size_t>(config.model.N + 2 * (config.augment_shift ? config.max_shift : 0));
  for (const auto& s : scenes)
    if (s.length() < need)
      throw InvalidArgument("train: scene " + s.id + " has " + std::to_string(s.length()) + " samples, need " +
                            std::to_string(need));

  std::vector<int> train_idx, val_idx;
  split_indices(static_cast<int>(scenes.size()), config.val_fraction, config.seed, train_idx, val_idx);

  std::vector<FeatureCache> cache;
  if (tdoa) {
    log("caching NGCC features for " + std::to_string(scenes.size()) + " scenes");
    cache.reserve(scenes.size());
    for (const auto& s : scenes) cache.push_back(FeatureCache::compute(*ngcc, s, config.model.N));
  }
  auto cache_of = [&](int idx) -> const FeatureCache* { return tdoa ? &cache[static_cast<std::size_t>(idx)] : nullptr; };

  std::vector<Example> val;
  for (int idx : val_idx)
    val.push_back(training_example(config, scenes[static_cast<std::size_t>(idx)], cache_of(idx), ngcc,
                                   derive(config.seed, 0x7a1, static_cast<std::uint64_t>(idx)), true));

  model::Model<float> net(config.model, config.seed);
  std::vector<ag::Parameter<float>*> params;
  net.collect(params);
  ag::AdamWOptions opts;
  opts.lr = config.lr;
  opts.weight_decay = config.weight_decay;
  ag::AdamW<float> opt(params, opts);

  const fs::path dir = config.run_dir;
  const bool write = !config.run_dir.empty();
  if (write) fs::create_directories(dir);

  auto validate = [&](double& loss, double& mse) {
    loss = mse = 0.0;
    if (val.empty()) return;
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    for (std::size_t start = 0; start < val.size(); start += bs) {
      std::vector<const Example*> batch;
      for (std::size_t k = start; k < std::min(val.size(), start + bs); ++k) batch.push_back(&val[k]);
      ag::Graph<float> g;
      g.training = false;
      const auto f = net.forward(g, batch);
      loss += net.loss(g, f, batch, config.loss).value().data[0] * static_cast<double>(batch.size());
      for (std::size_t b = 0; b < batch.size(); ++b) {
        double e = 0.0;
        for (int c = 0; c < 3; ++c) e += std::pow(f.source.value().at(static_cast<int>(b), c) - batch[b]->coords[0][c], 2);
        mse += e;
      }
    }
    loss /= static_cast<double>(val.size());
    mse /= static_cast<double>(val.size());
  };

  TrainResult result;
  int start_epoch = 1;
  if (config.resume && write && fs::exists(dir / "state.bin")) {
    const Meta meta = read_meta(dir / "state.meta");
    load_state(dir / "state.bin", net, opt);
    result.history = meta.history;
    result.best_epoch = meta.best_epoch;
    result.best_val_loss = meta.best_val_loss;
    result.best = model::load_model((dir / "best.bin").string());
    start_epoch = meta.epoch + 1;
    log("resuming after epoch " + std::to_string(meta.epoch));
  } else {
    EpochRecord r0;
    validate(r0.val_loss, r0.val_source_mse);
    result.history.push_back(r0);
    result.best_epoch = 0;
    result.best_val_loss = r0.val_loss;
    result.best = net;
    if (write) save_model((dir / "best.bin").string(), net);
    log("epoch 0 val_loss " + fmt(r0.val_loss) + " val_source_mse " + fmt(r0.val_source_mse));
  }

  int ran = 0;
  for (int epoch = start_epoch; epoch <= config.epochs; ++epoch) {
    if (hooks.stop_after > 0 && ran >= hooks.stop_after) break;
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(derive(config.seed, 0xe90c, static_cast<std::uint64_t>(epoch)));
    std::vector<int> order = train_idx;
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    const std::size_t bs = static_cast<std::size_t>(config.batch_size);
    int step = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++step) {
      std::vector<Example> examples;
      for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) {
        const int idx = order[k];
        examples.push_back(training_example(config, scenes[static_cast<std::size_t>(idx)], cache_of(idx), ngcc, rng(), false));
      }
      std::vector<const Example*> batch;
      for (const auto& e : examples) batch.push_back(&e);
      try {
        ag::Graph<float> g;
        g.training = true;
        const auto f = net.forward(g, batch);
        auto loss = net.loss(g, f, batch, config.loss);
        const double v = loss.value().data[0];
        if (!std::isfinite(v)) throw NumericalError("non-finite loss");
        g.backward(loss);
        opt.step();
        total += v * static_cast<double>(batch.size());
      } catch (const NumericalError& e) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                               ": " + e.what());
      }
    }
    EpochRecord r;
    r.epoch = epoch;
    r.train_loss = total / static_cast<double>(order.size());
    validate(r.val_loss, r.val_source_mse);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(r);
    if (!std::isfinite(r.val_loss)) throw TrainingDiverged("validation loss is not finite at epoch " + std::to_string(epoch));
    if (r.val_loss < result.best_val_loss) {
      result.best_val_loss = r.val_loss;
      result.best_epoch = epoch;
      result.best = net;
      if (write) save_model((dir / "best.bin").string(), net);
    }
    log("epoch " + std::to_string(epoch) + " train_loss " + fmt(r.train_loss) + " val_loss " + fmt(r.val_loss) +
        " val_source_mse " + fmt(r.val_source_mse) + " (" + fmt(r.seconds) + " s)");
    if (write) {
      write_csv(dir / "losses.csv", result.history);
      save_state(dir / "state.bin", net, opt);
      write_meta(dir / "state.meta", {epoch, result.best_epoch, result.best_val_loss, result.history});
    }
    ++ran;
  }
  if (write) write_csv(dir / "losses.csv", result.history);
  result.last = net;
  return result;
}

}  // namespace maeloc::pipeline
