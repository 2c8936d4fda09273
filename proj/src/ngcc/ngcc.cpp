#include "maeloc/ngcc/ngcc.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "maeloc/autograd/checkpoint.hpp"
#include "maeloc/autograd/optim.hpp"
#include "maeloc/error.hpp"
#include "maeloc/signal/dsp.hpp"
#include "maeloc/signal/fft.hpp"

namespace maeloc::ngcc {

using ag::Graph;
using ag::Tensor;
using ag::Var;

void NgccConfig::validate() const {
  if (tau < 1) throw InvalidArgument("ngcc: tau must be >= 1");
  if (channels < 1) throw InvalidArgument("ngcc: channels must be >= 1");
  if (filter_len < 1 || filter_len % 2 == 0) throw InvalidArgument("ngcc: filter_len must be odd");
  if (head_hidden < 0) throw InvalidArgument("ngcc: head_hidden must be >= 0");
}

int tau_for_room(const room::Room& room) { return room.max_delay_samples(); }

std::vector<double> gcc_window(const signal::AudioFrame& a, const signal::AudioFrame& b, int half) {
  if (a.size() != b.size() || a.size() == 0)
    throw ShapeError("gcc_window: frames must be non-empty and of equal length");
  if (half < 0) throw InvalidArgument("gcc_window: negative lag range");
  const std::size_t nfft = signal::next_pow2(2 * a.size());
  if (static_cast<std::size_t>(half) >= nfft / 2)
    throw InvalidArgument("gcc_window: lag range exceeds the correlation length");
  const std::vector<double> full = signal::gcc_phat_full(a.samples, b.samples, nfft);
  std::vector<double> out(static_cast<std::size_t>(2 * half + 1));
  for (int t = -half; t <= half; ++t) {
    const std::size_t k = t >= 0 ? static_cast<std::size_t>(t) : nfft - static_cast<std::size_t>(-t);
    out[static_cast<std::size_t>(t + half)] = full[k];
  }
  return out;
}

template <typename T>
Tensor<T> bandpass_filters(int channels, int length) {
  Tensor<T> f({channels, length});
  const int half = length / 2;
  auto sinc = [](double x) { return x == 0.0 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x); };
  for (int c = 0; c < channels; ++c) {
    const double lo = 0.5 * c / channels, hi = 0.5 * (c + 1) / channels;
    std::vector<double> h(static_cast<std::size_t>(length));
    double energy = 0.0;
    for (int n = -half; n <= half; ++n) {
      const double win =
          length == 1 ? 1.0 : 0.54 + 0.46 * std::cos(std::numbers::pi * n / (half + 0.5));
      const double v = (2 * hi * sinc(2 * hi * n) - 2 * lo * sinc(2 * lo * n)) * win;
      h[static_cast<std::size_t>(n + half)] = v;
      energy += v * v;
    }
    const double norm = energy > 0.0 ? 1.0 / std::sqrt(energy) : 0.0;
    for (int k = 0; k < length; ++k) f.at(c, k) = static_cast<T>(h[static_cast<std::size_t>(k)] * norm);
  }
  return f;
}

template <typename T>
NgccModel<T>::NgccModel(const NgccConfig& cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  std::mt19937_64 rng(seed);
  filters = {"ngcc.filters", bandpass_filters<T>(config.channels, config.filter_len), {}};
  head = ag::Mlp<T>("ngcc.head", config.channels, config.head_hidden, 1, rng);
}

template <typename T>
Var<T> NgccModel<T>::logits(Graph<T>& g, Var<T> windows) {
  if (windows.value().rank() != 2 || windows.cols() != config.window_len())
    throw ShapeError("ngcc: expected windows of width " + std::to_string(config.window_len()));
  const int batch = windows.rows();
  Var<T> kern = ag::autocorr(g.param(filters));
  Var<T> per_lag = ag::lag_filter(windows, kern);  // [batch * classes, channels]
  Var<T> out = head(g, per_lag);                   // [batch * classes, 1]
  return ag::reshape(out, {batch, config.classes()});
}

template <typename T>
void NgccModel<T>::collect(std::vector<ag::Parameter<T>*>& out) {
  out.push_back(&filters);
  head.collect(out);
}

template <typename T>
void NgccModel<T>::state(std::vector<ag::StateRef<T>>& out) {
  out.push_back({filters.name, &filters.value});
  head.state(out);
}

namespace {

template <typename T>
Tensor<T> window_rows(const std::vector<std::vector<double>>& rows, int width) {
  Tensor<T> t({static_cast<int>(rows.size()), width});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (int c = 0; c < width; ++c)
      t.data[r * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)] =
          static_cast<T>(rows[r][static_cast<std::size_t>(c)]);
  return t;
}

template <typename T>
std::vector<std::vector<double>> batch_logits(NgccModel<T>& model,
                                              const std::vector<std::vector<double>>& windows) {
  Graph<T> g;
  Var<T> x = g.constant(window_rows<T>(windows, model.config.window_len()));
  const Tensor<T>& v = model.logits(g, x).value();
  const int k = model.config.classes();
  std::vector<std::vector<double>> out(windows.size(), std::vector<double>(static_cast<std::size_t>(k)));
  for (std::size_t r = 0; r < windows.size(); ++r)
    for (int c = 0; c < k; ++c)
      out[r][static_cast<std::size_t>(c)] = v.data[r * static_cast<std::size_t>(k) + static_cast<std::size_t>(c)];
  return out;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

signal::AudioFrame crop(const signal::AudioFrame& f, std::size_t offset, std::size_t len) {
  if (len == 0 || (offset == 0 && len == f.size())) return f;
  if (offset + len > f.size()) throw InvalidArgument("ngcc: crop exceeds the signal");
  return signal::AudioFrame(std::vector<double>(f.samples.begin() + static_cast<long>(offset),
                                                f.samples.begin() + static_cast<long>(offset + len)),
                            f.sample_rate);
}

std::vector<std::pair<int, int>> unordered_pairs(int first, int last) {
  std::vector<std::pair<int, int>> out;
  for (int i = first; i <= last; ++i)
    for (int j = i + 1; j <= last; ++j) out.emplace_back(i, j);
  return out;
}

}  // namespace

template <typename T>
std::vector<double> ngcc_forward(NgccModel<T>& model, const signal::AudioFrame& a,
                                 const signal::AudioFrame& b) {
  return batch_logits(model, {gcc_window(a, b, model.config.window_half())}).front();
}

template <typename T>
int ngcc_delay(NgccModel<T>& model, const signal::AudioFrame& a, const signal::AudioFrame& b) {
  return argmax(ngcc_forward(model, a, b)) - model.config.tau;
}

const std::vector<double>& TdoaFeatureMap::at(int i, int j) const {
  auto it = pairs.find({i, j});
  if (it == pairs.end())
    throw InvalidArgument("no TDOA feature for pair (" + std::to_string(i) + ", " + std::to_string(j) + ")");
  return it->second;
}

template <typename T>
TdoaFeatureMap ngcc_features(NgccModel<T>& model, const std::vector<signal::AudioFrame>& signals,
                             const std::vector<int>& present) {
  std::vector<int> ids = present;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) throw InvalidArgument("ngcc_features: need at least two unmasked signals");
  for (int k : ids)
    if (k < 0 || static_cast<std::size_t>(k) >= signals.size())
      throw InvalidArgument("ngcc_features: signal index out of range");

  std::vector<std::pair<int, int>> todo;
  std::vector<std::vector<double>> windows;
  for (std::size_t a = 0; a < ids.size(); ++a)
    for (std::size_t b = a + 1; b < ids.size(); ++b) {
      todo.emplace_back(ids[a], ids[b]);
      windows.push_back(gcc_window(signals[static_cast<std::size_t>(ids[a])],
                                   signals[static_cast<std::size_t>(ids[b])], model.config.window_half()));
    }
  const auto logits = batch_logits(model, windows);

  TdoaFeatureMap map;
  map.tau = model.config.tau;
  map.computed = static_cast<int>(todo.size());
  for (std::size_t p = 0; p < todo.size(); ++p) {
    const auto& z = logits[p];
    const double peak = *std::max_element(z.begin(), z.end());
    std::vector<double> prob(z.size());
    double total = 0.0;
    for (std::size_t t = 0; t < z.size(); ++t) total += prob[t] = std::exp(z[t] - peak);
    for (double& v : prob) v /= total;
    std::vector<double> flipped(prob.rbegin(), prob.rend());
    map.pairs[todo[p]] = std::move(prob);
    map.pairs[{todo[p].second, todo[p].first}] = std::move(flipped);
  }
  return map;
}

const signal::AudioFrame& scene_signal(const room::Scene& scene, int k) {
  if (k == 0) return scene.source_signal;
  return scene.received.at(static_cast<std::size_t>(k - 1));
}

int delay_label(const room::Scene& scene, int i, int j) {
  auto arrival = [&](int k) {
    if (k == 0) return 0.0;
    return (scene.mic_pos.at(static_cast<std::size_t>(k - 1)) - scene.source_pos).norm() /
           scene.room.speed_of_sound * scene.room.sample_rate;
  };
  return static_cast<int>(std::lround(arrival(j) - arrival(i)));
}

template <typename T>
double delay_accuracy(NgccModel<T>& model, const std::vector<room::Scene>& scenes, int tolerance,
                      bool mic_pairs_only, std::size_t frame_len) {
  long hit = 0, total = 0;
  const int tau = model.config.tau;
  for (const room::Scene& s : scenes) {
    std::vector<std::vector<double>> windows;
    std::vector<int> labels;
    for (auto [i, j] : unordered_pairs(mic_pairs_only ? 1 : 0, s.num_mics())) {
      const int label = delay_label(s, i, j);
      if (std::abs(label) > tau) continue;
      windows.push_back(gcc_window(crop(scene_signal(s, i), 0, frame_len),
                                   crop(scene_signal(s, j), 0, frame_len), model.config.window_half()));
      labels.push_back(label);
    }
    if (windows.empty()) continue;
    const auto logits = batch_logits(model, windows);
    for (std::size_t p = 0; p < labels.size(); ++p) {
      hit += std::abs(argmax(logits[p]) - tau - labels[p]) <= tolerance;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

double gcc_accuracy(const std::vector<room::Scene>& scenes, int tau, int tolerance,
                    std::size_t frame_len) {
  long hit = 0, total = 0;
  for (const room::Scene& s : scenes)
    for (auto [i, j] : unordered_pairs(1, s.num_mics())) {
      const int label = delay_label(s, i, j);
      if (std::abs(label) > tau) continue;
      const auto w = gcc_window(crop(scene_signal(s, i), 0, frame_len),
                                crop(scene_signal(s, j), 0, frame_len), tau);
      hit += std::abs(argmax(w) - tau - label) <= tolerance;
      ++total;
    }
  return total == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(total);
}

NgccModel<float> pretrain_ngcc(const std::vector<room::Scene>& scenes, const NgccConfig& config,
                               const PretrainConfig& options, PretrainReport* report) {
  config.validate();
  if (scenes.empty()) throw InvalidArgument("pretrain_ngcc: no scenes");
  if (options.epochs < 1 || options.batch < 1 || options.pairs_per_scene < 1)
    throw InvalidArgument("pretrain_ngcc: epochs, batch and pairs_per_scene must be positive");
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };

  std::mt19937_64 rng(options.seed);
  NgccModel<float> model(config, rng());

  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t n_val = static_cast<std::size_t>(std::floor(options.val_fraction * static_cast<double>(scenes.size())));
  if (n_val >= scenes.size()) n_val = scenes.size() - 1;
  std::vector<room::Scene> val;
  std::vector<const room::Scene*> train;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k < n_val) val.push_back(scenes[order[k]]);
    else train.push_back(&scenes[order[k]]);
  }
  if (val.empty())
    for (const room::Scene* s : train) val.push_back(*s);

  std::vector<ag::Parameter<float>*> params;
  model.collect(params);
  ag::AdamWOptions adam;
  adam.lr = options.lr;
  adam.weight_decay = options.weight_decay;
  ag::AdamW<float> opt(params, adam);

  std::vector<ag::StateRef<float>> state;
  model.state(state);
  std::vector<ag::NamedTensor> best = ag::export_state(state);
  PretrainReport rep;
  rep.best_val_accuracy = -1.0;
  bool warned = false;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    struct Sample {
      std::vector<double> window;
      int label;
    };
    std::vector<Sample> samples;
    for (const room::Scene* s : train) {
      const int first = options.source_pairs ? 0 : 1;
      const int count = s->num_mics() + 1 - first;
      if (count < 2) continue;
      std::uniform_int_distribution<int> pick(first, s->num_mics());
      const std::size_t len = options.frame_len == 0 ? s->length() : options.frame_len;
      if (len > s->length()) throw InvalidArgument("pretrain_ngcc: frame_len exceeds scene length");
      std::uniform_int_distribution<std::size_t> offset(0, s->length() - len);
      for (int p = 0; p < options.pairs_per_scene; ++p) {
        const int i = pick(rng);
        int j = pick(rng);
        while (j == i) j = pick(rng);
        const std::size_t off = offset(rng);
        const int label = delay_label(*s, i, j);
        if (std::abs(label) > config.tau) {
          ++rep.skipped_pairs;
          if (!warned) {
            log("warning: skipping pairs with delay labels outside [-tau, tau]");
            warned = true;
          }
          continue;
        }
        samples.push_back({gcc_window(crop(scene_signal(*s, i), off, len), crop(scene_signal(*s, j), off, len),
                                      config.window_half()),
                           label + config.tau});
      }
    }
    std::shuffle(samples.begin(), samples.end(), rng);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(options.batch)) {
      const std::size_t stop = std::min(samples.size(), start + static_cast<std::size_t>(options.batch));
      std::vector<std::vector<double>> rows;
      std::vector<int> labels;
      for (std::size_t k = start; k < stop; ++k) {
        rows.push_back(samples[k].window);
        labels.push_back(samples[k].label);
      }
      Graph<float> g;
      g.training = true;
      Var<float> loss = ag::cross_entropy(
          model.logits(g, g.constant(window_rows<float>(rows, config.window_len()))), labels);
      g.backward(loss);
      opt.step();
      loss_sum += static_cast<double>(loss.value().data[0]) * static_cast<double>(rows.size());
      seen += rows.size();
    }
    const double train_loss = seen == 0 ? 0.0 : loss_sum / static_cast<double>(seen);
    const double acc = delay_accuracy(model, val, 1, true, options.frame_len);
    rep.train_loss.push_back(train_loss);
    rep.val_accuracy.push_back(acc);
    if (acc > rep.best_val_accuracy) {
      rep.best_val_accuracy = acc;
      rep.best_epoch = epoch;
      best = ag::export_state(state);
    }
    log("ngcc epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(train_loss) +
        " val_acc " + std::to_string(acc));
  }
  ag::import_state(best, state);
  if (report != nullptr) *report = rep;
  return model;
}

void save_ngcc(const std::string& path, NgccModel<float>& model) {
  std::vector<ag::StateRef<float>> state;
  model.state(state);
  std::vector<ag::NamedTensor> tensors = ag::export_state(state);
  const NgccConfig& c = model.config;
  tensors.push_back({"ngcc.config", Tensor<float>({4}, std::vector<float>{
                                        static_cast<float>(c.tau), static_cast<float>(c.channels),
                                        static_cast<float>(c.filter_len), static_cast<float>(c.head_hidden)})});
  ag::save_checkpoint(path, tensors);
}

NgccModel<float> load_ngcc(const std::string& path) {
  const auto tensors = ag::load_checkpoint(path);
  auto it = std::find_if(tensors.begin(), tensors.end(),
                         [](const ag::NamedTensor& t) { return t.name == "ngcc.config"; });
  if (it == tensors.end() || it->tensor.numel() != 4)
    throw FormatError("not an NGCC checkpoint: " + path);
  NgccConfig c;
  c.tau = static_cast<int>(it->tensor.data[0]);
  c.channels = static_cast<int>(it->tensor.data[1]);
  c.filter_len = static_cast<int>(it->tensor.data[2]);
  c.head_hidden = static_cast<int>(it->tensor.data[3]);
  NgccModel<float> model(c, 0);
  std::vector<ag::StateRef<float>> state;
  model.state(state);
  ag::import_state(tensors, state);
  return model;
}

#define MAELOC_NGCC_INSTANTIATE(T)                                                              \
  template struct NgccModel<T>;                                                                 \
  template Tensor<T> bandpass_filters<T>(int, int);                                             \
  template std::vector<double> ngcc_forward(NgccModel<T>&, const signal::AudioFrame&,           \
                                            const signal::AudioFrame&);                        \
  template int ngcc_delay(NgccModel<T>&, const signal::AudioFrame&, const signal::AudioFrame&); \
  template TdoaFeatureMap ngcc_features(NgccModel<T>&, const std::vector<signal::AudioFrame>&,   \
                                        const std::vector<int>&);                               \
  template double delay_accuracy(NgccModel<T>&, const std::vector<room::Scene>&, int, bool,      \
                                 std::size_t);

MAELOC_NGCC_INSTANTIATE(float)
MAELOC_NGCC_INSTANTIATE(double)

}  // namespace maeloc::ngcc
