#include "maeloc/model/model.hpp"

#include <algorithm>
#include <cmath>

#include "maeloc/autograd/checkpoint.hpp"
#include "maeloc/error.hpp"

namespace maeloc::model {

using ag::Graph;
using ag::Segments;
using ag::Tensor;
using ag::Var;

void ModelConfig::validate() const {
  if (d < 1 || heads < 1 || d % heads != 0) throw InvalidArgument("model: d must be a positive multiple of heads");
  if (N < 1) throw InvalidArgument("model: N must be positive");
  if (depth < 0) throw InvalidArgument("model: depth must be >= 0");
  if (expansion < 1) throw InvalidArgument("model: expansion must be >= 1");
  if (tau < 1) throw InvalidArgument("model: tau must be >= 1");
  if (max_mics < 5) throw InvalidArgument("model: max_mics must be >= 5");
}

namespace {

std::vector<double> window(const signal::AudioFrame& f, std::size_t offset, int n) {
  if (offset + static_cast<std::size_t>(n) > f.size())
    throw InvalidArgument("make_example: window exceeds the recording");
  return std::vector<double>(f.samples.begin() + static_cast<long>(offset),
                             f.samples.begin() + static_cast<long>(offset) + n);
}

double peak(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  return m;
}

void scale_by(std::vector<double>& x, double s) {
  for (double& v : x) v /= s;
}

}  // namespace

Example make_example(const room::Scene& scene, const MaskSpec& mask, int N, std::size_t offset,
                     ngcc::NgccModel<float>* ngcc) {
  mask.validate();
  if (mask.M != scene.num_mics()) throw InvalidArgument("make_example: mask and scene disagree on M");
  Example ex;
  ex.mask = mask;
  ex.audio.assign(static_cast<std::size_t>(mask.M + 1), {});
  ex.target.assign(static_cast<std::size_t>(mask.M + 1), {});
  ex.coords.push_back(scene.source_pos);
  for (const auto& p : scene.mic_pos) ex.coords.push_back(p);

  std::vector<signal::AudioFrame> raw(static_cast<std::size_t>(mask.M + 1));
  double mic_peak = 0.0;
  for (int m : mask.S) {
    const auto k = static_cast<std::size_t>(m);
    const signal::AudioFrame& noisy = ngcc::scene_signal(scene, m);
    const signal::AudioFrame& clean = m == 0 ? scene.source_signal : scene.clean.at(k - 1);
    ex.audio[k] = window(noisy, offset, N);
    ex.target[k] = window(clean, offset, N);
    raw[k] = signal::AudioFrame(ex.audio[k], noisy.sample_rate);
    if (m >= 1) mic_peak = std::max(mic_peak, peak(ex.audio[k]));
  }
  ex.audio_scale = mic_peak > 0.0 ? mic_peak : 1.0;
  for (int m : mask.S) {
    const auto k = static_cast<std::size_t>(m);
    double s = ex.audio_scale;
    if (m == 0) {
      s = peak(ex.audio[0]);
      if (s <= 0.0) s = 1.0;
    }
    scale_by(ex.audio[k], s);
    scale_by(ex.target[k], s);
  }
  if (ngcc != nullptr) ex.features = ngcc::ngcc_features(*ngcc, raw, mask.S);
  return ex;
}

room::Scene select_mics(const room::Scene& scene, const std::vector<int>& mics) {
  room::Scene out = scene;
  out.mic_pos.clear();
  out.received.clear();
  out.clean.clear();
  out.rirs.clear();
  for (int m : mics) {
    if (m < 1 || m > scene.num_mics()) throw InvalidArgument("select_mics: microphone index out of range");
    const auto k = static_cast<std::size_t>(m - 1);
    out.mic_pos.push_back(scene.mic_pos[k]);
    if (k < scene.received.size()) out.received.push_back(scene.received[k]);
    if (k < scene.clean.size()) out.clean.push_back(scene.clean[k]);
    if (k < scene.rirs.size()) out.rirs.push_back(scene.rirs[k]);
  }
  return out;
}

Example permute_example(const Example& ex, const std::vector<int>& perm) {
  const int M = ex.mask.M;
  if (static_cast<int>(perm.size()) != M) throw InvalidArgument("permute_example: permutation size");
  std::vector<int> new_of_old(static_cast<std::size_t>(M + 1), 0);
  for (int k = 1; k <= M; ++k) new_of_old.at(static_cast<std::size_t>(perm[static_cast<std::size_t>(k - 1)])) = k;
  Example out = ex;
  for (int k = 1; k <= M; ++k) {
    const auto old = static_cast<std::size_t>(perm[static_cast<std::size_t>(k - 1)]);
    out.audio[static_cast<std::size_t>(k)] = ex.audio[old];
    out.target[static_cast<std::size_t>(k)] = ex.target[old];
    out.coords[static_cast<std::size_t>(k)] = ex.coords[old];
  }
  auto remap = [&](const std::vector<int>& v) {
    std::vector<int> r;
    for (int m : v) r.push_back(new_of_old[static_cast<std::size_t>(m)]);
    std::sort(r.begin(), r.end());
    return r;
  };
  out.mask.S = remap(ex.mask.S);
  out.mask.R = remap(ex.mask.R);
  out.features.pairs.clear();
  for (const auto& [key, r] : ex.features.pairs)
    out.features.pairs[{new_of_old[static_cast<std::size_t>(key.first)],
                        new_of_old[static_cast<std::size_t>(key.second)]}] = r;
  return out;
}

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  std::mt19937_64 rng(seed);
  const int d = config.d;
  auto vec = [&](const std::string& name) {
    return ag::Parameter<T>{name, ag::normal_tensor<T>({d}, ag::kInitStd, rng), {}};
  };
  w_enc = ag::Linear<T>("enc.audio", config.N, d, rng, false);
  coord_embed = ag::Mlp<T>("enc.coord", 3, d, d, rng, true);
  v_enc_audio = vec("enc.v_audio");
  v_enc_coord = vec("enc.v_coord");
  v_dec_audio = vec("dec.v_audio");
  v_dec_coord = vec("dec.v_coord");
  u_audio = vec("dec.u_audio");
  u_coord = vec("dec.u_coord");
  u_source = vec("dec.u_source");
  encoder = ag::Transformer<T>("encoder", config.depth, d, config.heads, config.expansion, rng);
  decoder = ag::Transformer<T>("decoder", config.depth, d, config.heads, config.expansion, rng);
  gamma_a2c = ag::Mlp<T>("dec.gamma_a2c", d, d, d, rng);
  gamma_c2a = ag::Mlp<T>("dec.gamma_c2a", d, d, d, rng);
  w_dec = ag::Linear<T>("dec.audio", d, config.N, rng, false);
  const int head_in = config.use_tdoa ? 3 * d : 2 * d;
  if (config.use_tdoa) phi = ag::Mlp<T>("tdoa.phi", 2 * config.tau + 1 + 2 * d, d, d, rng);
  psi_source = ag::Mlp<T>("head.source", head_in, d, 3, rng);
  psi_mic = ag::Mlp<T>("head.mic", head_in, d, 3, rng);
}

namespace {

template <typename T>
Var<T> row_param(Graph<T>& g, ag::Parameter<T>& p) {
  return ag::reshape(g.param(p), {1, static_cast<int>(p.value.numel())});
}

template <typename T>
Tensor<T> matrix(const std::vector<const std::vector<double>*>& rows, int width) {
  Tensor<T> t({static_cast<int>(rows.size()), width});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<int>(rows[r]->size()) != width) throw ShapeError("model: row width mismatch");
    for (int c = 0; c < width; ++c)
      t.data[r * static_cast<std::size_t>(width) + static_cast<std::size_t>(c)] =
          static_cast<T>((*rows[r])[static_cast<std::size_t>(c)]);
  }
  return t;
}

void check_batch(const std::vector<const Example*>& batch, const ModelConfig& cfg) {
  if (batch.empty()) throw InvalidArgument("model: empty batch");
  for (const Example* ex : batch) {
    ex->mask.validate();
    if (ex->mask.M > cfg.max_mics) throw InvalidArgument("model: more microphones than max_mics");
    if (cfg.use_tdoa && ex->features.tau != cfg.tau)
      throw InvalidArgument("model: TDOA features missing or built for another tau");
  }
}

Segments segments_of(const std::vector<int>& offset, const std::vector<int>& count) {
  Segments s;
  for (std::size_t b = 0; b < offset.size(); ++b) s.emplace_back(offset[b], count[b]);
  return s;
}

}  // namespace

template <typename T>
Var<T> Model<T>::embed(Graph<T>& g, const std::vector<const Example*>& batch) {
  std::vector<const std::vector<double>*> audio_rows;
  std::vector<std::vector<double>> coord_store;
  for (const Example* ex : batch) {
    for (int m : ex->mask.S) audio_rows.push_back(&ex->audio[static_cast<std::size_t>(m)]);
    for (int m : ex->mask.R) {
      const auto& p = ex->coords[static_cast<std::size_t>(m)];
      coord_store.push_back({p.x(), p.y(), p.z()});
    }
  }
  std::vector<const std::vector<double>*> coord_rows;
  for (const auto& c : coord_store) coord_rows.push_back(&c);

  std::vector<Var<T>> parts;
  const int n_audio = static_cast<int>(audio_rows.size());
  if (n_audio > 0)
    parts.push_back(ag::add_row(w_enc(g, g.constant(matrix<T>(audio_rows, config.N))), g.param(v_enc_audio)));
  parts.push_back(ag::add_row(coord_embed(g, g.constant(matrix<T>(coord_rows, 3))), g.param(v_enc_coord)));
  Var<T> all = ag::concat_rows(parts);

  std::vector<int> order;
  int a = 0, c = n_audio;
  for (const Example* ex : batch) {
    for (std::size_t k = 0; k < ex->mask.S.size(); ++k) order.push_back(a++);
    for (std::size_t k = 0; k < ex->mask.R.size(); ++k) order.push_back(c++);
  }
  return ag::gather_rows(all, order);
}

template <typename T>
Var<T> Model<T>::encode(Graph<T>& g, Var<T> tokens, const Segments& segments) {
  return encoder(g, tokens, segments);
}

template <typename T>
Var<T> Model<T>::decode(Graph<T>& g, Var<T> y, const Segments& segments) {
  return decoder(g, y, segments);
}

template <typename T>
Var<T> Model<T>::assemble(Graph<T>& g, Var<T> encoded, const std::vector<const Example*>& batch,
                          const std::vector<int>& encoder_offset) {
  const int e = encoded.rows();
  Var<T> table = ag::concat_rows(std::vector<Var<T>>{encoded, row_param(g, u_audio), row_param(g, u_coord),
                                                      row_param(g, u_source)});
  const int ua = e, uc = e + 1, us = e + 2;
  std::vector<int> ia, ic;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const MaskSpec& mask = batch[b]->mask;
    const int base = encoder_offset[b];
    const int n_s = static_cast<int>(mask.S.size());
    for (int m = 0; m <= mask.M; ++m) {
      auto s = std::lower_bound(mask.S.begin(), mask.S.end(), m);
      ia.push_back(s != mask.S.end() && *s == m ? base + static_cast<int>(s - mask.S.begin()) : ua);
      auto r = std::lower_bound(mask.R.begin(), mask.R.end(), m);
      if (r != mask.R.end() && *r == m) ic.push_back(base + n_s + static_cast<int>(r - mask.R.begin()));
      else ic.push_back(m == 0 ? us : uc);
    }
  }
  Var<T> ta = ag::gather_rows(table, ia), tc = ag::gather_rows(table, ic);
  Var<T> ya = ag::add_row(ag::add(ta, gamma_c2a(g, tc)), g.param(v_dec_audio));
  Var<T> yc = ag::add_row(ag::add(tc, gamma_a2c(g, ta)), g.param(v_dec_coord));
  const int total = static_cast<int>(ia.size());
  std::vector<int> order;
  int row = 0;
  for (const Example* ex : batch) {
    const int n = ex->mask.M + 1;
    for (int m = 0; m < n; ++m) order.push_back(row + m);
    for (int m = 0; m < n; ++m) order.push_back(total + row + m);
    row += n;
  }
  return ag::gather_rows(ag::concat_rows(std::vector<Var<T>>{ya, yc}), order);
}

template <typename T>
Var<T> Model<T>::tdoa_pool(Graph<T>& g, Var<T> decoded, const std::vector<const Example*>& batch,
                           const std::vector<int>& decoder_offset) {
  const int width = 2 * config.tau + 1;
  std::vector<const std::vector<double>*> rows;
  std::vector<int> ii, jj;
  Segments segs;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Example& ex = *batch[b];
    const auto& S = ex.mask.S;
    if (S.size() < 2) throw InvalidArgument("tdoa_pool: need at least two unmasked audio inputs");
    const int coord_base = decoder_offset[b] + ex.mask.M + 1;
    const int start = static_cast<int>(rows.size());
    for (int i : S)
      for (int j : S) {
        if (i == j) continue;
        rows.push_back(&ex.features.at(i, j));
        ii.push_back(coord_base + i);
        jj.push_back(coord_base + j);
      }
    segs.emplace_back(start, static_cast<int>(rows.size()) - start);
  }
  Var<T> in = ag::concat_cols(std::vector<Var<T>>{g.constant(matrix<T>(rows, width)), ag::gather_rows(decoded, ii),
                                                   ag::gather_rows(decoded, jj)});
  return ag::segment_max(phi(g, in), segs);
}

template <typename T>
Forward<T> Model<T>::forward(Graph<T>& g, const std::vector<const Example*>& batch) {
  check_batch(batch, config);
  Forward<T> f;
  std::vector<int> enc_count, dec_count, scene_of_mic, scene_idx;
  int eo = 0, dof = 0, ro = 0, mo = 0;
  for (const Example* ex : batch) {
    const int ne = static_cast<int>(ex->mask.S.size() + ex->mask.R.size());
    f.encoder_offset.push_back(eo);
    enc_count.push_back(ne);
    eo += ne;
    f.decoder_offset.push_back(dof);
    dec_count.push_back(2 * (ex->mask.M + 1));
    dof += 2 * (ex->mask.M + 1);
    f.recon_offset.push_back(ro);
    ro += static_cast<int>(ex->mask.S.size());
    f.mic_offset.push_back(mo);
    mo += ex->mask.M;
  }
  const Segments enc_segs = segments_of(f.encoder_offset, enc_count);
  f.encoded = encode(g, embed(g, batch), enc_segs);
  f.z = ag::segment_max(f.encoded, enc_segs);
  Var<T> y = assemble(g, f.encoded, batch, f.encoder_offset);
  f.decoded = decode(g, y, segments_of(f.decoder_offset, dec_count));

  std::vector<int> audio_rows, source_rows, mic_rows, mic_scene;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Example& ex = *batch[b];
    const int base = f.decoder_offset[b];
    for (int m : ex.mask.S) audio_rows.push_back(base + m);
    source_rows.push_back(base + ex.mask.M + 1);
    for (int m = 1; m <= ex.mask.M; ++m) {
      mic_rows.push_back(base + ex.mask.M + 1 + m);
      mic_scene.push_back(static_cast<int>(b));
    }
  }
  f.recon = w_dec(g, ag::gather_rows(f.decoded, audio_rows));

  std::vector<Var<T>> src_in{ag::gather_rows(f.decoded, source_rows), f.z};
  std::vector<Var<T>> mic_in{ag::gather_rows(f.decoded, mic_rows), ag::gather_rows(f.z, mic_scene)};
  if (config.use_tdoa) {
    f.q = tdoa_pool(g, f.decoded, batch, f.decoder_offset);
    src_in.push_back(f.q);
    mic_in.push_back(ag::gather_rows(f.q, mic_scene));
  }
  f.source = psi_source(g, ag::concat_cols(src_in));
  f.mics = psi_mic(g, ag::concat_cols(mic_in));
  return f;
}

template <typename T>
Var<T> Model<T>::loss(Graph<T>& g, const Forward<T>& f, const std::vector<const Example*>& batch,
                      const LossWeights& w) {
  const double nb = static_cast<double>(batch.size());
  std::vector<const std::vector<double>*> targets;
  std::vector<double> audio_w, source_w, mic_w;
  std::vector<std::vector<double>> src_t, mic_t;
  for (const Example* ex : batch) {
    const double ks = static_cast<double>(ex->mask.S.size());
    for (int m : ex->mask.S) {
      targets.push_back(&ex->target[static_cast<std::size_t>(m)]);
      audio_w.push_back(w.lambda_audio / (ks * nb));
    }
    const auto& r0 = ex->coords[0];
    src_t.push_back({r0.x(), r0.y(), r0.z()});
    source_w.push_back(w.lambda_source / nb);
    const int unknown = ex->mask.M - static_cast<int>(ex->mask.R.size());
    for (int m = 1; m <= ex->mask.M; ++m) {
      const auto& p = ex->coords[static_cast<std::size_t>(m)];
      mic_t.push_back({p.x(), p.y(), p.z()});
      mic_w.push_back(unknown > 0 && !ex->mask.has_coord(m) ? w.lambda_mic / (unknown * nb) : 0.0);
    }
  }
  auto rows_of = [](const std::vector<std::vector<double>>& v) {
    std::vector<const std::vector<double>*> r;
    for (const auto& x : v) r.push_back(&x);
    return r;
  };
  auto sq = [](Var<T> a) { return ag::mul(a, a); };
  Var<T> da = ag::sub(f.recon, g.constant(matrix<T>(targets, config.N)));
  Var<T> ds = ag::sub(f.source, g.constant(matrix<T>(rows_of(src_t), 3)));
  Var<T> dm = ag::sub(f.mics, g.constant(matrix<T>(rows_of(mic_t), 3)));
  Var<T> total = ag::add(ag::weighted_row_sum(sq(da), audio_w), ag::weighted_row_sum(sq(ds), source_w));
  return ag::add(total, ag::weighted_row_sum(sq(dm), mic_w));
}

template <typename T>
void Model<T>::collect(std::vector<ag::Parameter<T>*>& out) {
  w_enc.collect(out);
  coord_embed.collect(out);
  for (auto* p : {&v_enc_audio, &v_enc_coord, &v_dec_audio, &v_dec_coord, &u_audio, &u_coord, &u_source})
    out.push_back(p);
  encoder.collect(out);
  decoder.collect(out);
  gamma_a2c.collect(out);
  gamma_c2a.collect(out);
  w_dec.collect(out);
  if (config.use_tdoa) phi.collect(out);
  psi_source.collect(out);
  psi_mic.collect(out);
}

template <typename T>
void Model<T>::state(std::vector<ag::StateRef<T>>& out) {
  w_enc.state(out);
  coord_embed.state(out);
  for (auto* p : {&v_enc_audio, &v_enc_coord, &v_dec_audio, &v_dec_coord, &u_audio, &u_coord, &u_source})
    out.push_back({p->name, &p->value});
  encoder.state(out);
  decoder.state(out);
  gamma_a2c.state(out);
  gamma_c2a.state(out);
  w_dec.state(out);
  if (config.use_tdoa) phi.state(out);
  psi_source.state(out);
  psi_mic.state(out);
}

template <typename T>
std::size_t Model<T>::num_parameters() {
  std::vector<ag::Parameter<T>*> ps;
  collect(ps);
  std::size_t n = 0;
  for (auto* p : ps) n += p->value.numel();
  return n;
}

double reference_loss(const std::vector<std::vector<double>>& recon, const room::Vec3& source,
                      const std::vector<room::Vec3>& mics, const Example& ex, const LossWeights& w) {
  double audio = 0.0;
  for (std::size_t k = 0; k < ex.mask.S.size(); ++k) {
    const auto& t = ex.target[static_cast<std::size_t>(ex.mask.S[k])];
    for (std::size_t n = 0; n < t.size(); ++n) audio += (recon[k][n] - t[n]) * (recon[k][n] - t[n]);
  }
  audio /= static_cast<double>(ex.mask.S.size());
  const double src = (source - ex.coords[0]).squaredNorm();
  double mic = 0.0;
  int unknown = 0;
  for (int m = 1; m <= ex.mask.M; ++m) {
    if (ex.mask.has_coord(m)) continue;
    ++unknown;
    mic += (mics[static_cast<std::size_t>(m - 1)] - ex.coords[static_cast<std::size_t>(m)]).squaredNorm();
  }
  const double mic_term = unknown > 0 ? mic / unknown : 0.0;
  return w.lambda_audio * audio + w.lambda_source * src + w.lambda_mic * mic_term;
}

template <typename T>
std::vector<Prediction> predict(Model<T>& model, const std::vector<const Example*>& batch) {
  Graph<T> g;
  const Forward<T> f = model.forward(g, batch);
  std::vector<Prediction> out;
  const auto& src = f.source.value().data;
  const auto& mic = f.mics.value().data;
  const auto& rec = f.recon.value().data;
  const std::size_t n = static_cast<std::size_t>(model.config.N);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    Prediction p;
    p.source = room::Vec3(src[3 * b], src[3 * b + 1], src[3 * b + 2]);
    for (int m = 0; m < batch[b]->mask.M; ++m) {
      const std::size_t r = static_cast<std::size_t>(f.mic_offset[b] + m);
      p.mics.emplace_back(mic[3 * r], mic[3 * r + 1], mic[3 * r + 2]);
    }
    for (std::size_t k = 0; k < batch[b]->mask.S.size(); ++k) {
      const std::size_t r = static_cast<std::size_t>(f.recon_offset[b]) + k;
      p.recon.emplace_back(rec.begin() + static_cast<long>(r * n), rec.begin() + static_cast<long>((r + 1) * n));
    }
    out.push_back(std::move(p));
  }
  return out;
}

void save_model(const std::string& path, Model<float>& model) {
  std::vector<ag::StateRef<float>> state;
  model.state(state);
  auto tensors = ag::export_state(state);
  const ModelConfig& c = model.config;
  tensors.push_back({"model.config",
                     Tensor<float>({8}, std::vector<float>{static_cast<float>(c.d), static_cast<float>(c.depth),
                                                           static_cast<float>(c.N), static_cast<float>(c.heads),
                                                           static_cast<float>(c.expansion), static_cast<float>(c.tau),
                                                           static_cast<float>(c.max_mics), c.use_tdoa ? 1.0f : 0.0f})});
  ag::save_checkpoint(path, tensors);
}

Model<float> load_model(const std::string& path) {
  const auto tensors = ag::load_checkpoint(path);
  auto it = std::find_if(tensors.begin(), tensors.end(), [](const ag::NamedTensor& t) { return t.name == "model.config"; });
  if (it == tensors.end() || it->tensor.numel() != 8) throw FormatError("not a model checkpoint: " + path);
  const auto& v = it->tensor.data;
  ModelConfig c;
  c.d = static_cast<int>(v[0]);
  c.depth = static_cast<int>(v[1]);
  c.N = static_cast<int>(v[2]);
  c.heads = static_cast<int>(v[3]);
  c.expansion = static_cast<int>(v[4]);
  c.tau = static_cast<int>(v[5]);
  c.max_mics = static_cast<int>(v[6]);
  c.use_tdoa = v[7] != 0.0f;
  Model<float> model(c, 0);
  std::vector<ag::StateRef<float>> state;
  model.state(state);
  ag::import_state(tensors, state);
  return model;
}

Model<double> to_double(Model<float>& model) {
  Model<double> out(model.config, 0);
  std::vector<ag::StateRef<float>> src;
  model.state(src);
  std::vector<ag::StateRef<double>> dst;
  out.state(dst);
  ag::import_state(ag::export_state(src), dst);
  return out;
}

template struct Model<float>;
template struct Model<double>;
template std::vector<Prediction> predict(Model<float>&, const std::vector<const Example*>&);
template std::vector<Prediction> predict(Model<double>&, const std::vector<const Example*>&);

}  // namespace maeloc::model
