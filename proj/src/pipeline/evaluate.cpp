#include "maeloc/pipeline/evaluate.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "maeloc/error.hpp"
#include "maeloc/pipeline/dataset.hpp"
#include "maeloc/signal/dsp.hpp"

namespace maeloc::pipeline {

using room::Vec3;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  std::uint32_t w[2];
  seq.generate(w, w + 2);
  return (static_cast<std::uint64_t>(w[0]) << 32) | w[1];
}

double truncated(double e) { return std::min(e, kTruncation); }

double mean(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double condition_key(double v) {
  if (!std::isfinite(v)) return v;
  return std::round(v * 1000.0) / 1000.0;
}

}  // namespace

std::vector<FramePrediction> ModelPredictor::predict(const std::vector<const room::Scene*>&,
                                                     const std::vector<const model::Example*>& examples) {
  std::vector<FramePrediction> out;
  for (auto& p : model::predict(net_, examples)) {
    FramePrediction f;
    f.source = p.source;
    f.mics = std::move(p.mics);
    f.recon = std::move(p.recon);
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<FramePrediction> CenterPredictor::predict(const std::vector<const room::Scene*>& scenes,
                                                      const std::vector<const model::Example*>& examples) {
  std::vector<FramePrediction> out;
  for (std::size_t b = 0; b < examples.size(); ++b) {
    FramePrediction f;
    f.source = scenes[b]->room.dims / 2.0;
    f.mics.assign(static_cast<std::size_t>(examples[b]->mask.M), f.source);
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<FramePrediction> OraclePredictor::predict(const std::vector<const room::Scene*>&,
                                                      const std::vector<const model::Example*>& examples) {
  std::vector<FramePrediction> out;
  for (const auto* ex : examples) {
    FramePrediction f;
    f.source = ex->coords[0];
    f.mics.assign(ex->coords.begin() + 1, ex->coords.end());
    for (int m : ex->mask.S) f.recon.push_back(ex->target[static_cast<std::size_t>(m)]);
    out.push_back(std::move(f));
  }
  return out;
}

multilat::LocalizationResult ClassicalPredictor::localize(const std::vector<Vec3>& mic_pos,
                                                          const std::vector<signal::AudioFrame>& frames,
                                                          int tau) const {
  if (mic_pos.size() != frames.size()) throw InvalidArgument("localize: one frame per microphone expected");
  multilat::LocalizationResult fail;
  fail.position = multilat::centroid(mic_pos);
  if (mic_pos.size() < 5) return fail;
  multilat::PeakCandidates candidates;
  for (std::size_t a = 0; a < frames.size(); ++a)
    for (std::size_t b = a + 1; b < frames.size(); ++b) {
      const auto r = signal::gcc_phat(frames[a], frames[b], tau);
      candidates.push_back(multilat::extract_peaks(r, config_.peaks, frames[a].sample_rate, static_cast<int>(a),
                                                   static_cast<int>(b)));
    }
  try {
    if (config_.ransac) {
      multilat::RansacConfig rc;
      rc.seed = config_.seed;
      return multilat::ransac_localize(mic_pos, candidates, rc);
    }
    const auto top = multilat::top_candidates(candidates);
    return multilat::solve_tdoa_ls(mic_pos, top, fail.position);
  } catch (const Error&) {
    return fail;
  }
}

std::vector<FramePrediction> ClassicalPredictor::predict(const std::vector<const room::Scene*>& scenes,
                                                         const std::vector<const model::Example*>& examples) {
  std::vector<FramePrediction> out;
  for (std::size_t b = 0; b < examples.size(); ++b) {
    const auto& ex = *examples[b];
    std::vector<Vec3> pos;
    std::vector<signal::AudioFrame> frames;
    for (int m = 1; m <= ex.mask.M; ++m)
      if (ex.mask.has_audio(m) && ex.mask.has_coord(m)) {
        pos.push_back(ex.coords[static_cast<std::size_t>(m)]);
        frames.emplace_back(ex.audio[static_cast<std::size_t>(m)], scenes[b]->room.sample_rate);
      }
    const int tau = config_.tau > 0 ? config_.tau : scenes[b]->room.max_delay_samples();
    const auto r = localize(pos, frames, tau);
    FramePrediction f;
    f.source = r.position;
    f.converged = r.converged;
    out.push_back(std::move(f));
  }
  return out;
}

FrameInput prepare_frame(const room::Scene& scene, int frame, const EvalOptions& o, bool features) {
  const int M = scene.num_mics();
  const int k = o.m_known == 0 ? M : o.m_known;
  if (k < 1 || k > M) throw InvalidArgument("evaluate: m_known must be in [1, " + std::to_string(M) + "]");
  std::vector<int> ids(static_cast<std::size_t>(M));
  std::iota(ids.begin(), ids.end(), 1);
  std::mt19937_64 rng(derive(o.seed, 0xf4a3e, static_cast<std::uint64_t>(frame)));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(static_cast<std::size_t>(k));
  std::sort(ids.begin(), ids.end());

  FrameInput in;
  model::MaskSpec mask;
  if (o.setup == model::Setup::s1a || o.setup == model::Setup::s1b) {
    in.scene = k == M ? scene : model::select_mics(scene, ids);
    mask = model::setup_mask(k, o.setup);
  } else {
    in.scene = scene;
    mask = model::setup_mask(M, o.setup, ids);
  }
  mask.validate();
  if (features && o.ngcc == nullptr) throw InvalidArgument("evaluate: predictor needs an NGCC model");
  in.example = model::make_example(in.scene, mask, o.N, window_offset(in.scene.length(), o.N, 0),
                                   features ? o.ngcc : nullptr);
  return in;
}

EvalReport evaluate(Predictor& predictor, const std::vector<room::Scene>& scenes, const EvalOptions& o) {
  if (scenes.empty()) throw InvalidArgument("evaluate: no scenes");
  EvalReport report;
  report.predictor = predictor.name();
  report.setup = o.setup;
  report.m_known = o.m_known;
  const std::size_t bs = static_cast<std::size_t>(std::max(1, o.batch));
  for (std::size_t start = 0; start < scenes.size(); start += bs) {
    std::vector<FrameInput> inputs;
    for (std::size_t f = start; f < std::min(scenes.size(), start + bs); ++f)
      inputs.push_back(prepare_frame(scenes[f], static_cast<int>(f), o, predictor.needs_features()));
    std::vector<const room::Scene*> sc;
    std::vector<const model::Example*> ex;
    for (const auto& in : inputs) {
      sc.push_back(&in.scene);
      ex.push_back(&in.example);
    }
    const auto preds = predictor.predict(sc, ex);
    if (preds.size() != inputs.size()) throw InvalidArgument("predictor returned the wrong number of frames");
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      const auto& e = inputs[b].example;
      const auto& p = preds[b];
      FrameRecord r;
      r.id = scenes[start + b].id;
      r.truth = e.coords[0];
      r.estimate = p.source;
      r.error = truncated((p.source - r.truth).norm());
      r.converged = p.converged;
      r.snr_db = scenes[start + b].snr_db;
      r.t60 = scenes[start + b].room.t60;
      r.M = e.mask.M;
      r.snr_in = r.snr_out = kNaN;
      if (!p.recon.empty()) {
        std::vector<double> in, out;
        for (std::size_t s = 0; s < e.mask.S.size(); ++s) {
          const int m = e.mask.S[s];
          if (m == 0) continue;
          const auto& target = e.target[static_cast<std::size_t>(m)];
          in.push_back(signal::measure_snr(target, e.audio[static_cast<std::size_t>(m)]));
          out.push_back(signal::measure_snr(target, p.recon.at(s)));
        }
        r.snr_in = mean(in);
        r.snr_out = mean(out);
      }
      if (!p.mics.empty())
        for (int m = 1; m <= e.mask.M; ++m)
          if (!e.mask.has_coord(m))
            r.mic_errors.push_back(truncated((p.mics.at(static_cast<std::size_t>(m - 1)) - e.coords[static_cast<std::size_t>(m)]).norm()));
      report.frames.push_back(std::move(r));
    }
  }
  summarize(report, o.bootstrap, o.seed);
  return report;
}

Interval bootstrap_mean(const std::vector<double>& values, int resamples, std::uint64_t seed) {
  Interval iv;
  iv.value = mean(values);
  iv.lo = iv.hi = iv.value;
  if (values.empty() || resamples < 1) return iv;
  std::mt19937_64 rng(derive(seed, 0xb007));
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k) s += values[pick(rng)];
    m = s / static_cast<double>(values.size());
  }
  std::sort(means.begin(), means.end());
  const auto at = [&](double q) {
    const auto k = static_cast<std::size_t>(std::clamp(std::floor(q * static_cast<double>(resamples)), 0.0,
                                                        static_cast<double>(resamples - 1)));
    return means[k];
  };
  iv.lo = std::min(at(0.025), iv.value);
  iv.hi = std::max(at(0.975), iv.value);
  return iv;
}

void summarize(EvalReport& r, int bootstrap, std::uint64_t seed) {
  std::vector<double> err_cm, hit;
  std::vector<double> mic_err;
  std::vector<double> gains;
  r.non_converged = 0;
  for (const auto& f : r.frames) {
    err_cm.push_back(100.0 * f.error);
    hit.push_back(f.error < kAccRadius ? 1.0 : 0.0);
    if (!f.converged) ++r.non_converged;
    for (double e : f.mic_errors) mic_err.push_back(100.0 * e);
    if (std::isfinite(f.snr_in) && std::isfinite(f.snr_out)) gains.push_back(f.snr_out - f.snr_in);
  }
  r.mae_cm = bootstrap_mean(err_cm, bootstrap, seed);
  r.acc = bootstrap_mean(hit, bootstrap, seed + 1);
  r.mic_count = static_cast<int>(mic_err.size());
  r.mic_mae_cm = mean(mic_err);
  r.snr_gain_db = mean(gains);

  auto breakdown = [&](auto key) {
    std::map<double, std::vector<const FrameRecord*>> groups;
    for (const auto& f : r.frames) groups[condition_key(key(f))].push_back(&f);
    std::vector<ConditionStats> out;
    for (const auto& [k, frames] : groups) {
      ConditionStats c;
      c.key = k;
      c.count = static_cast<int>(frames.size());
      std::vector<double> e, a, si, so;
      for (const auto* f : frames) {
        e.push_back(100.0 * f->error);
        a.push_back(f->error < kAccRadius ? 1.0 : 0.0);
        if (std::isfinite(f->snr_in) && std::isfinite(f->snr_out)) {
          si.push_back(f->snr_in);
          so.push_back(f->snr_out);
        }
      }
      c.mae_cm = mean(e);
      c.acc = mean(a);
      c.snr_in = mean(si);
      c.snr_out = mean(so);
      out.push_back(c);
    }
    return out;
  };
  r.by_snr = breakdown([](const FrameRecord& f) { return f.snr_db; });
  r.by_t60 = breakdown([](const FrameRecord& f) { return f.t60; });
  r.by_m = breakdown([](const FrameRecord& f) { return static_cast<double>(f.M); });
}

namespace {

nlohmann::json number(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

nlohmann::json vec(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

nlohmann::json conditions(const std::vector<ConditionStats>& cs) {
  auto out = nlohmann::json::array();
  for (const auto& c : cs)
    out.push_back({{"key", number(c.key)},
                   {"count", c.count},
                   {"mae_cm", number(c.mae_cm)},
                   {"acc", number(c.acc)},
                   {"snr_in", number(c.snr_in)},
                   {"snr_out", number(c.snr_out)}});
  return out;
}

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["predictor"] = predictor;
  j["setup"] = model::to_string(setup);
  j["m_known"] = m_known;
  j["frames"] = frames.size();
  j["mae_cm"] = {{"value", number(mae_cm.value)}, {"lo", number(mae_cm.lo)}, {"hi", number(mae_cm.hi)}};
  j["acc_at_30cm"] = {{"value", number(acc.value)}, {"lo", number(acc.lo)}, {"hi", number(acc.hi)}};
  j["mic_mae_cm"] = number(mic_mae_cm);
  j["mic_count"] = mic_count;
  j["non_converged"] = non_converged;
  j["snr_gain_db"] = number(snr_gain_db);
  j["by_snr"] = conditions(by_snr);
  j["by_t60"] = conditions(by_t60);
  j["by_m"] = conditions(by_m);
  auto fr = nlohmann::json::array();
  for (const auto& f : frames) {
    auto mic = nlohmann::json::array();
    for (double e : f.mic_errors) mic.push_back(e);
    fr.push_back({{"id", f.id},
                  {"truth", vec(f.truth)},
                  {"estimate", vec(f.estimate)},
                  {"error_m", f.error},
                  {"converged", f.converged},
                  {"snr_db", number(f.snr_db)},
                  {"t60", f.t60},
                  {"M", f.M},
                  {"snr_in", number(f.snr_in)},
                  {"snr_out", number(f.snr_out)},
                  {"mic_errors_m", mic}});
  }
  j["records"] = fr;
  return j.dump(1);
}

bool operator==(const EvalReport& a, const EvalReport& b) { return a.to_json() == b.to_json(); }

namespace {

double number_from(const nlohmann::json& j) {
  if (j.is_null()) return kNaN;
  if (j.is_string()) return j.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                         : -std::numeric_limits<double>::infinity();
  return j.get<double>();
}

Vec3 vec_from(const nlohmann::json& j) { return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

Interval interval_from(const nlohmann::json& j) {
  return {number_from(j.at("value")), number_from(j.at("lo")), number_from(j.at("hi"))};
}

}  // namespace

EvalReport report_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    EvalReport r;
    r.predictor = j.at("predictor").get<std::string>();
    r.setup = model::parse_setup(j.at("setup").get<std::string>());
    r.m_known = j.at("m_known").get<int>();
    for (const auto& f : j.at("records")) {
      FrameRecord x;
      x.id = f.at("id").get<std::string>();
      x.truth = vec_from(f.at("truth"));
      x.estimate = vec_from(f.at("estimate"));
      x.error = f.at("error_m").get<double>();
      x.converged = f.at("converged").get<bool>();
      x.snr_db = number_from(f.at("snr_db"));
      x.t60 = f.at("t60").get<double>();
      x.M = f.at("M").get<int>();
      x.snr_in = number_from(f.at("snr_in"));
      x.snr_out = number_from(f.at("snr_out"));
      for (const auto& e : f.at("mic_errors_m")) x.mic_errors.push_back(e.get<double>());
      r.frames.push_back(std::move(x));
    }
    summarize(r, 0, 0);
    r.mae_cm = interval_from(j.at("mae_cm"));
    r.acc = interval_from(j.at("acc_at_30cm"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad evaluation report: ") + e.what());
  }
}

std::vector<Vec3> trajectory_filter(const std::vector<Vec3>& series, int window) {
  if (series.empty()) throw InvalidArgument("trajectory_filter: empty series");
  if (window < 1 || window % 2 == 0) throw InvalidArgument("trajectory_filter: window must be odd and positive");
  const long n = static_cast<long>(series.size());
  std::vector<Vec3> out(series.size());
  std::vector<double> buf;
  for (long i = 0; i < n; ++i) {
    const long h = std::min<long>({window / 2, i, n - 1 - i});
    for (int c = 0; c < 3; ++c) {
      buf.clear();
      for (long k = i - h; k <= i + h; ++k) buf.push_back(series[static_cast<std::size_t>(k)][c]);
      std::nth_element(buf.begin(), buf.begin() + h, buf.end());
      out[static_cast<std::size_t>(i)][c] = buf[static_cast<std::size_t>(h)];
    }
  }
  return out;
}

namespace {

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("spearman: need two equal series of length >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = mean(rx), my = mean(ry);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace maeloc::pipeline
