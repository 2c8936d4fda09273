#include "maeloc/room/scene.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "maeloc/error.hpp"
#include "maeloc/signal/dsp.hpp"
#include "maeloc/signal/fft.hpp"

#ifndef MAELOC_DATA_DIR
#define MAELOC_DATA_DIR "data"
#endif

namespace maeloc::room {

double Scene::tdoa_samples(int i, int j) const {
  const double di = (mic_pos.at(static_cast<std::size_t>(i - 1)) - source_pos).norm();
  const double dj = (mic_pos.at(static_cast<std::size_t>(j - 1)) - source_pos).norm();
  return (dj - di) / room.speed_of_sound * room.sample_rate;
}

Scene render_scene(const Room& room, const Vec3& source_pos, const std::vector<Vec3>& mic_pos,
                   const signal::AudioFrame& source_signal, double snr_db, std::uint64_t seed,
                   const RenderOptions& options) {
  room.validate();
  source_signal.validate();
  if (mic_pos.empty()) throw InvalidArgument("render_scene: need at least one microphone");
  if (source_signal.size() <= options.preroll)
    throw InvalidArgument("render_scene: signal shorter than preroll");
  if (source_signal.sample_rate != room.sample_rate)
    throw InvalidArgument("render_scene: sample rate mismatch");

  const int order = options.max_order < 0 ? room.default_max_order() : options.max_order;
  const std::size_t keep = source_signal.size() - options.preroll;

  Scene scene;
  scene.room = room;
  scene.source_pos = source_pos;
  scene.mic_pos = mic_pos;
  scene.snr_db = snr_db;
  scene.source_signal = signal::AudioFrame(
      std::vector<double>(source_signal.samples.begin() + static_cast<long>(options.preroll),
                          source_signal.samples.end()),
      room.sample_rate);

  double power = 0.0;
  for (const Vec3& mic : mic_pos) {
    ImpulseResponse h = simulate_rir(room, source_pos, mic, order, options.max_rir_length);
    std::vector<double> full = signal::fft_convolve(source_signal.samples, h);
    std::vector<double> out(full.begin() + static_cast<long>(options.preroll),
                            full.begin() + static_cast<long>(options.preroll + keep));
    power += signal::mean_square(out);
    scene.clean.emplace_back(std::move(out), room.sample_rate);
    scene.rirs.push_back(std::move(h));
  }
  power /= static_cast<double>(mic_pos.size());

  scene.received = scene.clean;
  if (!(std::isinf(snr_db) && snr_db > 0)) {
    if (power <= 0.0) throw DegenerateSignal("render_scene: received signals are silent");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<std::vector<double>> noise(mic_pos.size(), std::vector<double>(keep));
    double drawn = 0.0;
    for (auto& w : noise)
      for (double& v : w) {
        v = gauss(rng);
        drawn += v * v;
      }
    drawn /= static_cast<double>(keep * mic_pos.size());
    const double gain = std::sqrt(power / std::pow(10.0, snr_db / 10.0) / drawn);
    for (std::size_t m = 0; m < noise.size(); ++m)
      for (std::size_t i = 0; i < keep; ++i) scene.received[m].samples[i] += gain * noise[m][i];
  }
  return scene;
}

MicCatalogue load_mic_catalogue(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open microphone catalogue " + path.string());
  MicCatalogue mics;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    double x, y, z;
    if (ss >> x >> y >> z) mics.emplace_back(x, y, z);
  }
  return mics;
}

std::filesystem::path default_catalogue_path() {
  return std::filesystem::path(MAELOC_DATA_DIR) / "luvira_like_mics.txt";
}

SamplerConfig luvira_like_config() {
  SamplerConfig c;
  c.room_dims = Vec3(7.0, 8.0, 2.0);
  c.t60_min = 0.0;
  c.t60_max = 0.4;
  return c;
}

namespace {

struct Draws {
  std::mt19937_64 rng;
  std::uniform_real_distribution<double> unit{0.0, 1.0};
  explicit Draws(std::uint64_t seed) : rng(seed) {}
  double operator()() { return unit(rng); }
  double range(double lo, double hi) { return lo + (hi - lo) * unit(rng); }
};

Scene finish_scene(const Room& room, const Vec3& src, const std::vector<Vec3>& mics,
                   const SamplerConfig& config, double snr, Draws& draw) {
  std::size_t rir_len =
      static_cast<std::size_t>(std::ceil(config.rir_max_seconds * config.sample_rate));
  if (room.t60 <= 0.0) {
    // Direct path only: just enough to hold the farthest arrival.
    rir_len = static_cast<std::size_t>(room.max_delay_samples()) + kSincTaps;
  }
  const std::size_t preroll = rir_len;
  const auto signal = generate_source(config.source, config.length + preroll,
                                      config.sample_rate, draw.rng);
  RenderOptions opts;
  opts.max_rir_length = rir_len;
  opts.preroll = preroll;
  const std::uint64_t noise_seed = draw.rng();
  return render_scene(room, src, mics, signal::AudioFrame(signal, config.sample_rate), snr,
                      noise_seed, opts);
}

}  // namespace

Scene sample_scene_luvira_like(const MicCatalogue& catalogue, const SamplerConfig& config,
                               std::uint64_t seed) {
  if (catalogue.empty()) throw InvalidArgument("microphone catalogue is empty");
  Draws draw(seed);
  Room room;
  room.dims = Vec3(7.0, 8.0, 2.0);
  room.sample_rate = config.sample_rate;
  const double m = config.source_margin;
  Vec3 src;
  for (int a = 0; a < 3; ++a) src[a] = draw.range(m, room.dims[a] - m);
  double t60 = draw.range(config.t60_min, config.t60_max);
  while (config.t60_max > config.t60_min && t60 <= config.t60_min)
    t60 = draw.range(config.t60_min, config.t60_max);
  room.t60 = t60;
  const double snr = draw.range(config.snr_min, config.snr_max);
  for (const Vec3& p : catalogue)
    if (!room.contains(p)) throw OutOfRoom("catalogue microphone outside the 7x8x2 room");
  return finish_scene(room, src, catalogue, config, std::isnan(snr) ? config.snr_min : snr, draw);
}

Scene sample_scene_random_faces(const SamplerConfig& config, std::uint64_t seed) {
  Draws draw(seed);
  Room room;
  room.dims = config.room_dims;
  room.sample_rate = config.sample_rate;
  room.validate();
  const double m = config.source_margin;
  Vec3 src;
  for (int a = 0; a < 3; ++a) src[a] = draw.range(m, room.dims[a] - m);

  const double off = config.mic_face_offset;
  std::vector<Vec3> mics;
  for (int axis = 0; axis < 3; ++axis) {
    for (int side = 0; side < 2; ++side) {
      Vec3 p;
      for (int a = 0; a < 3; ++a) p[a] = draw.range(off, room.dims[a] - off);
      p[axis] = side == 0 ? off : room.dims[axis] - off;
      mics.push_back(p);
    }
  }
  room.t60 = draw.range(config.t60_min, config.t60_max);
  const double snr = draw.range(config.snr_min, config.snr_max);
  return finish_scene(room, src, mics, config, std::isnan(snr) ? config.snr_min : snr, draw);
}

}  // namespace maeloc::room
