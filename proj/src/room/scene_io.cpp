#include "maeloc/room/scene_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "maeloc/error.hpp"
#include "maeloc/signal/wav.hpp"

namespace maeloc::room {
namespace {

constexpr const char* kHeader = "# maeloc scene index v1";
constexpr const char* kColumns = "# id Lx Ly Lz t60 snr_db sx sy sz M [x y z]*M";

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& tok) {
  if (tok == "inf") return std::numeric_limits<double>::infinity();
  if (tok == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &used);
  } catch (const std::exception&) {
    throw FormatError("index: bad number '" + tok + "'");
  }
  if (used != tok.size()) throw FormatError("index: bad number '" + tok + "'");
  return v;
}

std::filesystem::path wav_path(const std::filesystem::path& dir, const std::string& id,
                               const std::string& what) {
  return dir / (id + "." + what + ".wav");
}

}  // namespace

SceneRecord record_of(const Scene& scene) {
  return {scene.id, scene.room.dims, scene.room.t60, scene.snr_db, scene.source_pos,
          scene.mic_pos};
}

std::string format_index_line(const SceneRecord& r) {
  std::string line = r.id;
  auto add = [&line](double v) {
    line += ' ';
    line += fmt(v);
  };
  for (int a = 0; a < 3; ++a) add(r.dims[a]);
  add(r.t60);
  add(r.snr_db);
  for (int a = 0; a < 3; ++a) add(r.source_pos[a]);
  line += ' ' + std::to_string(r.mic_pos.size());
  for (const Vec3& p : r.mic_pos)
    for (int a = 0; a < 3; ++a) add(p[a]);
  return line;
}

SceneRecord parse_index_line(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> tok;
  for (std::string t; ss >> t;) tok.push_back(t);
  if (tok.size() < 11) throw FormatError("index: short line '" + line + "'");
  SceneRecord r;
  r.id = tok[0];
  for (int a = 0; a < 3; ++a) r.dims[a] = parse_double(tok[static_cast<std::size_t>(1 + a)]);
  r.t60 = parse_double(tok[4]);
  r.snr_db = parse_double(tok[5]);
  for (int a = 0; a < 3; ++a) r.source_pos[a] = parse_double(tok[static_cast<std::size_t>(6 + a)]);
  const long m = std::stol(tok[9]);
  if (m < 1 || tok.size() != static_cast<std::size_t>(10 + 3 * m))
    throw FormatError("index: microphone count does not match line '" + r.id + "'");
  for (long k = 0; k < m; ++k) {
    Vec3 p;
    for (int a = 0; a < 3; ++a) p[a] = parse_double(tok[static_cast<std::size_t>(10 + 3 * k + a)]);
    r.mic_pos.push_back(p);
  }
  return r;
}

void prepare_for_storage(Scene& scene) {
  auto peak_of = [](const std::vector<signal::AudioFrame>& frames) {
    double peak = 0.0;
    for (const auto& f : frames)
      for (double v : f.samples) peak = std::max(peak, std::abs(v));
    return peak;
  };
  const double mic_peak = std::max(peak_of(scene.received), peak_of(scene.clean));
  const double mic_gain = mic_peak > 0.0 ? 0.9 / mic_peak : 1.0;
  for (auto* set : {&scene.received, &scene.clean})
    for (auto& f : *set) {
      for (double& v : f.samples) v *= mic_gain;
      f.samples = signal::quantize_pcm16(f.samples);
    }
  double src_peak = 0.0;
  for (double v : scene.source_signal.samples) src_peak = std::max(src_peak, std::abs(v));
  const double src_gain = src_peak > 0.0 ? 0.9 / src_peak : 1.0;
  for (double& v : scene.source_signal.samples) v *= src_gain;
  scene.source_signal.samples = signal::quantize_pcm16(scene.source_signal.samples);
}

void write_dataset(const std::filesystem::path& dir, std::span<const Scene> scenes) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / kIndexFile, std::ios::trunc);
  if (!index) throw IoError("cannot write index in " + dir.string());
  index << kHeader << '\n' << kColumns << '\n';
  for (const Scene& original : scenes) {
    Scene s = original;
    prepare_for_storage(s);
    if (s.id.empty() || s.id.find_first_of(" \t\n") != std::string::npos)
      throw InvalidArgument("scene id must be a non-empty token");
    index << format_index_line(record_of(s)) << '\n';
    signal::write_wav(wav_path(dir, s.id, "src"), s.source_signal);
    for (int m = 0; m < s.num_mics(); ++m) {
      signal::write_wav(wav_path(dir, s.id, "mic" + std::to_string(m + 1)),
                        s.received[static_cast<std::size_t>(m)]);
      signal::write_wav(wav_path(dir, s.id, "clean" + std::to_string(m + 1)),
                        s.clean[static_cast<std::size_t>(m)]);
    }
  }
  if (!index) throw IoError("failed writing index in " + dir.string());
}

std::vector<SceneRecord> read_index(const std::filesystem::path& dir) {
  std::ifstream in(dir / kIndexFile);
  if (!in) throw IoError("no scene index in " + dir.string());
  std::vector<SceneRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(parse_index_line(line));
  }
  return out;
}

Scene read_scene(const std::filesystem::path& dir, const SceneRecord& r) {
  Scene s;
  s.id = r.id;
  s.room.dims = r.dims;
  s.room.t60 = r.t60;
  s.snr_db = r.snr_db;
  s.source_pos = r.source_pos;
  s.mic_pos = r.mic_pos;
  s.source_signal = signal::read_wav(wav_path(dir, r.id, "src"));
  s.room.sample_rate = s.source_signal.sample_rate;
  for (std::size_t m = 0; m < r.mic_pos.size(); ++m) {
    const std::string k = std::to_string(m + 1);
    s.received.push_back(signal::read_wav(wav_path(dir, r.id, "mic" + k)));
    s.clean.push_back(signal::read_wav(wav_path(dir, r.id, "clean" + k)));
    if (s.received.back().size() != s.source_signal.size() ||
        s.clean.back().size() != s.source_signal.size())
      throw FormatError("scene " + r.id + ": channel lengths differ");
  }
  return s;
}

std::vector<Scene> read_dataset(const std::filesystem::path& dir) {
  std::vector<Scene> out;
  for (const SceneRecord& r : read_index(dir)) out.push_back(read_scene(dir, r));
  return out;
}

}  // namespace maeloc::room
