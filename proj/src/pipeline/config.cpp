#include "maeloc/pipeline/config.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <fstream>
#include <sstream>

#include "maeloc/error.hpp"

namespace maeloc::pipeline {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T convert(const std::string& key, const std::string& text) {
  T out{};
  if (!CLI::detail::lexical_cast(text, out))
    throw InvalidArgument("config: cannot parse value '" + text + "' of key " + key);
  return out;
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text) {
  std::istringstream in(text);
  CLI::ConfigINI ini;
  KeyValues kv;
  for (const CLI::ConfigItem& item : ini.from_config(in)) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    std::string value;
    for (std::size_t k = 0; k < item.inputs.size(); ++k) value += (k ? "," : "") + item.inputs[k];
    kv.values_[item.fullname()] = value;
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void KeyValues::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw InvalidArgument("expected key=value, got '" + assignment + "'");
  values_[trim(assignment.substr(0, eq))] = trim(assignment.substr(eq + 1));
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

const std::string* KeyValues::find(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return nullptr;
  read_[key] = true;
  return &it->second;
}

std::string KeyValues::get(const std::string& key, const std::string& fallback) const {
  const std::string* v = find(key);
  return v ? *v : fallback;
}

double KeyValues::get(const std::string& key, double fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "inf") return std::numeric_limits<double>::infinity();
  if (*v == "-inf") return -std::numeric_limits<double>::infinity();
  return convert<double>(key, *v);
}

int KeyValues::get(const std::string& key, int fallback) const {
  const std::string* v = find(key);
  return v ? convert<int>(key, *v) : fallback;
}

std::uint64_t KeyValues::get(const std::string& key, std::uint64_t fallback) const {
  const std::string* v = find(key);
  return v ? convert<std::uint64_t>(key, *v) : fallback;
}

bool KeyValues::get(const std::string& key, bool fallback) const {
  const std::string* v = find(key);
  if (!v) return fallback;
  if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
  if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
  throw InvalidArgument("config: key " + key + " expects a boolean, got '" + *v + "'");
}

std::vector<std::string> KeyValues::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!read_.count(k)) out.push_back(k);
  return out;
}

std::string KeyValues::to_string() const {
  std::string s;
  for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
  return s;
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

DatasetSpec dataset_spec_from(const KeyValues& kv) {
  const std::string preset = kv.get("preset", std::string("none"));
  if (preset != "none" && preset != "desk") throw InvalidArgument("dataset preset must be desk, got " + preset);
  DatasetSpec d = preset == "desk" ? desk_dataset_spec() : DatasetSpec{};
  d.kind = kv.get("kind", d.kind);
  if (d.kind == "luvira_like") d.sampler = room::luvira_like_config();
  d.count = kv.get("count", d.count);
  d.seed = kv.get("seed", d.seed);
  d.gate_db = kv.get("gate_db", d.gate_db);
  auto& s = d.sampler;
  s.length = static_cast<std::size_t>(kv.get("length", static_cast<int>(s.length)));
  s.t60_min = kv.get("t60_min", s.t60_min);
  s.t60_max = kv.get("t60_max", s.t60_max);
  s.snr_min = kv.get("snr_min", s.snr_min);
  s.snr_max = kv.get("snr_max", s.snr_max);
  s.source = room::parse_source_kind(kv.get("source", room::to_string(s.source)));
  s.rir_max_seconds = kv.get("rir_max_seconds", s.rir_max_seconds);
  s.source_margin = kv.get("source_margin", s.source_margin);
  s.room_dims = room::Vec3(kv.get("room_x", s.room_dims.x()), kv.get("room_y", s.room_dims.y()),
                           kv.get("room_z", s.room_dims.z()));
  if (d.kind != "random_faces" && d.kind != "luvira_like")
    throw InvalidArgument("dataset kind must be random_faces or luvira_like, got " + d.kind);
  if (d.count < 1) throw InvalidArgument("dataset count must be positive");
  return d;
}

void write_dataset_spec(KeyValues& kv, const DatasetSpec& d) {
  kv.set("kind", d.kind);
  kv.set("count", std::to_string(d.count));
  kv.set("seed", std::to_string(d.seed));
  kv.set("gate_db", fmt(d.gate_db));
  kv.set("length", std::to_string(d.sampler.length));
  kv.set("t60_min", fmt(d.sampler.t60_min));
  kv.set("t60_max", fmt(d.sampler.t60_max));
  kv.set("snr_min", fmt(d.sampler.snr_min));
  kv.set("snr_max", fmt(d.sampler.snr_max));
  kv.set("source", room::to_string(d.sampler.source));
  kv.set("rir_max_seconds", fmt(d.sampler.rir_max_seconds));
  kv.set("source_margin", fmt(d.sampler.source_margin));
  kv.set("room_x", fmt(d.sampler.room_dims.x()));
  kv.set("room_y", fmt(d.sampler.room_dims.y()));
  kv.set("room_z", fmt(d.sampler.room_dims.z()));
}

TrainConfig paper_preset() {
  TrainConfig c;
  c.epochs = 500;
  c.batch_size = 256;
  c.lr = 5e-4;
  c.weight_decay = 0.1;
  c.model.d = 256;
  c.model.depth = 4;
  c.model.N = 2048;
  c.model.max_mics = 11;
  return c;
}

TrainConfig desk_preset() {
  TrainConfig c;
  c.epochs = 60;
  c.batch_size = 32;
  c.lr = 1e-3;
  c.weight_decay = 0.1;
  c.mask_mode = model::MaskMode::random;
  c.augment_mirror = true;
  c.model.d = 64;
  c.model.depth = 2;
  c.model.N = 512;
  c.model.tau = 274;
  c.model.max_mics = 6;
  return c;
}

DatasetSpec desk_dataset_spec() {
  DatasetSpec d;
  d.count = 2000;
  d.seed = 7;
  d.sampler.length = 512 + 2 * 800;
  d.sampler.t60_min = 0.0;
  d.sampler.t60_max = 0.4;
  d.sampler.snr_min = 0.0;
  d.sampler.snr_max = 30.0;
  d.sampler.source = room::SourceKind::white;
  return d;
}

TrainConfig train_config_from(const KeyValues& kv) {
  const std::string preset = kv.get("preset", std::string("desk"));
  TrainConfig c;
  if (preset == "desk") c = desk_preset();
  else if (preset == "paper") c = paper_preset();
  else throw InvalidArgument("preset must be desk or paper, got " + preset);
  c.epochs = kv.get("epochs", c.epochs);
  c.batch_size = kv.get("batch_size", c.batch_size);
  c.lr = kv.get("lr", c.lr);
  c.weight_decay = kv.get("weight_decay", c.weight_decay);
  c.mask_mode = model::parse_mask_mode(kv.get("mask_mode", model::to_string(c.mask_mode)));
  c.augment_shift = kv.get("augment_shift", c.augment_shift);
  c.augment_noise = kv.get("augment_noise", c.augment_noise);
  c.augment_mirror = kv.get("augment_mirror", c.augment_mirror);
  c.noise_snr_min = kv.get("noise_snr_min", c.noise_snr_min);
  c.noise_snr_max = kv.get("noise_snr_max", c.noise_snr_max);
  c.max_shift = kv.get("max_shift", c.max_shift);
  c.val_fraction = kv.get("val_fraction", c.val_fraction);
  c.seed = kv.get("seed", c.seed);
  c.dataset = kv.get("dataset", c.dataset);
  c.ngcc_checkpoint = kv.get("ngcc_checkpoint", c.ngcc_checkpoint);
  c.run_dir = kv.get("run_dir", c.run_dir);
  c.resume = kv.get("resume", c.resume);
  auto& m = c.model;
  m.d = kv.get("d", m.d);
  m.depth = kv.get("depth", m.depth);
  m.N = kv.get("N", m.N);
  m.heads = kv.get("heads", m.heads);
  m.expansion = kv.get("expansion", m.expansion);
  m.tau = kv.get("tau", m.tau);
  m.max_mics = kv.get("max_mics", m.max_mics);
  m.use_tdoa = kv.get("use_tdoa", m.use_tdoa);
  c.loss.lambda_audio = kv.get("lambda_audio", c.loss.lambda_audio);
  c.loss.lambda_source = kv.get("lambda_source", c.loss.lambda_source);
  c.loss.lambda_mic = kv.get("lambda_mic", c.loss.lambda_mic);
  m.validate();
  if (c.epochs < 1 || c.batch_size < 1) throw InvalidArgument("epochs and batch_size must be positive");
  if (c.max_shift < 0) throw InvalidArgument("max_shift must be >= 0");
  if (c.val_fraction < 0.0 || c.val_fraction >= 1.0) throw InvalidArgument("val_fraction must be in [0, 1)");
  return c;
}

KeyValues to_key_values(const TrainConfig& c) {
  KeyValues kv;
  kv.set("epochs", std::to_string(c.epochs));
  kv.set("batch_size", std::to_string(c.batch_size));
  kv.set("lr", fmt(c.lr));
  kv.set("weight_decay", fmt(c.weight_decay));
  kv.set("mask_mode", model::to_string(c.mask_mode));
  kv.set("augment_shift", c.augment_shift ? "true" : "false");
  kv.set("augment_noise", c.augment_noise ? "true" : "false");
  kv.set("augment_mirror", c.augment_mirror ? "true" : "false");
  kv.set("noise_snr_min", fmt(c.noise_snr_min));
  kv.set("noise_snr_max", fmt(c.noise_snr_max));
  kv.set("max_shift", std::to_string(c.max_shift));
  kv.set("val_fraction", fmt(c.val_fraction));
  kv.set("seed", std::to_string(c.seed));
  kv.set("dataset", c.dataset);
  kv.set("ngcc_checkpoint", c.ngcc_checkpoint);
  kv.set("run_dir", c.run_dir);
  kv.set("resume", c.resume ? "true" : "false");
  kv.set("d", std::to_string(c.model.d));
  kv.set("depth", std::to_string(c.model.depth));
  kv.set("N", std::to_string(c.model.N));
  kv.set("heads", std::to_string(c.model.heads));
  kv.set("expansion", std::to_string(c.model.expansion));
  kv.set("tau", std::to_string(c.model.tau));
  kv.set("max_mics", std::to_string(c.model.max_mics));
  kv.set("use_tdoa", c.model.use_tdoa ? "true" : "false");
  kv.set("lambda_audio", fmt(c.loss.lambda_audio));
  kv.set("lambda_source", fmt(c.loss.lambda_source));
  kv.set("lambda_mic", fmt(c.loss.lambda_mic));
  return kv;
}

}  // namespace maeloc::pipeline
