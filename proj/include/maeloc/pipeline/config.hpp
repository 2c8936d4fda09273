#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "maeloc/model/mask.hpp"
#include "maeloc/model/model.hpp"
#include "maeloc/room/scene.hpp"

namespace maeloc::pipeline {

/// Flat key=value settings. Lines starting with '#' or ';' are comments.
class KeyValues {
 public:
  static KeyValues load(const std::filesystem::path& path);
  static KeyValues parse(const std::string& text);

  /// "key=value"; throws InvalidArgument without '='.
  void set_assignment(const std::string& assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void merge(const KeyValues& other);
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get(const std::string& key, const std::string& fallback) const;
  double get(const std::string& key, double fallback) const;
  int get(const std::string& key, int fallback) const;
  std::uint64_t get(const std::string& key, std::uint64_t fallback) const;
  bool get(const std::string& key, bool fallback) const;

  /// Keys never read through get(); reported so typos do not pass silently.
  std::vector<std::string> unused() const;
  const std::map<std::string, std::string>& values() const { return values_; }
  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> read_;
  const std::string* find(const std::string& key) const;
};

struct DatasetSpec {
  std::string kind = "random_faces";  // or luvira_like
  int count = 100;
  std::uint64_t seed = 1;
  room::SamplerConfig sampler;
  double gate_db = -50.0;  // every received channel must pass power_gate
};

/// preset=desk starts from desk_dataset_spec(); other keys override.
DatasetSpec dataset_spec_from(const KeyValues& kv);
void write_dataset_spec(KeyValues& kv, const DatasetSpec& spec);

struct TrainConfig {
  int epochs = 500;
  int batch_size = 256;
  double lr = 5e-4;
  double weight_decay = 0.1;
  model::MaskMode mask_mode = model::MaskMode::fixed;
  bool augment_shift = true;
  bool augment_noise = false;
  /// Reflect source and microphones about the room's mid-planes (one random
  /// flip per axis). Shoebox acoustics are unchanged by the reflection.
  bool augment_mirror = false;
  double noise_snr_min = 0.0;
  double noise_snr_max = 30.0;
  int max_shift = 800;  // samples; 0.05 s at 16 kHz
  double val_fraction = 0.1;
  std::uint64_t seed = 1;
  std::string dataset;
  std::string ngcc_checkpoint;
  std::string run_dir = "run";
  bool resume = false;
  model::ModelConfig model;
  model::LossWeights loss;
};

/// Full-scale recipe (500 epochs, batch 256, d = 256, D = 4, N = 2048).
TrainConfig paper_preset();
/// Desk scale: 60 epochs, batch 32, d = 64, D = 2, N = 512, tau 274,
/// random masks and mirror augmentation.
TrainConfig desk_preset();
/// Desk benchmark: 2000 random-faces scenes with a white source, t60 in
/// (0, 0.4), SNR in [0, 30] dB and room for the 800-sample shift.
DatasetSpec desk_dataset_spec();

/// Starts from the preset named by "preset" (desk or paper, default desk)
/// and applies the remaining keys.
TrainConfig train_config_from(const KeyValues& kv);
KeyValues to_key_values(const TrainConfig& config);

}  // namespace maeloc::pipeline
