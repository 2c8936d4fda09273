#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "maeloc/room/scene.hpp"

namespace maeloc::room {

inline constexpr const char* kIndexFile = "index.txt";

/// Metadata row of a dataset index.
struct SceneRecord {
  std::string id;
  Vec3 dims;
  double t60 = 0.0;
  double snr_db = 0.0;
  Vec3 source_pos;
  std::vector<Vec3> mic_pos;
};

SceneRecord record_of(const Scene& scene);
std::string format_index_line(const SceneRecord& record);
SceneRecord parse_index_line(const std::string& line);

/// Scales all received and clean channels by one shared gain (and the source
/// by its own gain) to peak at 0.9 full scale, then rounds to the 16-bit grid.
/// The result is exactly what write_dataset stores.
void prepare_for_storage(Scene& scene);

/// Writes `index.txt` plus `<id>.src.wav`, `<id>.mic<k>.wav` and
/// `<id>.clean<k>.wav` for every scene.
void write_dataset(const std::filesystem::path& dir, std::span<const Scene> scenes);

std::vector<SceneRecord> read_index(const std::filesystem::path& dir);
Scene read_scene(const std::filesystem::path& dir, const SceneRecord& record);
std::vector<Scene> read_dataset(const std::filesystem::path& dir);

}  // namespace maeloc::room
