#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "maeloc/autograd/layers.hpp"
#include "maeloc/autograd/tensor.hpp"

namespace maeloc::ag {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

/// Little-endian container: u32 version, u32 count, then per tensor u32 name
/// length, name bytes, u32 rank, u32 extents, f32 values.
void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// Copies module state out as 32-bit tensors.
template <typename T>
std::vector<NamedTensor> export_state(const std::vector<StateRef<T>>& state);
/// Loads tensors by name; every entry of `state` must be present with a
/// matching shape.
template <typename T>
void import_state(const std::vector<NamedTensor>& tensors, const std::vector<StateRef<T>>& state);

}  // namespace maeloc::ag
