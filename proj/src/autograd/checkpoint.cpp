#include "maeloc/autograd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "maeloc/error.hpp"

namespace maeloc::ag {
namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_u32(out, static_cast<std::uint32_t>(t.tensor.shape.size()));
    for (int e : t.tensor.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : t.tensor.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::uint32_t version = get_u32(in);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t count = get_u32(in);
  std::vector<NamedTensor> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    NamedTensor t;
    const std::uint32_t len = get_u32(in);
    if (len > (1u << 16)) throw FormatError("checkpoint: implausible name length");
    t.name.resize(len);
    if (!in.read(t.name.data(), len)) throw FormatError("checkpoint: truncated name");
    const std::uint32_t rank = get_u32(in);
    if (rank > 8) throw FormatError("checkpoint: implausible rank");
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      t.tensor.shape.push_back(static_cast<int>(get_u32(in)));
      n *= static_cast<std::size_t>(t.tensor.shape.back());
    }
    t.tensor.data.resize(n);
    for (float& v : t.tensor.data) v = std::bit_cast<float>(get_u32(in));
    out.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError("checkpoint: trailing bytes");
  return out;
}

template <typename T>
std::vector<NamedTensor> export_state(const std::vector<StateRef<T>>& state) {
  std::vector<NamedTensor> out;
  out.reserve(state.size());
  for (const auto& s : state) out.push_back({s.name, tensor_cast<float>(*s.tensor)});
  return out;
}

template <typename T>
void import_state(const std::vector<NamedTensor>& tensors, const std::vector<StateRef<T>>& state) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.tensor;
  for (const auto& s : state) {
    auto it = by_name.find(s.name);
    if (it == by_name.end()) throw FormatError("checkpoint: missing tensor " + s.name);
    if (it->second->shape != s.tensor->shape)
      throw FormatError("checkpoint: shape mismatch for " + s.name + ": " +
                        shape_string(it->second->shape) + " vs " + shape_string(s.tensor->shape));
    *s.tensor = tensor_cast<T>(*it->second);
  }
}

template std::vector<NamedTensor> export_state<float>(const std::vector<StateRef<float>>&);
template std::vector<NamedTensor> export_state<double>(const std::vector<StateRef<double>>&);
template void import_state<float>(const std::vector<NamedTensor>&, const std::vector<StateRef<float>>&);
template void import_state<double>(const std::vector<NamedTensor>&,
                                   const std::vector<StateRef<double>>&);

}  // namespace maeloc::ag
