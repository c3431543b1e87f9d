#include "clb/models/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "clb/core/tensor.hpp"

namespace clb {

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'C', 'L', 'B', 'C', 'K', 'P', 'T', '\0'};

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V get(std::istream& is, const std::filesystem::path& path) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) {
    throw CheckpointError("checkpoint " + path.string() + ": truncated");
  }
  return v;
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, std::uint64_t architecture_hash,
                     const std::vector<NamedBuffer<T>>& blocks) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint " + path.string() + ": cannot open for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(sizeof(T) * 8));
  put<std::uint64_t>(os, architecture_hash);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(b.name.size()));
    os.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(b.shape.size()));
    for (std::size_t d : b.shape) put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(b.values->data()),
             static_cast<std::streamsize>(b.values->size() * sizeof(T)));
  }
  if (!os) throw CheckpointError("checkpoint " + path.string() + ": write failed");
}

template <typename T>
void load_checkpoint(const std::filesystem::path& path, std::uint64_t architecture_hash,
                     const std::vector<NamedBuffer<T>>& blocks) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint " + path.string() + ": cannot open");
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("checkpoint " + path.string() + ": bad magic");
  }
  const auto version = get<std::uint32_t>(is, path);
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint " + path.string() + ": unsupported version " + std::to_string(version));
  }
  const auto bits = get<std::uint32_t>(is, path);
  if (bits != sizeof(T) * 8) {
    throw CheckpointError("checkpoint " + path.string() + ": stored precision " + std::to_string(bits) +
                          "-bit, expected " + std::to_string(sizeof(T) * 8) + "-bit");
  }
  if (get<std::uint64_t>(is, path) != architecture_hash) {
    throw CheckpointError("checkpoint " + path.string() + ": architecture hash mismatch");
  }
  const auto count = get<std::uint32_t>(is, path);
  if (count != blocks.size()) {
    throw CheckpointError("checkpoint " + path.string() + ": " + std::to_string(count) + " blocks, expected " +
                          std::to_string(blocks.size()));
  }
  for (const auto& b : blocks) {
    const auto len = get<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw CheckpointError("checkpoint " + path.string() + ": truncated");
    if (name != b.name) throw CheckpointError("checkpoint " + path.string() + ": block '" + name + "', expected '" + b.name + "'");
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, path));
    if (shape != b.shape) {
      throw CheckpointError("checkpoint " + path.string() + ": block '" + name + "' has shape " +
                            shape_to_string(shape) + ", expected " + shape_to_string(b.shape));
    }
    if (!is.read(reinterpret_cast<char*>(b.values->data()), static_cast<std::streamsize>(b.values->size() * sizeof(T)))) {
      throw CheckpointError("checkpoint " + path.string() + ": truncated");
    }
  }
}

template void save_checkpoint(const std::filesystem::path&, std::uint64_t, const std::vector<NamedBuffer<float>>&);
template void save_checkpoint(const std::filesystem::path&, std::uint64_t, const std::vector<NamedBuffer<double>>&);
template void load_checkpoint(const std::filesystem::path&, std::uint64_t, const std::vector<NamedBuffer<float>>&);
template void load_checkpoint(const std::filesystem::path&, std::uint64_t, const std::vector<NamedBuffer<double>>&);

}  // namespace clb
