#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "clb/models/named_buffer.hpp"

namespace clb {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout (little-endian): magic "CLBCKPT\0", u32 version, u32 precision
/// bits, u64 architecture hash, u32 block count, then per block: u32 name
/// length, name bytes, u32 rank, u64 dims[rank], raw values.
template <typename T>
void save_checkpoint(const std::filesystem::path& path, std::uint64_t architecture_hash,
                     const std::vector<NamedBuffer<T>>& blocks);

/// Reads into `blocks`, which must match the stored names and shapes.
template <typename T>
void load_checkpoint(const std::filesystem::path& path, std::uint64_t architecture_hash,
                     const std::vector<NamedBuffer<T>>& blocks);

template <typename Model>
void save_model(const std::filesystem::path& path, Model& model) {
  save_checkpoint(path, fnv1a64(model.architecture()), model.named_buffers());
}

template <typename Model>
void load_model(const std::filesystem::path& path, Model& model) {
  load_checkpoint(path, fnv1a64(model.architecture()), model.named_buffers());
}

}  // namespace clb
