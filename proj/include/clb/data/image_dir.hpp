#pragma once

#include <filesystem>
#include <stdexcept>
#include <vector>

#include "clb/data/dataset.hpp"

namespace clb {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bilinear resize of one [C,H,W] image (align-corners off, edge clamped).
std::vector<float> resize_bilinear(std::span<const float> image, const InputShape& from,
                                   std::size_t height, std::size_t width);

/// Decodes an 8-bit gray/gray+alpha/RGB/RGBA PNG into [C,H,W] floats in
/// [0,1] with C = 1 or 3 (alpha dropped). Throws DataError naming the path.
std::vector<float> read_png(const std::filesystem::path& path, InputShape& shape);

/// Writes a [C,H,W] image with C = 1 or 3 as an 8-bit PNG.
void write_png(const std::filesystem::path& path, std::span<const float> image,
               const InputShape& shape);

/// Reads root/{train,test}/<class>/*.png. Class names are the sorted
/// subdirectory names of train/ and must match test/. Images are converted
/// to `target.channels` (gray <-> RGB) and resized to target height/width.
/// Files are read in sorted path order. Throws DataError on a non-PNG or
/// unreadable file (naming it) or an empty class directory.
DatasetPair load_image_dir(const std::filesystem::path& root, const InputShape& target);

/// Writes a dataset pair to the layout load_image_dir reads, one
/// zero-padded file per sample.
void write_image_dir(const std::filesystem::path& root, const DatasetPair& data);

}  // namespace clb
