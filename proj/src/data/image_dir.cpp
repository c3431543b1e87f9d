#include "clb/data/image_dir.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace clb {

namespace fs = std::filesystem;

std::vector<float> resize_bilinear(std::span<const float> image, const InputShape& from,
                                   std::size_t height, std::size_t width) {
  if (from.height == height && from.width == width) return {image.begin(), image.end()};
  std::vector<float> out(from.channels * height * width);
  const double sy = static_cast<double>(from.height) / static_cast<double>(height);
  const double sx = static_cast<double>(from.width) / static_cast<double>(width);
  for (std::size_t c = 0; c < from.channels; ++c) {
    const float* in = image.data() + c * from.height * from.width;
    for (std::size_t y = 0; y < height; ++y) {
      const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                   static_cast<double>(from.height - 1));
      const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, from.height - 1);
      const double ay = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < width; ++x) {
        const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                     static_cast<double>(from.width - 1));
        const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, from.width - 1);
        const double ax = fx - static_cast<double>(x0);
        const double v = (1 - ay) * ((1 - ax) * in[y0 * from.width + x0] + ax * in[y0 * from.width + x1]) +
                         ay * ((1 - ax) * in[y1 * from.width + x0] + ax * in[y1 * from.width + x1]);
        out[c * height * width + y * width + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

std::vector<float> read_png(const fs::path& path, InputShape& shape) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw DataError("cannot read image '" + path.string() + "': " + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const std::size_t channels = color ? 3 : 1;
  std::vector<png_byte> raw(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, raw.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode image '" + path.string() + "': " + msg);
  }
  shape = InputShape{channels, img.height, img.width};
  const std::size_t plane = static_cast<std::size_t>(img.height) * img.width;
  std::vector<float> out(channels * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < channels; ++c) out[c * plane + p] = raw[p * channels + c] / 255.0f;
  }
  return out;
}

void write_png(const fs::path& path, std::span<const float> image, const InputShape& shape) {
  if (shape.channels != 1 && shape.channels != 3) {
    throw DataError("write_png: only 1 or 3 channels are supported");
  }
  const std::size_t plane = shape.height * shape.width;
  std::vector<png_byte> raw(plane * shape.channels);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < shape.channels; ++c) {
      const float v = std::clamp(image[c * plane + p], 0.0f, 1.0f);
      raw[p * shape.channels + c] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(shape.width);
  img.height = static_cast<png_uint_32>(shape.height);
  img.format = shape.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.c_str(), 0, raw.data(), 0, nullptr)) {
    throw DataError("cannot write image '" + path.string() + "': " + img.message);
  }
}

namespace {

std::vector<float> convert_channels(const std::vector<float>& img, const InputShape& shape, std::size_t to) {
  if (shape.channels == to) return img;
  const std::size_t plane = shape.height * shape.width;
  std::vector<float> out(to * plane);
  for (std::size_t p = 0; p < plane; ++p) {
    if (to == 1) {
      double lum = 0;
      for (std::size_t c = 0; c < shape.channels; ++c) lum += img[c * plane + p];
      out[p] = static_cast<float>(lum / static_cast<double>(shape.channels));
    } else {
      for (std::size_t c = 0; c < to; ++c) out[c * plane + p] = img[p];
    }
  }
  return out;
}

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

LabeledDataset load_partition(const fs::path& dir, const std::vector<std::string>& classes,
                              const InputShape& target, Partition part) {
  LabeledDataset ds;
  ds.shape = target;
  ds.class_names = classes;
  ds.partition = part;
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const fs::path class_dir = dir / classes[k];
    if (!fs::is_directory(class_dir)) throw DataError("missing class directory '" + class_dir.string() + "'");
    const auto files = sorted_entries(class_dir, false);
    if (files.empty()) throw DataError("empty class directory '" + class_dir.string() + "'");
    for (const auto& f : files) {
      InputShape s;
      auto img = read_png(f, s);
      img = convert_channels(img, s, target.channels);
      s.channels = target.channels;
      ds.push_back(resize_bilinear(img, s, target.height, target.width), k);
    }
  }
  return ds;
}

}  // namespace

DatasetPair load_image_dir(const fs::path& root, const InputShape& target) {
  if (target.channels != 1 && target.channels != 3) {
    throw DataError("load_image_dir: target must have 1 or 3 channels");
  }
  const fs::path train = root / "train", test = root / "test";
  if (!fs::is_directory(train) || !fs::is_directory(test)) {
    throw DataError("'" + root.string() + "' must contain train/ and test/ directories");
  }
  std::vector<std::string> classes;
  for (const auto& p : sorted_entries(train, true)) classes.push_back(p.filename().string());
  if (classes.empty()) throw DataError("no class directories under '" + train.string() + "'");
  std::vector<std::string> test_classes;
  for (const auto& p : sorted_entries(test, true)) test_classes.push_back(p.filename().string());
  if (test_classes != classes) {
    throw DataError("class directories under '" + test.string() + "' differ from train/");
  }
  DatasetPair out;
  out.train = load_partition(train, classes, target, Partition::Train);
  out.test = load_partition(test, classes, target, Partition::Test);
  return out;
}

void write_image_dir(const fs::path& root, const DatasetPair& data) {
  for (const auto* ds : {&data.train, &data.test}) {
    const fs::path dir = root / (ds->partition == Partition::Train ? "train" : "test");
    std::vector<std::size_t> seen(ds->num_classes(), 0);
    for (const auto& name : ds->class_names) {
      std::error_code ec;
      fs::create_directories(dir / name, ec);
      if (ec) throw DataError("cannot create '" + (dir / name).string() + "': " + ec.message());
    }
    for (std::size_t i = 0; i < ds->size(); ++i) {
      const std::size_t k = ds->labels[i];
      char file[32];
      std::snprintf(file, sizeof file, "%05zu.png", seen[k]++);
      write_png(dir / ds->class_names[k] / file, ds->image(i), ds->shape);
    }
  }
}

}  // namespace clb
