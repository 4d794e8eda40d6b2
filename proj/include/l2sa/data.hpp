#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "l2sa/tensor.hpp"

namespace l2sa::data {

inline constexpr std::size_t kInputSize = 256;

// Decoded raster, row-major interleaved, values on the 0..255 scale.
struct Image {
  std::size_t height = 0, width = 0, channels = 1;  // channels: 1 (gray) or 3 (RGB)
  std::vector<Real> values;
};

// A preprocessed sample: three identical channels with values in [0,1].
struct ImageRecord {
  Tensor pixels;  // (3, H, W)
  int label = -1;
  std::string source_id;
};

enum class Split : std::uint8_t { Unassigned, Train, Val, Test };
const char* to_string(Split s);
Split parse_split(const std::string& s);

struct Sample {
  std::string path;          // relative to the dataset root; unique id
  int label = 0;
  std::vector<float> gray;   // preprocessed single channel, [0,1], height x width
  Split split = Split::Unassigned;
};

struct SplitFractions {
  double train = 0.70, val = 0.10, test = 0.20;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> samples;
  std::size_t height = kInputSize, width = kInputSize;
  std::uint64_t seed = 0;
  SplitFractions fractions;

  std::vector<std::size_t> indices(Split s) const;
  std::vector<std::size_t> class_counts(std::optional<Split> s = std::nullopt) const;
};

// Rec. 601 luminance; gray images pass through.
Image to_grayscale(const Image& image);
// Bilinear resampling with half-pixel centers and edge clamping (single channel).
Image resize_bilinear(const Image& gray, std::size_t height, std::size_t width);
ImageRecord preprocess(const Image& image, std::size_t size = kInputSize);
// Re-applies preprocessing to an existing record; a fixed point up to rounding.
ImageRecord preprocess(const ImageRecord& record, std::size_t size = kInputSize);

// Decodes PNG/BMP/JPEG via OpenCV. 8-bit only.
Image read_image(const std::filesystem::path& path);
void write_image(const Image& image, const std::filesystem::path& path);

// root/<class>/*.{png,bmp,jpg,jpeg}. Labels follow the alphabetical order of
// the class directory names. When `expected_classes` is non-empty every
// listed directory must exist.
Dataset load_directory(const std::filesystem::path& root, std::span<const std::string> expected_classes = {},
                       std::size_t size = kInputSize);

// Seeded shuffle, then contiguous assignment: train = round(n*f_train),
// val = round(n*f_val), test = remainder.
void split(Dataset& dataset, SplitFractions fractions, std::uint64_t seed);

void write_manifest(const Dataset& dataset, const std::filesystem::path& path);
std::string manifest_text(const Dataset& dataset);
// Applies split assignments recorded in a manifest to a dataset with the same sample paths.
void apply_manifest(Dataset& dataset, const std::filesystem::path& path);

// Gray blobs at a class-specific location plus seeded noise.
Dataset synth_dataset(std::size_t classes, std::size_t per_class, std::uint64_t seed, std::size_t size = 64);
void write_dataset_images(const Dataset& dataset, const std::filesystem::path& root);

// (B, 3, H, W) pseudo-RGB batch and its labels.
Tensor make_batch(const Dataset& dataset, std::span<const std::size_t> indices);
std::vector<int> batch_labels(const Dataset& dataset, std::span<const std::size_t> indices);

}  // namespace l2sa::data
