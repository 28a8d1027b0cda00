#pragma once

// Datasets, class splits and (N-way, K-shot, Q-query) episode sampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "trident/ndarray.hpp"
#include "trident/random.hpp"

namespace trident {

struct EpisodeSpec {
  std::size_t n_ways = 5;
  std::size_t k_shots = 1;
  std::size_t q_queries = 10;
  std::size_t image_size = 32;
  std::size_t channels = 3;

  std::size_t support_size() const { return n_ways * k_shots; }
  std::size_t query_size() const { return n_ways * q_queries; }
  std::size_t episode_size() const { return n_ways * (k_shots + q_queries); }
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Global identity of one dataset image.
struct ImageRef {
  std::size_t class_id = 0;
  std::size_t index = 0;
  bool operator==(const ImageRef&) const = default;
};

/// Support rows are grouped by episode label (K rows each, labels 0..N-1 in
/// order); query rows likewise with Q rows each.
struct Task {
  NdArray support_x;  // [N*K, C, H, W]
  std::vector<std::size_t> support_y;
  NdArray query_x;    // [N*Q, C, H, W]
  std::vector<std::size_t> query_y;
  std::vector<std::size_t> classes;  // episode label -> global class id
  std::vector<ImageRef> support_refs;
  std::vector<ImageRef> query_refs;
};

/// Read-only image collection indexed by (class, index).
class Dataset {
 public:
  virtual ~Dataset() = default;
  virtual std::size_t num_classes() const = 0;
  virtual std::size_t class_size(std::size_t class_id) const = 0;
  virtual std::string class_name(std::size_t class_id) const = 0;
  virtual std::size_t channels() const = 0;
  virtual std::size_t image_size() const = 0;
  /// [C, S, S] with values in [0, 1].
  virtual NdArray image(std::size_t class_id, std::size_t index) const = 0;
};

struct ClassSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Shuffle 0..n-1 with the seed and cut by counts rounded from the fractions
/// (the test split takes the remainder).
ClassSplit split_classes(std::size_t n_classes, double train_fraction, double val_fraction, std::uint64_t seed);
/// Explicit lists; overlap is rejected.
ClassSplit split_classes(std::vector<std::size_t> train, std::vector<std::size_t> val, std::vector<std::size_t> test);

/// N classes without replacement from `pool`, then K+Q images per class
/// without replacement; labels are remapped to 0..N-1.
Task sample_task(const Dataset& dataset, const std::vector<std::size_t>& pool, const EpisodeSpec& spec, Rng& rng);

// ---------------------------------------------------------------------------
// Synthetic shapes

struct SyntheticSpec {
  std::size_t num_classes = 30;
  std::size_t images_per_class = 600;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  std::uint64_t seed = 1;
  double position_jitter = 0.12;  // fraction of the half-width
  double scale_jitter = 0.08;
  double texture_amplitude = 0.12;
};

struct SyntheticSample {
  NdArray image;  // [C, S, S]
  NdArray mask;   // [S, S], 1 inside the shape
};

/// Number of distinct shapes the renderer knows.
std::size_t synthetic_shape_count();
std::string synthetic_shape_name(std::size_t class_id);

/// Render `class_id` with freshly drawn colors, texture, position and scale.
SyntheticSample synth_generate(const SyntheticSpec& spec, std::size_t class_id, Rng& rng);

/// Image i of class c is rendered on demand from a stream seeded by (seed, c, i).
class SyntheticDataset final : public Dataset {
 public:
  explicit SyntheticDataset(SyntheticSpec spec);
  std::size_t num_classes() const override { return spec_.num_classes; }
  std::size_t class_size(std::size_t) const override { return spec_.images_per_class; }
  std::string class_name(std::size_t class_id) const override;
  std::size_t channels() const override { return spec_.channels; }
  std::size_t image_size() const override { return spec_.image_size; }
  NdArray image(std::size_t class_id, std::size_t index) const override;
  SyntheticSample sample(std::size_t class_id, std::size_t index) const;
  const SyntheticSpec& spec() const { return spec_; }

 private:
  SyntheticSpec spec_;
};

// ---------------------------------------------------------------------------
// Image folders: root/<class_name>/<image files>

class ImageFolderDataset final : public Dataset {
 public:
  /// Lists files eagerly (class names sorted), decodes lazily on access.
  ImageFolderDataset(const std::filesystem::path& root, std::size_t image_size, std::size_t channels = 3);
  std::size_t num_classes() const override { return classes_.size(); }
  std::size_t class_size(std::size_t class_id) const override { return classes_.at(class_id).files.size(); }
  std::string class_name(std::size_t class_id) const override { return classes_.at(class_id).name; }
  std::size_t channels() const override { return channels_; }
  std::size_t image_size() const override { return image_size_; }
  NdArray image(std::size_t class_id, std::size_t index) const override;
  /// Files skipped at listing time because no decoder accepts them.
  std::size_t skipped() const { return skipped_; }

 private:
  struct ClassEntry {
    std::string name;
    std::vector<std::filesystem::path> files;
  };
  std::vector<ClassEntry> classes_;
  std::size_t image_size_;
  std::size_t channels_;
  std::size_t skipped_ = 0;
};

/// Write a [C, S, S] array in [0, 1] as an 8-bit image file.
void write_image(const std::filesystem::path& path, const NdArray& image);

}  // namespace trident
