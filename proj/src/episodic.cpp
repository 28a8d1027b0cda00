#include "trident/episodic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <set>
#include <stdexcept>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace trident {

void EpisodeSpec::validate() const {
  if (n_ways < 2) throw std::invalid_argument("episode: n_ways must be >= 2, got " + std::to_string(n_ways));
  if (k_shots < 1) throw std::invalid_argument("episode: k_shots must be >= 1");
  if (q_queries < 1) throw std::invalid_argument("episode: q_queries must be >= 1");
  if (image_size < 16) throw std::invalid_argument("episode: image_size must be >= 16, got " + std::to_string(image_size));
  if (channels != 1 && channels != 3) throw std::invalid_argument("episode: channels must be 1 or 3");
}

// ---------------------------------------------------------------------------
// Splits

ClassSplit split_classes(std::size_t n_classes, double train_fraction, double val_fraction, std::uint64_t seed) {
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0 + 1e-12) {
    throw std::invalid_argument("split_classes: fractions must be non-negative and sum to at most 1");
  }
  std::vector<std::size_t> ids(n_classes);
  for (std::size_t i = 0; i < n_classes; ++i) ids[i] = i;
  Rng rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * double(n_classes)));
  const auto n_val = std::min(n_classes - n_train, static_cast<std::size_t>(std::llround(val_fraction * double(n_classes))));
  ClassSplit s;
  s.train.assign(ids.begin(), ids.begin() + n_train);
  s.val.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  s.test.assign(ids.begin() + n_train + n_val, ids.end());
  for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
  return s;
}

ClassSplit split_classes(std::vector<std::size_t> train, std::vector<std::size_t> val, std::vector<std::size_t> test) {
  std::set<std::size_t> seen;
  for (const auto* list : {&train, &val, &test}) {
    for (std::size_t c : *list) {
      if (!seen.insert(c).second) throw std::invalid_argument("split_classes: class " + std::to_string(c) + " appears in more than one split");
    }
  }
  return {std::move(train), std::move(val), std::move(test)};
}

// ---------------------------------------------------------------------------
// Sampling

Task sample_task(const Dataset& dataset, const std::vector<std::size_t>& pool, const EpisodeSpec& spec, Rng& rng) {
  spec.validate();
  if (pool.size() < spec.n_ways) {
    throw std::invalid_argument("sample_task: split has " + std::to_string(pool.size()) + " classes, need " +
                                std::to_string(spec.n_ways));
  }
  if (dataset.channels() != spec.channels || dataset.image_size() != spec.image_size) {
    throw std::invalid_argument("sample_task: dataset images are " + std::to_string(dataset.channels()) + "x" +
                                std::to_string(dataset.image_size()) + " but the episode expects " +
                                std::to_string(spec.channels) + "x" + std::to_string(spec.image_size));
  }
  const std::size_t per_class = spec.k_shots + spec.q_queries;
  for (std::size_t c : pool) {
    if (dataset.class_size(c) < per_class) {
      throw std::invalid_argument("sample_task: class '" + dataset.class_name(c) + "' has " +
                                  std::to_string(dataset.class_size(c)) + " images, need " + std::to_string(per_class));
    }
  }

  std::vector<std::size_t> classes = pool;
  std::shuffle(classes.begin(), classes.end(), rng);
  classes.resize(spec.n_ways);

  const std::size_t c = spec.channels, s = spec.image_size, img = c * s * s;
  Task task;
  task.classes = classes;
  task.support_x = NdArray({spec.support_size(), c, s, s});
  task.query_x = NdArray({spec.query_size(), c, s, s});

  for (std::size_t label = 0; label < spec.n_ways; ++label) {
    const std::size_t cls = classes[label];
    // partial Fisher-Yates: first K+Q entries form a uniform sample without replacement
    std::vector<std::size_t> idx(dataset.class_size(cls));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t i = 0; i < per_class; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
    }
    for (std::size_t j = 0; j < per_class; ++j) {
      const NdArray im = dataset.image(cls, idx[j]);
      if (im.size() != img) throw ShapeError("sample_task: image of class '" + dataset.class_name(cls) + "' has the wrong size");
      const bool support = j < spec.k_shots;
      const std::size_t row = support ? label * spec.k_shots + j : label * spec.q_queries + (j - spec.k_shots);
      double* dst = (support ? task.support_x : task.query_x).raw() + row * img;
      std::copy(im.data().begin(), im.data().end(), dst);
      (support ? task.support_refs : task.query_refs).push_back({cls, idx[j]});
      (support ? task.support_y : task.query_y).push_back(label);
    }
  }
  // refs were pushed class by class, which matches the row layout
  return task;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

namespace {

using ShapeFn = bool (*)(double u, double v);

constexpr double kSqrt3 = 1.7320508075688772;

bool plus_shape(double u, double v, double w, double len) {
  return (std::abs(u) < w && std::abs(v) < len) || (std::abs(v) < w && std::abs(u) < len);
}

struct ShapeDef {
  const char* name;
  ShapeFn inside;
};

const std::array<ShapeDef, 30> kShapes{{
    {"disk", [](double u, double v) { return std::hypot(u, v) < 0.9; }},
    {"square", [](double u, double v) { return std::max(std::abs(u), std::abs(v)) < 0.75; }},
    {"triangle", [](double u, double v) { return v > -0.7 && v < 0.8 && std::abs(u) < 0.85 * (0.8 - v) / 1.5; }},
    {"inverted_triangle", [](double u, double v) { return -v > -0.7 && -v < 0.8 && std::abs(u) < 0.85 * (0.8 + v) / 1.5; }},
    {"ring", [](double u, double v) { const double r = std::hypot(u, v); return r > 0.5 && r < 0.9; }},
    {"plus", [](double u, double v) { return plus_shape(u, v, 0.25, 0.85); }},
    {"x_cross", [](double u, double v) {
       return plus_shape((u + v) / std::numbers::sqrt2, (u - v) / std::numbers::sqrt2, 0.24, 0.95); }},
    {"horizontal_bar", [](double u, double v) { return std::abs(u) < 0.9 && std::abs(v) < 0.3; }},
    {"vertical_bar", [](double u, double v) { return std::abs(v) < 0.9 && std::abs(u) < 0.3; }},
    {"diamond", [](double u, double v) { return std::abs(u) + std::abs(v) < 0.95; }},
    {"frame", [](double u, double v) { const double m = std::max(std::abs(u), std::abs(v)); return m < 0.85 && m > 0.5; }},
    {"hollow_diamond", [](double u, double v) { const double m = std::abs(u) + std::abs(v); return m > 0.6 && m < 1.05; }},
    {"wide_ellipse", [](double u, double v) { return (u / 0.95) * (u / 0.95) + (v / 0.5) * (v / 0.5) < 1.0; }},
    {"tall_ellipse", [](double u, double v) { return (u / 0.5) * (u / 0.5) + (v / 0.95) * (v / 0.95) < 1.0; }},
    {"half_disk", [](double u, double v) { return std::hypot(u, v + 0.35) < 0.95 && v > -0.35; }},
    {"crescent", [](double u, double v) { return std::hypot(u, v) < 0.9 && std::hypot(u - 0.45, v) > 0.65; }},
    {"l_shape", [](double u, double v) {
       return (u > -0.75 && u < -0.25 && std::abs(v) < 0.8) || (v > -0.8 && v < -0.3 && std::abs(u) < 0.75); }},
    {"t_shape", [](double u, double v) {
       return (v > 0.35 && v < 0.8 && std::abs(u) < 0.8) || (std::abs(u) < 0.25 && std::abs(v) < 0.8); }},
    {"hexagon", [](double u, double v) {
       return std::abs(v) < 0.9 * kSqrt3 / 2 && kSqrt3 * std::abs(u) + std::abs(v) < kSqrt3 * 0.9; }},
    {"flower5", [](double u, double v) {
       const double t = std::atan2(v, u);
       return std::hypot(u, v) < 0.55 + 0.38 * std::cos(5.0 * (t - std::numbers::pi / 2)); }},
    {"clover4", [](double u, double v) {
       const double t = std::atan2(v, u);
       return std::hypot(u, v) < 0.55 + 0.38 * std::cos(4.0 * t); }},
    {"twin_disks_h", [](double u, double v) { return std::hypot(u - 0.47, v) < 0.42 || std::hypot(u + 0.47, v) < 0.42; }},
    {"twin_disks_v", [](double u, double v) { return std::hypot(u, v - 0.47) < 0.42 || std::hypot(u, v + 0.47) < 0.42; }},
    {"hourglass", [](double u, double v) { return std::abs(v) < 0.85 && std::abs(u) < 0.9 * std::abs(v) + 0.12; }},
    {"bowtie", [](double u, double v) { return std::abs(u) < 0.85 && std::abs(v) < 0.9 * std::abs(u) + 0.12; }},
    {"u_shape", [](double u, double v) {
       return std::abs(u) < 0.8 && std::abs(v) < 0.8 && !(std::abs(u) < 0.35 && v > -0.35); }},
    {"arrow", [](double u, double v) {
       return (std::abs(v) < 0.22 && u > -0.85 && u < 0.1) || (u >= 0.1 && u < 0.85 && std::abs(v) < 0.75 * (0.85 - u) / 0.75); }},
    {"slash", [](double u, double v) {
       return std::abs(u - v) / std::numbers::sqrt2 < 0.27 && std::abs(u + v) / std::numbers::sqrt2 < 1.0; }},
    {"backslash", [](double u, double v) {
       return std::abs(u + v) / std::numbers::sqrt2 < 0.27 && std::abs(u - v) / std::numbers::sqrt2 < 1.0; }},
    {"checker", [](double u, double v) { return std::max(std::abs(u), std::abs(v)) < 0.8 && u * v > 0; }},
}};

double luminance(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

}  // namespace

std::size_t synthetic_shape_count() { return kShapes.size(); }

std::string synthetic_shape_name(std::size_t class_id) {
  if (class_id >= kShapes.size()) throw std::out_of_range("synthetic: unknown class " + std::to_string(class_id));
  return kShapes[class_id].name;
}

SyntheticSample synth_generate(const SyntheticSpec& spec, std::size_t class_id, Rng& rng) {
  if (class_id >= kShapes.size() || class_id >= spec.num_classes) {
    throw std::out_of_range("synth_generate: unknown class " + std::to_string(class_id));
  }
  if (spec.channels != 1 && spec.channels != 3) throw std::invalid_argument("synth_generate: channels must be 1 or 3");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::array<double, 3> fg{}, bg{};
  do {
    for (auto& v : fg) v = unit(rng);
    for (auto& v : bg) v = unit(rng);
  } while (std::abs(luminance(fg) - luminance(bg)) < 0.25);

  const double cx = between(-spec.position_jitter, spec.position_jitter);
  const double cy = between(-spec.position_jitter, spec.position_jitter);
  const double radius = 0.62 * between(1.0 - spec.scale_jitter, 1.0 + spec.scale_jitter);
  const double tex_angle = between(0.0, std::numbers::pi);
  const double tex_freq = between(2.0, 7.0);
  const double tex_phase = between(0.0, 2.0 * std::numbers::pi);
  const double tex_amp = spec.texture_amplitude * unit(rng);
  std::normal_distribution<double> grain(0.0, 0.02);

  const std::size_t s = spec.image_size;
  SyntheticSample out{NdArray({spec.channels, s, s}), NdArray({s, s})};
  const ShapeFn inside = kShapes[class_id].inside;
  for (std::size_t row = 0; row < s; ++row) {
    for (std::size_t col = 0; col < s; ++col) {
      const double x = (double(col) + 0.5) / double(s) * 2.0 - 1.0;
      const double y = (double(row) + 0.5) / double(s) * 2.0 - 1.0;
      const bool in = inside((x - cx) / radius, -(y - cy) / radius);
      out.mask[row * s + col] = in ? 1.0 : 0.0;
      const double stripe = tex_amp * std::sin(std::numbers::pi * tex_freq * (x * std::cos(tex_angle) + y * std::sin(tex_angle)) + tex_phase);
      std::array<double, 3> px = in ? fg : bg;
      const double n = grain(rng);
      for (auto& v : px) v = std::clamp(v + (in ? 0.0 : stripe) + n, 0.0, 1.0);
      if (spec.channels == 1) {
        out.image[row * s + col] = luminance(px);
      } else {
        for (std::size_t ch = 0; ch < 3; ++ch) out.image[(ch * s + row) * s + col] = px[ch];
      }
    }
  }
  return out;
}

SyntheticDataset::SyntheticDataset(SyntheticSpec spec) : spec_(spec) {
  if (spec_.num_classes == 0 || spec_.num_classes > kShapes.size()) {
    throw std::invalid_argument("synthetic: num_classes must be in [1, " + std::to_string(kShapes.size()) + "]");
  }
  if (spec_.image_size < 16) throw std::invalid_argument("synthetic: image_size must be >= 16");
}

std::string SyntheticDataset::class_name(std::size_t class_id) const { return synthetic_shape_name(class_id); }

SyntheticSample SyntheticDataset::sample(std::size_t class_id, std::size_t index) const {
  if (index >= spec_.images_per_class) throw std::out_of_range("synthetic: image index out of range");
  Rng rng(derive_seed(derive_seed(spec_.seed, class_id), index));
  return synth_generate(spec_, class_id, rng);
}

NdArray SyntheticDataset::image(std::size_t class_id, std::size_t index) const { return sample(class_id, index).image; }

// ---------------------------------------------------------------------------
// Image folders

ImageFolderDataset::ImageFolderDataset(const std::filesystem::path& root, std::size_t image_size, std::size_t channels)
    : image_size_(image_size), channels_(channels) {
  namespace fs = std::filesystem;
  if (channels != 1 && channels != 3) throw std::invalid_argument("image folder: channels must be 1 or 3");
  if (!fs::is_directory(root)) throw std::invalid_argument("image folder: '" + root.string() + "' is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  for (const auto& dir : dirs) {
    ClassEntry entry{dir.filename().string(), {}};
    for (const auto& e : fs::directory_iterator(dir)) {
      if (!e.is_regular_file()) continue;
      if (cv::haveImageReader(e.path().string())) {
        entry.files.push_back(e.path());
      } else {
        ++skipped_;
      }
    }
    if (entry.files.empty()) throw std::invalid_argument("image folder: class directory '" + dir.string() + "' has no decodable images");
    std::sort(entry.files.begin(), entry.files.end());
    classes_.push_back(std::move(entry));
  }
  if (classes_.empty()) throw std::invalid_argument("image folder: no class directories under '" + root.string() + "'");
}

NdArray ImageFolderDataset::image(std::size_t class_id, std::size_t index) const {
  const auto& path = classes_.at(class_id).files.at(index);
  cv::Mat raw = cv::imread(path.string(), channels_ == 1 ? cv::IMREAD_GRAYSCALE : cv::IMREAD_COLOR);
  if (raw.empty()) throw std::runtime_error("image folder: failed to decode '" + path.string() + "'");
  cv::Mat resized;
  cv::resize(raw, resized, cv::Size(int(image_size_), int(image_size_)), 0, 0, cv::INTER_LINEAR);
  const std::size_t s = image_size_;
  NdArray out({channels_, s, s});
  for (std::size_t r = 0; r < s; ++r) {
    const auto* p = resized.ptr<unsigned char>(int(r));
    for (std::size_t c = 0; c < s; ++c) {
      if (channels_ == 1) {
        out[r * s + c] = p[c] / 255.0;
      } else {
        // OpenCV stores BGR
        for (std::size_t ch = 0; ch < 3; ++ch) out[(ch * s + r) * s + c] = p[c * 3 + (2 - ch)] / 255.0;
      }
    }
  }
  return out;
}

void write_image(const std::filesystem::path& path, const NdArray& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("write_image: expected [C, H, W] with C in {1, 3}, got " + shape_to_string(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  cv::Mat mat(int(h), int(w), c == 1 ? CV_8UC1 : CV_8UC3);
  for (std::size_t r = 0; r < h; ++r) {
    auto* p = mat.ptr<unsigned char>(int(r));
    for (std::size_t col = 0; col < w; ++col) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double v = std::clamp(image[(ch * h + r) * w + col], 0.0, 1.0);
        const std::size_t slot = c == 1 ? col : col * 3 + (2 - ch);
        p[slot] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  if (!cv::imwrite(path.string(), mat)) throw std::runtime_error("write_image: cannot write '" + path.string() + "'");
}

}  // namespace trident
