#pragma once

// Accuracy with confidence interval, calibration errors, Brier score,
// Davies-Bouldin index and a PCA projection for plotting.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "trident/ndarray.hpp"

namespace trident {

inline constexpr std::size_t kCalibrationBins = 15;

struct AccuracyCI {
  double mean = 0.0;  // percent
  double ci95 = 0.0;  // percent
};

/// Per-task accuracies in [0, 1]; ci95 = 1.96 * sample std / sqrt(n), in percent.
AccuracyCI accuracy_ci(std::span<const double> per_task);

/// Equal-width confidence bins; empty bins contribute nothing.
double ece(std::span<const double> confidence, std::span<const std::uint8_t> correct, std::size_t n_bins = kCalibrationBins);
double mce(std::span<const double> confidence, std::span<const std::uint8_t> correct, std::size_t n_bins = kCalibrationBins);

struct ReliabilityBin {
  double lower = 0.0, upper = 0.0;  // (lower, upper]
  std::size_t count = 0;
  double accuracy = 0.0;    // 0 for empty bins
  double confidence = 0.0;  // mean confidence, 0 for empty bins
};
/// Per-bin data of a reliability diagram, on the same bins as ece/mce.
std::vector<ReliabilityBin> reliability_bins(std::span<const double> confidence, std::span<const std::uint8_t> correct,
                                             std::size_t n_bins = kCalibrationBins);
void write_reliability_csv(const std::filesystem::path& path, std::span<const ReliabilityBin> bins);

/// Mean over rows of sum_n (p_n - onehot_n)^2.
double brier(const NdArray& probs, std::span<const std::size_t> labels);

/// Davies-Bouldin index of points [M, D] under the given cluster labels.
double dbi(const NdArray& points, std::span<const std::size_t> labels);

/// Centered points projected on the top two principal directions; each
/// direction's largest-magnitude component is made positive.
NdArray project2d(const NdArray& points);

/// Rows of (x, y, label) with a header line.
void write_projection_csv(const std::filesystem::path& path, const NdArray& projected, std::span<const std::size_t> labels);

/// Confidence and correctness of each row's arg-max prediction.
struct Predictions {
  std::vector<double> confidence;
  std::vector<std::uint8_t> correct;
  std::vector<std::size_t> predicted;
};
Predictions summarize_predictions(const NdArray& probs, std::span<const std::size_t> labels);

struct MetricsReport {
  double accuracy_mean = 0.0;  // percent
  double ci95 = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  double brier = 0.0;
  double dbi_label_pre = 0.0;
  double dbi_label_post = 0.0;
  double dbi_semantic_pre = 0.0;
  double dbi_semantic_post = 0.0;
  std::size_t n_tasks = 0;
};

}  // namespace trident
