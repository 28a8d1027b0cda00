#include "trident/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace trident {

namespace {

void check_stream(std::span<const double> confidence, std::span<const std::uint8_t> correct, std::size_t n_bins) {
  if (confidence.size() != correct.size()) throw std::invalid_argument("calibration: confidence/correctness length mismatch");
  if (confidence.empty()) throw std::invalid_argument("calibration: empty prediction stream");
  if (n_bins == 0) throw std::invalid_argument("calibration: need at least one bin");
  for (double c : confidence) {
    if (!(c >= 0.0 && c <= 1.0)) throw std::invalid_argument("calibration: confidence " + std::to_string(c) + " outside [0, 1]");
  }
}

struct Bin {
  double conf = 0.0;
  double hits = 0.0;
  std::size_t count = 0;
};

std::vector<Bin> bin_stream(std::span<const double> confidence, std::span<const std::uint8_t> correct, std::size_t n_bins) {
  std::vector<Bin> bins(n_bins);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    // bins are (k/n, (k+1)/n]; confidence 0 joins the first bin
    const double c = confidence[i], n = double(n_bins);
    auto k = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(c * n)), 1, n_bins);
    // settle rounding at the edges against the edge values themselves
    while (k > 1 && c <= double(k - 1) / n) --k;
    while (k < n_bins && c > double(k) / n) ++k;
    --k;
    bins[k].conf += confidence[i];
    bins[k].hits += correct[i] != 0 ? 1.0 : 0.0;
    ++bins[k].count;
  }
  return bins;
}

}  // namespace

AccuracyCI accuracy_ci(std::span<const double> per_task) {
  if (per_task.size() < 2) throw std::invalid_argument("accuracy_ci: need at least 2 tasks for a confidence interval");
  const double n = double(per_task.size());
  double mean = 0.0;
  for (double a : per_task) mean += a;
  mean /= n;
  double var = 0.0;
  for (double a : per_task) var += (a - mean) * (a - mean);
  var /= n - 1.0;
  return {100.0 * mean, 100.0 * 1.96 * std::sqrt(var) / std::sqrt(n)};
}

double ece(std::span<const double> confidence, std::span<const std::uint8_t> correct, std::size_t n_bins) {
  check_stream(confidence, correct, n_bins);
  double total = 0.0;
  for (const Bin& b : bin_stream(confidence, correct, n_bins)) {
    if (b.count == 0) continue;
    total += std::abs(b.hits - b.conf);  // = count * |acc - mean conf|
  }
  return total / double(confidence.size());
}

double mce(std::span<const double> confidence, std::span<const std::uint8_t> correct, std::size_t n_bins) {
  check_stream(confidence, correct, n_bins);
  double worst = 0.0;
  for (const Bin& b : bin_stream(confidence, correct, n_bins)) {
    if (b.count == 0) continue;
    worst = std::max(worst, std::abs(b.hits - b.conf) / double(b.count));
  }
  return worst;
}

std::vector<ReliabilityBin> reliability_bins(std::span<const double> confidence, std::span<const std::uint8_t> correct,
                                             std::size_t n_bins) {
  check_stream(confidence, correct, n_bins);
  std::vector<ReliabilityBin> out;
  const auto bins = bin_stream(confidence, correct, n_bins);
  for (std::size_t k = 0; k < n_bins; ++k) {
    ReliabilityBin r;
    r.lower = double(k) / double(n_bins);
    r.upper = double(k + 1) / double(n_bins);
    r.count = bins[k].count;
    if (r.count > 0) {
      r.accuracy = bins[k].hits / double(r.count);
      r.confidence = bins[k].conf / double(r.count);
    }
    out.push_back(r);
  }
  return out;
}

void write_reliability_csv(const std::filesystem::path& path, std::span<const ReliabilityBin> bins) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_reliability_csv: cannot open '" + path.string() + "'");
  out.precision(17);
  out << "lower,upper,count,accuracy,confidence\n";
  for (const auto& b : bins) out << b.lower << ',' << b.upper << ',' << b.count << ',' << b.accuracy << ',' << b.confidence << '\n';
}

double brier(const NdArray& probs, std::span<const std::size_t> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw ShapeError("brier: probabilities " + shape_to_string(probs.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t m = probs.dim(0), n = probs.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (labels[r] >= n) throw std::out_of_range("brier: label out of range");
    double row = 0.0, sq = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double p = probs[r * n + c];
      row += p;
      const double d = p - (c == labels[r] ? 1.0 : 0.0);
      sq += d * d;
    }
    if (std::abs(row - 1.0) > 1e-6) throw std::invalid_argument("brier: row " + std::to_string(r) + " sums to " + std::to_string(row));
    total += sq;
  }
  return total / double(m);
}

double dbi(const NdArray& points, std::span<const std::size_t> labels) {
  if (points.rank() != 2 || points.dim(0) != labels.size()) {
    throw ShapeError("dbi: points " + shape_to_string(points.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t m = points.dim(0), d = points.dim(1);
  std::vector<std::size_t> ids(labels.begin(), labels.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) throw std::invalid_argument("dbi: need at least two clusters");
  const std::size_t k = ids.size();
  auto slot = [&](std::size_t label) { return std::size_t(std::lower_bound(ids.begin(), ids.end(), label) - ids.begin()); };

  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(points.raw(), Eigen::Index(m), Eigen::Index(d));
  Eigen::MatrixXd centroid = Eigen::MatrixXd::Zero(Eigen::Index(k), Eigen::Index(d));
  Eigen::VectorXd count = Eigen::VectorXd::Zero(Eigen::Index(k));
  for (std::size_t i = 0; i < m; ++i) {
    const auto s = Eigen::Index(slot(labels[i]));
    centroid.row(s) += x.row(Eigen::Index(i));
    count(s) += 1.0;
  }
  for (Eigen::Index s = 0; s < Eigen::Index(k); ++s) centroid.row(s) /= count(s);
  Eigen::VectorXd spread = Eigen::VectorXd::Zero(Eigen::Index(k));
  for (std::size_t i = 0; i < m; ++i) {
    const auto s = Eigen::Index(slot(labels[i]));
    spread(s) += (x.row(Eigen::Index(i)) - centroid.row(s)).norm();
  }
  spread = spread.cwiseQuotient(count);

  double total = 0.0;
  for (Eigen::Index a = 0; a < Eigen::Index(k); ++a) {
    double worst = 0.0;
    for (Eigen::Index b = 0; b < Eigen::Index(k); ++b) {
      if (a == b) continue;
      const double sep = (centroid.row(a) - centroid.row(b)).norm();
      if (sep == 0.0) throw std::invalid_argument("dbi: clusters " + std::to_string(ids[a]) + " and " + std::to_string(ids[b]) + " share a centroid");
      worst = std::max(worst, (spread(a) + spread(b)) / sep);
    }
    total += worst;
  }
  return total / double(k);
}

NdArray project2d(const NdArray& points) {
  if (points.rank() != 2) throw ShapeError("project2d: expected [M, D], got " + shape_to_string(points.shape()));
  const std::size_t m = points.dim(0), d = points.dim(1);
  if (d < 2) throw std::invalid_argument("project2d: need at least 2 dimensions");
  if (m < 2) throw std::invalid_argument("project2d: need at least 2 points");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> x(points.raw(), Eigen::Index(m), Eigen::Index(d));
  const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(m - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // eigenvalues ascend; take the last two columns
  Eigen::MatrixXd basis(Eigen::Index(d), 2);
  for (int j = 0; j < 2; ++j) {
    Eigen::VectorXd v = eig.eigenvectors().col(Eigen::Index(d) - 1 - j);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(j) = v;
  }
  const Eigen::MatrixXd proj = centered * basis;
  NdArray out({m, 2});
  for (std::size_t i = 0; i < m; ++i) {
    out[i * 2] = proj(Eigen::Index(i), 0);
    out[i * 2 + 1] = proj(Eigen::Index(i), 1);
  }
  return out;
}

void write_projection_csv(const std::filesystem::path& path, const NdArray& projected, std::span<const std::size_t> labels) {
  if (projected.rank() != 2 || projected.dim(1) != 2 || projected.dim(0) != labels.size()) {
    throw ShapeError("write_projection_csv: expected [M, 2] with M labels");
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_projection_csv: cannot open '" + path.string() + "'");
  out.precision(17);
  out << "x,y,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) out << projected[i * 2] << ',' << projected[i * 2 + 1] << ',' << labels[i] << '\n';
}

Predictions summarize_predictions(const NdArray& probs, std::span<const std::size_t> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) throw ShapeError("summarize_predictions: shape mismatch");
  const std::size_t m = probs.dim(0), n = probs.dim(1);
  Predictions p;
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = probs.raw() + r * n;
    const auto best = std::size_t(std::max_element(row, row + n) - row);
    p.predicted.push_back(best);
    p.confidence.push_back(row[best]);
    p.correct.push_back(best == labels[r] ? 1 : 0);
  }
  return p;
}

}  // namespace trident
