#include "trident/ndarray.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace trident {

namespace {
std::atomic<bool> g_finite_checks{false};
}

void set_finite_checks(bool enabled) noexcept { g_finite_checks.store(enabled); }
bool finite_checks_enabled() noexcept { return g_finite_checks.load(std::memory_order_relaxed); }

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

NdArray::NdArray(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

NdArray::NdArray(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("NdArray: shape " + shape_to_string(shape_) + " holds " +
                     std::to_string(shape_numel(shape_)) + " values, got " + std::to_string(data_.size()));
  }
}

std::size_t NdArray::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("NdArray::at: rank " + std::to_string(shape_.size()) + " array indexed with " +
                     std::to_string(index.size()) + " indices");
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= shape_[axis]) throw std::out_of_range("NdArray::at: index out of range");
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& NdArray::at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
double NdArray::at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

double NdArray::item() const {
  if (data_.size() != 1) throw ShapeError("NdArray::item: array of shape " + shape_to_string(shape_) + " is not a scalar");
  return data_[0];
}

NdArray NdArray::reshaped(Shape shape) const& {
  NdArray copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

NdArray NdArray::reshaped(Shape shape) && {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(shape_) + " as " + shape_to_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

bool NdArray::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void NdArray::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

}  // namespace trident
