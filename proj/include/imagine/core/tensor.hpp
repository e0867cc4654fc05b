#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace imagine {

/// Thrown on any contract violation (bad shapes, invalid arguments,
/// out-of-range values). Carries the offending check's message.
class ContractError : public std::runtime_error {
 public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
[[noreturn]] inline void fail_check(const char* expr, const std::string& msg) {
  throw ContractError(std::string("check failed: ") + expr +
                      (msg.empty() ? "" : " (" + msg + ")"));
}
}  // namespace detail

#define IM_CHECK(cond, msg)                          \
  do {                                               \
    if (!(cond)) ::imagine::detail::fail_check(#cond, (msg)); \
  } while (false)

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + ")";
}

/// Dense row-major n-d array. Feature maps use (height, width, channels)
/// with channels contiguous; vectors are 1-d; scalars have shape (1).
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_.assign(numel_of(shape_), T(0));
  }
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    IM_CHECK(static_cast<long>(data_.size()) == numel_of(shape_),
             "data size does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(T v) { return full({1}, v); }

  bool empty() const { return data_.empty(); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(i); }
  const Shape& shape() const { return shape_; }
  long numel() const { return static_cast<long>(data_.size()); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  T& operator[](long i) { return data_[i]; }
  const T& operator[](long i) const { return data_[i]; }

  T& operator()(int i) { return data_[i]; }
  const T& operator()(int i) const { return data_[i]; }
  T& operator()(int i, int j) { return data_[static_cast<long>(i) * shape_[1] + j]; }
  const T& operator()(int i, int j) const {
    return data_[static_cast<long>(i) * shape_[1] + j];
  }
  T& operator()(int i, int j, int k) {
    return data_[(static_cast<long>(i) * shape_[1] + j) * shape_[2] + k];
  }
  const T& operator()(int i, int j, int k) const {
    return data_[(static_cast<long>(i) * shape_[1] + j) * shape_[2] + k];
  }
  T& operator()(int i, int j, int k, int l) {
    return data_[((static_cast<long>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  const T& operator()(int i, int j, int k, int l) const {
    return data_[((static_cast<long>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  Tensor reshaped(Shape s) const {
    IM_CHECK(numel_of(s) == numel(), "reshape must preserve element count");
    return Tensor(std::move(s), data_);
  }

  /// Elementwise accumulate; shapes must match exactly.
  void add_(const Tensor& other) {
    IM_CHECK(shape_ == other.shape_, "add_: shape mismatch " + shape_str(shape_) +
                                         " vs " + shape_str(other.shape_));
    const T* src = other.data();
    T* dst = data();
    const long n = numel();
    for (long i = 0; i < n; ++i) dst[i] += src[i];
  }
  void scale_(T a) {
    for (auto& v : data_) v *= a;
  }

  T sum() const { return std::accumulate(data_.begin(), data_.end(), T(0)); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape_ = shape_;
    out.data_.resize(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out.data_[i] = static_cast<U>(data_[i]);
    return out;
  }

  static long numel_of(const Shape& s) {
    long n = 1;
    for (int d : s) {
      IM_CHECK(d >= 1, "dimensions must be >= 1, got shape " + shape_str(s));
      n *= d;
    }
    return n;
  }

  template <typename U>
  friend class Tensor;

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <typename T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  return std::equal(a.data(), a.data() + a.numel(), b.data());
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  IM_CHECK(a.shape() == b.shape(), "max_abs_diff: shape mismatch");
  T m = 0;
  for (long i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace imagine
