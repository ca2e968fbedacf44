#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace spool {

struct Shape4 {
  std::size_t n = 0;  // batch
  std::size_t c = 0;  // channels / feature maps
  std::size_t h = 0;  // rows
  std::size_t w = 0;  // cols

  std::size_t size() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense 4-D array, row-major in (n, c, h, w). Doubles throughout: the
// gradient checks in the test suite need 64-bit headroom.
class Tensor4 {
 public:
  Tensor4() = default;
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w,
          double fill = 0.0)
      : shape_{n, c, h, w}, data_(shape_.size(), fill) {}
  explicit Tensor4(const Shape4& s, double fill = 0.0)
      : shape_(s), data_(s.size(), fill) {}

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h,
                    std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& operator()(std::size_t n, std::size_t c, std::size_t h,
                     std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t h,
                    std::size_t w) const {
    return data_[index(n, c, h, w)];
  }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool all_finite() const;
  void fill(double v);

  // Slice of full batch elements [begin, end), shapes (end-begin, c, h, w).
  Tensor4 batch_slice(std::size_t begin, std::size_t end) const;

  // SP4T: "SP4T" magic, four little-endian u32 dims (n,c,h,w), then
  // n*c*h*w little-endian f64 in row-major order.
  void save(std::ostream& out) const;
  static Tensor4 load(std::istream& in);
  void save_file(const std::string& path) const;
  static Tensor4 load_file(const std::string& path);

 private:
  Shape4 shape_;
  std::vector<double> data_;
};

// Throws std::invalid_argument naming `what` if shapes differ.
void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what);

}  // namespace spool
