#include "spool/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "spool/common.hpp"
#include "spool/detail/wire.hpp"

namespace spool {

std::string Shape4::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

bool Tensor4::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor4::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor4 Tensor4::batch_slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > shape_.n)
    throw std::invalid_argument("batch_slice: range [" +
                                std::to_string(begin) + "," +
                                std::to_string(end) + ") out of bounds for " +
                                shape_.str());
  Tensor4 out(end - begin, shape_.c, shape_.h, shape_.w);
  const std::size_t per = shape_.c * shape_.h * shape_.w;
  std::copy(data_.begin() + static_cast<std::ptrdiff_t>(begin * per),
            data_.begin() + static_cast<std::ptrdiff_t>(end * per),
            out.data());
  return out;
}

void Tensor4::save(std::ostream& out) const {
  out.write("SP4T", 4);
  wire::put_u32(out, static_cast<std::uint32_t>(shape_.n));
  wire::put_u32(out, static_cast<std::uint32_t>(shape_.c));
  wire::put_u32(out, static_cast<std::uint32_t>(shape_.h));
  wire::put_u32(out, static_cast<std::uint32_t>(shape_.w));
  for (double v : data_) wire::put_f64(out, v);
  if (!out) throw DataError("SP4T write failed");
}

Tensor4 Tensor4::load(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SP4T", 4) != 0)
    throw DataError("SP4T: bad magic");
  Shape4 s;
  s.n = wire::get_u32(in);
  s.c = wire::get_u32(in);
  s.h = wire::get_u32(in);
  s.w = wire::get_u32(in);
  if (!in) throw DataError("SP4T: truncated header");
  Tensor4 t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = wire::get_f64(in);
  if (!in) throw DataError("SP4T: truncated payload for shape " + s.str());
  return t;
}

void Tensor4::save_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + path);
  save(out);
}

Tensor4 Tensor4::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  return load(in);
}

void require_same_shape(const Tensor4& a, const Tensor4& b, const char* what) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                a.shape().str() + " vs " + b.shape().str());
}

}  // namespace spool
