#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spool/rng.hpp"
#include "spool/tensor.hpp"

namespace spool::test {

// Uniform values in [lo, hi).
Tensor4 random_tensor(const Shape4& shape, RngStream stream, double lo = -1.0,
                      double hi = 1.0);

// Central finite differences of `f` at `point`, compared elementwise against
// `analytic`. Returns max over elements of |fd - an| / max(1, |fd|, |an|).
double fd_max_rel_error(const std::function<double(const Tensor4&)>& f,
                        const Tensor4& point, const Tensor4& analytic,
                        double eps = 1e-6);

// Same, over a flat parameter vector.
double fd_max_rel_error_vec(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& point, const std::vector<double>& analytic,
    double eps = 1e-6);

// Upper-tail p-value of a chi-square statistic with `dof` degrees of
// freedom (regularized incomplete gamma Q(dof/2, x/2)).
double chi_square_p_value(double statistic, double dof);

// Unique directory under the system temp root; removed on destruction.
struct TempDir {
  std::string path;
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  std::string file(const std::string& name) const;
};

// Whole file as bytes; throws std::runtime_error when unreadable.
std::vector<unsigned char> read_file_bytes(const std::string& path);

// Lines of a text file (newline-split, no trailing empty line).
std::vector<std::string> read_lines(const std::string& path);

}  // namespace spool::test
