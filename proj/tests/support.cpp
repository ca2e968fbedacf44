#include "support.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <unistd.h>

namespace spool::test {

namespace fs = std::filesystem;

Tensor4 random_tensor(const Shape4& shape, RngStream stream, double lo,
                      double hi) {
  Tensor4 t(shape);
  for (std::size_t i = 0; i < t.size(); ++i)
    t.data()[i] = lo + (hi - lo) * stream.unit_at(i);
  return t;
}

double fd_max_rel_error(const std::function<double(const Tensor4&)>& f,
                        const Tensor4& point, const Tensor4& analytic,
                        double eps) {
  if (point.size() != analytic.size())
    throw std::invalid_argument("fd_max_rel_error: size mismatch");
  Tensor4 probe = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double keep = probe.data()[i];
    probe.data()[i] = keep + eps;
    const double hi = f(probe);
    probe.data()[i] = keep - eps;
    const double lo = f(probe);
    probe.data()[i] = keep;
    const double fd = (hi - lo) / (2.0 * eps);
    const double an = analytic.data()[i];
    const double err =
        std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
    worst = std::max(worst, err);
  }
  return worst;
}

double fd_max_rel_error_vec(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& point, const std::vector<double>& analytic,
    double eps) {
  if (point.size() != analytic.size())
    throw std::invalid_argument("fd_max_rel_error_vec: size mismatch");
  std::vector<double> probe = point;
  double worst = 0.0;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + eps;
    const double hi = f(probe);
    probe[i] = keep - eps;
    const double lo = f(probe);
    probe[i] = keep;
    const double fd = (hi - lo) / (2.0 * eps);
    const double an = analytic[i];
    const double err =
        std::abs(fd - an) / std::max({1.0, std::abs(fd), std::abs(an)});
    worst = std::max(worst, err);
  }
  return worst;
}

namespace {

// Regularized incomplete gamma, series and continued-fraction halves
// (Lentz's algorithm), as in the classic numerical texts.
double gamma_p_series(double a, double x) {
  double sum = 1.0 / a;
  double term = sum;
  double ap = a;
  for (int i = 0; i < 500; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double chi_square_p_value(double statistic, double dof) {
  if (statistic < 0.0 || dof <= 0.0)
    throw std::invalid_argument("chi_square_p_value: bad arguments");
  const double a = dof / 2.0;
  const double x = statistic / 2.0;
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_cf(a, x);
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<unsigned> counter{0};
  const unsigned id = counter.fetch_add(1);
  fs::path base = fs::temp_directory_path() /
                  ("spool-" + tag + "-" + std::to_string(::getpid()) + "-" +
                   std::to_string(id));
  fs::create_directories(base);
  path = base.string();
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path, ec);
}

std::string TempDir::file(const std::string& name) const {
  return (fs::path(path) / name).string();
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(in),
                                    std::istreambuf_iterator<char>());
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace spool::test
