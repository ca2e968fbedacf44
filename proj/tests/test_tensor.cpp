#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "spool/common.hpp"
#include "spool/tensor.hpp"
#include "support.hpp"

using namespace spool;

TEST_CASE("shape size and row-major indexing") {
  Tensor4 t(2, 3, 4, 5);
  CHECK(t.size() == 2 * 3 * 4 * 5);
  CHECK(t.shape() == Shape4{2, 3, 4, 5});
  // (n, c, h, w) row-major: w fastest, n slowest.
  CHECK(t.index(0, 0, 0, 0) == 0);
  CHECK(t.index(0, 0, 0, 1) == 1);
  CHECK(t.index(0, 0, 1, 0) == 5);
  CHECK(t.index(0, 1, 0, 0) == 4 * 5);
  CHECK(t.index(1, 0, 0, 0) == 3 * 4 * 5);
  CHECK(t.index(1, 2, 3, 4) == t.size() - 1);
  t(1, 2, 3, 4) = 7.5;
  CHECK(t[t.size() - 1] == 7.5);
}

TEST_CASE("fill and all_finite") {
  Tensor4 t(1, 1, 2, 2, 3.0);
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 3.0);
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  t[1] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(t.all_finite());
  t.fill(0.0);
  CHECK(t.all_finite());
}

TEST_CASE("batch_slice copies the right rows and owns its storage") {
  Tensor4 t = test::random_tensor({4, 2, 3, 3}, RngStream(11));
  Tensor4 mid = t.batch_slice(1, 3);
  CHECK(mid.shape() == Shape4{2, 2, 3, 3});
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 3; ++x)
          CHECK(mid(n, c, y, x) == t(n + 1, c, y, x));
  const double before = t(1, 0, 0, 0);
  mid(0, 0, 0, 0) += 1.0;
  CHECK(t(1, 0, 0, 0) == before);
  CHECK_THROWS_AS((void)t.batch_slice(3, 2), std::invalid_argument);
  CHECK_THROWS_AS((void)t.batch_slice(0, 5), std::invalid_argument);
}

namespace {

void push_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

void push_f64_le(std::vector<unsigned char>& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  for (int i = 0; i < 8; ++i) out.push_back((bits >> (8 * i)) & 0xFF);
}

}  // namespace

TEST_CASE("tensor file bytes match an independently assembled image") {
  Tensor4 t(1, 2, 1, 3);
  const double vals[] = {0.5, -1.25, 3.0, 1e-300, 42.0, -0.0};
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = vals[i];

  std::vector<unsigned char> expected = {'S', 'P', '4', 'T'};
  push_u32_le(expected, 1);
  push_u32_le(expected, 2);
  push_u32_le(expected, 1);
  push_u32_le(expected, 3);
  for (double v : vals) push_f64_le(expected, v);

  std::ostringstream out;
  t.save(out);
  const std::string got = out.str();
  REQUIRE(got.size() == expected.size());
  CHECK(std::memcmp(got.data(), expected.data(), expected.size()) == 0);

  std::istringstream in(got);
  Tensor4 back = Tensor4::load(in);
  CHECK(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);
}

TEST_CASE("tensor file round trip on disk is byte exact") {
  test::TempDir dir("tensor");
  Tensor4 t = test::random_tensor({3, 2, 4, 5}, RngStream(3), -10.0, 10.0);
  const std::string path = dir.file("t.sp4t");
  t.save_file(path);
  Tensor4 back = Tensor4::load_file(path);
  REQUIRE(back.shape() == t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);

  back.save_file(dir.file("t2.sp4t"));
  CHECK(test::read_file_bytes(path) == test::read_file_bytes(dir.file("t2.sp4t")));
}

TEST_CASE("tensor load rejects damaged files") {
  Tensor4 t(1, 1, 2, 2, 1.0);
  std::ostringstream out;
  t.save(out);
  std::string bytes = out.str();

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream in1(bad_magic);
  CHECK_THROWS_AS((void)Tensor4::load(in1), DataError);

  std::istringstream in2(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS((void)Tensor4::load(in2), DataError);

  std::istringstream in3(bytes.substr(0, 10));
  CHECK_THROWS_AS((void)Tensor4::load(in3), DataError);

  CHECK_THROWS_AS((void)Tensor4::load_file("/nonexistent/nowhere.sp4t"),
                  DataError);
}

TEST_CASE("require_same_shape") {
  Tensor4 a(1, 2, 3, 4), b(1, 2, 3, 4), c(1, 2, 4, 3);
  CHECK_NOTHROW(require_same_shape(a, b, "x"));
  CHECK_THROWS_AS(require_same_shape(a, c, "x"), std::invalid_argument);
}
