#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <fstream>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "spool/common.hpp"
#include "spool/data.hpp"
#include "support.hpp"

using namespace spool;

namespace {

void write_bytes(const std::string& path, const std::vector<unsigned char>& b) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()),
            static_cast<std::streamsize>(b.size()));
}

void push_u32_be(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back((v >> 24) & 0xFF);
  out.push_back((v >> 16) & 0xFF);
  out.push_back((v >> 8) & 0xFF);
  out.push_back(v & 0xFF);
}

// Independent writer for the big-endian image/label pair format.
void write_idx_pair(const std::string& img_path, const std::string& lab_path,
                    std::size_t count, std::size_t rows, std::size_t cols,
                    const std::vector<unsigned char>& pixels,
                    const std::vector<unsigned char>& labels) {
  std::vector<unsigned char> img;
  push_u32_be(img, 0x00000803u);
  push_u32_be(img, static_cast<std::uint32_t>(count));
  push_u32_be(img, static_cast<std::uint32_t>(rows));
  push_u32_be(img, static_cast<std::uint32_t>(cols));
  img.insert(img.end(), pixels.begin(), pixels.end());
  write_bytes(img_path, img);

  std::vector<unsigned char> lab;
  push_u32_be(lab, 0x00000801u);
  push_u32_be(lab, static_cast<std::uint32_t>(labels.size()));
  lab.insert(lab.end(), labels.begin(), labels.end());
  write_bytes(lab_path, lab);
}

}  // namespace

TEST_CASE("idx pair loads byte-exact") {
  test::TempDir dir("idx");
  std::vector<unsigned char> pixels(3 * 4 * 5);
  RngStream s(1);
  for (auto& p : pixels) p = static_cast<unsigned char>(s.next_below(256));
  std::vector<unsigned char> labels = {7, 0, 9};
  write_idx_pair(dir.file("img"), dir.file("lab"), 3, 4, 5, pixels, labels);

  Dataset d = load_idx(dir.file("img"), dir.file("lab"));
  CHECK(d.size() == 3);
  CHECK(d.class_count == 10);
  CHECK(d.images.shape() == Shape4{3, 1, 4, 5});
  for (std::size_t i = 0; i < pixels.size(); ++i)
    CHECK(d.images[i] == static_cast<double>(pixels[i]));
  CHECK(d.labels == std::vector<int>{7, 0, 9});
  CHECK(d.has_step("idx:"));
}

TEST_CASE("idx loader rejects damaged input") {
  test::TempDir dir("idxbad");
  std::vector<unsigned char> pixels(2 * 2 * 2, 1);
  std::vector<unsigned char> labels = {1, 2};
  write_idx_pair(dir.file("img"), dir.file("lab"), 2, 2, 2, pixels, labels);

  // Wrong image magic.
  auto img = test::read_file_bytes(dir.file("img"));
  img[3] = 0x99;
  write_bytes(dir.file("img_bad"), img);
  CHECK_THROWS_AS((void)load_idx(dir.file("img_bad"), dir.file("lab")),
                  DataError);

  // Truncated pixel payload.
  auto short_img = test::read_file_bytes(dir.file("img"));
  short_img.resize(short_img.size() - 3);
  write_bytes(dir.file("img_short"), short_img);
  CHECK_THROWS_AS((void)load_idx(dir.file("img_short"), dir.file("lab")),
                  DataError);

  // Count mismatch between images and labels.
  write_idx_pair(dir.file("img3"), dir.file("lab3"), 2, 2, 2, pixels, {1});
  CHECK_THROWS_AS((void)load_idx(dir.file("img3"), dir.file("lab3")),
                  DataError);

  // Label byte outside 0..9.
  write_idx_pair(dir.file("img4"), dir.file("lab4"), 2, 2, 2, pixels, {3, 10});
  CHECK_THROWS_AS((void)load_idx(dir.file("img4"), dir.file("lab4")),
                  DataError);

  CHECK_THROWS_AS((void)load_idx(dir.file("absent"), dir.file("lab")),
                  DataError);
}

TEST_CASE("cifar 10-class records load planar and concatenate across files") {
  test::TempDir dir("cifar");
  RngStream s(2);
  std::vector<unsigned char> rec1(1 + 3072), rec2(1 + 3072);
  rec1[0] = 4;
  rec2[0] = 9;
  for (std::size_t i = 1; i < rec1.size(); ++i) {
    rec1[i] = static_cast<unsigned char>(s.next_below(256));
    rec2[i] = static_cast<unsigned char>(s.next_below(256));
  }
  write_bytes(dir.file("a.bin"), rec1);
  write_bytes(dir.file("b.bin"), rec2);

  Dataset d = load_cifar_binary({dir.file("a.bin"), dir.file("b.bin")}, 10);
  CHECK(d.size() == 2);
  CHECK(d.class_count == 10);
  CHECK(d.images.shape() == Shape4{2, 3, 32, 32});
  CHECK(d.labels == std::vector<int>{4, 9});
  // Channel-planar byte order maps straight onto (c, h, w).
  for (std::size_t k = 0; k < 3072; ++k) {
    CHECK(d.images[k] == static_cast<double>(rec1[1 + k]));
    CHECK(d.images[3072 + k] == static_cast<double>(rec2[1 + k]));
  }
}

TEST_CASE("cifar 100-class records keep the fine label") {
  test::TempDir dir("cifar100");
  std::vector<unsigned char> rec(2 + 3072, 0);
  rec[0] = 11;  // coarse
  rec[1] = 87;  // fine
  write_bytes(dir.file("train.bin"), rec);
  Dataset d = load_cifar_binary({dir.file("train.bin")}, 100);
  CHECK(d.labels == std::vector<int>{87});
  CHECK(d.class_count == 100);
}

TEST_CASE("cifar loader rejects bad sizes and labels") {
  test::TempDir dir("cifarbad");
  std::vector<unsigned char> rec(1 + 3072, 0);
  rec.push_back(0);  // one stray byte
  write_bytes(dir.file("bad.bin"), rec);
  CHECK_THROWS_AS((void)load_cifar_binary({dir.file("bad.bin")}, 10),
                  DataError);

  std::vector<unsigned char> rec2(1 + 3072, 0);
  rec2[0] = 10;  // out of range for 10 classes
  write_bytes(dir.file("bad2.bin"), rec2);
  CHECK_THROWS_AS((void)load_cifar_binary({dir.file("bad2.bin")}, 10),
                  DataError);

  CHECK_THROWS_AS((void)load_cifar_binary({dir.file("bad.bin")}, 17),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)load_cifar_binary({}, 10), std::invalid_argument);
}

TEST_CASE("unit scaling divides by 255 exactly once") {
  Dataset d = make_blobs(4, 3);
  Dataset scaled = scale_unit(d);
  for (std::size_t i = 0; i < d.images.size(); ++i)
    CHECK(scaled.images[i] == doctest::Approx(d.images[i] / 255.0).epsilon(1e-15));
  CHECK(scaled.has_step("scale-unit"));

  Tensor4 edges(1, 1, 1, 2);
  edges[0] = 255.0;
  edges[1] = 0.0;
  Dataset e;
  e.images = edges;
  e.labels = {0};
  e.class_count = 2;
  Dataset es = scale_unit(e);
  CHECK(es.images[0] == 1.0);
  CHECK(es.images[1] == 0.0);

  CHECK_THROWS_AS((void)scale_unit(std::move(scaled)), std::invalid_argument);
}

TEST_CASE("per-pixel mean subtraction trains on the first split only") {
  Dataset train = make_blobs(6, 4);
  Dataset test_split = make_blobs(3, 5);
  // Expected mean from the train split alone.
  Tensor4 mean(1, 1, 10, 10, 0.0);
  for (std::size_t n = 0; n < 6; ++n)
    for (std::size_t k = 0; k < 100; ++k)
      mean[k] += train.images[n * 100 + k] / 6.0;

  MeanSubtracted ms = per_pixel_mean_subtract({train, test_split});
  REQUIRE(ms.splits.size() == 2);
  for (std::size_t k = 0; k < 100; ++k)
    CHECK(ms.mean_image[k] == doctest::Approx(mean[k]).epsilon(1e-12));

  // Train pixels have zero mean afterwards.
  for (std::size_t k = 0; k < 100; ++k) {
    double acc = 0.0;
    for (std::size_t n = 0; n < 6; ++n)
      acc += ms.splits[0].images[n * 100 + k];
    CHECK(std::abs(acc / 6.0) < 1e-12);
  }
  // Test split is shifted by the train mean, not its own.
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t k = 0; k < 100; ++k)
      CHECK(ms.splits[1].images[n * 100 + k] ==
            doctest::Approx(test_split.images[n * 100 + k] - mean[k])
                .epsilon(1e-12));
  CHECK(ms.splits[0].has_step("mean-subtract"));
  CHECK(ms.splits[1].has_step("mean-subtract"));

  Dataset wrong = make_blobs(2, 6);
  wrong.images = Tensor4(2, 1, 5, 5);
  CHECK_THROWS_AS((void)per_pixel_mean_subtract({train, wrong}),
                  std::invalid_argument);
}

namespace {

// Naive reimplementation of the contrast-normalization definition used for
// cross-checking: Gaussian window (sigma = radius/2) normalized over the
// full window, then renormalized per pixel by in-bounds mass.
void naive_lcn_channel(const double* src, double* dst, long H, long W, long r,
                       std::optional<double> floor_opt) {
  const long side = 2 * r + 1;
  const double sg = static_cast<double>(r) / 2.0;
  std::vector<double> w(side * side);
  double wsum = 0.0;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx) {
      const double v = std::exp(-double(dy * dy + dx * dx) / (2 * sg * sg));
      w[(dy + r) * side + (dx + r)] = v;
      wsum += v;
    }
  for (double& v : w) v /= wsum;

  auto stat = [&](auto f) {
    std::vector<double> out(H * W);
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double acc = 0.0, mass = 0.0;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx) {
            const long yy = y + dy, xx = x + dx;
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
            acc += w[(dy + r) * side + (dx + r)] * f(yy * W + xx);
            mass += w[(dy + r) * side + (dx + r)];
          }
        out[y * W + x] = acc / mass;
      }
    return out;
  };

  std::vector<double> mu = stat([&](long i) { return src[i]; });
  std::vector<double> v(H * W);
  for (long i = 0; i < H * W; ++i) v[i] = src[i] - mu[i];
  std::vector<double> var = stat([&](long i) { return v[i] * v[i]; });
  std::vector<double> sd(H * W);
  double mean_sd = 0.0;
  for (long i = 0; i < H * W; ++i) {
    sd[i] = std::sqrt(var[i]);
    mean_sd += sd[i];
  }
  const double floor_used =
      floor_opt ? *floor_opt : mean_sd / static_cast<double>(H * W);
  for (long i = 0; i < H * W; ++i) {
    const double den = std::max(floor_used, sd[i]);
    dst[i] = den > 0.0 ? v[i] / den : 0.0;
  }
}

}  // namespace

TEST_CASE("contrast normalization matches a naive recompute") {
  Dataset d = make_blobs(3, 7);
  Dataset out = local_contrast_normalize(d, 2, std::nullopt);
  for (std::size_t n = 0; n < 3; ++n) {
    std::vector<double> want(100);
    naive_lcn_channel(d.images.data() + n * 100, want.data(), 10, 10, 2,
                      std::nullopt);
    for (std::size_t k = 0; k < 100; ++k)
      CHECK(out.images[n * 100 + k] == doctest::Approx(want[k]).epsilon(1e-12));
  }
  CHECK(out.has_step("lcn(radius=2,floor=auto)"));

  Dataset out2 = local_contrast_normalize(d, 2, 0.5);
  std::vector<double> want2(100);
  naive_lcn_channel(d.images.data(), want2.data(), 10, 10, 2, 0.5);
  for (std::size_t k = 0; k < 100; ++k)
    CHECK(out2.images[k] == doctest::Approx(want2[k]).epsilon(1e-12));

  CHECK_THROWS_AS((void)local_contrast_normalize(d, 0, std::nullopt),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)local_contrast_normalize(d, 2, 0.0),
                  std::invalid_argument);
}

TEST_CASE("contrast normalization is invariant to affine rescaling") {
  Dataset d = make_blobs(2, 8);
  Dataset affine = d;
  for (std::size_t i = 0; i < affine.images.size(); ++i)
    affine.images[i] = 3.0 * affine.images[i] + 40.0;

  // Auto floor scales with the data, so the whole map is invariant.
  Dataset a = local_contrast_normalize(d, 3, std::nullopt);
  Dataset b = local_contrast_normalize(affine, 3, std::nullopt);
  for (std::size_t i = 0; i < a.images.size(); ++i)
    CHECK(a.images[i] == doctest::Approx(b.images[i]).epsilon(1e-9));
}

TEST_CASE("subsample keeps a seeded subset in original order") {
  Dataset d = make_blobs(20, 9);
  Dataset s1 = subsample(d, 8, 123);
  Dataset s2 = subsample(d, 8, 123);
  REQUIRE(s1.size() == 8);
  CHECK(s1.labels == s2.labels);
  for (std::size_t i = 0; i < s1.images.size(); ++i)
    CHECK(s1.images[i] == s2.images[i]);
  CHECK(s1.has_step("subsample(n=8"));

  Dataset s3 = subsample(d, 8, 124);
  bool differs = false;
  for (std::size_t i = 0; i < s3.images.size() && !differs; ++i)
    differs = s3.images[i] != s1.images[i];
  CHECK(differs);

  // Every selected row must be one of the source rows, each at most once,
  // preserving relative order (labels alternate 0/1 in blobs).
  Dataset full = subsample(d, 20, 5);
  CHECK(full.labels == d.labels);

  CHECK_THROWS_AS((void)subsample(d, 21, 1), std::invalid_argument);
}

TEST_CASE("subsample inclusion frequencies are unbiased") {
  // Row 0 should appear in a fraction n/N of subsamples; binomial 3 sigma.
  Dataset d = make_blobs(10, 10);
  const int trials = 2000;
  const std::size_t n = 4;
  int hits = 0;
  const double probe = d.images[0];
  for (int t = 0; t < trials; ++t) {
    Dataset s = subsample(d, n, 1000 + static_cast<std::uint64_t>(t));
    for (std::size_t r = 0; r < s.size(); ++r)
      if (s.images[r * 100] == probe) {
        ++hits;
        break;
      }
  }
  const double p = static_cast<double>(n) / 10.0;
  const double sigma = std::sqrt(trials * p * (1 - p));
  CHECK(std::abs(hits - trials * p) <= 3.0 * sigma);
}

TEST_CASE("blob corpus: shapes, labels, determinism, range") {
  Dataset d = make_blobs(10, 42);
  CHECK(d.images.shape() == Shape4{10, 1, 10, 10});
  CHECK(d.class_count == 2);
  for (std::size_t i = 0; i < 10; ++i) CHECK(d.labels[i] == int(i % 2));
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    CHECK(d.images[i] >= 0.0);
    CHECK(d.images[i] <= 255.0);
  }
  Dataset again = make_blobs(10, 42);
  for (std::size_t i = 0; i < d.images.size(); ++i)
    CHECK(again.images[i] == d.images[i]);
  Dataset other = make_blobs(10, 43);
  bool differs = false;
  for (std::size_t i = 0; i < d.images.size() && !differs; ++i)
    differs = other.images[i] != d.images[i];
  CHECK(differs);
}

TEST_CASE("synthetic digit corpus: shape, label coverage, split separation") {
  Dataset train, test_split;
  make_synthetic_digits(200, 100, 77, train, test_split);
  CHECK(train.images.shape() == Shape4{200, 1, 28, 28});
  CHECK(test_split.images.shape() == Shape4{100, 1, 28, 28});
  CHECK(train.class_count == 10);

  std::vector<int> counts(10, 0);
  for (int l : train.labels) {
    REQUIRE(l >= 0);
    REQUIRE(l <= 9);
    counts[static_cast<std::size_t>(l)]++;
  }
  for (int c : counts) CHECK(c > 0);

  for (std::size_t i = 0; i < train.images.size(); ++i) {
    CHECK(train.images[i] >= 0.0);
    CHECK(train.images[i] <= 255.0);
  }

  // Same seed reproduces; the two splits are distinct.
  Dataset train2, test2;
  make_synthetic_digits(200, 100, 77, train2, test2);
  for (std::size_t i = 0; i < train.images.size(); ++i)
    CHECK(train2.images[i] == train.images[i]);
  bool differs = false;
  for (std::size_t i = 0; i < test_split.images.size() && !differs; ++i)
    differs = test_split.images[i] != train.images[i];
  CHECK(differs);
  CHECK(train.has_step("synthetic-digits(split=train"));
  CHECK(test_split.has_step("synthetic-digits(split=test"));
}

TEST_CASE("house-number converter emits loadable 10-class records") {
  test::TempDir dir("svhn");
  // Two 32x32 RGB images, interleaved HWC bytes; labels 10 (zero) and 3.
  RngStream s(5);
  std::vector<unsigned char> raw(2 * 3072);
  for (auto& b : raw) b = static_cast<unsigned char>(s.next_below(256));
  write_bytes(dir.file("imgs"), raw);
  write_bytes(dir.file("labels"), {10, 3});

  convert_svhn_raw(dir.file("imgs"), dir.file("labels"), dir.file("out.bin"));
  Dataset d = load_cifar_binary({dir.file("out.bin")}, 10);
  CHECK(d.size() == 2);
  CHECK(d.labels == std::vector<int>{0, 3});
  // HWC -> planar: red channel first, pixel (y,x) from raw[(y*32+x)*3].
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = 0; x < 32; ++x) {
      CHECK(d.images(0, 0, y, x) ==
            static_cast<double>(raw[(y * 32 + x) * 3 + 0]));
      CHECK(d.images(0, 2, y, x) ==
            static_cast<double>(raw[(y * 32 + x) * 3 + 2]));
    }

  write_bytes(dir.file("labels_bad"), {0, 3});  // 0 is not a valid raw label
  CHECK_THROWS_AS(convert_svhn_raw(dir.file("imgs"), dir.file("labels_bad"),
                                   dir.file("out2.bin")),
                  DataError);
  write_bytes(dir.file("short"), std::vector<unsigned char>(100, 1));
  CHECK_THROWS_AS(convert_svhn_raw(dir.file("short"), dir.file("labels"),
                                   dir.file("out3.bin")),
                  DataError);
}
