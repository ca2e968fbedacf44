#include "spool/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "spool/common.hpp"
#include "spool/detail/wire.hpp"
#include "spool/rng.hpp"

namespace spool {

namespace {

std::vector<unsigned char> read_bytes(std::istream& in, std::size_t count,
                                      const std::string& what) {
  std::vector<unsigned char> buf(count);
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count)
    throw DataError(what + ": truncated (wanted " + std::to_string(count) +
                    " bytes)");
  return buf;
}

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path);
  in.seekg(0, std::ios::end);
  const auto size = in.tellg();
  in.seekg(0);
  return read_bytes(in, static_cast<std::size_t>(size), path);
}

double clamp_byte(double v) { return std::min(255.0, std::max(0.0, v)); }

}  // namespace

bool Dataset::has_step(const std::string& prefix) const {
  for (const std::string& s : provenance)
    if (s.rfind(prefix, 0) == 0) return true;
  return false;
}

Dataset load_idx(const std::string& image_path,
                 const std::string& label_path) {
  std::ifstream img(image_path, std::ios::binary);
  if (!img) throw DataError("cannot open: " + image_path);
  if (wire::get_u32_be(img) != 0x00000803u || !img)
    throw DataError("idx: bad image magic in " + image_path);
  const std::size_t count = wire::get_u32_be(img);
  const std::size_t rows = wire::get_u32_be(img);
  const std::size_t cols = wire::get_u32_be(img);
  if (!img || rows == 0 || cols == 0)
    throw DataError("idx: bad image header in " + image_path);
  const auto pixels = read_bytes(img, count * rows * cols, image_path);

  std::ifstream lab(label_path, std::ios::binary);
  if (!lab) throw DataError("cannot open: " + label_path);
  if (wire::get_u32_be(lab) != 0x00000801u || !lab)
    throw DataError("idx: bad label magic in " + label_path);
  const std::size_t lcount = wire::get_u32_be(lab);
  if (lcount != count)
    throw DataError("idx: " + std::to_string(count) + " images but " +
                    std::to_string(lcount) + " labels");
  const auto lbytes = read_bytes(lab, lcount, label_path);

  Dataset d;
  d.images = Tensor4(count, 1, rows, cols);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    d.images[i] = static_cast<double>(pixels[i]);
  d.labels.reserve(count);
  for (unsigned char b : lbytes) {
    if (b > 9)
      throw DataError("idx: label byte " + std::to_string(int(b)) +
                      " outside 0..9 in " + label_path);
    d.labels.push_back(int(b));
  }
  d.class_count = 10;
  d.provenance.push_back("idx:images=" + image_path + ",labels=" + label_path);
  return d;
}

Dataset load_cifar_binary(const std::vector<std::string>& paths,
                          std::size_t classes) {
  if (classes != 10 && classes != 100)
    throw std::invalid_argument("cifar: classes must be 10 or 100");
  if (paths.empty()) throw std::invalid_argument("cifar: no input files");
  const std::size_t label_bytes = classes == 100 ? 2 : 1;
  const std::size_t record = label_bytes + 3072;

  std::vector<unsigned char> all;
  std::string prov = "cifar" + std::to_string(classes) + ":";
  for (std::size_t pi = 0; pi < paths.size(); ++pi) {
    const auto bytes = read_file(paths[pi]);
    if (bytes.size() % record != 0)
      throw DataError("cifar: " + paths[pi] + " length " +
                      std::to_string(bytes.size()) +
                      " is not a multiple of the record size " +
                      std::to_string(record));
    all.insert(all.end(), bytes.begin(), bytes.end());
    prov += (pi ? ";" : "") + paths[pi];
  }

  const std::size_t count = all.size() / record;
  Dataset d;
  d.images = Tensor4(count, 3, 32, 32);
  d.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* rec = all.data() + i * record;
    const unsigned char label = rec[label_bytes - 1];  // fine label last
    if (label >= classes)
      throw DataError("cifar: label " + std::to_string(int(label)) +
                      " outside 0.." + std::to_string(classes - 1));
    d.labels.push_back(int(label));
    double* dst = d.images.data() + i * 3072;
    for (std::size_t k = 0; k < 3072; ++k)
      dst[k] = static_cast<double>(rec[label_bytes + k]);
  }
  d.class_count = classes;
  d.provenance.push_back(prov);
  return d;
}

Dataset scale_unit(Dataset d) {
  if (d.has_step("scale-unit"))
    throw std::invalid_argument(
        "scale_unit: dataset already scaled (see provenance)");
  for (std::size_t i = 0; i < d.images.size(); ++i) d.images[i] /= 255.0;
  d.provenance.push_back("scale-unit");
  return d;
}

MeanSubtracted per_pixel_mean_subtract(std::vector<Dataset> splits) {
  if (splits.empty())
    throw std::invalid_argument("per_pixel_mean_subtract: no splits");
  const Shape4 ref = splits[0].images.shape();
  for (const Dataset& d : splits) {
    const Shape4& s = d.images.shape();
    if (s.c != ref.c || s.h != ref.h || s.w != ref.w)
      throw std::invalid_argument(
          "per_pixel_mean_subtract: split shape " + s.str() +
          " does not match training split " + ref.str());
  }
  MeanSubtracted r;
  r.mean_image = Tensor4(1, ref.c, ref.h, ref.w);
  const Dataset& train = splits[0];
  const std::size_t per = ref.c * ref.h * ref.w;
  for (std::size_t n = 0; n < ref.n; ++n) {
    const double* row = train.images.data() + n * per;
    for (std::size_t k = 0; k < per; ++k) r.mean_image[k] += row[k];
  }
  for (std::size_t k = 0; k < per; ++k)
    r.mean_image[k] /= static_cast<double>(ref.n);
  for (Dataset& d : splits)
    d = subtract_mean(std::move(d), r.mean_image);
  r.splits = std::move(splits);
  return r;
}

Dataset subtract_mean(Dataset d, const Tensor4& mean_image) {
  const Shape4& s = d.images.shape();
  const Shape4& m = mean_image.shape();
  if (m.n != 1 || m.c != s.c || m.h != s.h || m.w != s.w)
    throw std::invalid_argument("subtract_mean: mean image " + m.str() +
                                " does not match dataset " + s.str());
  const std::size_t per = s.c * s.h * s.w;
  for (std::size_t n = 0; n < s.n; ++n) {
    double* row = d.images.data() + n * per;
    for (std::size_t k = 0; k < per; ++k) row[k] -= mean_image[k];
  }
  d.provenance.push_back("mean-subtract");
  return d;
}

Dataset local_contrast_normalize(Dataset d, std::size_t kernel_radius,
                                 std::optional<double> epsilon_floor) {
  if (kernel_radius == 0)
    throw std::invalid_argument("lcn: kernel radius must be >= 1");
  if (epsilon_floor && *epsilon_floor <= 0.0)
    throw std::invalid_argument("lcn: epsilon floor must be > 0");

  const long r = static_cast<long>(kernel_radius);
  const std::size_t side = 2 * kernel_radius + 1;
  std::vector<double> w(side * side);
  const double sg = static_cast<double>(kernel_radius) / 2.0;
  double wsum = 0.0;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx) {
      const double v = std::exp(-(double(dy * dy + dx * dx)) / (2.0 * sg * sg));
      w[(dy + r) * side + (dx + r)] = v;
      wsum += v;
    }
  for (double& v : w) v /= wsum;

  const Shape4& s = d.images.shape();
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);
  std::vector<double> mu(s.h * s.w), v(s.h * s.w), sd(s.h * s.w);

  // Weighted window statistic with per-pixel mass renormalization at the
  // borders, applied to `src`.
  const auto windowed = [&](const double* src, std::vector<double>& out,
                            bool square) {
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double acc = 0.0, mass = 0.0;
        for (long dy = -r; dy <= r; ++dy) {
          const long yy = y + dy;
          if (yy < 0 || yy >= H) continue;
          for (long dx = -r; dx <= r; ++dx) {
            const long xx = x + dx;
            if (xx < 0 || xx >= W) continue;
            const double wv = w[(dy + r) * side + (dx + r)];
            const double sv = src[yy * W + xx];
            acc += wv * (square ? sv * sv : sv);
            mass += wv;
          }
        }
        out[y * W + x] = acc / mass;
      }
  };

  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      double* chan = d.images.data() + d.images.index(n, c, 0, 0);
      windowed(chan, mu, false);
      for (std::size_t k = 0; k < mu.size(); ++k) v[k] = chan[k] - mu[k];
      windowed(v.data(), sd, true);
      double floor_used;
      if (epsilon_floor) {
        floor_used = *epsilon_floor;
        for (double& e : sd) e = std::sqrt(e);
      } else {
        double mean_sd = 0.0;
        for (double& e : sd) {
          e = std::sqrt(e);
          mean_sd += e;
        }
        floor_used = mean_sd / static_cast<double>(sd.size());
      }
      for (std::size_t k = 0; k < sd.size(); ++k) {
        const double den = std::max(floor_used, sd[k]);
        chan[k] = den > 0.0 ? v[k] / den : 0.0;
      }
    }

  std::ostringstream step;
  step << "lcn(radius=" << kernel_radius << ",floor=";
  if (epsilon_floor)
    step << *epsilon_floor;
  else
    step << "auto";
  step << ")";
  d.provenance.push_back(step.str());
  return d;
}

Dataset subsample(const Dataset& d, std::size_t n, std::uint64_t seed) {
  if (n > d.size())
    throw std::invalid_argument("subsample: asked for " + std::to_string(n) +
                                " of " + std::to_string(d.size()) + " rows");
  std::vector<std::size_t> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  RngStream rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.next_below(idx.size() - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(n);
  std::sort(idx.begin(), idx.end());

  const Shape4& s = d.images.shape();
  Dataset out;
  out.images = Tensor4(n, s.c, s.h, s.w);
  out.labels.reserve(n);
  const std::size_t per = s.c * s.h * s.w;
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(d.images.data() + idx[i] * per, per, out.images.data() + i * per);
    out.labels.push_back(d.labels[idx[i]]);
  }
  out.class_count = d.class_count;
  out.provenance = d.provenance;
  out.provenance.push_back("subsample(n=" + std::to_string(n) +
                           ",seed=" + std::to_string(seed) + ")");
  return out;
}

Dataset make_blobs(std::size_t count, std::uint64_t seed) {
  Dataset d;
  d.images = Tensor4(count, 1, 10, 10);
  d.labels.reserve(count);
  d.class_count = 2;
  RngStream root(seed);
  for (std::size_t i = 0; i < count; ++i) {
    RngStream rng = root.substream(i);
    const int label = static_cast<int>(i % 2);
    const double cy = label == 0 ? 3.0 : 6.0;
    const double cx = label == 0 ? 3.0 : 6.0;
    const double amp = 255.0 * (0.7 + 0.3 * rng.next_unit());
    for (std::size_t y = 0; y < 10; ++y)
      for (std::size_t x = 0; x < 10; ++x) {
        const double dy = double(y) - cy, dx = double(x) - cx;
        const double bump = amp * std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
        d.images(i, 0, y, x) =
            clamp_byte(bump + 10.0 * rng.next_gaussian());
      }
    d.labels.push_back(label);
  }
  d.provenance.push_back("blobs(n=" + std::to_string(count) +
                         ",seed=" + std::to_string(seed) + ")");
  return d;
}

namespace {

// 7x5 glyphs, one string per row, '#' = stroke.
const char* const kGlyphs[10][7] = {
    {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},
    {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},
    {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},
    {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."},
    {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},
    {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},
    {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."},
    {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."},
    {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},
    {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."}};

void render_digits(Dataset& d, std::size_t count, RngStream split) {
  // Small low-contrast glyphs with heavy stroke dropout, label-independent
  // clutter bars, and pixel noise, so that small training sets genuinely
  // overfit instead of being linearly separable.
  constexpr std::size_t kScale = 2;
  constexpr std::size_t kGlyphH = 7 * kScale, kGlyphW = 5 * kScale;
  d.images = Tensor4(count, 1, 28, 28);
  d.labels.reserve(count);
  d.class_count = 10;
  for (std::size_t i = 0; i < count; ++i) {
    RngStream rng = split.substream(i);
    const int label = static_cast<int>(i % 10);
    const std::size_t oy = rng.next_below(28 - kGlyphH + 1);
    const std::size_t ox = rng.next_below(28 - kGlyphW + 1);
    const double base = 110.0 + 90.0 * rng.next_unit();
    for (std::size_t y = 0; y < 28; ++y)
      for (std::size_t x = 0; x < 28; ++x) {
        double v = std::abs(16.0 * rng.next_gaussian());
        const bool in_glyph = y >= oy && y < oy + kGlyphH && x >= ox &&
                              x < ox + kGlyphW;
        if (in_glyph) {
          const std::size_t gy = (y - oy) / kScale, gx = (x - ox) / kScale;
          if (kGlyphs[label][gy][gx] == '#' && rng.next_unit() >= 0.18)
            v = base + 30.0 * rng.next_gaussian();
        }
        d.images(i, 0, y, x) = clamp_byte(v);
      }
    // Clutter: a few short bright bars anywhere on the canvas.
    const std::size_t bars = 2 + rng.next_below(3);
    for (std::size_t b = 0; b < bars; ++b) {
      const bool horizontal = rng.next_below(2) == 0;
      const std::size_t len = 3 + rng.next_below(5);
      const std::size_t by = rng.next_below(28);
      const std::size_t bx = rng.next_below(28);
      const double glow = base * (0.6 + 0.4 * rng.next_unit());
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t y = horizontal ? by : std::min<std::size_t>(27, by + k);
        const std::size_t x = horizontal ? std::min<std::size_t>(27, bx + k) : bx;
        d.images(i, 0, y, x) =
            clamp_byte(d.images(i, 0, y, x) + glow +
                       12.0 * rng.next_gaussian());
      }
    }
    d.labels.push_back(label);
  }
}

}  // namespace

void make_synthetic_digits(std::size_t train_count, std::size_t test_count,
                           std::uint64_t seed, Dataset& train, Dataset& test) {
  RngStream root(seed);
  train = Dataset{};
  test = Dataset{};
  render_digits(train, train_count, root.substream(1));
  render_digits(test, test_count, root.substream(2));
  train.provenance.push_back("synthetic-digits(split=train,n=" +
                             std::to_string(train_count) +
                             ",seed=" + std::to_string(seed) + ")");
  test.provenance.push_back("synthetic-digits(split=test,n=" +
                            std::to_string(test_count) +
                            ",seed=" + std::to_string(seed) + ")");
}

void convert_svhn_raw(const std::string& images_path,
                      const std::string& labels_path,
                      const std::string& out_path) {
  const auto pixels = read_file(images_path);
  if (pixels.size() % 3072 != 0)
    throw DataError("svhn: image payload " + std::to_string(pixels.size()) +
                    " is not a multiple of 3072");
  const std::size_t count = pixels.size() / 3072;
  const auto labels = read_file(labels_path);
  if (labels.size() != count)
    throw DataError("svhn: " + std::to_string(count) + " images but " +
                    std::to_string(labels.size()) + " labels");

  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw DataError("cannot open for write: " + out_path);
  std::vector<unsigned char> rec(1 + 3072);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char raw = labels[i];
    if (raw < 1 || raw > 10)
      throw DataError("svhn: label " + std::to_string(int(raw)) +
                      " outside 1..10 at record " + std::to_string(i));
    rec[0] = raw == 10 ? 0 : raw;  // 10 encodes digit zero
    const unsigned char* src = pixels.data() + i * 3072;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < 1024; ++p)
        rec[1 + c * 1024 + p] = src[p * 3 + c];
    out.write(reinterpret_cast<const char*>(rec.data()),
              static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw DataError("svhn: write failed: " + out_path);
}

}  // namespace spool
