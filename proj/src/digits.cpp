#include "unitquant/digits.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

namespace uq {

namespace {

struct Pt {
  double x, y;
};
using Stroke = std::vector<Pt>;

Stroke ellipse(double cx, double cy, double rx, double ry, int n = 14, bool close = true) {
  Stroke s;
  for (int i = 0; i <= (close ? n : n - 1); ++i) {
    const double a = 2.0 * M_PI * i / n;
    s.push_back({cx + rx * std::sin(a), cy - ry * std::cos(a)});
  }
  return s;
}

// Glyphs live in a unit box, x right, y down. `style` picks between common
// handwritten variants (serifs, crossbars, open loops).
std::vector<Stroke> glyph(int digit, int style) {
  switch (digit) {
    case 0:
      return {ellipse(0.5, 0.5, 0.30, 0.42)};
    case 1:
      if (style)
        return {{{0.50, 0.06}, {0.50, 0.94}}};
      return {{{0.32, 0.22}, {0.52, 0.06}, {0.52, 0.94}}, {{0.34, 0.94}, {0.70, 0.94}}};
    case 2:
      return {{{0.20, 0.32},
               {0.26, 0.14},
               {0.50, 0.06},
               {0.74, 0.14},
               {0.80, 0.32},
               {0.72, 0.50},
               {0.22, 0.94},
               {0.80, 0.94}}};
    case 3:
      return {{{0.24, 0.14},
               {0.50, 0.06},
               {0.76, 0.18},
               {0.76, 0.34},
               {0.52, 0.50},
               {0.78, 0.62},
               {0.78, 0.80},
               {0.52, 0.94},
               {0.24, 0.86}}};
    case 4:
      return {{{0.62, 0.06}, {0.20, 0.62}, {0.82, 0.62}}, {{0.62, 0.30}, {0.62, 0.94}}};
    case 5:
      return {{{0.76, 0.06},
               {0.28, 0.06},
               {0.26, 0.46},
               {0.56, 0.42},
               {0.78, 0.52},
               {0.80, 0.72},
               {0.60, 0.92},
               {0.30, 0.90},
               {0.22, 0.78}}};
    case 6:
      return {{{0.66, 0.06},
               {0.42, 0.14},
               {0.28, 0.38},
               {0.24, 0.62},
               {0.32, 0.84},
               {0.54, 0.94},
               {0.72, 0.84},
               {0.76, 0.66},
               {0.64, 0.52},
               {0.44, 0.50},
               {0.28, 0.62}}};
    case 7:
      if (style) return {{{0.20, 0.06}, {0.80, 0.06}, {0.42, 0.94}}};
      return {{{0.20, 0.06}, {0.80, 0.06}, {0.42, 0.94}}, {{0.36, 0.50}, {0.66, 0.50}}};
    case 8:
      return {ellipse(0.5, 0.28, 0.22, 0.20), ellipse(0.5, 0.72, 0.26, 0.22)};
    case 9:
      if (style) return {ellipse(0.5, 0.30, 0.24, 0.22), {{0.74, 0.32}, {0.74, 0.94}}};
      return {ellipse(0.5, 0.30, 0.24, 0.22), {{0.74, 0.32}, {0.72, 0.60}, {0.62, 0.94}}};
  }
  return {};
}

double segment_distance(Pt p, Pt a, Pt b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = p.x - (a.x + t * dx), ey = p.y - (a.y + t * dy);
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

DigitSet make_digits(std::int64_t count, std::uint64_t seed) {
  constexpr int kSize = 28;
  DigitSet set;
  set.images.count = count;
  set.images.rows = kSize;
  set.images.cols = kSize;
  set.images.pixels.resize(static_cast<std::size_t>(count) * kSize * kSize);
  set.labels.resize(static_cast<std::size_t>(count));

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (std::int64_t s = 0; s < count; ++s) {
    const int digit = static_cast<int>(s % 10);
    set.labels[static_cast<std::size_t>(s)] = static_cast<std::uint8_t>(digit);

    const int style = uni(rng) < 0.4 ? 1 : 0;
    const double rot = (uni(rng) - 0.5) * 0.75;
    const double scale = (0.45 + 0.50 * uni(rng)) * kSize;
    const double aspect = 0.80 + 0.40 * uni(rng);
    const double shear = (uni(rng) - 0.5) * 1.00;
    const double tx = kSize / 2.0 + (uni(rng) - 0.5) * 8.0;
    const double ty = kSize / 2.0 + (uni(rng) - 0.5) * 8.0;
    const double thick = 0.7 + 1.5 * uni(rng);
    const double ink = 0.40 + 0.60 * uni(rng);
    const double wobble = 0.35 + 0.85 * uni(rng);  // hand-shake on the stroke path
    const double cr = std::cos(rot), sr = std::sin(rot);

    std::vector<Stroke> strokes = glyph(digit, style);
    for (Stroke& st : strokes)
      for (Pt& p : st) {
        double x = (p.x - 0.5) * scale * aspect, y = (p.y - 0.5) * scale;
        x += shear * y;
        p = {cr * x - sr * y + tx + wobble * gauss(rng),
             sr * x + cr * y + ty + wobble * gauss(rng)};
      }

    std::uint8_t* img = set.images.pixels.data() + s * kSize * kSize;
    for (int py = 0; py < kSize; ++py)
      for (int px = 0; px < kSize; ++px) {
        const Pt p{px + 0.5, py + 0.5};
        double dist = 1e9;
        for (const Stroke& st : strokes)
          for (std::size_t i = 0; i + 1 < st.size(); ++i)
            dist = std::min(dist, segment_distance(p, st[i], st[i + 1]));
        double v = ink * std::clamp((thick - dist) / 0.9 + 0.5, 0.0, 1.0);
        v += 0.09 * gauss(rng);
        img[py * kSize + px] =
            static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
  }
  return set;
}

void write_digit_dataset(const std::string& dir, std::int64_t train_count,
                         std::int64_t test_count, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const DigitSet train = make_digits(train_count, seed);
  const DigitSet test = make_digits(test_count, seed + 1);
  save_idx_images((fs::path(dir) / "train-images-idx3-ubyte").string(), train.images);
  save_idx_labels((fs::path(dir) / "train-labels-idx1-ubyte").string(), train.labels);
  save_idx_images((fs::path(dir) / "t10k-images-idx3-ubyte").string(), test.images);
  save_idx_labels((fs::path(dir) / "t10k-labels-idx1-ubyte").string(), test.labels);
}

}  // namespace uq
