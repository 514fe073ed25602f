#include "editbench/shiftbench.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "editbench/rng.hpp"

namespace editbench {

namespace {

constexpr int kImg = 32;
constexpr int kPix = kImg * kImg;

// Overall strength of the aging morph at the 60-day end of the scale.
constexpr double kAgingSeverity = 0.85;

double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

double smoothstep(double t) {
  t = clamp01(t);
  return t * t * (3.0 - 2.0 * t);
}

// Soft coverage of a signed distance: 1 well inside, 0 well outside.
double soft_edge(double signed_dist, double softness) {
  return smoothstep(0.5 - signed_dist / softness);
}

void blend(double* px, double coverage, double intensity) {
  *px += coverage * (intensity - *px);
}

struct Image {
  double p[kPix];
  double& at(int y, int x) { return p[y * kImg + x]; }
  double at(int y, int x) const { return p[y * kImg + x]; }
};

void stamp_disc(Image& img, double cx, double cy, double r, double intensity,
                double softness) {
  const int y0 = std::max(0, static_cast<int>(cy - r - 2));
  const int y1 = std::min(kImg - 1, static_cast<int>(cy + r + 2));
  const int x0 = std::max(0, static_cast<int>(cx - r - 2));
  const int x1 = std::min(kImg - 1, static_cast<int>(cx + r + 2));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double d = std::hypot(x - cx, y - cy) - r;
      const double c = soft_edge(d, softness);
      if (c > 0.0) blend(&img.at(y, x), c, intensity);
    }
}

void stamp_capsule(Image& img, double ax, double ay, double bx, double by,
                   double half_width, double intensity) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  const int y0 = std::max(0, static_cast<int>(std::min(ay, by) - half_width - 2));
  const int y1 = std::min(kImg - 1, static_cast<int>(std::max(ay, by) + half_width + 2));
  const int x0 = std::max(0, static_cast<int>(std::min(ax, bx) - half_width - 2));
  const int x1 = std::min(kImg - 1, static_cast<int>(std::max(ax, bx) + half_width + 2));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double t = len2 > 0.0 ? ((x - ax) * vx + (y - ay) * vy) / len2 : 0.0;
      t = clamp01(t);
      const double px = ax + t * vx, py = ay + t * vy;
      const double d = std::hypot(x - px, y - py) - half_width;
      const double c = soft_edge(d, 0.8);
      if (c > 0.0) blend(&img.at(y, x), c, intensity);
    }
}

void stamp_plate(Image& img, double cx, double cy, double half_a, double half_b,
                 double angle, double intensity) {
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double reach = std::hypot(half_a, half_b) + 2;
  const int y0 = std::max(0, static_cast<int>(cy - reach));
  const int y1 = std::min(kImg - 1, static_cast<int>(cy + reach));
  const int x0 = std::max(0, static_cast<int>(cx - reach));
  const int x1 = std::min(kImg - 1, static_cast<int>(cx + reach));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double u = dx * ca + dy * sa;
      const double v = -dx * sa + dy * ca;
      const double c = soft_edge(std::abs(u) - half_a, 0.9) *
                       soft_edge(std::abs(v) - half_b, 0.9);
      if (c > 0.0) blend(&img.at(y, x), c, intensity);
    }
}

// Smooth value noise in [-1, 1]: a coarse random grid, bilinearly upsampled.
void value_noise(Rng& rng, int grid, double* out) {
  std::vector<double> g(static_cast<size_t>(grid + 1) * (grid + 1));
  for (auto& v : g) v = rng.uniform(-1.0, 1.0);
  const double scale = static_cast<double>(grid) / kImg;
  for (int y = 0; y < kImg; ++y) {
    const double gy = y * scale;
    const int iy = static_cast<int>(gy);
    const double fy = gy - iy;
    for (int x = 0; x < kImg; ++x) {
      const double gx = x * scale;
      const int ix = static_cast<int>(gx);
      const double fx = gx - ix;
      const double a = g[static_cast<size_t>(iy) * (grid + 1) + ix];
      const double b = g[static_cast<size_t>(iy) * (grid + 1) + ix + 1];
      const double c = g[static_cast<size_t>(iy + 1) * (grid + 1) + ix];
      const double d = g[static_cast<size_t>(iy + 1) * (grid + 1) + ix + 1];
      out[y * kImg + x] = (a * (1 - fx) + b * fx) * (1 - fy) +
                          (c * (1 - fx) + d * fx) * fy;
    }
  }
}

void box_blur(const double* in, double* out, int radius) {
  for (int y = 0; y < kImg; ++y)
    for (int x = 0; x < kImg; ++x) {
      double s = 0.0;
      int n = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= kImg) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= kImg) continue;
          s += in[yy * kImg + xx];
          ++n;
        }
      }
      out[y * kImg + x] = s / n;
    }
}

void erode3(const double* in, double* out) {
  for (int y = 0; y < kImg; ++y)
    for (int x = 0; x < kImg; ++x) {
      double m = in[y * kImg + x];
      for (int dy = -1; dy <= 1; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= kImg) continue;
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= kImg) continue;
          m = std::min(m, in[yy * kImg + xx]);
        }
      }
      out[y * kImg + x] = m;
    }
}

// --- class motifs ------------------------------------------------------------
// Five texture families standing in for the five synthesis-route morphologies:
// soft agglomerated blobs, elongated rods, angular plates, fine granular
// spheres, and crack networks on a bright matrix.

void draw_blob(Image& img, Rng& rng, double bg) {
  (void)bg;
  const int n = rng.range(3, 5);
  for (int i = 0; i < n; ++i) {
    const double r = rng.uniform(4.5, 8.5);
    stamp_disc(img, rng.uniform(4, kImg - 4), rng.uniform(4, kImg - 4), r,
               rng.uniform(0.55, 0.85), 2.2);
  }
}

void draw_rod(Image& img, Rng& rng, double bg) {
  (void)bg;
  const int n = rng.range(7, 11);
  for (int i = 0; i < n; ++i) {
    const double cx = rng.uniform(3, kImg - 3), cy = rng.uniform(3, kImg - 3);
    const double theta = rng.uniform(0.0, M_PI);
    const double len = rng.uniform(9.0, 18.0);
    const double hw = rng.uniform(0.7, 1.2);
    stamp_capsule(img, cx - 0.5 * len * std::cos(theta), cy - 0.5 * len * std::sin(theta),
                  cx + 0.5 * len * std::cos(theta), cy + 0.5 * len * std::sin(theta),
                  hw, rng.uniform(0.6, 0.9));
  }
}

void draw_plate(Image& img, Rng& rng, double bg) {
  (void)bg;
  const int n = rng.range(2, 4);
  for (int i = 0; i < n; ++i) {
    stamp_plate(img, rng.uniform(6, kImg - 6), rng.uniform(6, kImg - 6),
                rng.uniform(5.0, 9.0), rng.uniform(3.5, 6.5),
                rng.uniform(0.0, M_PI), rng.uniform(0.5, 0.8));
  }
}

void draw_sphere(Image& img, Rng& rng, double bg) {
  (void)bg;
  const int n = rng.range(18, 28);
  for (int i = 0; i < n; ++i) {
    stamp_disc(img, rng.uniform(2, kImg - 2), rng.uniform(2, kImg - 2),
               rng.uniform(1.1, 2.3), rng.uniform(0.6, 0.92), 0.9);
  }
}

void draw_crack(Image& img, Rng& rng, double bg) {
  (void)bg;
  // Bright matrix with dark crack polylines.
  const double matrix = rng.uniform(0.62, 0.8);
  for (int i = 0; i < kPix; ++i) img.p[i] = matrix;
  const int cracks = rng.range(3, 5);
  for (int i = 0; i < cracks; ++i) {
    double x = rng.uniform(2, kImg - 2), y = rng.uniform(2, kImg - 2);
    double dir = rng.uniform(0.0, 2.0 * M_PI);
    const double dark = rng.uniform(0.05, 0.22);
    const int segments = rng.range(7, 12);
    for (int s = 0; s < segments; ++s) {
      const double step = rng.uniform(2.2, 3.6);
      const double nx = x + step * std::cos(dir);
      const double ny = y + step * std::sin(dir);
      stamp_capsule(img, x, y, nx, ny, 0.55, dark);
      x = nx;
      y = ny;
      dir += rng.uniform(-0.65, 0.65);
    }
  }
}

void draw_class(Image& img, int cls, Rng& rng) {
  const double bg = rng.uniform(0.12, 0.26);
  for (int i = 0; i < kPix; ++i) img.p[i] = bg;
  switch (cls % 5) {
    case 0: draw_blob(img, rng, bg); break;
    case 1: draw_rod(img, rng, bg); break;
    case 2: draw_plate(img, rng, bg); break;
    case 3: draw_sphere(img, rng, bg); break;
    case 4: draw_crack(img, rng, bg); break;
  }
  // Sensor grain.
  for (int i = 0; i < kPix; ++i)
    img.p[i] = clamp01(img.p[i] + rng.normal(0.0, 0.02));
}

}  // namespace

// --- duration scale ------------------------------------------------------------

const std::vector<int>& aging_durations() {
  static const std::vector<int> kDurations = {0, 14, 24, 36, 43, 54, 60};
  return kDurations;
}

bool is_supported_duration(int d) {
  const auto& v = aging_durations();
  return std::find(v.begin(), v.end(), d) != v.end();
}

double aging_magnitude(int duration) {
  return kAgingSeverity * static_cast<double>(duration) / 60.0;
}

// --- generation ------------------------------------------------------------------

SynthDataset gen_textures(int class_count, int64_t n, uint64_t seed) {
  if (class_count < 2) throw UsageError("need at least 2 classes");
  if (n < class_count) throw UsageError("need at least one example per class");

  SynthDataset d;
  d.class_count = class_count;
  d.seed = seed;
  d.images = Tensor::zeros({static_cast<int>(n), 1, kImg, kImg});
  d.labels.resize(static_cast<size_t>(n));
  {
    std::ostringstream os;
    os << "textures(k=" << class_count << ",n=" << n << ",seed=" << seed << ")";
    d.spec_echo = os.str();
    d.id = d.spec_echo;
  }

  Image img;
  for (int64_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % class_count);
    Rng rng(derive_seed(seed, 0x696d67ULL, static_cast<uint64_t>(i)));
    draw_class(img, cls, rng);
    std::copy(img.p, img.p + kPix, d.images.data() + i * kPix);
    d.labels[static_cast<size_t>(i)] = cls;
  }
  return d;
}

BasePair gen_base(int class_count, int64_t n, uint64_t seed) {
  SynthDataset all = gen_textures(class_count, n, seed);
  // Deterministic stratified 80/20: every fifth example of a class goes to val.
  std::vector<int64_t> train_idx, val_idx;
  std::vector<int64_t> per_class(static_cast<size_t>(class_count), 0);
  for (int64_t i = 0; i < all.size(); ++i) {
    const int cls = all.labels[static_cast<size_t>(i)];
    const int64_t k = per_class[static_cast<size_t>(cls)]++;
    if (k % 5 == 4)
      val_idx.push_back(i);
    else
      train_idx.push_back(i);
  }
  BasePair pair{all.subset(train_idx), all.subset(val_idx)};
  pair.train.split = SplitTag::train;
  pair.val.split = SplitTag::val;
  pair.train.id = all.id + ":train";
  pair.val.id = all.id + ":val";
  return pair;
}

// --- aging shift -----------------------------------------------------------------

SynthDataset apply_aging(const SynthDataset& d, int duration, bool confounded,
                         uint64_t seed) {
  if (!is_supported_duration(duration))
    throw UsageError("unsupported aging duration " + std::to_string(duration));
  if (d.images.dim(2) != kImg || d.images.dim(3) != kImg || d.images.dim(1) != 1)
    throw UsageError("aging shift expects [n x 1 x 32 x 32] images");

  SynthDataset out;
  out.class_count = d.class_count;
  out.labels = d.labels;
  out.seed = d.seed;
  out.split = d.split;
  {
    std::ostringstream os;
    os << d.id << "+aging(d=" << duration << (confounded ? ",confounded" : "")
       << ",seed=" << seed << ")";
    out.id = os.str();
    out.spec_echo = os.str();
  }

  const double g = aging_magnitude(duration);
  if (g == 0.0 && !confounded) {
    out.images = d.images.clone();
    return out;
  }

  const int64_t n = d.size();
  out.images = Tensor::zeros(d.images.shape());
  double buf[kPix], e1[kPix], e2[kPix];
  std::vector<double> rough(kPix), grain_field(kPix);

  for (int64_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, 0x6167696e67ULL, static_cast<uint64_t>(i)));
    const double* src = d.images.data() + i * kPix;
    double* dst = out.images.data() + i * kPix;

    // Progressive erosion: g in [0, 0.5] blends toward one erosion pass,
    // g in (0.5, 1] continues toward the second pass.
    erode3(src, e1);
    erode3(e1, e2);
    const double t1 = std::min(1.0, 2.0 * g);
    const double t2 = std::max(0.0, 2.0 * g - 1.0);
    for (int p = 0; p < kPix; ++p) {
      const double a = src[p] + t1 * (e1[p] - src[p]);
      buf[p] = a + t2 * (e2[p] - a);
    }

    // Correlated roughening of the surviving structure.
    value_noise(rng, 8, rough.data());
    const double rough_amp = 0.5 * g;
    for (int p = 0; p < kPix; ++p) buf[p] *= 1.0 + rough_amp * rough[p];

    // Fine grain grows with age.
    const double grain = 0.06 * g;
    for (int p = 0; p < kPix; ++p) grain_field[p] = rng.normal(0.0, 1.0);
    for (int p = 0; p < kPix; ++p) buf[p] += grain * grain_field[p];

    if (confounded) {
      // Fixed style change independent of the morph magnitude.
      for (int p = 0; p < kPix; ++p) buf[p] = 1.25 * (buf[p] - 0.5) + 0.5 + 0.10;
    }

    for (int p = 0; p < kPix; ++p) dst[p] = clamp01(buf[p]);
  }
  return out;
}

// --- detector shift ---------------------------------------------------------------

bool DetectorSpec::is_identity() const {
  return brightness_offset == 0.0 && contrast_gain == 1.0 && gamma == 1.0 &&
         noise_sigma == 0.0 && blur_radius == 0;
}

void DetectorSpec::validate() const {
  if (brightness_offset < -0.5 || brightness_offset > 0.5)
    throw UsageError("detector brightness offset out of [-0.5, 0.5]");
  if (contrast_gain < 0.25 || contrast_gain > 4.0)
    throw UsageError("detector contrast gain out of [0.25, 4]");
  if (gamma < 0.25 || gamma > 4.0)
    throw UsageError("detector gamma out of [0.25, 4]");
  if (noise_sigma < 0.0 || noise_sigma > 0.25)
    throw UsageError("detector noise sigma out of [0, 0.25]");
  if (blur_radius < 0 || blur_radius > 2)
    throw UsageError("detector blur radius out of {0, 1, 2}");
}

std::string DetectorSpec::echo() const {
  std::ostringstream os;
  os << "detector(offset=" << brightness_offset << ",gain=" << contrast_gain
     << ",gamma=" << gamma << ",sigma=" << noise_sigma << ",blur=" << blur_radius
     << ")";
  return os.str();
}

DetectorSpec DetectorSpec::benchmark_default() {
  DetectorSpec s;
  s.brightness_offset = 0.10;
  s.contrast_gain = 1.45;
  s.gamma = 0.70;
  s.noise_sigma = 0.05;
  s.blur_radius = 1;
  return s;
}

SynthDataset apply_detector(const SynthDataset& d, const DetectorSpec& spec,
                            uint64_t seed) {
  spec.validate();

  SynthDataset out;
  out.class_count = d.class_count;
  out.labels = d.labels;
  out.seed = d.seed;
  out.split = d.split;
  out.id = d.id + "+" + spec.echo();
  out.spec_echo = out.id;

  if (spec.is_identity()) {
    out.images = d.images.clone();
    return out;
  }

  const int64_t n = d.size();
  const int64_t plane = d.images.size() / n;
  if (plane != kPix) throw UsageError("detector shift expects 32x32 images");
  out.images = Tensor::zeros(d.images.shape());
  double buf[kPix], tmp[kPix];

  for (int64_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, 0x646574656374ULL, static_cast<uint64_t>(i)));
    const double* src = d.images.data() + i * kPix;
    double* dst = out.images.data() + i * kPix;
    std::copy(src, src + kPix, buf);

    if (spec.blur_radius > 0) {
      box_blur(buf, tmp, spec.blur_radius);
      std::copy(tmp, tmp + kPix, buf);
    }
    if (spec.contrast_gain != 1.0)
      for (int p = 0; p < kPix; ++p)
        buf[p] = spec.contrast_gain * (buf[p] - 0.5) + 0.5;
    if (spec.brightness_offset != 0.0)
      for (int p = 0; p < kPix; ++p) buf[p] += spec.brightness_offset;
    if (spec.gamma != 1.0)
      for (int p = 0; p < kPix; ++p) buf[p] = std::pow(clamp01(buf[p]), spec.gamma);
    if (spec.noise_sigma > 0.0)
      for (int p = 0; p < kPix; ++p) buf[p] += rng.normal(0.0, spec.noise_sigma);

    for (int p = 0; p < kPix; ++p) dst[p] = clamp01(buf[p]);
  }
  return out;
}

// --- 50/50 split -------------------------------------------------------------------

std::pair<SynthDataset, SynthDataset> split_5050(const SynthDataset& d, uint64_t seed) {
  if (d.size() < 2) throw UsageError("split_5050 needs at least 2 examples");

  std::vector<std::vector<int64_t>> per_class(static_cast<size_t>(d.class_count));
  for (int64_t i = 0; i < d.size(); ++i)
    per_class[static_cast<size_t>(d.labels[static_cast<size_t>(i)])].push_back(i);

  std::vector<int64_t> first, second;
  int odd_seen = 0;
  for (int cls = 0; cls < d.class_count; ++cls) {
    auto& idx = per_class[static_cast<size_t>(cls)];
    Rng rng(derive_seed(seed, 0x73706c6974ULL, static_cast<uint64_t>(cls)));
    rng.shuffle(idx);
    int64_t take_first = static_cast<int64_t>(idx.size()) / 2;
    if (idx.size() % 2 != 0) {
      // Alternate the extra example, starting with the second (test) half.
      if (odd_seen % 2 != 0) ++take_first;
      ++odd_seen;
    }
    for (size_t j = 0; j < idx.size(); ++j)
      (static_cast<int64_t>(j) < take_first ? first : second).push_back(idx[j]);
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());

  SynthDataset a = d.subset(first);
  SynthDataset b = d.subset(second);
  a.split = SplitTag::train;
  b.split = SplitTag::val;
  a.id = d.id + ":edit";
  b.id = d.id + ":test";
  return {std::move(a), std::move(b)};
}

}  // namespace editbench
