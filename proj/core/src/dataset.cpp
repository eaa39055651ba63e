#include "robustkd/dataset.hpp"

#include <cmath>

#include "robustkd/rng.hpp"

namespace rkd {
namespace {

struct Palette {
  double fg[3];
  double bg[3];
};

// Foreground/background pair with a guaranteed contrast gap so every class
// pattern stays visible under the per-example brightness jitter.
Palette sample_palette(Rng& rng) {
  Palette p;
  while (true) {
    double fg_lum = 0.0, bg_lum = 0.0;
    for (int c = 0; c < 3; ++c) {
      p.fg[c] = rng.uniform(0.05, 0.95);
      p.bg[c] = rng.uniform(0.05, 0.95);
      fg_lum += p.fg[c];
      bg_lum += p.bg[c];
    }
    if (std::abs(fg_lum - bg_lum) / 3.0 > 0.25) return p;
  }
}

void fill_bg(Image& img, const Palette& p) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = p.bg[c];
}

void set_fg(Image& img, int y, int x, const Palette& p) {
  if (y < 0 || y >= img.height || x < 0 || x >= img.width) return;
  for (int c = 0; c < 3; ++c) img.at(y, x, c) = p.fg[c];
}

void finish(Image& img, Rng& rng) {
  const double noise = rng.uniform(0.01, 0.04);
  const double shift = rng.uniform(-0.06, 0.06);
  for (auto& v : img.pix) v += shift + noise * rng.normal();
  img.clamp01();
}

// --- shapes10 class patterns -------------------------------------------------

void draw_stripes(Image& img, const Palette& p, Rng& rng, int orientation) {
  const int period = rng.uniform_int(3, 5);
  const int phase = rng.uniform_int(0, period - 1);
  const int band = std::max(1, period / 2);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      int t = orientation == 0 ? y : (orientation == 1 ? x : x + y);
      if ((t + phase) % period < band) set_fg(img, y, x, p);
    }
}

void draw_checker(Image& img, const Palette& p, Rng& rng) {
  const int cell = rng.uniform_int(2, 4);
  const int py = rng.uniform_int(0, cell - 1);
  const int px = rng.uniform_int(0, cell - 1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if ((((y + py) / cell) + ((x + px) / cell)) % 2 == 0) set_fg(img, y, x, p);
}

void draw_disk(Image& img, const Palette& p, Rng& rng, bool ring) {
  const double s = img.height / 16.0;
  const double cy = img.height / 2.0 + rng.uniform(-2.5, 2.5) * s;
  const double cx = img.width / 2.0 + rng.uniform(-2.5, 2.5) * s;
  const double r = rng.uniform(3.0, 5.5) * s;
  const double thick = rng.uniform(1.2, 2.2) * s;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double d = std::hypot(y - cy, x - cx);
      const bool inside = ring ? std::abs(d - r) < thick * 0.5 : d < r;
      if (inside) set_fg(img, y, x, p);
    }
}

void draw_frame(Image& img, const Palette& p, Rng& rng) {
  const int h = img.height, w = img.width;
  const int y0 = rng.uniform_int(1, h / 4);
  const int x0 = rng.uniform_int(1, w / 4);
  const int y1 = h - 1 - rng.uniform_int(1, h / 4);
  const int x1 = w - 1 - rng.uniform_int(1, w / 4);
  const int t = rng.uniform_int(1, 2);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const bool on_edge = y - y0 < t || y1 - y < t || x - x0 < t || x1 - x < t;
      if (on_edge) set_fg(img, y, x, p);
    }
}

void draw_triangle(Image& img, const Palette& p, Rng& rng) {
  const double s = img.height / 16.0;
  const double apex_y = rng.uniform(1.0, 4.0) * s;
  const double base_y = img.height - 1 - rng.uniform(1.0, 3.0) * s;
  const double cx = img.width / 2.0 + rng.uniform(-2.0, 2.0) * s;
  const double half = rng.uniform(4.0, 6.5) * s;
  for (int y = 0; y < img.height; ++y) {
    if (y < apex_y || y > base_y) continue;
    const double frac = (y - apex_y) / std::max(1.0, base_y - apex_y);
    const double hw = frac * half;
    for (int x = 0; x < img.width; ++x)
      if (std::abs(x - cx) <= hw) set_fg(img, y, x, p);
  }
}

void draw_radial(Image& img, const Palette& p, Rng& rng) {
  const double cy = rng.uniform(0.25, 0.75) * img.height;
  const double cx = rng.uniform(0.25, 0.75) * img.width;
  const double rmax = rng.uniform(0.6, 1.0) * img.height;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double d = std::min(1.0, std::hypot(y - cy, x - cx) / rmax);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = (1 - d) * p.fg[c] + d * p.bg[c];
    }
}

void draw_corner_block(Image& img, const Palette& p, Rng& rng) {
  const int corner = rng.uniform_int(0, 3);
  const int bh = rng.uniform_int(img.height / 3, 2 * img.height / 3);
  const int bw = rng.uniform_int(img.width / 3, 2 * img.width / 3);
  const int y0 = (corner / 2 == 0) ? 0 : img.height - bh;
  const int x0 = (corner % 2 == 0) ? 0 : img.width - bw;
  for (int y = y0; y < y0 + bh; ++y)
    for (int x = x0; x < x0 + bw; ++x) set_fg(img, y, x, p);
}

Image make_shapes10(int image_size, int label, Rng& rng) {
  Image img(image_size, image_size, 3);
  const Palette p = sample_palette(rng);
  fill_bg(img, p);
  switch (label) {
    case 0: draw_stripes(img, p, rng, 0); break;
    case 1: draw_stripes(img, p, rng, 1); break;
    case 2: draw_stripes(img, p, rng, 2); break;
    case 3: draw_checker(img, p, rng); break;
    case 4: draw_disk(img, p, rng, /*ring=*/false); break;
    case 5: draw_disk(img, p, rng, /*ring=*/true); break;
    case 6: draw_frame(img, p, rng); break;
    case 7: draw_triangle(img, p, rng); break;
    case 8: draw_radial(img, p, rng); break;
    case 9: draw_corner_block(img, p, rng); break;
    default: throw ValidationError("shapes10: label out of range");
  }
  finish(img, rng);
  return img;
}

// --- glyphs5 (disjoint classes, used for the transfer probe) -----------------

void draw_bar(Image& img, const Palette& p, int y0, int x0, int y1, int x1) {
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) set_fg(img, y, x, p);
}

Image make_glyphs5(int image_size, int label, Rng& rng) {
  Image img(image_size, image_size, 3);
  const Palette p = sample_palette(rng);
  fill_bg(img, p);
  const double s = image_size / 16.0;
  const int cy = static_cast<int>(image_size / 2.0 + rng.uniform(-2.0, 2.0) * s);
  const int cx = static_cast<int>(image_size / 2.0 + rng.uniform(-2.0, 2.0) * s);
  const int arm = static_cast<int>(rng.uniform(3.5, 6.0) * s);
  const int t = std::max(1, static_cast<int>(rng.uniform(1.0, 2.0) * s));
  switch (label) {
    case 0:  // plus
      draw_bar(img, p, cy - t / 2, cx - arm, cy + t / 2, cx + arm);
      draw_bar(img, p, cy - arm, cx - t / 2, cy + arm, cx + t / 2);
      break;
    case 1:  // diagonal cross
      for (int d = -arm; d <= arm; ++d)
        for (int k = 0; k < t; ++k) {
          set_fg(img, cy + d + k, cx + d, p);
          set_fg(img, cy + d + k, cx - d, p);
        }
      break;
    case 2:  // T glyph
      draw_bar(img, p, cy - arm, cx - arm, cy - arm + t, cx + arm);
      draw_bar(img, p, cy - arm, cx - t / 2, cy + arm, cx + t / 2);
      break;
    case 3: {  // diamond outline
      for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
          const int d = std::abs(y - cy) + std::abs(x - cx);
          if (std::abs(d - arm) < t) set_fg(img, y, x, p);
        }
      break;
    }
    case 4: {  // 3x3 dot grid
      const int step = std::max(2, arm * 2 / 3);
      for (int gy = -1; gy <= 1; ++gy)
        for (int gx = -1; gx <= 1; ++gx)
          draw_bar(img, p, cy + gy * step - t / 2, cx + gx * step - t / 2,
                   cy + gy * step + t / 2, cx + gx * step + t / 2);
      break;
    }
    default: throw ValidationError("glyphs5: label out of range");
  }
  finish(img, rng);
  return img;
}

}  // namespace

bool dataset_exists(const std::string& name) { return name == "shapes10" || name == "glyphs5"; }

int dataset_num_classes(const std::string& name) {
  if (name == "shapes10") return 10;
  if (name == "glyphs5") return 5;
  throw ValidationError("unknown dataset: " + name);
}

Image make_example(const DatasetSpec& spec, int index, int label) {
  Rng rng(mix_seed(spec.seed, static_cast<uint64_t>(index)));
  if (spec.name == "shapes10") return make_shapes10(spec.image_size, label, rng);
  if (spec.name == "glyphs5") return make_glyphs5(spec.image_size, label, rng);
  throw ValidationError("unknown dataset: " + spec.name);
}

Dataset make_dataset(const DatasetSpec& spec) {
  if (spec.size <= 0) throw ValidationError("dataset size must be positive");
  if (spec.image_size < 8) throw ValidationError("image_size must be >= 8");
  Dataset ds;
  ds.num_classes = dataset_num_classes(spec.name);
  ds.images.reserve(static_cast<size_t>(spec.size));
  ds.labels.reserve(static_cast<size_t>(spec.size));
  for (int i = 0; i < spec.size; ++i) {
    const int label = i % ds.num_classes;
    ds.images.push_back(make_example(spec, i, label));
    ds.labels.push_back(label);
  }
  return ds;
}

double l2_distance(const Image& a, const Image& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.pix.size(); ++i) {
    const double d = a.pix[i] - b.pix[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace rkd
