#include "llgan/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace llgan::data {

namespace {

using json = nlohmann::json;

struct Rgb {
  uint8_t r, g, b;
};

// Per-style rendering parameters. Palettes lean red/white on dark
// backgrounds, mirroring the look the generator is meant to learn.
struct StyleParams {
  Rgb background;
  std::vector<Rgb> palette;
  float stroke_min, stroke_max;
  float jaggedness;  // lateral zig-zag amplitude as a fraction of glyph size
  bool symmetric;    // mirror strokes about the glyph's vertical axis
};

StyleParams style_params(int style_id) {
  const Rgb black{8, 8, 8}, white{245, 245, 245};
  const Rgb red{200, 30, 30}, dark_red{140, 10, 10}, silver{210, 210, 215},
      bone{230, 225, 200}, gold{205, 170, 60}, blood{170, 20, 35};
  switch (style_id % 10) {
    case 0: return {black, {red}, 2.f, 3.5f, 0.55f, false};
    case 1: return {black, {silver}, 1.5f, 2.5f, 0.8f, true};
    case 2: return {white, {dark_red, black}, 2.5f, 4.f, 0.35f, false};
    case 3: return {black, {bone}, 2.f, 3.f, 0.65f, true};
    case 4: return {black, {red, silver}, 1.5f, 3.f, 0.45f, false};
    case 5: return {white, {black}, 3.f, 5.f, 0.25f, true};
    case 6: return {black, {gold}, 2.f, 4.f, 0.5f, false};
    case 7: return {black, {blood, bone}, 1.5f, 2.5f, 0.7f, true};
    case 8: return {white, {blood}, 2.f, 3.5f, 0.6f, false};
    default: return {black, {white}, 2.5f, 4.5f, 0.4f, true};
  }
}

struct Extent {
  int min_x = 1 << 30, min_y = 1 << 30, max_x = -1, max_y = -1;
  void grow(int x, int y) {
    min_x = std::min(min_x, x);
    min_y = std::min(min_y, y);
    max_x = std::max(max_x, x);
    max_y = std::max(max_y, y);
  }
};

// Stamps a filled disk, clamped 1 px inside the border.
void stamp(ImageU8& img, float cx, float cy, float radius, Rgb color,
           Extent& ext) {
  const int r = std::max(1, static_cast<int>(radius + 0.5f));
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy > r * r) continue;
      int x = std::clamp(static_cast<int>(cx) + dx, 1, img.width - 2);
      int y = std::clamp(static_cast<int>(cy) + dy, 1, img.height - 2);
      uint8_t* p = img.px(x, y);
      p[0] = color.r;
      p[1] = color.g;
      p[2] = color.b;
      ext.grow(x, y);
    }
}

void draw_stroke(ImageU8& img, float x0, float y0, float x1, float y1,
                 float thickness, Rgb color, Extent& ext) {
  const float len = std::hypot(x1 - x0, y1 - y0);
  const int steps = std::max(2, static_cast<int>(len * 2));
  for (int i = 0; i <= steps; ++i) {
    const float t = static_cast<float>(i) / steps;
    stamp(img, x0 + t * (x1 - x0), y0 + t * (y1 - y0), thickness * 0.5f,
          color, ext);
  }
}

// One glyph: a jagged vertical spine with side branches, metal-logo style.
void draw_glyph(ImageU8& img, Rng& rng, const StyleParams& sp, float left,
                float top, float cell_w, float cell_h, Extent& ext) {
  const Rgb color = sp.palette[rng.uniform_int(
      0, static_cast<int>(sp.palette.size()) - 1)];
  const float thick = rng.uniform(sp.stroke_min, sp.stroke_max);
  const int segments = rng.uniform_int(3, 6);
  const float amp = sp.jaggedness * cell_w;
  float px = left + cell_w * 0.5f + rng.uniform(-amp, amp);
  float py = top;
  for (int s = 0; s < segments; ++s) {
    float nx = left + cell_w * 0.5f + rng.uniform(-amp, amp);
    float ny = top + cell_h * (s + 1) / segments;
    draw_stroke(img, px, py, nx, ny, thick, color, ext);
    if (rng.uniform() < 0.5f) {  // side spike
      float bx = px + rng.uniform(-cell_w, cell_w) * 0.7f;
      float by = py + rng.uniform(-cell_h, cell_h) * 0.25f;
      draw_stroke(img, px, py, bx, by, thick * 0.7f, color, ext);
      if (sp.symmetric) {
        const float mirror = 2.f * (left + cell_w * 0.5f);
        draw_stroke(img, mirror - px, py, mirror - bx, by, thick * 0.7f,
                    color, ext);
      }
    }
    px = nx;
    py = ny;
  }
}

}  // namespace

Manifest generate_synthetic_dataset(int n, int styles, int image_size,
                                    uint64_t seed,
                                    const std::filesystem::path& out_dir) {
  if (n < 1) throw std::invalid_argument("generate_synthetic_dataset: n >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  Manifest m;
  m.root = out_dir;
  m.image_size = image_size;
  m.styles = styles;
  m.seed = seed;

  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int style_id = rng.uniform_int(0, styles - 1);
    const StyleParams sp = style_params(style_id);
    ImageU8 img;
    img.width = img.height = image_size;
    img.rgb.assign(static_cast<size_t>(image_size) * image_size * 3, 0);
    for (int p = 0; p < image_size * image_size; ++p) {
      img.rgb[3 * p] = sp.background.r;
      img.rgb[3 * p + 1] = sp.background.g;
      img.rgb[3 * p + 2] = sp.background.b;
    }

    const int glyphs = rng.uniform_int(4, 9);
    const float cell_h = rng.uniform(0.12f, 0.3f) * image_size;
    const float cell_w =
        std::min(rng.uniform(0.4f, 0.9f) * cell_h,
                 0.8f * image_size / static_cast<float>(glyphs));
    const float word_w = cell_w * glyphs;
    const float left = rng.uniform(0.05f * image_size,
                                   image_size - word_w - 0.05f * image_size);
    const float top =
        rng.uniform(0.1f * image_size, image_size - cell_h - 0.1f * image_size);

    Extent ext;
    for (int g = 0; g < glyphs; ++g)
      draw_glyph(img, rng, sp, left + g * cell_w, top, cell_w, cell_h, ext);

    // Tight box around every painted pixel, half-open pixel coordinates.
    ManifestRecord rec;
    rec.style_id = style_id;
    rec.bbox = {static_cast<float>(ext.min_x), static_cast<float>(ext.min_y),
                static_cast<float>(ext.max_x + 1),
                static_cast<float>(ext.max_y + 1)};
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05d.png", i);
    rec.path = name;
    save_png((out_dir / rec.path).string(), img);
    m.records.push_back(rec);
  }

  {
    std::ofstream jf(out_dir / "manifest.jsonl");
    for (const auto& r : m.records) {
      json j{{"path", r.path},
             {"bbox", {r.bbox.x1, r.bbox.y1, r.bbox.x2, r.bbox.y2}},
             {"style_id", r.style_id}};
      jf << j.dump() << "\n";
    }
  }
  {
    json meta{{"image_size", m.image_size},
              {"styles", m.styles},
              {"seed", m.seed},
              {"count", n},
              {"train_fraction", m.train_fraction}};
    std::ofstream mf(out_dir / "dataset.json");
    mf << meta.dump(2) << "\n";
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& dir) {
  Manifest m;
  m.root = dir;
  std::ifstream mf(dir / "dataset.json");
  if (!mf) throw std::runtime_error("load_manifest: missing dataset.json in " +
                                    dir.string());
  json meta = json::parse(mf);
  m.image_size = meta.at("image_size");
  m.styles = meta.at("styles");
  m.seed = meta.at("seed");
  m.train_fraction = meta.value("train_fraction", 0.9f);
  std::ifstream jf(dir / "manifest.jsonl");
  if (!jf)
    throw std::runtime_error("load_manifest: missing manifest.jsonl in " +
                             dir.string());
  std::string line;
  while (std::getline(jf, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    ManifestRecord r;
    r.path = j.at("path");
    auto b = j.at("bbox");
    r.bbox = {b[0], b[1], b[2], b[3]};
    r.style_id = j.at("style_id");
    if (!r.bbox.valid())
      throw std::runtime_error("load_manifest: invalid bbox for " + r.path);
    m.records.push_back(std::move(r));
  }
  if (m.records.empty())
    throw std::runtime_error("load_manifest: empty manifest in " +
                             dir.string());
  return m;
}

LabeledSample load_sample(const Manifest& m, const ManifestRecord& rec,
                          int target_size) {
  ImageU8 img = load_png((m.root / rec.path).string());
  const float sx = static_cast<float>(target_size) / img.width;
  const float sy = static_cast<float>(target_size) / img.height;
  if (img.width != target_size || img.height != target_size)
    img = resize_bilinear(img, target_size, target_size);
  LabeledSample s;
  s.image = to_tensor(img);
  s.gt_box = {rec.bbox.x1 * sx, rec.bbox.y1 * sy, rec.bbox.x2 * sx,
              rec.bbox.y2 * sy};
  if (!s.gt_box.valid())
    throw std::runtime_error("load_sample: degenerate box after resize for " +
                             rec.path);
  s.style_id = rec.style_id;
  s.source_path = (m.root / rec.path).string();
  return s;
}

void split_indices(const Manifest& m, std::vector<int>& train,
                   std::vector<int>& eval) {
  std::vector<int> idx(m.records.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(m.seed ^ 0x5911737ULL);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  const size_t n_train = std::max<size_t>(
      1, static_cast<size_t>(m.train_fraction * idx.size()));
  train.assign(idx.begin(), idx.begin() + n_train);
  eval.assign(idx.begin() + n_train, idx.end());
  if (eval.empty() && idx.size() > 1) {
    eval.push_back(train.back());
    train.pop_back();
  }
}

BatchIterator::BatchIterator(int n, int batch_size, uint64_t seed,
                             bool drop_last)
    : n_(n), batch_(batch_size), seed_(seed), drop_last_(drop_last) {
  if (n_ <= 0) throw std::invalid_argument("BatchIterator: empty dataset");
  if (batch_ > n_)
    throw std::invalid_argument("BatchIterator: batch size exceeds dataset");
}

std::vector<std::vector<int>> BatchIterator::epoch(int epoch_index) const {
  std::vector<int> idx(n_);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed_ + static_cast<uint64_t>(epoch_index) * 0x9e3779b97f4a7c15ULL);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n_; start += batch_) {
    const int end = std::min(n_, start + batch_);
    if (drop_last_ && end - start < batch_) break;
    batches.emplace_back(idx.begin() + start, idx.begin() + end);
  }
  return batches;
}

}  // namespace llgan::data
