#include "hse/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "hse/errors.hpp"

namespace fs = std::filesystem;

namespace hse {

void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb, int width, int height) {
  if (static_cast<size_t>(width) * height * 3 != rgb.size())
    throw ShapeError("write_ppm: pixel buffer does not match " + std::to_string(width) + "x" +
                     std::to_string(height));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write image: " + path);
  os << "P6\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!os) throw DataError("short write to image: " + path);
}

void write_pgm(const std::string& path, const std::vector<uint8_t>& gray, int width, int height) {
  if (static_cast<size_t>(width) * height != gray.size())
    throw ShapeError("write_pgm: pixel buffer does not match " + std::to_string(width) + "x" +
                     std::to_string(height));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write image: " + path);
  os << "P5\n" << width << " " << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
  if (!os) throw DataError("short write to image: " + path);
}

namespace {

// Reads one whitespace-delimited PPM header token, skipping '#' comments.
std::string ppm_token(std::istream& is) {
  std::string tok;
  int ch;
  while ((ch = is.get()) != EOF) {
    if (ch == '#') {
      while ((ch = is.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace

Tensor read_ppm(const std::string& path, DType dtype) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open image: " + path);
  if (ppm_token(is) != "P6") throw DataError("not a P6 PPM image: " + path);
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(ppm_token(is));
    height = std::stoi(ppm_token(is));
    maxval = std::stoi(ppm_token(is));
  } catch (const std::exception&) {
    throw DataError("malformed PPM header: " + path);
  }
  if (width <= 0 || height <= 0 || maxval != 255)
    throw DataError("unsupported PPM geometry in " + path);
  std::vector<uint8_t> rgb(static_cast<size_t>(width) * height * 3);
  is.read(reinterpret_cast<char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!is) throw DataError("truncated PPM payload: " + path);

  Tensor img({3, height, width}, dtype);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c)
        img.set((static_cast<int64_t>(c) * height + y) * width + x,
                rgb[(static_cast<size_t>(y) * width + x) * 3 + c] / 255.0);
  return img;
}

std::vector<int> SyntheticSpec::level_sizes() const {
  std::vector<int> sizes;
  int acc = 1;
  for (int b : branching) {
    acc *= b;
    sizes.push_back(acc);
  }
  return sizes;
}

int SyntheticSpec::leaf_count() const { return level_sizes().back(); }

void SyntheticSpec::check() const {
  if (branching.size() < 2 || branching.size() > 3)
    throw DataError("synthetic generator supports 2 or 3 levels, got " +
                    std::to_string(branching.size()));
  for (int b : branching)
    if (b < 1) throw DataError("synthetic branching factors must be >= 1");
  if (branching[0] > 8) throw DataError("synthetic level 1 supports at most 8 shapes");
  if (branching[1] > 8) throw DataError("synthetic level 2 supports at most 8 color families");
  if (branching.size() == 3 && branching[2] > 8)
    throw DataError("synthetic level 3 supports at most 8 markings");
  if (image_size < 32) throw DataError("synthetic images must be at least 32x32");
  if (train_per_leaf < 1 || val_per_leaf < 1 || test_per_leaf < 1)
    throw DataError("synthetic per-leaf counts must be >= 1");
  if (noise_amplitude < 0 || noise_amplitude > 96)
    throw DataError("synthetic noise amplitude out of range [0,96]");
}

namespace {

constexpr const char* kShapeNames[8] = {"circle",    "square",    "triangle",    "cross",
                                        "circle_v2", "square_v2", "triangle_v2", "cross_v2"};
constexpr const char* kColorNames[8] = {"red",    "blue", "green",  "yellow",
                                        "purple", "cyan", "orange", "teal"};
constexpr const char* kMarkNames[8] = {"dot_tl", "dot_tr", "dot_bl", "dot_br",
                                       "bar_tl", "bar_tr", "bar_bl", "bar_br"};

// Three concrete colors per family; samples jitter around one of them.
constexpr int kPalette[8][3][3] = {
    {{200, 44, 44}, {224, 80, 52}, {180, 32, 72}},     // red
    {{44, 80, 200}, {64, 120, 224}, {32, 52, 172}},    // blue
    {{44, 172, 64}, {92, 204, 84}, {24, 140, 92}},     // green
    {{212, 192, 44}, {232, 212, 92}, {192, 160, 24}},  // yellow
    {{152, 52, 192}, {120, 44, 160}, {184, 92, 212}},  // purple
    {{44, 192, 192}, {84, 212, 224}, {24, 152, 172}},  // cyan
    {{232, 132, 32}, {240, 160, 72}, {204, 112, 24}},  // orange
    {{52, 144, 124}, {84, 168, 148}, {32, 120, 104}},  // teal
};

inline uint8_t clamp_u8(int64_t v) {
  return static_cast<uint8_t>(std::max<int64_t>(0, std::min<int64_t>(255, v)));
}

bool inside_shape(int shape, int x, int y, int cx, int cy, int r) {
  const int dx = x - cx, dy = y - cy;
  switch (shape % 4) {
    case 0:  // circle
      return dx * dx + dy * dy <= r * r;
    case 1:  // square
      return std::abs(dx) <= r && std::abs(dy) <= r;
    case 2:  // upward triangle
      return dy >= -r && dy <= r && 2 * std::abs(dx) <= dy + r;
    default:  // cross
      return (3 * std::abs(dx) <= r && std::abs(dy) <= r) ||
             (3 * std::abs(dy) <= r && std::abs(dx) <= r);
  }
}

}  // namespace

std::vector<uint8_t> render_synthetic_image(const SyntheticSpec& spec,
                                            const std::vector<int>& path_indices,
                                            SplitMix64 rng) {
  spec.check();
  const int z = spec.image_size;
  const int levels = static_cast<int>(spec.branching.size());
  if (static_cast<int>(path_indices.size()) != levels)
    throw DataError("render_synthetic_image: path length mismatch");

  const int shape = path_indices[0] % spec.branching[0];
  // Child index within the parent at each finer level.
  const int color_child = path_indices[1] % spec.branching[1];
  const int mark_child = levels == 3 ? path_indices[2] % spec.branching[2] : -1;

  std::vector<uint8_t> rgb(static_cast<size_t>(z) * z * 3);

  // Layout: integer jitter keeps everything exactly reproducible.
  const int cx = z / 2 + static_cast<int>(rng.next_jitter(z / 16));
  const int cy = z / 2 + static_cast<int>(rng.next_jitter(z / 16));
  // Shape variants above index 3 shrink so repeated glyphs stay separable.
  int r = z * 3 / 10 + static_cast<int>(rng.next_jitter(z / 20));
  if (shape >= 4) r = r * 2 / 3;

  const auto& base = kPalette[color_child % 8][rng.next_below(3)];
  int col[3];
  for (int c = 0; c < 3; ++c) col[c] = base[c] + static_cast<int>(rng.next_jitter(10));

  const int bg = 36;

  // Marking: a high-contrast glyph confined to one quadrant of the object.
  int mx = 0, my = 0, mr = 0;
  bool bar = false;
  if (mark_child >= 0) {
    const int quadrant = mark_child % 4;
    mx = cx + ((quadrant % 2 == 0) ? -r / 2 : r / 2);
    my = cy + ((quadrant / 2 == 0) ? -r / 2 : r / 2);
    mr = std::max(2, r / 3);
    bar = mark_child >= 4;
  }

  for (int y = 0; y < z; ++y) {
    for (int x = 0; x < z; ++x) {
      int pix[3] = {bg, bg, bg};
      if (inside_shape(shape, x, y, cx, cy, r))
        for (int c = 0; c < 3; ++c) pix[c] = col[c];
      if (mark_child >= 0) {
        const int dx = x - mx, dy = y - my;
        const bool hit = bar ? (std::abs(dx) <= mr && 3 * std::abs(dy) <= mr)
                             : (dx * dx + dy * dy <= mr * mr);
        if (hit)
          for (int c = 0; c < 3; ++c) pix[c] = 255 - col[c];
      }
      for (int c = 0; c < 3; ++c) {
        int noisy = pix[c] + static_cast<int>(rng.next_jitter(spec.noise_amplitude));
        rgb[(static_cast<size_t>(y) * z + x) * 3 + c] = clamp_u8(noisy);
      }
    }
  }
  return rgb;
}

Taxonomy generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
  spec.check();
  const int levels = static_cast<int>(spec.branching.size());
  const std::vector<int> sizes = spec.level_sizes();
  const int leaves = sizes.back();

  // Build the taxonomy rows leaf by leaf. Color and marking names repeat
  // under different parents; identity is the path.
  std::vector<std::vector<std::string>> rows;
  std::vector<std::vector<int>> leaf_paths;
  for (int leaf = 0; leaf < leaves; ++leaf) {
    // Index at level lv = leaf / (product of branching factors below lv).
    std::vector<int> path(static_cast<size_t>(levels));
    int div = 1;
    for (int lv = levels - 1; lv >= 0; --lv) {
      path[static_cast<size_t>(lv)] = leaf / div;
      div *= spec.branching[static_cast<size_t>(lv)];
    }
    std::vector<std::string> row;
    row.push_back(kShapeNames[path[0] % 8]);
    row.push_back(kColorNames[(path[1] % spec.branching[1]) % 8]);
    if (levels == 3) row.push_back(kMarkNames[(path[2] % spec.branching[2]) % 8]);
    rows.push_back(std::move(row));
    leaf_paths.push_back(std::move(path));
  }
  Taxonomy taxonomy = Taxonomy::from_rows(rows);

  fs::create_directories(fs::path(out_dir) / "images" / "train");
  fs::create_directories(fs::path(out_dir) / "images" / "val");
  fs::create_directories(fs::path(out_dir) / "images" / "test");
  taxonomy.save((fs::path(out_dir) / "taxonomy.tsv").string());

  SplitMix64 master(spec.seed);
  const char* split_names[3] = {"train", "val", "test"};
  const int split_counts[3] = {spec.train_per_leaf, spec.val_per_leaf, spec.test_per_leaf};
  char fname[64];
  for (int s = 0; s < 3; ++s) {
    std::ofstream manifest((fs::path(out_dir) / (std::string(split_names[s]) + ".tsv")).string());
    if (!manifest) throw DataError("cannot write manifest in " + out_dir);
    for (int leaf = 0; leaf < leaves; ++leaf) {
      for (int k = 0; k < split_counts[s]; ++k) {
        SplitMix64 rng = master.fork(static_cast<uint64_t>(s))
                             .fork(static_cast<uint64_t>(leaf))
                             .fork(static_cast<uint64_t>(k));
        std::vector<uint8_t> rgb = render_synthetic_image(spec, leaf_paths[static_cast<size_t>(leaf)], rng);
        std::snprintf(fname, sizeof(fname), "images/%s/%03d_%03d.ppm", split_names[s], leaf, k);
        write_ppm((fs::path(out_dir) / fname).string(), rgb, spec.image_size, spec.image_size);
        manifest << fname;
        for (int lv = 0; lv < levels; ++lv)
          manifest << "\t" << rows[static_cast<size_t>(leaf)][static_cast<size_t>(lv)];
        manifest << "\n";
      }
    }
  }
  return taxonomy;
}

Dataset load_manifest(const Taxonomy& taxonomy, const std::string& manifest_path,
                      const std::string& image_root) {
  std::ifstream is(manifest_path);
  if (!is) throw DataError("cannot open manifest: " + manifest_path);
  Dataset dataset;
  std::string line;
  int row_no = 0;
  while (std::getline(is, line)) {
    ++row_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, '\t')) fields.push_back(field);
    if (static_cast<int>(fields.size()) != taxonomy.level_count() + 1)
      throw DataError("manifest row " + std::to_string(row_no) + ": expected path plus " +
                      std::to_string(taxonomy.level_count()) + " names, got " +
                      std::to_string(fields.size()) + " fields");
    Sample sample;
    sample.image_path = fields[0];
    std::vector<std::string> names(fields.begin() + 1, fields.end());
    sample.label = taxonomy.resolve_path(names, "manifest row " + std::to_string(row_no));
    sample.image = read_ppm((fs::path(image_root) / sample.image_path).string());
    dataset.samples.push_back(std::move(sample));
  }
  return dataset;
}

std::vector<std::vector<int>> epoch_batches(int dataset_size, int batch_size, uint64_t seed,
                                            int epoch, bool shuffle) {
  if (batch_size < 1) throw DataError("batch size must be >= 1");
  std::vector<int> order(static_cast<size_t>(dataset_size));
  for (int i = 0; i < dataset_size; ++i) order[static_cast<size_t>(i)] = i;
  if (shuffle) {
    SplitMix64 rng = SplitMix64(seed).fork(0x9A7Cull + static_cast<uint64_t>(epoch));
    hse::shuffle(order, rng);
  }
  std::vector<std::vector<int>> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

}  // namespace hse
