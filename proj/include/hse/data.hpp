#pragma once

#include <string>
#include <vector>

#include "hse/rng.hpp"
#include "hse/taxonomy.hpp"
#include "hse/tensor.hpp"

namespace hse {

// Binary PPM (P6, 8-bit). Images travel in memory as [3,H,W] tensors scaled
// to [0,1]; pixel synthesis happens in integers so files reproduce bit-for-bit
// across platforms.
void write_ppm(const std::string& path, const std::vector<uint8_t>& rgb, int width, int height);
Tensor read_ppm(const std::string& path, DType dtype = DType::Float32);

// 8-bit grayscale PGM (P5) for attention heatmaps.
void write_pgm(const std::string& path, const std::vector<uint8_t>& gray, int width, int height);

// Factor structure mirrors the hierarchy: level 1 picks the global shape,
// level 2 the color family, level 3 a small marking confined to one quadrant
// of the object, so the finest level rewards attending a sub-region.
struct SyntheticSpec {
  int image_size = 64;
  std::vector<int> branching = {4, 2, 2};  // level sizes multiply: (4, 8, 16)
  int train_per_leaf = 40;
  int val_per_leaf = 10;
  int test_per_leaf = 30;
  int noise_amplitude = 12;  // additive uniform integer noise per channel
  uint64_t seed = 1;

  std::vector<int> level_sizes() const;
  int leaf_count() const;
  void check() const;
};

// Writes a self-contained dataset directory:
//   {taxonomy.tsv, train.tsv, val.tsv, test.tsv, images/<split>/*.ppm}
// Fully determined by the spec (same seed twice gives bit-identical files).
Taxonomy generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

// Renders one sample image as interleaved RGB; exposed for tests.
std::vector<uint8_t> render_synthetic_image(const SyntheticSpec& spec,
                                            const std::vector<int>& path_indices,
                                            SplitMix64 rng);

struct Sample {
  std::string image_path;  // relative to the dataset root
  LabelPath label;
  Tensor image;  // [3,H,W], values in [0,1]
};

struct Dataset {
  std::vector<Sample> samples;
  int size() const { return static_cast<int>(samples.size()); }
};

// Manifest TSV: relative_image_path <TAB> name_1 ... name_L. Every name path
// must resolve against the taxonomy; images load eagerly.
Dataset load_manifest(const Taxonomy& taxonomy, const std::string& manifest_path,
                      const std::string& image_root);

// Seeded epoch batching; the order is a pure function of (seed, epoch) and the
// final partial batch is kept.
std::vector<std::vector<int>> epoch_batches(int dataset_size, int batch_size, uint64_t seed,
                                            int epoch, bool shuffle);

}  // namespace hse
