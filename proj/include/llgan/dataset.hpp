#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "llgan/boxes.hpp"
#include "llgan/image_io.hpp"
#include "llgan/rng.hpp"

namespace llgan::data {

struct ManifestRecord {
  std::string path;  // relative to the manifest root
  det::Box bbox;
  int style_id = 0;
};

struct Manifest {
  std::filesystem::path root;
  std::vector<ManifestRecord> records;
  int image_size = 282;
  int styles = 10;
  uint64_t seed = 0;
  float train_fraction = 0.9f;
};

// Image + single gt box + style id, normalized for training.
struct LabeledSample {
  nn::Tensor<float> image;  // 3 x H x W in [-1, 1]
  det::Box gt_box;
  int style_id = 0;
  std::string source_path;
};

// Renders n synthetic word-mark images on neutral backgrounds with one
// tight bbox each, writes PNGs plus manifest.jsonl and dataset.json into
// out_dir, and returns the manifest. Deterministic per seed.
Manifest generate_synthetic_dataset(int n, int styles, int image_size,
                                    uint64_t seed,
                                    const std::filesystem::path& out_dir);

Manifest load_manifest(const std::filesystem::path& dir);

// Decode, bilinear-resize to target, rescale the box, map pixels to [-1,1].
LabeledSample load_sample(const Manifest& m, const ManifestRecord& rec,
                          int target_size);

// Seeded 90/10-style split by index permutation; fractions from the manifest.
void split_indices(const Manifest& m, std::vector<int>& train,
                   std::vector<int>& eval);

// Seeded per-epoch permutation; every sample appears once per epoch.
class BatchIterator {
 public:
  BatchIterator(int n, int batch_size, uint64_t seed, bool drop_last);
  std::vector<std::vector<int>> epoch(int epoch_index) const;

 private:
  int n_, batch_;
  uint64_t seed_;
  bool drop_last_;
};

}  // namespace llgan::data
