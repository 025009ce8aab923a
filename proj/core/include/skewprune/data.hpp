#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skewprune/model.hpp"
#include "skewprune/tensor.hpp"

namespace skewprune {

struct Sample {
  Tensor image;  // [3 x S x S], values in [0,1]
  TabularInput tabular;
  int64_t label = 0;
};

struct Dataset {
  int64_t image_size = 0;
  int64_t num_classes = 0;
  std::vector<Sample> samples;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
  Tensor image_batch(const std::vector<int64_t>& idx) const;  // [B x 3 x S x S]
  std::vector<TabularInput> tabular_batch(const std::vector<int64_t>& idx) const;
  std::vector<int64_t> label_batch(const std::vector<int64_t>& idx) const;
  Dataset subset(const std::vector<int64_t>& idx) const;
};

// Synthetic lesion-like imagery: a textured skin-tone background plus one
// class-colored elliptical blob, with tabular ids tied to the label by a
// configurable correlation strength.
struct SynthConfig {
  int64_t n = 140;
  int64_t image_size = 32;
  int64_t num_classes = 7;
  double tabular_correlation = 0.5;  // 0 = independent ids, 1 = class-determined
  float blob_color_std = 0.05f;
  float radius_min = 0.15f;  // blob radius range, fraction of image side
  float radius_max = 0.35f;
  float eccentricity_min = 0.6f;  // minor/major axis ratio range
  float eccentricity_max = 1.0f;
  float background_noise = 0.1f;
  uint64_t seed = 0;

  void validate() const;
};

// Class-balanced (counts differ by at most one), seeded, reproducible.
Dataset generate(const SynthConfig& cfg);

// Diagnosis codes in their fixed class order: index == class id.
// akiec, bkl, bcc, df, nv, mel, vasc.
const std::vector<std::string>& diagnosis_codes();
int64_t diagnosis_to_class(const std::string& dx);  // IngestError when unknown

// Metadata field encodings; empty or "unknown" strings map to id 0.
// Ages land in five-year buckets: 0-4 -> 1, 5-9 -> 2, ... (21 buckets).
int64_t age_to_bucket(const std::string& age_text);
int64_t sex_to_id(const std::string& sex_text);
int64_t localization_to_id(const std::string& loc_text);
const std::vector<std::string>& localization_names();  // index == id

// On-disk layout: <dir>/metadata.csv with header
// image_id,dx,age,sex,localization and <dir>/images/<image_id>.ppm (binary
// P6, 8-bit). Writing quantizes pixels to 8 bits.
void write_directory(const Dataset& ds, const std::string& dir);

// Reads the layout above; images are bilinearly resized to image_size.
// Unknown diagnosis strings or unreadable images raise IngestError naming
// the offending row or file.
Dataset load_directory(const std::string& table_path, const std::string& image_dir,
                       int64_t image_size);
Dataset load_data_dir(const std::string& dir, int64_t image_size);

Tensor resize_bilinear(const Tensor& img, int64_t out_size);  // [3 x H x W] -> [3 x S x S]

// Seeded per-epoch shuffle, split into batches; the final short batch stays.
std::vector<std::vector<int64_t>> batches(int64_t n, int64_t batch_size, uint64_t seed,
                                          int64_t epoch);
inline std::vector<std::vector<int64_t>> batches(const Dataset& ds, int64_t batch_size,
                                                 uint64_t seed, int64_t epoch) {
  return batches(ds.size(), batch_size, seed, epoch);
}

}  // namespace skewprune
