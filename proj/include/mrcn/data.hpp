#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mrcn/rng.hpp"
#include "mrcn/tensor.hpp"

namespace mrcn {

struct Sample {
  Tensor image;  // rank-1 feature vector (synthetic feature mode) or rank-3 (3, H, W) image
  int identity = 0;
  Modality modality = Modality::kVis;
  int camera = -1;
};

// Desk-scale two-modality dataset: every sample of an identity shares one
// identity signal; each modality adds its own global offset pattern.
struct SyntheticSpec {
  std::size_t num_identities = 20;
  std::size_t samples_per_identity_per_modality = 10;
  std::size_t id_signal_dim = 32;  // feature mode: must be divisible by 16
  double modality_offset_scale = 1.3;
  double noise_scale = 0.35;
  std::uint64_t seed = 1;
  bool image_mode = false;
  std::size_t image_height = 64;
  std::size_t image_width = 32;

  void validate() const;
};

struct Dataset {
  std::vector<Sample> samples;
  bool image_mode = false;
  std::optional<SyntheticSpec> synthetic_spec;

  std::size_t size() const { return samples.size(); }
  std::vector<int> identities() const;
  // Identities that appear in both modalities.
  std::vector<int> paired_identities() const;
  std::vector<std::size_t> indices_of(int identity, Modality m) const;
};

Dataset generate_synthetic(const SyntheticSpec& spec);
Dataset subset_by_identities(const Dataset& dataset, const std::set<int>& keep);

// Binary container with a JSON header (spec, seed, shapes) and raw arrays.
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

// P identities x (K VIS + K NIR), identity-aligned: position j in vis_indices
// and nir_indices always carries the same identity.
struct PkBatch {
  std::vector<std::size_t> vis_indices;
  std::vector<std::size_t> nir_indices;
  std::vector<int> identities;  // length P*K, per aligned position
};

PkBatch pk_sample(const Dataset& dataset, std::size_t p, std::size_t k, Rng& rng);

struct AugmentConfig {
  std::size_t target_height = 288;
  std::size_t target_width = 128;
  double flip_prob = 0.5;
  double erase_prob = 0.5;
  double erase_area_lo = 0.02, erase_area_hi = 0.4;
  double erase_aspect_lo = 0.3, erase_aspect_hi = 3.3;
};

struct EraseRect {
  std::size_t y = 0, x = 0, h = 0, w = 0;
};

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);
Tensor flip_horizontal(const Tensor& image);
// Fills the rectangle with uniform noise; the rest of the image is untouched.
void erase_region(Tensor& image, const EraseRect& rect, Rng& rng);
std::optional<EraseRect> sample_erase_rect(std::size_t h, std::size_t w,
                                           const AugmentConfig& cfg, Rng& rng);
// resize -> random horizontal flip -> random erasing.
Tensor augment(const Tensor& image, const AugmentConfig& cfg, Rng& rng);

// Feature-mode layout: a dim-length vector is viewed as (dim/16, 4, 4).
void feature_map_layout(std::size_t dim, std::size_t* channels, std::size_t* height,
                        std::size_t* width);

struct ModalityBatch {
  FeatureMap map;
  std::vector<int> ids;
};

// Stacks dataset samples into an (N, C, H, W) feature map. Image-mode samples
// are augmented when `aug` is given (training); otherwise used as stored.
ModalityBatch assemble_batch(const Dataset& dataset, const std::vector<std::size_t>& indices,
                             Modality expected, const AugmentConfig* aug = nullptr,
                             Rng* rng = nullptr);

// Netpbm image I/O (P6/P5). Values are stored as doubles in [0, 1]; writing
// clamps and quantizes to 8 bits.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_netpbm(const std::string& path);

// Loads `<root>/<identity>/<vis|nir>/<camera>_<index>.<ext>` with netpbm
// images. Both modality subdirectories must exist for every identity.
Dataset load_directory(const std::string& root);

// Writes a dataset in the directory layout above (image mode only).
void export_directory(const Dataset& dataset, const std::string& root);

}  // namespace mrcn
