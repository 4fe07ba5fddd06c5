#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cstn/tensor.hpp"

namespace cstn {

// --- flat binary tensor container -----------------------------------------
// Shared by model checkpoints and .raw rasters: magic "CSTNTC01", u32
// version, u32 entry count, then per entry a length-prefixed name, u32 rank,
// u32 dims and a float32 little-endian payload.

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

void write_tensor_container(const std::string& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> read_tensor_container(const std::string& path);

// --- raster loading / saving ----------------------------------------------

// Loads PNG/TIFF (8/16-bit scaled to [0,1], float kept as stored) or a .raw
// tensor container holding a single "image" entry. Always (H, W, C) float.
Tensor load_raster(const std::string& path);
void save_raster_raw(const std::string& path, const Tensor& image);
// 8-bit PNG; accepts (H, W, 1) or (H, W, 3) in [0,1].
void save_image_png(const std::string& path, const Tensor& image);

// Binary (H, W) masks stored as 0/255 single-channel PNG.
Tensor load_mask_png(const std::string& path);
void save_mask_png(const std::string& path, const Tensor& mask);

// Difference image: one text header line "DI <H> <W>", then H*W float32
// little-endian values.
void save_difference_image(const std::string& path, const Tensor& di);
Tensor load_difference_image(const std::string& path);

struct ImagePair {
  Tensor x, y;
};

struct LoadPairOptions {
  bool resample = false;
  int target_height = 0;
  int target_width = 0;
};

ImagePair load_pair(const std::string& path_x, const std::string& path_y, const LoadPairOptions& options = {});

// Per-channel min-max scaling to [0,1]; constant channels map to zero (a
// warning is emitted on stderr).
Tensor normalize(const Tensor& image);

// Bilinear, channel independent, pixel-center aligned.
Tensor resample_bilinear(const Tensor& image, int target_height, int target_width);

// --- synthetic multimodal scenes -------------------------------------------

struct SensorProfiles {
  int channels_x = 3;        // smooth multi-band modality
  double noise_x = 0.02;     // additive Gaussian noise on modality X
  int speckle_looks = 4;     // shape of the unit-mean multiplicative noise on Y
  double latent_sigma = 6.0; // smoothing of the shared latent fields
};

struct SyntheticScene {
  Tensor image_x;      // (H, W, channels_x)
  Tensor image_y;      // (H, W, 1)
  Tensor ground_truth; // (H, W) binary
  Tensor latent;       // (H, W, 3) shared pre-event fields, kept for diagnostics
  std::uint64_t seed = 0;
  double change_fraction = 0.0;
  double achieved_fraction = 0.0;
  SensorProfiles profiles;
};

// Both modalities render a shared smooth latent field; inside the planted
// blob mask the post-event modality renders an independently redrawn latent.
SyntheticScene generate_synthetic_pair(std::uint64_t seed, int height, int width, double change_fraction,
                                       const SensorProfiles& profiles = {});

// Writes x.raw, y.raw, gt.png and meta.json into `dir`.
void save_scene(const std::string& dir, const SyntheticScene& scene);

}  // namespace cstn
