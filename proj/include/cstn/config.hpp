#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cstn {

struct ArchConfig {
  int channels_x = 1;
  int channels_y = 3;
  int content_channels = 128;
  int style_dim = 256;
  int ffb_channels = 128;
  int mlp_hidden = 1024;
  double adain_epsilon = 1e-5;

  // Channel ladders of the two encoder stacks. Defaults reproduce
  // 32-64-128-128-128 (content) and 32-64-128-256 (style).
  std::vector<int> content_ladder() const;
  std::vector<int> style_ladder() const;

  void validate() const;  // throws ConfigError
};

struct LossToggles {
  bool recon = true;
  bool trans = true;
  bool cyc = true;
  bool align = true;

  bool any() const { return recon || trans || cyc || align; }
};

struct TrainConfig {
  int patch_size = 64;
  int stride = 56;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double adam_epsilon = 1e-8;
  int batch_size = 32;
  int epochs_per_iteration = 10;
  int iterations = 2;
  std::uint64_t seed = 0;
  bool augmentation = true;
  LossToggles losses;
  double align_scale = 4.0;

  void validate() const;  // throws ConfigError
};

struct FilterConfig {
  bool enabled = true;
  double sigma = 1.5;
  int kernel_size = 7;

  void validate() const;
};

struct MetricsConfig {
  std::string feature_extractor = "stats";
  int feature_grid = 4;
  int eval_tile = 64;
  int eval_tile_stride = 64;
  bool kid_unbiased = false;
};

// Everything a CLI run needs; parsed from a flat key=value file with
// command-line overrides layered on top. Unknown keys are hard errors.
struct RunConfig {
  ArchConfig arch;
  TrainConfig train;
  FilterConfig filter;
  MetricsConfig metrics;
  bool resample = false;
  int resample_height = 0;
  int resample_width = 0;

  void apply_key(const std::string& key, const std::string& value);
  void validate() const;
};

RunConfig load_run_config(const std::string& path);
std::string default_config_text();

bool parse_bool(const std::string& value, const std::string& key);

}  // namespace cstn
