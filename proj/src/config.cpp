#include "cstn/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "cstn/errors.hpp"

namespace cstn {

std::vector<int> ArchConfig::content_ladder() const {
  const int c = content_channels;
  return {std::max(1, c / 4), std::max(1, c / 2), c, c, c};
}

std::vector<int> ArchConfig::style_ladder() const {
  const int s = style_dim;
  return {std::max(1, s / 8), std::max(1, s / 4), std::max(1, s / 2), s};
}

void ArchConfig::validate() const {
  if (channels_x <= 0 || channels_y <= 0) throw ConfigError("architecture: domain channel counts must be positive");
  if (content_channels <= 0) throw ConfigError("architecture: content_channels must be positive");
  if (style_dim <= 0) throw ConfigError("architecture: style_dim must be positive");
  if (ffb_channels <= 0) throw ConfigError("architecture: ffb_channels must be positive");
  if (ffb_channels != content_channels) {
    throw ConfigError("architecture: ffb_channels must equal content_channels (residual fusion operates on the content code)");
  }
  if (mlp_hidden <= 0) throw ConfigError("architecture: mlp_hidden must be positive");
  if (!(adain_epsilon > 0.0)) throw ConfigError("architecture: adain_epsilon must be positive");
}

void TrainConfig::validate() const {
  if (stride <= 0 || patch_size < stride) throw ConfigError("training: require patch_size >= stride > 0");
  if (patch_size < 3) throw ConfigError("training: patch_size too small");
  if (batch_size <= 0) throw ConfigError("training: batch_size must be positive");
  if (epochs_per_iteration <= 0) throw ConfigError("training: epochs_per_iteration must be positive");
  if (iterations < 0) throw ConfigError("training: iterations must be nonnegative");
  if (!(learning_rate > 0.0)) throw ConfigError("training: learning_rate must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ConfigError("training: adam betas must lie in [0,1)");
  }
  if (!(align_scale > 0.0)) throw ConfigError("training: align_scale must be positive");
}

void FilterConfig::validate() const {
  if (!(sigma > 0.0)) throw ConfigError("filter: sigma must be positive");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("filter: kernel_size must be odd and positive");
}

bool parse_bool(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw ConfigError("config: invalid boolean '" + value + "' for key '" + key + "'");
}

namespace {

int parse_int(const std::string& value, const std::string& key) {
  try {
    std::size_t pos = 0;
    const int v = std::stoi(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: invalid integer '" + value + "' for key '" + key + "'");
  }
}

double parse_double(const std::string& value, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: invalid number '" + value + "' for key '" + key + "'");
  }
}

std::uint64_t parse_u64(const std::string& value, const std::string& key) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("config: invalid seed '" + value + "' for key '" + key + "'");
  }
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

}  // namespace

void RunConfig::apply_key(const std::string& key, const std::string& value) {
  if (key == "content_channels") arch.content_channels = parse_int(value, key);
  else if (key == "style_dim") arch.style_dim = parse_int(value, key);
  else if (key == "ffb_channels") arch.ffb_channels = parse_int(value, key);
  else if (key == "mlp_hidden") arch.mlp_hidden = parse_int(value, key);
  else if (key == "adain_epsilon") arch.adain_epsilon = parse_double(value, key);
  else if (key == "patch_size") train.patch_size = parse_int(value, key);
  else if (key == "stride") train.stride = parse_int(value, key);
  else if (key == "learning_rate") train.learning_rate = parse_double(value, key);
  else if (key == "adam_beta1") train.adam_beta1 = parse_double(value, key);
  else if (key == "adam_beta2") train.adam_beta2 = parse_double(value, key);
  else if (key == "adam_epsilon") train.adam_epsilon = parse_double(value, key);
  else if (key == "batch_size") train.batch_size = parse_int(value, key);
  else if (key == "epochs_per_iteration") train.epochs_per_iteration = parse_int(value, key);
  else if (key == "iterations") train.iterations = parse_int(value, key);
  else if (key == "seed") train.seed = parse_u64(value, key);
  else if (key == "augmentation") train.augmentation = parse_bool(value, key);
  else if (key == "loss_recon") train.losses.recon = parse_bool(value, key);
  else if (key == "loss_trans") train.losses.trans = parse_bool(value, key);
  else if (key == "loss_cyc") train.losses.cyc = parse_bool(value, key);
  else if (key == "loss_align") train.losses.align = parse_bool(value, key);
  else if (key == "align_scale") train.align_scale = parse_double(value, key);
  else if (key == "filter_enabled") filter.enabled = parse_bool(value, key);
  else if (key == "filter_sigma") filter.sigma = parse_double(value, key);
  else if (key == "filter_kernel") filter.kernel_size = parse_int(value, key);
  else if (key == "feature_extractor") metrics.feature_extractor = value;
  else if (key == "feature_grid") metrics.feature_grid = parse_int(value, key);
  else if (key == "eval_tile") metrics.eval_tile = parse_int(value, key);
  else if (key == "eval_tile_stride") metrics.eval_tile_stride = parse_int(value, key);
  else if (key == "kid_unbiased") metrics.kid_unbiased = parse_bool(value, key);
  else if (key == "resample") resample = parse_bool(value, key);
  else if (key == "resample_height") resample_height = parse_int(value, key);
  else if (key == "resample_width") resample_width = parse_int(value, key);
  else throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::validate() const {
  arch.validate();
  train.validate();
  filter.validate();
  if (metrics.feature_grid <= 0) throw ConfigError("metrics: feature_grid must be positive");
  if (metrics.eval_tile <= 0 || metrics.eval_tile_stride <= 0) throw ConfigError("metrics: tile settings must be positive");
  if (resample && (resample_height <= 0 || resample_width <= 0)) {
    throw ConfigError("config: resample requires positive resample_height/resample_width");
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open '" + path + "'");
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config: empty key at line " + std::to_string(lineno));
    cfg.apply_key(key, value);
  }
  return cfg;
}

std::string default_config_text() {
  RunConfig d;
  std::ostringstream os;
  os << "# architecture\n"
     << "content_channels=" << d.arch.content_channels << "\n"
     << "style_dim=" << d.arch.style_dim << "\n"
     << "ffb_channels=" << d.arch.ffb_channels << "\n"
     << "mlp_hidden=" << d.arch.mlp_hidden << "\n"
     << "adain_epsilon=" << d.arch.adain_epsilon << "\n"
     << "# training\n"
     << "patch_size=" << d.train.patch_size << "\n"
     << "stride=" << d.train.stride << "\n"
     << "learning_rate=" << d.train.learning_rate << "\n"
     << "adam_beta1=" << d.train.adam_beta1 << "\n"
     << "adam_beta2=" << d.train.adam_beta2 << "\n"
     << "batch_size=" << d.train.batch_size << "\n"
     << "epochs_per_iteration=" << d.train.epochs_per_iteration << "\n"
     << "iterations=" << d.train.iterations << "\n"
     << "seed=" << d.train.seed << "\n"
     << "augmentation=" << (d.train.augmentation ? "true" : "false") << "\n"
     << "loss_recon=true\nloss_trans=true\nloss_cyc=true\nloss_align=true\n"
     << "align_scale=" << d.train.align_scale << "\n"
     << "# detection\n"
     << "filter_enabled=" << (d.filter.enabled ? "true" : "false") << "\n"
     << "filter_sigma=" << d.filter.sigma << "\n"
     << "filter_kernel=" << d.filter.kernel_size << "\n"
     << "# metrics\n"
     << "feature_extractor=" << d.metrics.feature_extractor << "\n"
     << "feature_grid=" << d.metrics.feature_grid << "\n"
     << "eval_tile=" << d.metrics.eval_tile << "\n"
     << "eval_tile_stride=" << d.metrics.eval_tile_stride << "\n"
     << "kid_unbiased=" << (d.metrics.kid_unbiased ? "true" : "false") << "\n"
     << "# io\n"
     << "resample=false\nresample_height=0\nresample_width=0\n";
  return os.str();
}

}  // namespace cstn
