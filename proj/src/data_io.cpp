#include "cstn/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "cstn/errors.hpp"
#include "cstn/rng.hpp"

namespace fs = std::filesystem;

namespace cstn {

namespace {

constexpr char kMagic[8] = {'C', 'S', 'T', 'N', 'T', 'C', '0', '1'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char bytes[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                            static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw IoError("truncated container '" + path + "'");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

std::string lower_ext(const std::string& path) {
  std::string ext = fs::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

}  // namespace

void write_tensor_container(const std::string& path, const std::vector<NamedTensor>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kVersion);
  write_u32(out, static_cast<std::uint32_t>(entries.size()));
  std::vector<float> buf;
  for (const auto& e : entries) {
    write_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    write_u32(out, static_cast<std::uint32_t>(e.tensor.ndim()));
    for (int d = 0; d < e.tensor.ndim(); ++d) write_u32(out, static_cast<std::uint32_t>(e.tensor.dim(d)));
    buf.resize(e.tensor.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(e.tensor[i]);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<NamedTensor> read_tensor_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("'" + path + "' is not a tensor container");
  }
  const std::uint32_t version = read_u32(in, path);
  if (version != kVersion) throw IoError("'" + path + "': unsupported container version " + std::to_string(version));
  const std::uint32_t count = read_u32(in, path);
  std::vector<NamedTensor> entries;
  entries.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::uint32_t name_len = read_u32(in, path);
    if (name_len > 4096) throw IoError("'" + path + "': implausible entry name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw IoError("truncated container '" + path + "'");
    const std::uint32_t ndim = read_u32(in, path);
    if (ndim > 8) throw IoError("'" + path + "': implausible tensor rank");
    std::vector<int> shape(ndim);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      shape[d] = static_cast<int>(read_u32(in, path));
      numel *= static_cast<std::size_t>(shape[d]);
    }
    std::vector<float> buf(numel);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(numel * sizeof(float)))) {
      throw IoError("truncated container '" + path + "'");
    }
    Tensor t(shape);
    for (std::size_t i = 0; i < numel; ++i) t[i] = static_cast<double>(buf[i]);
    entries.push_back({std::move(name), std::move(t)});
  }
  return entries;
}

namespace {

Tensor mat_to_tensor(const cv::Mat& mat, const std::string& path) {
  if (mat.empty()) throw IoError("cannot decode image '" + path + "'");
  const int channels = mat.channels();
  if (channels != 1 && channels != 3) {
    throw IoError("'" + path + "': unsupported channel count " + std::to_string(channels));
  }
  double scale = 1.0;
  int depth = mat.depth();
  if (depth == CV_8U) scale = 1.0 / 255.0;
  else if (depth == CV_16U) scale = 1.0 / 65535.0;
  else if (depth != CV_32F && depth != CV_64F) throw IoError("'" + path + "': unsupported pixel depth");

  Tensor out({mat.rows, mat.cols, channels});
  for (int i = 0; i < mat.rows; ++i) {
    for (int j = 0; j < mat.cols; ++j) {
      for (int c = 0; c < channels; ++c) {
        double v = 0.0;
        if (depth == CV_8U) v = mat.ptr<unsigned char>(i)[j * channels + c];
        else if (depth == CV_16U) v = mat.ptr<unsigned short>(i)[j * channels + c];
        else if (depth == CV_32F) v = mat.ptr<float>(i)[j * channels + c];
        else v = mat.ptr<double>(i)[j * channels + c];
        // OpenCV stores BGR; flip to RGB order.
        const int dst_c = (channels == 3) ? (2 - c) : c;
        out.at(i, j, dst_c) = v * scale;
      }
    }
  }
  if (!out.all_finite()) throw ValidationError("'" + path + "': image contains non-finite values");
  return out;
}

}  // namespace

Tensor load_raster(const std::string& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".raw") {
    const auto entries = read_tensor_container(path);
    for (const auto& e : entries) {
      if (e.name == "image") {
        if (e.tensor.ndim() == 2) {
          Tensor out({e.tensor.dim(0), e.tensor.dim(1), 1});
          for (std::size_t i = 0; i < e.tensor.size(); ++i) out[i] = e.tensor[i];
          return out;
        }
        if (e.tensor.ndim() != 3) throw IoError("'" + path + "': raster entry must be 2-d or 3-d");
        return e.tensor;
      }
    }
    throw IoError("'" + path + "': container has no 'image' entry");
  }
  if (ext == ".png" || ext == ".tif" || ext == ".tiff") {
    cv::Mat mat = cv::imread(path, cv::IMREAD_UNCHANGED);
    return mat_to_tensor(mat, path);
  }
  throw IoError("'" + path + "': unsupported raster format '" + ext + "' (use .png, .tif or .raw)");
}

void save_raster_raw(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3) throw ShapeError("save_raster_raw: expected (H,W,C)");
  write_tensor_container(path, {{"image", image}});
}

void save_image_png(const std::string& path, const Tensor& image) {
  if (image.ndim() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw IoError("save_image_png: expected (H,W,1) or (H,W,3), got " + shape_string(image));
  }
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  cv::Mat mat(h, w, c == 1 ? CV_8UC1 : CV_8UC3);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      for (int ci = 0; ci < c; ++ci) {
        const double v = std::clamp(image.at(i, j, ci), 0.0, 1.0);
        const auto byte = static_cast<unsigned char>(std::lround(v * 255.0));
        const int dst_c = (c == 3) ? (2 - ci) : ci;
        mat.ptr<unsigned char>(i)[j * c + dst_c] = byte;
      }
    }
  }
  if (!cv::imwrite(path, mat)) throw IoError("cannot write '" + path + "'");
}

Tensor load_mask_png(const std::string& path) {
  cv::Mat mat = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (mat.empty()) throw IoError("cannot decode mask '" + path + "'");
  Tensor mask({mat.rows, mat.cols});
  for (int i = 0; i < mat.rows; ++i) {
    for (int j = 0; j < mat.cols; ++j) {
      const unsigned char v = mat.ptr<unsigned char>(i)[j];
      if (v != 0 && v != 255) {
        throw ValidationError("mask '" + path + "' is not binary (found value " + std::to_string(v) + ")");
      }
      mask.at(i, j) = v == 255 ? 1.0 : 0.0;
    }
  }
  return mask;
}

void save_mask_png(const std::string& path, const Tensor& mask) {
  if (mask.ndim() != 2) throw ShapeError("save_mask_png: expected (H,W)");
  const int h = mask.dim(0), w = mask.dim(1);
  cv::Mat mat(h, w, CV_8UC1);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double v = mask.at(i, j);
      if (v != 0.0 && v != 1.0) throw ValidationError("save_mask_png: mask is not binary");
      mat.ptr<unsigned char>(i)[j] = v == 1.0 ? 255 : 0;
    }
  }
  if (!cv::imwrite(path, mat)) throw IoError("cannot write '" + path + "'");
}

void save_difference_image(const std::string& path, const Tensor& di) {
  if (di.ndim() != 2) throw ShapeError("save_difference_image: expected (H,W)");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << "DI " << di.dim(0) << " " << di.dim(1) << "\n";
  std::vector<float> buf(di.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(di[i]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw IoError("write failed for '" + path + "'");
}

Tensor load_difference_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string tag;
  int h = 0, w = 0;
  in >> tag >> h >> w;
  if (tag != "DI" || h <= 0 || w <= 0) throw IoError("'" + path + "' is not a difference-image file");
  in.get();  // newline
  std::vector<float> buf(static_cast<std::size_t>(h) * w);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)))) {
    throw IoError("truncated difference-image file '" + path + "'");
  }
  Tensor di({h, w});
  for (std::size_t i = 0; i < buf.size(); ++i) di[i] = static_cast<double>(buf[i]);
  return di;
}

ImagePair load_pair(const std::string& path_x, const std::string& path_y, const LoadPairOptions& options) {
  ImagePair pair{load_raster(path_x), load_raster(path_y)};
  if (options.resample) {
    pair.x = resample_bilinear(pair.x, options.target_height, options.target_width);
    pair.y = resample_bilinear(pair.y, options.target_height, options.target_width);
  } else if (pair.x.dim(0) != pair.y.dim(0) || pair.x.dim(1) != pair.y.dim(1)) {
    throw ValidationError("image pair sizes differ (" + shape_string(pair.x) + " vs " + shape_string(pair.y) +
                          "); pass a resample target to align them");
  }
  return pair;
}

Tensor normalize(const Tensor& image) {
  if (image.ndim() != 3) throw ShapeError("normalize: expected (H,W,C)");
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor out({h, w, c});
  for (int ci = 0; ci < c; ++ci) {
    double lo = image.at(0, 0, ci), hi = lo;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        lo = std::min(lo, image.at(i, j, ci));
        hi = std::max(hi, image.at(i, j, ci));
      }
    }
    if (hi == lo) {
      std::cerr << "warning: constant channel " << ci << " mapped to zero during normalization\n";
      for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) out.at(i, j, ci) = 0.0;
      }
      continue;
    }
    const double inv = 1.0 / (hi - lo);
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) out.at(i, j, ci) = (image.at(i, j, ci) - lo) * inv;
    }
  }
  return out;
}

Tensor resample_bilinear(const Tensor& image, int target_height, int target_width) {
  if (image.ndim() != 3) throw ShapeError("resample_bilinear: expected (H,W,C)");
  if (target_height < 1 || target_width < 1) throw ValidationError("resample_bilinear: targets must be >= 1");
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (target_height == h && target_width == w) return image;
  Tensor out({target_height, target_width, c});
  const double sy = static_cast<double>(h) / target_height;
  const double sx = static_cast<double>(w) / target_width;
  for (int i = 0; i < target_height; ++i) {
    double fy = (i + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int j = 0; j < target_width; ++j) {
      double fx = (j + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int ci = 0; ci < c; ++ci) {
        const double top = image.at(y0, x0, ci) * (1.0 - wx) + image.at(y0, x1, ci) * wx;
        const double bot = image.at(y1, x0, ci) * (1.0 - wx) + image.at(y1, x1, ci) * wx;
        out.at(i, j, ci) = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

namespace {

// Separable reflect-border Gaussian used to shape the latent fields.
Tensor smooth_field(const Tensor& field, double sigma) {
  const int h = field.dim(0), w = field.dim(1);
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
    sum += kernel[k + radius];
  }
  for (double& v : kernel) v /= sum;
  const auto reflect = [](int idx, int n) {
    while (idx < 0 || idx >= n) {
      if (idx < 0) idx = -idx - 1;
      if (idx >= n) idx = 2 * n - 1 - idx;
    }
    return idx;
  };
  Tensor tmp({h, w}), out({h, w});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * field.at(i, reflect(j + k, w));
      tmp.at(i, j) = acc;
    }
  }
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(reflect(i + k, h), j);
      out.at(i, j) = acc;
    }
  }
  return out;
}

Tensor min_max_01(const Tensor& field) {
  Tensor out = field;
  const double lo = field.min_value(), hi = field.max_value();
  if (hi == lo) {
    out.fill(0.0);
    return out;
  }
  const double inv = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (out[i] - lo) * inv;
  return out;
}

std::vector<Tensor> draw_latent(int h, int w, int channels, double sigma, RandomStream& rng) {
  std::vector<Tensor> latent;
  for (int c = 0; c < channels; ++c) {
    Tensor noise({h, w});
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = rng.uniform();
    latent.push_back(min_max_01(smooth_field(noise, sigma)));
  }
  return latent;
}

Tensor draw_blob_mask(int h, int w, double fraction, RandomStream& rng, double& achieved) {
  Tensor mask({h, w});
  const double total = static_cast<double>(h) * w;
  const double target = fraction * total;
  const double lo_target = 0.92 * target;
  const double cap = 1.08 * target;
  const double rmax_base = std::max(6.0, std::min(h, w) / 10.0);
  double area = 0.0;
  int guard = 0;
  while (area < lo_target) {
    if (++guard > 100000) throw GenerationError("synthetic mask generation did not converge");
    const double r_allow = std::sqrt((cap - area) / 3.14159265358979323846);
    const double rmax = std::min(rmax_base, r_allow);
    if (rmax < 0.5) break;
    const double rmin = std::min(3.0, rmax);
    const double ry = rng.uniform(rmin, rmax);
    const double rx = rng.uniform(rmin, rmax);
    const int margin_y = static_cast<int>(std::ceil(ry));
    const int margin_x = static_cast<int>(std::ceil(rx));
    if (h - 1 - 2 * margin_y <= 0 || w - 1 - 2 * margin_x <= 0) continue;
    const int cy = static_cast<int>(rng.uniform_int(margin_y, h - 1 - margin_y));
    const int cx = static_cast<int>(rng.uniform_int(margin_x, w - 1 - margin_x));
    for (int i = cy - margin_y; i <= cy + margin_y; ++i) {
      for (int j = cx - margin_x; j <= cx + margin_x; ++j) {
        const double dy = (i - cy) / ry;
        const double dx = (j - cx) / rx;
        if (dy * dy + dx * dx <= 1.0 && mask.at(i, j) == 0.0) {
          mask.at(i, j) = 1.0;
          area += 1.0;
        }
      }
    }
  }
  achieved = area / total;
  return mask;
}

}  // namespace

SyntheticScene generate_synthetic_pair(std::uint64_t seed, int height, int width, double change_fraction,
                                       const SensorProfiles& profiles) {
  if (height < 64 || width < 64) throw ValidationError("generate_synthetic_pair: size must be at least 64x64");
  if (!(change_fraction > 0.0 && change_fraction < 0.5)) {
    throw GenerationError("generate_synthetic_pair: change_fraction must lie in (0, 0.5)");
  }
  if (profiles.channels_x < 1) throw ValidationError("generate_synthetic_pair: channels_x must be positive");

  constexpr int kLatentChannels = 3;
  RandomStream latent_rng = RandomStream::derive(seed, "synth/latent");
  RandomStream redraw_rng = RandomStream::derive(seed, "synth/latent_redrawn");
  RandomStream blob_rng = RandomStream::derive(seed, "synth/blobs");
  RandomStream mix_rng = RandomStream::derive(seed, "synth/mix");
  RandomStream noise_rng = RandomStream::derive(seed, "synth/noise_x");
  RandomStream speckle_rng = RandomStream::derive(seed, "synth/speckle");

  const std::vector<Tensor> latent_pre = draw_latent(height, width, kLatentChannels, profiles.latent_sigma, latent_rng);
  const std::vector<Tensor> latent_new = draw_latent(height, width, kLatentChannels, profiles.latent_sigma, redraw_rng);

  SyntheticScene scene;
  scene.seed = seed;
  scene.change_fraction = change_fraction;
  scene.profiles = profiles;
  scene.ground_truth = draw_blob_mask(height, width, change_fraction, blob_rng, scene.achieved_fraction);
  scene.latent = Tensor({height, width, kLatentChannels});
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      for (int k = 0; k < kLatentChannels; ++k) scene.latent.at(i, j, k) = latent_pre[static_cast<std::size_t>(k)].at(i, j);
    }
  }

  // Post-event latent: shared field outside the mask, redrawn field inside.
  std::vector<Tensor> latent_post = latent_pre;
  for (int c = 0; c < kLatentChannels; ++c) {
    for (std::size_t i = 0; i < latent_post[c].size(); ++i) {
      if (scene.ground_truth[i] == 1.0) latent_post[c][i] = latent_new[c][i];
    }
  }

  // Modality X: convex band mixing, per-band gamma curve, additive noise.
  scene.image_x = Tensor({height, width, profiles.channels_x});
  std::vector<std::vector<double>> mix(profiles.channels_x, std::vector<double>(kLatentChannels));
  std::vector<double> gamma_x(profiles.channels_x);
  for (int c = 0; c < profiles.channels_x; ++c) {
    double sum = 0.0;
    for (int k = 0; k < kLatentChannels; ++k) {
      mix[c][k] = mix_rng.uniform(0.05, 1.0);
      sum += mix[c][k];
    }
    for (int k = 0; k < kLatentChannels; ++k) mix[c][k] /= sum;
    gamma_x[c] = mix_rng.uniform(0.8, 1.25);
  }
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      for (int c = 0; c < profiles.channels_x; ++c) {
        double v = 0.0;
        for (int k = 0; k < kLatentChannels; ++k) v += mix[c][k] * latent_pre[k].at(i, j);
        v = std::pow(v, gamma_x[c]);
        v += noise_rng.normal(0.0, profiles.noise_x);
        scene.image_x.at(i, j, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  // Modality Y: folded projection of the post-event latent under
  // multiplicative speckle, then rescaled to [0,1].
  std::vector<double> proj(kLatentChannels);
  double proj_sum = 0.0;
  for (int k = 0; k < kLatentChannels; ++k) {
    proj[k] = mix_rng.uniform(0.05, 1.0);
    proj_sum += proj[k];
  }
  for (int k = 0; k < kLatentChannels; ++k) proj[k] /= proj_sum;
  Tensor y_field({height, width});
  for (int i = 0; i < height; ++i) {
    for (int j = 0; j < width; ++j) {
      double p = 0.0;
      for (int k = 0; k < kLatentChannels; ++k) p += proj[k] * latent_post[k].at(i, j);
      const double structure = std::abs(2.0 * p - 1.0);
      y_field.at(i, j) = structure * speckle_rng.gamma_unit_mean(profiles.speckle_looks);
    }
  }
  y_field = min_max_01(y_field);
  scene.image_y = Tensor({height, width, 1});
  for (std::size_t i = 0; i < y_field.size(); ++i) scene.image_y[i] = y_field[i];
  return scene;
}

void save_scene(const std::string& dir, const SyntheticScene& scene) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  save_raster_raw((fs::path(dir) / "x.raw").string(), scene.image_x);
  save_raster_raw((fs::path(dir) / "y.raw").string(), scene.image_y);
  save_mask_png((fs::path(dir) / "gt.png").string(), scene.ground_truth);
  nlohmann::json meta{{"seed", scene.seed},
                      {"height", scene.image_x.dim(0)},
                      {"width", scene.image_x.dim(1)},
                      {"change_fraction", scene.change_fraction},
                      {"achieved_fraction", scene.achieved_fraction},
                      {"channels_x", scene.image_x.dim(2)},
                      {"channels_y", scene.image_y.dim(2)},
                      {"speckle_looks", scene.profiles.speckle_looks},
                      {"noise_x", scene.profiles.noise_x},
                      {"latent_sigma", scene.profiles.latent_sigma}};
  std::ofstream meta_out(fs::path(dir) / "meta.json");
  if (!meta_out) throw IoError("cannot write meta.json in '" + dir + "'");
  meta_out << meta.dump(2) << "\n";
}

}  // namespace cstn
