#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cstn/autograd.hpp"
#include "cstn/config.hpp"
#include "cstn/tensor.hpp"

namespace cstn {

enum class Domain { X, Y };

const char* domain_name(Domain d);

// Image patch in [0,1], channel-last, tagged with its domain.
struct Patch {
  Tensor data;  // (h, w, c)
  Domain domain = Domain::X;
};

struct ConvParams {
  Tensor w;  // (kh, kw, cin, cout)
  Tensor b;  // (cout)
  int stride = 1;
  int pad = 1;
};

struct EncoderParams {
  std::vector<ConvParams> layers;
};

struct MlpParams {
  Tensor w1, b1, w2, b2, w3, b3;
};

struct DecoderParams {
  MlpParams mlp;
  ConvParams res1_conv1, res1_conv2;
  ConvParams res2_conv1, res2_conv2;
  ConvParams out_conv;
};

// All weights of the six networks. The two domain branches share nothing.
struct ModelParameters {
  ArchConfig config;
  EncoderParams content_x, content_y;  // five stride-1 conv layers each
  EncoderParams style_x, style_y;      // four stride-2 conv layers each
  DecoderParams decoder_x, decoder_y;

  // Fixed enumeration order shared by the optimizer, checkpoints and
  // gradient collection.
  void for_each_tensor(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_tensor(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::size_t parameter_count() const;
};

// Seeded fan-in-scaled uniform initialization (bound sqrt(1/fan_in)),
// zero biases. Deterministic per seed.
ModelParameters init_parameters(std::uint64_t seed, const ArchConfig& config);

// --- autodiff bindings ----------------------------------------------------

struct ConvVars {
  Var w = nullptr;
  Var b = nullptr;
  int stride = 1;
  int pad = 1;
};

struct EncoderVars {
  std::vector<ConvVars> layers;
};

struct MlpVars {
  Var w1, b1, w2, b2, w3, b3;
};

struct DecoderVars {
  MlpVars mlp;
  ConvVars res1_conv1, res1_conv2, res2_conv1, res2_conv2, out_conv;
};

struct ModelVars {
  ArchConfig config;
  EncoderVars content_x, content_y, style_x, style_y;
  DecoderVars decoder_x, decoder_y;

  const EncoderVars& content(Domain d) const { return d == Domain::X ? content_x : content_y; }
  const EncoderVars& style(Domain d) const { return d == Domain::X ? style_x : style_y; }
  const DecoderVars& decoder(Domain d) const { return d == Domain::X ? decoder_x : decoder_y; }

  // Same order as ModelParameters::for_each_tensor.
  void for_each_var(const std::function<void(Var)>& fn) const;
};

ModelVars bind_model(Graph& g, const ModelParameters& params, bool requires_grad);

Var content_encode_v(Graph& g, const ModelVars& m, Domain d, Var patch);
Var style_encode_v(Graph& g, const ModelVars& m, Domain d, Var patch);
Var decode_v(Graph& g, const ModelVars& m, Domain d, Var content, Var style);

// --- plain forward passes (shape- and range-checked) ----------------------

Tensor content_encode(const ModelParameters& params, const Patch& patch);
Tensor style_encode(const ModelParameters& params, const Patch& patch);
Tensor decode(const ModelParameters& params, const Tensor& content, const Tensor& style, Domain domain);

// Standalone adaptive instance normalization on a feature map.
Tensor adain_apply(const Tensor& z, const Tensor& gamma, const Tensor& eta, double epsilon);

// Cross-domain translation: returns (into-X, into-Y) renderings that merge
// each input's content with the other domain's style.
std::pair<Patch, Patch> translate(const ModelParameters& params, const Patch& x, const Patch& y);
// Within-domain reconstruction.
std::pair<Patch, Patch> reconstruct(const ModelParameters& params, const Patch& x, const Patch& y);

// --- whole-image inference -------------------------------------------------

// Content path is resolution preserving and runs unpadded. The style path
// reflect-pads spatial dims up to a multiple of 16 (four stride-2 layers)
// before encoding.
Tensor infer_content_code(const ModelParameters& params, const Tensor& image, Domain domain);
Tensor infer_style_code(const ModelParameters& params, const Tensor& image, Domain domain);
Tensor infer_decode(const ModelParameters& params, const Tensor& content, const Tensor& style, Domain domain);

Tensor reflect_pad_to_multiple(const Tensor& image, int multiple);

// Checkpoint container round trip (float32 payload).
void save_model(const ModelParameters& params, const std::string& path);
ModelParameters load_model(const std::string& path);

void validate_patch(const ArchConfig& config, const Patch& patch, const char* context);

}  // namespace cstn
