#include "cstn/model.hpp"

#include <cmath>

#include "cstn/data_io.hpp"
#include "cstn/errors.hpp"
#include "cstn/rng.hpp"

namespace cstn {

const char* domain_name(Domain d) { return d == Domain::X ? "X" : "Y"; }

namespace {

constexpr int kKernel = 3;

int domain_channels(const ArchConfig& cfg, Domain d) {
  return d == Domain::X ? cfg.channels_x : cfg.channels_y;
}

void enumerate_encoder(const std::string& prefix, EncoderParams& enc,
                       const std::function<void(const std::string&, Tensor&)>& fn) {
  for (std::size_t i = 0; i < enc.layers.size(); ++i) {
    const std::string base = prefix + "/l" + std::to_string(i);
    fn(base + "/w", enc.layers[i].w);
    fn(base + "/b", enc.layers[i].b);
  }
}

void enumerate_decoder(const std::string& prefix, DecoderParams& dec,
                       const std::function<void(const std::string&, Tensor&)>& fn) {
  fn(prefix + "/mlp/w1", dec.mlp.w1);
  fn(prefix + "/mlp/b1", dec.mlp.b1);
  fn(prefix + "/mlp/w2", dec.mlp.w2);
  fn(prefix + "/mlp/b2", dec.mlp.b2);
  fn(prefix + "/mlp/w3", dec.mlp.w3);
  fn(prefix + "/mlp/b3", dec.mlp.b3);
  const auto conv = [&](const std::string& name, ConvParams& c) {
    fn(prefix + "/" + name + "/w", c.w);
    fn(prefix + "/" + name + "/b", c.b);
  };
  conv("res1_conv1", dec.res1_conv1);
  conv("res1_conv2", dec.res1_conv2);
  conv("res2_conv1", dec.res2_conv1);
  conv("res2_conv2", dec.res2_conv2);
  conv("out", dec.out_conv);
}

// Fan-in-scaled uniform for weights and biases alike; an exactly-zero bias
// would park thin ReLU layers on the activation kink, where they can neither
// train nor pass a finite-difference check.
ConvParams make_conv(int cin, int cout, int stride, RandomStream& rng) {
  ConvParams p;
  p.w = Tensor({kKernel, kKernel, cin, cout});
  p.b = Tensor({cout});
  p.stride = stride;
  p.pad = 1;
  const double bound = std::sqrt(1.0 / (static_cast<double>(kKernel) * kKernel * cin));
  for (std::size_t i = 0; i < p.w.size(); ++i) p.w[i] = rng.uniform(-bound, bound);
  for (std::size_t i = 0; i < p.b.size(); ++i) p.b[i] = rng.uniform(-bound, bound);
  return p;
}

Tensor make_linear_weight(int in, int out, RandomStream& rng) {
  Tensor w({in, out});
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-bound, bound);
  return w;
}

Tensor make_linear_bias(int in, int out, RandomStream& rng) {
  Tensor b({out});
  const double bound = std::sqrt(1.0 / static_cast<double>(in));
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = rng.uniform(-bound, bound);
  return b;
}

EncoderParams make_content_encoder(const ArchConfig& cfg, int cin, RandomStream& rng) {
  EncoderParams enc;
  int prev = cin;
  for (int width : cfg.content_ladder()) {
    enc.layers.push_back(make_conv(prev, width, 1, rng));
    prev = width;
  }
  return enc;
}

EncoderParams make_style_encoder(const ArchConfig& cfg, int cin, RandomStream& rng) {
  EncoderParams enc;
  int prev = cin;
  for (int width : cfg.style_ladder()) {
    enc.layers.push_back(make_conv(prev, width, 2, rng));
    prev = width;
  }
  return enc;
}

DecoderParams make_decoder(const ArchConfig& cfg, int cout, RandomStream& rng) {
  DecoderParams dec;
  const int ffb = cfg.ffb_channels;
  const int hidden = cfg.mlp_hidden;
  // Two modulated residual blocks -> two (gamma, eta) pairs of ffb width.
  const int mod_len = 4 * ffb;
  dec.mlp.w1 = make_linear_weight(cfg.style_dim, hidden, rng);
  dec.mlp.b1 = make_linear_bias(cfg.style_dim, hidden, rng);
  dec.mlp.w2 = make_linear_weight(hidden, hidden, rng);
  dec.mlp.b2 = make_linear_bias(hidden, hidden, rng);
  dec.mlp.w3 = make_linear_weight(hidden, mod_len, rng);
  dec.mlp.b3 = make_linear_bias(hidden, mod_len, rng);
  dec.res1_conv1 = make_conv(ffb, ffb, 1, rng);
  dec.res1_conv2 = make_conv(ffb, ffb, 1, rng);
  dec.res2_conv1 = make_conv(ffb, ffb, 1, rng);
  dec.res2_conv2 = make_conv(ffb, ffb, 1, rng);
  dec.out_conv = make_conv(ffb, cout, 1, rng);
  return dec;
}

ConvVars bind_conv(Graph& g, const ConvParams& p, bool rg) {
  ConvVars v;
  v.w = g.leaf(p.w, rg);
  v.b = g.leaf(p.b, rg);
  v.stride = p.stride;
  v.pad = p.pad;
  return v;
}

EncoderVars bind_encoder(Graph& g, const EncoderParams& p, bool rg) {
  EncoderVars v;
  for (const auto& layer : p.layers) v.layers.push_back(bind_conv(g, layer, rg));
  return v;
}

DecoderVars bind_decoder(Graph& g, const DecoderParams& p, bool rg) {
  DecoderVars v;
  v.mlp.w1 = g.leaf(p.mlp.w1, rg);
  v.mlp.b1 = g.leaf(p.mlp.b1, rg);
  v.mlp.w2 = g.leaf(p.mlp.w2, rg);
  v.mlp.b2 = g.leaf(p.mlp.b2, rg);
  v.mlp.w3 = g.leaf(p.mlp.w3, rg);
  v.mlp.b3 = g.leaf(p.mlp.b3, rg);
  v.res1_conv1 = bind_conv(g, p.res1_conv1, rg);
  v.res1_conv2 = bind_conv(g, p.res1_conv2, rg);
  v.res2_conv1 = bind_conv(g, p.res2_conv1, rg);
  v.res2_conv2 = bind_conv(g, p.res2_conv2, rg);
  v.out_conv = bind_conv(g, p.out_conv, rg);
  return v;
}

}  // namespace

void ModelParameters::for_each_tensor(const std::function<void(const std::string&, Tensor&)>& fn) {
  enumerate_encoder("content_x", content_x, fn);
  enumerate_encoder("content_y", content_y, fn);
  enumerate_encoder("style_x", style_x, fn);
  enumerate_encoder("style_y", style_y, fn);
  enumerate_decoder("decoder_x", decoder_x, fn);
  enumerate_decoder("decoder_y", decoder_y, fn);
}

void ModelParameters::for_each_tensor(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  auto* self = const_cast<ModelParameters*>(this);
  self->for_each_tensor([&fn](const std::string& name, Tensor& t) { fn(name, t); });
}

std::size_t ModelParameters::parameter_count() const {
  std::size_t n = 0;
  for_each_tensor([&n](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

ModelParameters init_parameters(std::uint64_t seed, const ArchConfig& config) {
  config.validate();
  ModelParameters p;
  p.config = config;
  RandomStream rng = RandomStream::derive(seed, "param_init");
  p.content_x = make_content_encoder(config, config.channels_x, rng);
  p.content_y = make_content_encoder(config, config.channels_y, rng);
  p.style_x = make_style_encoder(config, config.channels_x, rng);
  p.style_y = make_style_encoder(config, config.channels_y, rng);
  p.decoder_x = make_decoder(config, config.channels_x, rng);
  p.decoder_y = make_decoder(config, config.channels_y, rng);
  return p;
}

ModelVars bind_model(Graph& g, const ModelParameters& params, bool requires_grad) {
  ModelVars v;
  v.config = params.config;
  v.content_x = bind_encoder(g, params.content_x, requires_grad);
  v.content_y = bind_encoder(g, params.content_y, requires_grad);
  v.style_x = bind_encoder(g, params.style_x, requires_grad);
  v.style_y = bind_encoder(g, params.style_y, requires_grad);
  v.decoder_x = bind_decoder(g, params.decoder_x, requires_grad);
  v.decoder_y = bind_decoder(g, params.decoder_y, requires_grad);
  return v;
}

void ModelVars::for_each_var(const std::function<void(Var)>& fn) const {
  const auto enc = [&fn](const EncoderVars& e) {
    for (const auto& l : e.layers) {
      fn(l.w);
      fn(l.b);
    }
  };
  const auto dec = [&fn](const DecoderVars& d) {
    fn(d.mlp.w1);
    fn(d.mlp.b1);
    fn(d.mlp.w2);
    fn(d.mlp.b2);
    fn(d.mlp.w3);
    fn(d.mlp.b3);
    for (const ConvVars* c : {&d.res1_conv1, &d.res1_conv2, &d.res2_conv1, &d.res2_conv2, &d.out_conv}) {
      fn(c->w);
      fn(c->b);
    }
  };
  enc(content_x);
  enc(content_y);
  enc(style_x);
  enc(style_y);
  dec(decoder_x);
  dec(decoder_y);
}

Var content_encode_v(Graph& g, const ModelVars& m, Domain d, Var patch) {
  const EncoderVars& enc = m.content(d);
  Var h = patch;
  const std::size_t last = enc.layers.size() - 1;
  for (std::size_t i = 0; i < enc.layers.size(); ++i) {
    const ConvVars& l = enc.layers[i];
    h = conv2d(g, h, l.w, l.b, l.stride, l.pad);
    h = (i == last) ? tanh_op(g, h) : relu(g, h);
  }
  return h;
}

Var style_encode_v(Graph& g, const ModelVars& m, Domain d, Var patch) {
  const EncoderVars& enc = m.style(d);
  Var h = patch;
  for (const ConvVars& l : enc.layers) {
    h = conv2d(g, h, l.w, l.b, l.stride, l.pad);
    h = relu(g, h);
  }
  return global_avg_pool(g, h);
}

Var decode_v(Graph& g, const ModelVars& m, Domain d, Var content, Var style) {
  const DecoderVars& dec = m.decoder(d);
  const int ffb = m.config.ffb_channels;
  const double eps = m.config.adain_epsilon;

  Var h = linear(g, style, dec.mlp.w1, dec.mlp.b1);
  h = relu(g, h);
  h = linear(g, h, dec.mlp.w2, dec.mlp.b2);
  h = relu(g, h);
  Var mod = linear(g, h, dec.mlp.w3, dec.mlp.b3);
  Var gamma1 = slice(g, mod, 0, ffb);
  Var eta1 = slice(g, mod, ffb, ffb);
  Var gamma2 = slice(g, mod, 2 * ffb, ffb);
  Var eta2 = slice(g, mod, 3 * ffb, ffb);

  const auto res_block = [&](Var x, const ConvVars& c1, const ConvVars& c2, Var gamma, Var eta) {
    Var t = conv2d(g, x, c1.w, c1.b, c1.stride, c1.pad);
    t = adain(g, t, gamma, eta, eps);
    t = relu(g, t);
    t = conv2d(g, t, c2.w, c2.b, c2.stride, c2.pad);
    t = relu(g, t);
    return add(g, x, t);
  };

  Var x = res_block(content, dec.res1_conv1, dec.res1_conv2, gamma1, eta1);
  x = res_block(x, dec.res2_conv1, dec.res2_conv2, gamma2, eta2);
  x = conv2d(g, x, dec.out_conv.w, dec.out_conv.b, dec.out_conv.stride, dec.out_conv.pad);
  return sigmoid_op(g, x);
}

void validate_patch(const ArchConfig& config, const Patch& patch, const char* context) {
  const Tensor& t = patch.data;
  if (t.ndim() != 3) throw ShapeError(std::string(context) + ": patch must be (h,w,c), got " + shape_string(t));
  const int expected = domain_channels(config, patch.domain);
  if (t.dim(2) != expected) {
    throw ShapeError(std::string(context) + ": domain " + domain_name(patch.domain) + " expects " +
                     std::to_string(expected) + " channels, got " + std::to_string(t.dim(2)));
  }
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ValidationError(std::string(context) + ": patch values must lie in [0,1]");
    }
  }
}

Tensor content_encode(const ModelParameters& params, const Patch& patch) {
  validate_patch(params.config, patch, "content_encode");
  if (patch.data.dim(0) < 3 || patch.data.dim(1) < 3) {
    throw ShapeError("content_encode: spatial dims must be at least 3x3");
  }
  Graph g;
  ModelVars m = bind_model(g, params, false);
  Var in = g.leaf(patch.data, false);
  return content_encode_v(g, m, patch.domain, in)->value;
}

Tensor style_encode(const ModelParameters& params, const Patch& patch) {
  validate_patch(params.config, patch, "style_encode");
  if (patch.data.dim(0) < 1 || patch.data.dim(1) < 1) {
    throw ShapeError("style_encode: empty input");
  }
  Graph g;
  ModelVars m = bind_model(g, params, false);
  Var in = g.leaf(patch.data, false);
  return style_encode_v(g, m, patch.domain, in)->value;
}

Tensor decode(const ModelParameters& params, const Tensor& content, const Tensor& style, Domain domain) {
  if (content.ndim() != 3 || content.dim(2) != params.config.content_channels) {
    throw ShapeError("decode: content code must be (h,w," + std::to_string(params.config.content_channels) +
                     "), got " + shape_string(content));
  }
  if (style.ndim() != 1 || style.dim(0) != params.config.style_dim) {
    throw ShapeError("decode: style code must have length " + std::to_string(params.config.style_dim));
  }
  Graph g;
  ModelVars m = bind_model(g, params, false);
  Var c = g.leaf(content, false);
  Var s = g.leaf(style, false);
  return decode_v(g, m, domain, c, s)->value;
}

Tensor adain_apply(const Tensor& z, const Tensor& gamma, const Tensor& eta, double epsilon) {
  Graph g;
  Var zv = g.leaf(z, false);
  Var gv = g.leaf(gamma, false);
  Var ev = g.leaf(eta, false);
  return adain(g, zv, gv, ev, epsilon)->value;
}

std::pair<Patch, Patch> translate(const ModelParameters& params, const Patch& x, const Patch& y) {
  validate_patch(params.config, x, "translate");
  validate_patch(params.config, y, "translate");
  if (x.domain != Domain::X || y.domain != Domain::Y) throw ValidationError("translate: expects (X, Y) patches");
  if (x.data.dim(0) != y.data.dim(0) || x.data.dim(1) != y.data.dim(1)) {
    throw ShapeError("translate: spatial dims differ: " + shape_string(x.data) + " vs " + shape_string(y.data));
  }
  Tensor cx = content_encode(params, x);
  Tensor cy = content_encode(params, y);
  Tensor sx = style_encode(params, x);
  Tensor sy = style_encode(params, y);
  Patch into_x{decode(params, cy, sx, Domain::X), Domain::X};
  Patch into_y{decode(params, cx, sy, Domain::Y), Domain::Y};
  return {std::move(into_x), std::move(into_y)};
}

std::pair<Patch, Patch> reconstruct(const ModelParameters& params, const Patch& x, const Patch& y) {
  validate_patch(params.config, x, "reconstruct");
  validate_patch(params.config, y, "reconstruct");
  if (x.domain != Domain::X || y.domain != Domain::Y) throw ValidationError("reconstruct: expects (X, Y) patches");
  Patch rx{decode(params, content_encode(params, x), style_encode(params, x), Domain::X), Domain::X};
  Patch ry{decode(params, content_encode(params, y), style_encode(params, y), Domain::Y), Domain::Y};
  return {std::move(rx), std::move(ry)};
}

Tensor reflect_pad_to_multiple(const Tensor& image, int multiple) {
  if (image.ndim() != 3) throw ShapeError("reflect_pad_to_multiple: expected (H,W,C)");
  const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
  const int ph = (h % multiple == 0) ? h : (h / multiple + 1) * multiple;
  const int pw = (w % multiple == 0) ? w : (w / multiple + 1) * multiple;
  if (ph == h && pw == w) return image;
  const auto reflect = [](int idx, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    int j = idx % period;
    if (j >= n) j = period - 1 - j;
    return j;
  };
  Tensor out({ph, pw, c});
  for (int i = 0; i < ph; ++i) {
    const int si = reflect(i, h);
    for (int j = 0; j < pw; ++j) {
      const int sj = reflect(j, w);
      for (int ci = 0; ci < c; ++ci) out.at(i, j, ci) = image.at(si, sj, ci);
    }
  }
  return out;
}

Tensor infer_content_code(const ModelParameters& params, const Tensor& image, Domain domain) {
  Graph g;
  ModelVars m = bind_model(g, params, false);
  Var in = g.leaf(image, false);
  return content_encode_v(g, m, domain, in)->value;
}

Tensor infer_style_code(const ModelParameters& params, const Tensor& image, Domain domain) {
  Graph g;
  ModelVars m = bind_model(g, params, false);
  Var in = g.leaf(reflect_pad_to_multiple(image, 16), false);
  return style_encode_v(g, m, domain, in)->value;
}

Tensor infer_decode(const ModelParameters& params, const Tensor& content, const Tensor& style, Domain domain) {
  Graph g;
  ModelVars m = bind_model(g, params, false);
  Var c = g.leaf(content, false);
  Var s = g.leaf(style, false);
  return decode_v(g, m, domain, c, s)->value;
}

namespace {

Tensor scalar_entry(double v) { return Tensor::scalar(v); }

void push_meta(std::vector<NamedTensor>& entries, const ArchConfig& cfg) {
  entries.push_back({"meta/channels_x", scalar_entry(cfg.channels_x)});
  entries.push_back({"meta/channels_y", scalar_entry(cfg.channels_y)});
  entries.push_back({"meta/content_channels", scalar_entry(cfg.content_channels)});
  entries.push_back({"meta/style_dim", scalar_entry(cfg.style_dim)});
  entries.push_back({"meta/ffb_channels", scalar_entry(cfg.ffb_channels)});
  entries.push_back({"meta/mlp_hidden", scalar_entry(cfg.mlp_hidden)});
  entries.push_back({"meta/adain_epsilon", scalar_entry(cfg.adain_epsilon)});
}

}  // namespace

void save_model(const ModelParameters& params, const std::string& path) {
  std::vector<NamedTensor> entries;
  push_meta(entries, params.config);
  params.for_each_tensor([&entries](const std::string& name, const Tensor& t) { entries.push_back({name, t}); });
  write_tensor_container(path, entries);
}

ModelParameters load_model(const std::string& path) {
  const std::vector<NamedTensor> entries = read_tensor_container(path);
  const auto find = [&entries, &path](const std::string& name) -> const Tensor& {
    for (const auto& e : entries) {
      if (e.name == name) return e.tensor;
    }
    throw IoError("checkpoint '" + path + "' is missing entry '" + name + "'");
  };
  ArchConfig cfg;
  cfg.channels_x = static_cast<int>(find("meta/channels_x").scalar_value());
  cfg.channels_y = static_cast<int>(find("meta/channels_y").scalar_value());
  cfg.content_channels = static_cast<int>(find("meta/content_channels").scalar_value());
  cfg.style_dim = static_cast<int>(find("meta/style_dim").scalar_value());
  cfg.ffb_channels = static_cast<int>(find("meta/ffb_channels").scalar_value());
  cfg.mlp_hidden = static_cast<int>(find("meta/mlp_hidden").scalar_value());
  cfg.adain_epsilon = find("meta/adain_epsilon").scalar_value();

  ModelParameters p = init_parameters(0, cfg);
  p.for_each_tensor([&find, &path](const std::string& name, Tensor& t) {
    const Tensor& stored = find(name);
    if (!stored.same_shape(t)) {
      throw IoError("checkpoint '" + path + "': entry '" + name + "' has shape " + shape_string(stored) +
                    ", expected " + shape_string(t));
    }
    t = stored;
  });
  return p;
}

}  // namespace cstn
