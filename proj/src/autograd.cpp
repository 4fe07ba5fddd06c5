#include "cstn/autograd.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <utility>

#include "cstn/errors.hpp"

namespace cstn {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

bool any_requires(std::initializer_list<Var> vars) {
  for (Var v : vars) {
    if (v->requires_grad) return true;
  }
  return false;
}

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Expands x into the (rows = out pixels) x (cols = kh*kw*Cin) patch matrix.
// Column index is ((ky * kw) + kx) * Cin + ci, matching the (kh, kw, Cin,
// Cout) kernel layout viewed as a (kh*kw*Cin, Cout) matrix.
void im2col(const Tensor& x, int kh, int kw, int stride, int pad, AlignedBuffer& cols) {
  const int h = x.dim(0), w = x.dim(1), cin = x.dim(2);
  const int ho = conv_out_dim(h, kh, stride, pad);
  const int wo = conv_out_dim(w, kw, stride, pad);
  const std::size_t k = static_cast<std::size_t>(kh) * kw * cin;
  cols.assign(static_cast<std::size_t>(ho) * wo * k, 0.0);
  const double* xd = x.data();
  std::size_t row = 0;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox, ++row) {
      double* dst = cols.data() + row * k;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w) continue;
          const double* src = xd + (static_cast<std::size_t>(iy) * w + ix) * cin;
          double* out = dst + (static_cast<std::size_t>(ky) * kw + kx) * cin;
          for (int ci = 0; ci < cin; ++ci) out[ci] = src[ci];
        }
      }
    }
  }
}

// Scatter-add of the patch-matrix gradient back onto the input gradient.
void col2im_add(const AlignedBuffer& dcols, int h, int w, int cin, int kh, int kw, int stride, int pad,
                Tensor& dx) {
  const int ho = conv_out_dim(h, kh, stride, pad);
  const int wo = conv_out_dim(w, kw, stride, pad);
  const std::size_t k = static_cast<std::size_t>(kh) * kw * cin;
  double* xd = dx.data();
  std::size_t row = 0;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox, ++row) {
      const double* src_row = dcols.data() + row * k;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= w) continue;
          double* dst = xd + (static_cast<std::size_t>(iy) * w + ix) * cin;
          const double* src = src_row + (static_cast<std::size_t>(ky) * kw + kx) * cin;
          for (int ci = 0; ci < cin; ++ci) dst[ci] += src[ci];
        }
      }
    }
  }
}

}  // namespace

Var Graph::leaf(Tensor value, bool requires_grad) {
  return make(std::move(value), requires_grad, nullptr);
}

Var Graph::make(Tensor value, bool requires_grad, std::function<void()> backward) {
  auto node = std::make_unique<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return nodes_.back().get();
}

Tensor& Graph::ensure_grad(Var v) {
  if (v->grad.empty() && v->value.size() > 0) v->grad = Tensor(v->value.shape());
  return v->grad;
}

void Graph::backward(Var root, double seed) {
  if (root->value.size() != 1) {
    throw ShapeError("backward: root must be a scalar, got " + shape_string(root->value));
  }
  ensure_grad(root);
  root->grad[0] += seed;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node* n = it->get();
    if (n->backward && !n->grad.empty()) n->backward();
  }
}

Var conv2d(Graph& g, Var x, Var w, Var b, int stride, int pad) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  const Tensor& bv = b->value;
  if (xv.ndim() != 3) throw ShapeError("conv2d: input must be (H,W,C), got " + shape_string(xv));
  if (wv.ndim() != 4) throw ShapeError("conv2d: kernel must be (kh,kw,Cin,Cout), got " + shape_string(wv));
  const int h = xv.dim(0), wdt = xv.dim(1), cin = xv.dim(2);
  const int kh = wv.dim(0), kw = wv.dim(1), wcin = wv.dim(2), cout = wv.dim(3);
  if (cin != wcin) {
    throw ShapeError("conv2d: input channels " + std::to_string(cin) + " != kernel channels " + std::to_string(wcin));
  }
  if (bv.ndim() != 1 || bv.dim(0) != cout) throw ShapeError("conv2d: bias shape mismatch");
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: invalid stride/pad");
  const int ho = conv_out_dim(h, kh, stride, pad);
  const int wo = conv_out_dim(wdt, kw, stride, pad);
  if (ho < 1 || wo < 1) throw ShapeError("conv2d: input too small for kernel");

  const std::size_t rows = static_cast<std::size_t>(ho) * wo;
  const std::size_t k = static_cast<std::size_t>(kh) * kw * cin;

  // Scratch buffers persist per thread; conv patch matrices are by far the
  // largest transient allocations.
  thread_local AlignedBuffer cols;
  im2col(xv, kh, kw, stride, pad, cols);

  Tensor y({ho, wo, cout});
  {
    ConstMapRM cmat(cols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
    ConstMapRM wmat(wv.data(), static_cast<Eigen::Index>(k), cout);
    MapRM ymat(y.data(), static_cast<Eigen::Index>(rows), cout);
    ymat.noalias() = cmat * wmat;
    Eigen::Map<const Eigen::RowVectorXd> bvec(bv.data(), cout);
    ymat.rowwise() += bvec;
  }

  const bool rg = any_requires({x, w, b});
  Var out = g.make(std::move(y), rg, nullptr);
  if (!rg) return out;

  out->backward = [&g, x, w, b, out, stride, pad, h, wdt, cin, kh, kw, cout, rows, k]() {
    ConstMapRM dy(out->grad.data(), static_cast<Eigen::Index>(rows), cout);
    if (w->requires_grad || b->requires_grad) {
      thread_local AlignedBuffer cols2;
      im2col(x->value, kh, kw, stride, pad, cols2);
      ConstMapRM cmat(cols2.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
      if (w->requires_grad) {
        MapRM dw(Graph::ensure_grad(w).data(), static_cast<Eigen::Index>(k), cout);
        dw.noalias() += cmat.transpose() * dy;
      }
      if (b->requires_grad) {
        Eigen::Map<Eigen::RowVectorXd> db(Graph::ensure_grad(b).data(), cout);
        db.noalias() += dy.colwise().sum();
      }
    }
    if (x->requires_grad) {
      thread_local AlignedBuffer dcols;
      dcols.assign(rows * k, 0.0);
      MapRM dcmat(dcols.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(k));
      ConstMapRM wmat(w->value.data(), static_cast<Eigen::Index>(k), cout);
      dcmat.noalias() = dy * wmat.transpose();
      col2im_add(dcols, h, wdt, cin, kh, kw, stride, pad, Graph::ensure_grad(x));
    }
  };
  return out;
}

Var relu(Graph& g, Var x) {
  Tensor y(x->value.shape());
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) y[i] = x->value[i] > 0.0 ? x->value[i] : 0.0;
  Var out = g.make(std::move(y), x->requires_grad, nullptr);
  if (!x->requires_grad) return out;
  out->backward = [x, out, n]() {
    Tensor& dx = Graph::ensure_grad(x);
    for (std::size_t i = 0; i < n; ++i) {
      if (x->value[i] > 0.0) dx[i] += out->grad[i];
    }
  };
  return out;
}

Var tanh_op(Graph& g, Var x) {
  Tensor y(x->value.shape());
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x->value[i]);
  Var out = g.make(std::move(y), x->requires_grad, nullptr);
  if (!x->requires_grad) return out;
  out->backward = [x, out, n]() {
    Tensor& dx = Graph::ensure_grad(x);
    for (std::size_t i = 0; i < n; ++i) {
      const double t = out->value[i];
      dx[i] += out->grad[i] * (1.0 - t * t);
    }
  };
  return out;
}

Var sigmoid_op(Graph& g, Var x) {
  Tensor y(x->value.shape());
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x->value[i]));
  Var out = g.make(std::move(y), x->requires_grad, nullptr);
  if (!x->requires_grad) return out;
  out->backward = [x, out, n]() {
    Tensor& dx = Graph::ensure_grad(x);
    for (std::size_t i = 0; i < n; ++i) {
      const double s = out->value[i];
      dx[i] += out->grad[i] * s * (1.0 - s);
    }
  };
  return out;
}

Var linear(Graph& g, Var x, Var w, Var b) {
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  const Tensor& bv = b->value;
  if (xv.ndim() != 1 || wv.ndim() != 2) throw ShapeError("linear: expected vector input and (in,out) weights");
  const int in = wv.dim(0), outn = wv.dim(1);
  if (xv.dim(0) != in) {
    throw ShapeError("linear: input length " + std::to_string(xv.dim(0)) + " != weight rows " + std::to_string(in));
  }
  if (bv.ndim() != 1 || bv.dim(0) != outn) throw ShapeError("linear: bias shape mismatch");

  Tensor y({outn});
  {
    ConstMapRM wmat(wv.data(), in, outn);
    Eigen::Map<const Eigen::VectorXd> xvec(xv.data(), in);
    Eigen::Map<Eigen::VectorXd> yvec(y.data(), outn);
    yvec.noalias() = wmat.transpose() * xvec;
    Eigen::Map<const Eigen::VectorXd> bvec(bv.data(), outn);
    yvec += bvec;
  }
  const bool rg = any_requires({x, w, b});
  Var out = g.make(std::move(y), rg, nullptr);
  if (!rg) return out;
  out->backward = [x, w, b, out, in, outn]() {
    Eigen::Map<const Eigen::VectorXd> dy(out->grad.data(), outn);
    if (x->requires_grad) {
      ConstMapRM wmat(w->value.data(), in, outn);
      Eigen::Map<Eigen::VectorXd> dx(Graph::ensure_grad(x).data(), in);
      dx.noalias() += wmat * dy;
    }
    if (w->requires_grad) {
      Eigen::Map<const Eigen::VectorXd> xvec(x->value.data(), in);
      MapRM dw(Graph::ensure_grad(w).data(), in, outn);
      dw.noalias() += xvec * dy.transpose();
    }
    if (b->requires_grad) {
      Eigen::Map<Eigen::VectorXd> db(Graph::ensure_grad(b).data(), outn);
      db += dy;
    }
  };
  return out;
}

Var global_avg_pool(Graph& g, Var x) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 3) throw ShapeError("global_avg_pool: input must be (H,W,C)");
  const int h = xv.dim(0), w = xv.dim(1), c = xv.dim(2);
  const std::size_t pixels = static_cast<std::size_t>(h) * w;
  Tensor y({c});
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* src = xv.data() + p * c;
    for (int ci = 0; ci < c; ++ci) y[ci] += src[ci];
  }
  for (int ci = 0; ci < c; ++ci) y[ci] /= static_cast<double>(pixels);
  Var out = g.make(std::move(y), x->requires_grad, nullptr);
  if (!x->requires_grad) return out;
  out->backward = [x, out, pixels, c]() {
    Tensor& dx = Graph::ensure_grad(x);
    const double inv = 1.0 / static_cast<double>(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      double* dst = dx.data() + p * c;
      for (int ci = 0; ci < c; ++ci) dst[ci] += out->grad[ci] * inv;
    }
  };
  return out;
}

Var adain(Graph& g, Var z, Var gamma, Var eta, double eps) {
  const Tensor& zv = z->value;
  if (zv.ndim() != 3) throw ShapeError("adain: input must be (H,W,C)");
  const int c = zv.dim(2);
  if (gamma->value.ndim() != 1 || gamma->value.dim(0) != c || eta->value.ndim() != 1 || eta->value.dim(0) != c) {
    throw ShapeError("adain: modulation length must equal channel count " + std::to_string(c));
  }
  if (!(eps > 0.0)) throw ConfigError("adain: epsilon must be positive");
  const std::size_t pixels = zv.size() / static_cast<std::size_t>(c);
  const double n = static_cast<double>(pixels);

  std::vector<double> mu(c, 0.0), sd(c, 0.0);
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* src = zv.data() + p * c;
    for (int ci = 0; ci < c; ++ci) mu[ci] += src[ci];
  }
  for (int ci = 0; ci < c; ++ci) mu[ci] /= n;
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* src = zv.data() + p * c;
    for (int ci = 0; ci < c; ++ci) {
      const double d = src[ci] - mu[ci];
      sd[ci] += d * d;
    }
  }
  for (int ci = 0; ci < c; ++ci) sd[ci] = std::sqrt(sd[ci] / n);

  Tensor y(zv.shape());
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* src = zv.data() + p * c;
    double* dst = y.data() + p * c;
    for (int ci = 0; ci < c; ++ci) {
      dst[ci] = gamma->value[ci] * (src[ci] - mu[ci]) / (sd[ci] + eps) + eta->value[ci];
    }
  }
  const bool rg = any_requires({z, gamma, eta});
  Var out = g.make(std::move(y), rg, nullptr);
  if (!rg) return out;

  out->backward = [z, gamma, eta, out, mu, sd, eps, pixels, c, n]() {
    // Per channel with s = sd + eps and zhat = (z - mu) / s:
    //   d_gamma = sum(dy * zhat); d_eta = sum(dy); dzhat = dy * gamma;
    //   dz = (dzhat - mean(dzhat)) / s - zhat * sum(dzhat * zhat) / (n * sd).
    std::vector<double> s1(c, 0.0), s2(c, 0.0), dsum(c, 0.0), gsum(c, 0.0);
    for (std::size_t p = 0; p < pixels; ++p) {
      const double* zrow = z->value.data() + p * c;
      const double* dyrow = out->grad.data() + p * c;
      for (int ci = 0; ci < c; ++ci) {
        const double zhat = (zrow[ci] - mu[ci]) / (sd[ci] + eps);
        const double dzhat = dyrow[ci] * gamma->value[ci];
        s1[ci] += dzhat;
        s2[ci] += dzhat * zhat;
        dsum[ci] += dyrow[ci];
        gsum[ci] += dyrow[ci] * zhat;
      }
    }
    if (gamma->requires_grad) {
      Tensor& dgamma = Graph::ensure_grad(gamma);
      for (int ci = 0; ci < c; ++ci) dgamma[ci] += gsum[ci];
    }
    if (eta->requires_grad) {
      Tensor& deta = Graph::ensure_grad(eta);
      for (int ci = 0; ci < c; ++ci) deta[ci] += dsum[ci];
    }
    if (z->requires_grad) {
      Tensor& dz = Graph::ensure_grad(z);
      for (std::size_t p = 0; p < pixels; ++p) {
        const double* zrow = z->value.data() + p * c;
        const double* dyrow = out->grad.data() + p * c;
        double* dzrow = dz.data() + p * c;
        for (int ci = 0; ci < c; ++ci) {
          const double s = sd[ci] + eps;
          const double zhat = (zrow[ci] - mu[ci]) / s;
          const double dzhat = dyrow[ci] * gamma->value[ci];
          double grad = (dzhat - s1[ci] / n) / s;
          if (sd[ci] > 0.0) grad -= zhat * s2[ci] / (n * sd[ci]);
          dzrow[ci] += grad;
        }
      }
    }
  };
  return out;
}

Var slice(Graph& g, Var x, int offset, int len) {
  const Tensor& xv = x->value;
  if (xv.ndim() != 1) throw ShapeError("slice: expected 1-d tensor");
  if (offset < 0 || len < 0 || offset + len > xv.dim(0)) throw ShapeError("slice: range out of bounds");
  Tensor y({len});
  for (int i = 0; i < len; ++i) y[i] = xv[static_cast<std::size_t>(offset + i)];
  Var out = g.make(std::move(y), x->requires_grad, nullptr);
  if (!x->requires_grad) return out;
  out->backward = [x, out, offset, len]() {
    Tensor& dx = Graph::ensure_grad(x);
    for (int i = 0; i < len; ++i) dx[static_cast<std::size_t>(offset + i)] += out->grad[static_cast<std::size_t>(i)];
  };
  return out;
}

Var add(Graph& g, Var a, Var b) {
  require_same_shape(a->value, b->value, "add");
  Tensor y(a->value.shape());
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) y[i] = a->value[i] + b->value[i];
  const bool rg = any_requires({a, b});
  Var out = g.make(std::move(y), rg, nullptr);
  if (!rg) return out;
  out->backward = [a, b, out, n]() {
    if (a->requires_grad) {
      Tensor& da = Graph::ensure_grad(a);
      for (std::size_t i = 0; i < n; ++i) da[i] += out->grad[i];
    }
    if (b->requires_grad) {
      Tensor& db = Graph::ensure_grad(b);
      for (std::size_t i = 0; i < n; ++i) db[i] += out->grad[i];
    }
  };
  return out;
}

Var add_n(Graph& g, const std::vector<Var>& parts) {
  if (parts.empty()) throw ValidationError("add_n: no terms");
  double total = 0.0;
  bool rg = false;
  for (Var p : parts) {
    total += p->value.scalar_value();
    rg = rg || p->requires_grad;
  }
  Var out = g.make(Tensor::scalar(total), rg, nullptr);
  if (!rg) return out;
  std::vector<Var> captured = parts;
  out->backward = [captured, out]() {
    for (Var p : captured) {
      if (p->requires_grad) Graph::ensure_grad(p)[0] += out->grad[0];
    }
  };
  return out;
}

Var mse_mean(Graph& g, Var a, Var b) {
  require_same_shape(a->value, b->value, "mse_mean");
  const std::size_t n = a->value.size();
  if (n == 0) throw ValidationError("mse_mean: empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a->value[i] - b->value[i];
    acc += d * d;
  }
  const bool rg = any_requires({a, b});
  Var out = g.make(Tensor::scalar(acc / static_cast<double>(n)), rg, nullptr);
  if (!rg) return out;
  out->backward = [a, b, out, n]() {
    const double go = out->grad[0] * 2.0 / static_cast<double>(n);
    if (a->requires_grad) {
      Tensor& da = Graph::ensure_grad(a);
      for (std::size_t i = 0; i < n; ++i) da[i] += go * (a->value[i] - b->value[i]);
    }
    if (b->requires_grad) {
      Tensor& db = Graph::ensure_grad(b);
      for (std::size_t i = 0; i < n; ++i) db[i] -= go * (a->value[i] - b->value[i]);
    }
  };
  return out;
}

namespace {
void check_mask_shapes(const Tensor& a, const Tensor& b, const Tensor& mask, const char* context) {
  require_same_shape(a, b, context);
  if (a.ndim() != 3) throw ShapeError(std::string(context) + ": expected (H,W,C) inputs");
  if (mask.ndim() != 2 || mask.dim(0) != a.dim(0) || mask.dim(1) != a.dim(1)) {
    throw ShapeError(std::string(context) + ": mask shape " + shape_string(mask) + " does not match " + shape_string(a));
  }
}
}  // namespace

Var masked_sq_mean(Graph& g, Var a, Var b, const Tensor& mask) {
  check_mask_shapes(a->value, b->value, mask, "masked_sq_mean");
  const int c = a->value.dim(2);
  const std::size_t pixels = a->value.size() / static_cast<std::size_t>(c);
  const double n = static_cast<double>(a->value.size());
  double acc = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    const double m = mask[p];
    if (m == 0.0) continue;
    const double* av = a->value.data() + p * c;
    const double* bv = b->value.data() + p * c;
    double s = 0.0;
    for (int ci = 0; ci < c; ++ci) {
      const double d = av[ci] - bv[ci];
      s += d * d;
    }
    acc += m * s;
  }
  const bool rg = any_requires({a, b});
  Var out = g.make(Tensor::scalar(acc / n), rg, nullptr);
  if (!rg) return out;
  Tensor mask_copy = mask;
  out->backward = [a, b, out, mask_copy, pixels, c, n]() {
    const double go = out->grad[0] * 2.0 / n;
    for (std::size_t p = 0; p < pixels; ++p) {
      const double m = mask_copy[p];
      if (m == 0.0) continue;
      const double* av = a->value.data() + p * c;
      const double* bv = b->value.data() + p * c;
      if (a->requires_grad) {
        double* da = Graph::ensure_grad(a).data() + p * c;
        for (int ci = 0; ci < c; ++ci) da[ci] += go * m * (av[ci] - bv[ci]);
      }
      if (b->requires_grad) {
        double* db = Graph::ensure_grad(b).data() + p * c;
        for (int ci = 0; ci < c; ++ci) db[ci] -= go * m * (av[ci] - bv[ci]);
      }
    }
  };
  return out;
}

Var masked_comp_mean(Graph& g, Var a, Var b, const Tensor& mask, double m) {
  check_mask_shapes(a->value, b->value, mask, "masked_comp_mean");
  if (!(m > 0.0)) throw ValidationError("masked_comp_mean: scale must be positive");
  const int c = a->value.dim(2);
  const std::size_t pixels = a->value.size() / static_cast<std::size_t>(c);
  const double n = static_cast<double>(a->value.size());
  double acc = 0.0;
  for (std::size_t p = 0; p < pixels; ++p) {
    const double mk = mask[p];
    if (mk == 0.0) continue;
    const double* av = a->value.data() + p * c;
    const double* bv = b->value.data() + p * c;
    for (int ci = 0; ci < c; ++ci) {
      const double d = av[ci] - bv[ci];
      acc += mk * (1.0 - d * d / m);
    }
  }
  const bool rg = any_requires({a, b});
  Var out = g.make(Tensor::scalar(acc / n), rg, nullptr);
  if (!rg) return out;
  Tensor mask_copy = mask;
  out->backward = [a, b, out, mask_copy, pixels, c, n, m]() {
    const double go = out->grad[0] * 2.0 / (n * m);
    for (std::size_t p = 0; p < pixels; ++p) {
      const double mk = mask_copy[p];
      if (mk == 0.0) continue;
      const double* av = a->value.data() + p * c;
      const double* bv = b->value.data() + p * c;
      if (a->requires_grad) {
        double* da = Graph::ensure_grad(a).data() + p * c;
        for (int ci = 0; ci < c; ++ci) da[ci] -= go * mk * (av[ci] - bv[ci]);
      }
      if (b->requires_grad) {
        double* db = Graph::ensure_grad(b).data() + p * c;
        for (int ci = 0; ci < c; ++ci) db[ci] += go * mk * (av[ci] - bv[ci]);
      }
    }
  };
  return out;
}

}  // namespace cstn
