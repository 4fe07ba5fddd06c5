#include "cstn/losses.hpp"

#include "cstn/errors.hpp"

namespace cstn {

double mean_all(const Tensor& a) {
  if (a.size() == 0) throw ValidationError("mean_all: empty array");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
  return acc / static_cast<double>(a.size());
}

void validate_binary_mask(const Tensor& mask, const char* context) {
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0.0 && mask[i] != 1.0) {
      throw ValidationError(std::string(context) + ": change mask must be strictly binary");
    }
  }
}

namespace {

Tensor complement(const Tensor& mask) {
  Tensor out(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = 1.0 - mask[i];
  return out;
}

}  // namespace

Var reconstruction_loss_v(Graph& g, Var x, Var y, Var x_recon, Var y_recon) {
  return add_n(g, {mse_mean(g, x, x_recon), mse_mean(g, y, y_recon)});
}

Var translation_loss_v(Graph& g, Var content_x, Var content_y, Var style_x, Var style_y, Var content_x_rec,
                       Var content_y_rec, Var style_x_rec, Var style_y_rec) {
  return add_n(g, {mse_mean(g, content_x, content_x_rec), mse_mean(g, content_y, content_y_rec),
                   mse_mean(g, style_x, style_x_rec), mse_mean(g, style_y, style_y_rec)});
}

Var cycle_loss_v(Graph& g, Var x, Var y, Var x_cycle, Var y_cycle) {
  return add_n(g, {mse_mean(g, x, x_cycle), mse_mean(g, y, y_cycle)});
}

Var alignment_loss_v(Graph& g, Var content_x, Var recovered_y, Var recovered_x, Var content_y,
                     const Tensor& change_mask, double m) {
  validate_binary_mask(change_mask, "alignment_loss");
  const Tensor unchanged = complement(change_mask);
  return add_n(g, {masked_sq_mean(g, content_x, recovered_y, unchanged),
                   masked_sq_mean(g, recovered_x, content_y, unchanged),
                   masked_comp_mean(g, content_x, recovered_y, change_mask, m),
                   masked_comp_mean(g, recovered_x, content_y, change_mask, m)});
}

double reconstruction_loss(const Tensor& x, const Tensor& y, const Tensor& x_recon, const Tensor& y_recon) {
  Graph g;
  return reconstruction_loss_v(g, g.leaf(x), g.leaf(y), g.leaf(x_recon), g.leaf(y_recon))->value.scalar_value();
}

double translation_loss(const Tensor& content_x, const Tensor& content_y, const Tensor& style_x,
                        const Tensor& style_y, const Tensor& content_x_rec, const Tensor& content_y_rec,
                        const Tensor& style_x_rec, const Tensor& style_y_rec) {
  Graph g;
  return translation_loss_v(g, g.leaf(content_x), g.leaf(content_y), g.leaf(style_x), g.leaf(style_y),
                            g.leaf(content_x_rec), g.leaf(content_y_rec), g.leaf(style_x_rec), g.leaf(style_y_rec))
      ->value.scalar_value();
}

double cycle_loss(const Tensor& x, const Tensor& y, const Tensor& x_cycle, const Tensor& y_cycle) {
  Graph g;
  return cycle_loss_v(g, g.leaf(x), g.leaf(y), g.leaf(x_cycle), g.leaf(y_cycle))->value.scalar_value();
}

double alignment_loss(const Tensor& content_x, const Tensor& recovered_y, const Tensor& recovered_x,
                      const Tensor& content_y, const Tensor& change_mask, double m) {
  Graph g;
  return alignment_loss_v(g, g.leaf(content_x), g.leaf(recovered_y), g.leaf(recovered_x), g.leaf(content_y),
                          change_mask, m)
      ->value.scalar_value();
}

double total_loss(LossBreakdown& parts) {
  parts.total = parts.recon + parts.trans + parts.cyc + parts.align;
  return parts.total;
}

}  // namespace cstn
