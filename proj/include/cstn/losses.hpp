#pragma once

#include "cstn/autograd.hpp"
#include "cstn/config.hpp"
#include "cstn/tensor.hpp"

namespace cstn {

struct LossBreakdown {
  double recon = 0.0;
  double trans = 0.0;
  double cyc = 0.0;
  double align = 0.0;
  double total = 0.0;
};

// Mean of all elements.
double mean_all(const Tensor& a);

// Squared-error means between originals and their within-domain
// reconstructions, summed over both domains.
double reconstruction_loss(const Tensor& x, const Tensor& y, const Tensor& x_recon, const Tensor& y_recon);

// Code-recovery loss: content and style codes re-encoded from the
// translated images against the codes used to produce them.
double translation_loss(const Tensor& content_x, const Tensor& content_y, const Tensor& style_x,
                        const Tensor& style_y, const Tensor& content_x_rec, const Tensor& content_y_rec,
                        const Tensor& style_x_rec, const Tensor& style_y_rec);

// As the reconstruction loss, with the cycle-reconstructed images.
double cycle_loss(const Tensor& x, const Tensor& y, const Tensor& x_cycle, const Tensor& y_cycle);

// Mask-guided content alignment: unchanged pixels pull cross-domain codes
// together, changed pixels push them apart (squared differences normalized
// by m). The (h, w) mask broadcasts across code channels.
double alignment_loss(const Tensor& content_x, const Tensor& recovered_y, const Tensor& recovered_x,
                      const Tensor& content_y, const Tensor& change_mask, double m = 4.0);

// Unweighted component sum; also fills `total`.
double total_loss(LossBreakdown& parts);

void validate_binary_mask(const Tensor& mask, const char* context);

// --- autodiff builders ------------------------------------------------------

Var reconstruction_loss_v(Graph& g, Var x, Var y, Var x_recon, Var y_recon);
Var translation_loss_v(Graph& g, Var content_x, Var content_y, Var style_x, Var style_y, Var content_x_rec,
                       Var content_y_rec, Var style_x_rec, Var style_y_rec);
Var cycle_loss_v(Graph& g, Var x, Var y, Var x_cycle, Var y_cycle);
Var alignment_loss_v(Graph& g, Var content_x, Var recovered_y, Var recovered_x, Var content_y,
                     const Tensor& change_mask, double m = 4.0);

}  // namespace cstn
