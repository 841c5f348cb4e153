#pragma once

#include <torch/torch.h>

#include <string>

#include "tumorforge/networks.hpp"

namespace tumorforge {

enum class Reduction { kSum, kMean };

struct LossWeights {
  double w_pix = 1.0;
  double w_cont = 0.1;
  double w_adv = 0.01;
  Reduction reduction = Reduction::kMean;

  /// Throws InvalidConfig on a negative weight or when all are zero.
  void validate() const;

  static LossWeights pix();
  static LossWeights pix_adv();
  static LossWeights pix_cont();
  static LossWeights pix_adv_cont();
};

/// Absolute sum (or mean) of pred - target. Throws ShapeMismatch.
torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& target, Reduction reduction = Reduction::kSum);

/// L1 between Ψ(pred) and Ψ(target). Each contrast goes through Ψ on its own
/// (replicated to three channels); the feature maps are concatenated.
torch::Tensor content_loss(const torch::Tensor& pred, const torch::Tensor& target, const NetworkHandle& psi,
                           Reduction reduction = Reduction::kSum);

/// mean(d_real) + mean(1 - d_fake). Throws OutOfRange outside [0, 1].
torch::Tensor adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake);

struct InpaintLoss {
  torch::Tensor total;
  torch::Tensor pix;
  torch::Tensor cont;
  torch::Tensor adv;
};

/// w_pix·L_pix + w_cont·L_cont + w_adv·mean(1 - d_fake). The breakdown holds
/// the weighted terms. Zero-weight terms are not evaluated; `psi` and
/// `d_fake` may then be empty.
InpaintLoss total_inpaint_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& d_fake,
                               const NetworkHandle* psi, const LossWeights& weights);

}  // namespace tumorforge
