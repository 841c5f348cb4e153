#include "tumorforge/losses.hpp"

#include "tumorforge/errors.hpp"

namespace tumorforge {

namespace {

std::string shape_text(const torch::Tensor& t) {
  std::string s = "[";
  for (std::int64_t i = 0; i < t.dim(); ++i) s += (i ? "," : "") + std::to_string(t.size(i));
  return s + "]";
}

torch::Tensor reduce(const torch::Tensor& t, Reduction reduction) {
  return reduction == Reduction::kSum ? t.sum() : t.mean();
}

}  // namespace

void LossWeights::validate() const {
  if (w_pix < 0.0 || w_cont < 0.0 || w_adv < 0.0) throw InvalidConfig("loss weights must be >= 0");
  if (w_pix == 0.0 && w_cont == 0.0 && w_adv == 0.0) throw InvalidConfig("loss weights are all zero");
}

LossWeights LossWeights::pix() { return {1.0, 0.0, 0.0}; }
LossWeights LossWeights::pix_adv() { return {1.0, 0.0, 0.01}; }
LossWeights LossWeights::pix_cont() { return {1.0, 0.1, 0.0}; }
LossWeights LossWeights::pix_adv_cont() { return {1.0, 0.1, 0.01}; }

torch::Tensor l1_loss(const torch::Tensor& pred, const torch::Tensor& target, Reduction reduction) {
  if (pred.sizes() != target.sizes()) {
    throw ShapeMismatch("l1_loss " + shape_text(pred) + " vs " + shape_text(target));
  }
  const auto diff = pred - target;
  if (BranchRecorder::active()) BranchRecorder::note(diff.sign());
  return reduce(diff.abs(), reduction);
}

torch::Tensor content_loss(const torch::Tensor& pred, const torch::Tensor& target, const NetworkHandle& psi,
                           Reduction reduction) {
  if (pred.sizes() != target.sizes()) {
    throw ShapeMismatch("content_loss " + shape_text(pred) + " vs " + shape_text(target));
  }
  if (pred.dim() != 4) throw ShapeMismatch("content_loss expects [B, C, H, W], got " + shape_text(pred));
  const auto b = pred.size(0), c = pred.size(1), h = pred.size(2), w = pred.size(3);
  // Fold contrasts into the batch so Ψ sees one contrast per sample.
  const auto fp = psi.module->forward_raw(pred.reshape({b * c, 1, h, w}), {});
  torch::Tensor ft;
  {
    torch::NoGradGuard no_grad;
    ft = psi.module->forward_raw(target.reshape({b * c, 1, h, w}).detach(), {});
  }
  return l1_loss(fp, ft, reduction);
}

torch::Tensor adversarial_loss(const torch::Tensor& d_real, const torch::Tensor& d_fake) {
  for (const auto* d : {&d_real, &d_fake}) {
    if (d->numel() == 0) throw ShapeMismatch("adversarial_loss needs non-empty batches");
    const auto lo = d->min().item<double>();
    const auto hi = d->max().item<double>();
    if (!(lo >= 0.0 && hi <= 1.0)) throw OutOfRange("discriminator output outside [0, 1]");
  }
  return d_real.mean() + (1.0 - d_fake).mean();
}

InpaintLoss total_inpaint_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& d_fake,
                               const NetworkHandle* psi, const LossWeights& weights) {
  weights.validate();
  InpaintLoss out;
  const auto zero = torch::zeros({}, pred.options());
  out.pix = weights.w_pix > 0.0 ? weights.w_pix * l1_loss(pred, target, weights.reduction) : zero;
  if (weights.w_cont > 0.0) {
    if (!psi) throw InvalidConfig("content term needs a feature extractor");
    out.cont = weights.w_cont * content_loss(pred, target, *psi, weights.reduction);
  } else {
    out.cont = zero;
  }
  if (weights.w_adv > 0.0) {
    if (!d_fake.defined()) throw InvalidConfig("adversarial term needs discriminator outputs");
    if (!(d_fake.min().item<double>() >= 0.0 && d_fake.max().item<double>() <= 1.0)) {
      throw OutOfRange("discriminator output outside [0, 1]");
    }
    out.adv = weights.w_adv * (1.0 - d_fake).mean();
  } else {
    out.adv = zero;
  }
  out.total = out.pix + out.cont + out.adv;
  return out;
}

}  // namespace tumorforge
