#pragma once

// Training objectives. All log terms clamp their argument at 1e-12.
//
//   spatial_ce   -(1/m) sum_{i, j in {a,b}} sum_{h,w,c} Y log Yhat
//   det_loss_G   -(1/m) sum_i <C_i, log Det(generated)>
//   det_loss_D   det_loss_G on ground-truth masks + det_loss_G on generated
//   dis_loss_G   bce: -(1/m) sum log Dis(fake)       hinge: -(1/m) sum Dis(fake)
//   dis_loss_D   bce: -(1/m) sum [log Dis(real) + log(1 - Dis(fake))]
//                hinge: -(1/m) sum [min(0, -1 + Dis(real)) + min(0, -1 - Dis(fake))]
//   total        ce + lambda_det * det_G + lambda_dis * dis_G

#include <cmath>
#include <cstddef>
#include <vector>

#include "dmac/adversary/networks.hpp"
#include "dmac/autodiff/ops.hpp"
#include "dmac/core/dmac_net.hpp"

namespace dmac::adversary {

struct LossWeights {
  double lambda_det = 0.01;
  double lambda_dis = 0.01;
  LossVariant variant = LossVariant::Bce;
};

namespace detail {

template <typename S>
void require_one_hot(const Tensor<S>& y, const char* what) {
  if (y.rank() < 2 || y.dim(1) != 2) {
    throw DimensionError(std::string(what) + ": expected two classes on axis 1, got " +
                         ad::to_string(y.shape()));
  }
  const std::size_t B = y.dim(0), inner = y.numel() / (2 * std::max<std::size_t>(B, 1));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < inner; ++p) {
      const S c0 = y[(b * 2) * inner + p], c1 = y[(b * 2 + 1) * inner + p];
      const bool ok = (c0 == S(1) && c1 == S(0)) || (c0 == S(0) && c1 == S(1));
      if (!ok) throw ValidationError(std::string(what) + ": labels are not one-hot");
    }
  }
}

// -(1/m) sum Y * log(Yhat)
template <typename S>
Tensor<S> cross_entropy_sum(const Tensor<S>& probs, const Tensor<S>& onehot, std::size_t m) {
  ad::detail::require_same_shape(probs, onehot, "cross_entropy");
  return ad::scale(ad::sum(ad::mul(onehot, ad::log_clamped(probs))), S(-1) / static_cast<S>(m));
}

template <typename S>
void require_probabilities(const Tensor<S>& scores, const char* what) {
  for (S v : scores.values()) {
    if (!(v >= S(0) && v <= S(1))) {
      throw ValidationError(std::string(what) + ": BCE score outside [0,1]");
    }
  }
}

template <typename S>
std::size_t batch_of(const std::vector<Tensor<S>>& scores) {
  if (scores.empty()) throw DimensionError("adversarial loss: no score tensors");
  const std::size_t m = scores.front().dim(0);
  for (const auto& s : scores) {
    if (s.dim(0) != m) throw DimensionError("adversarial loss: score batches differ");
  }
  if (m == 0) throw ParameterError("adversarial loss: empty batch");
  return m;
}

}  // namespace detail

// Pixel labels (B x h x w, values 0/1) to one-hot B x 2 x h x w.
template <typename S>
Tensor<S> one_hot_mask(const Tensor<S>& labels) {
  if (labels.rank() != 3) throw DimensionError("one_hot_mask: expected B x h x w labels");
  const std::size_t B = labels.dim(0), HW = labels.dim(1) * labels.dim(2);
  Tensor<S> out({B, 2, labels.dim(1), labels.dim(2)});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < HW; ++p) {
      const S v = labels[b * HW + p];
      if (v != S(0) && v != S(1)) throw ValidationError("one_hot_mask: label is not 0 or 1");
      out[(b * 2 + 1) * HW + p] = v;
      out[(b * 2) * HW + p] = S(1) - v;
    }
  }
  return out;
}

template <typename S>
Tensor<S> spatial_ce(const core::MaskPair<S>& masks, const Tensor<S>& gt_a, const Tensor<S>& gt_b) {
  detail::require_one_hot(gt_a, "spatial_ce");
  detail::require_one_hot(gt_b, "spatial_ce");
  const std::size_t m = masks.y_a.dim(0);
  if (m == 0) throw ParameterError("spatial_ce: empty batch");
  return ad::add(detail::cross_entropy_sum(masks.y_a, gt_a, m),
                 detail::cross_entropy_sum(masks.y_b, gt_b, m));
}

// `labels` is B x 2 one-hot (index 0 correlated).
template <typename S>
Tensor<S> det_loss_G(const Tensor<S>& det_probs, const Tensor<S>& labels) {
  detail::require_one_hot(labels, "det_loss");
  if (det_probs.dim(0) == 0) throw ParameterError("det_loss: empty batch");
  return detail::cross_entropy_sum(det_probs, labels, det_probs.dim(0));
}

template <typename S>
Tensor<S> det_loss_D(const Tensor<S>& probs_on_gt, const Tensor<S>& probs_on_generated,
                     const Tensor<S>& labels) {
  return ad::add(det_loss_G(probs_on_gt, labels), det_loss_G(probs_on_generated, labels));
}

// `fake` holds one B x 1 score tensor per image of the pair.
template <typename S>
Tensor<S> dis_loss_G(const std::vector<Tensor<S>>& fake, LossVariant variant) {
  const std::size_t m = detail::batch_of(fake);
  Tensor<S> total;
  for (const auto& s : fake) {
    Tensor<S> term;
    if (variant == LossVariant::Bce) {
      detail::require_probabilities(s, "dis_loss_G");
      term = ad::sum(ad::log_clamped(s));
    } else {
      term = ad::sum(s);
    }
    total = total.defined() ? ad::add(total, term) : term;
  }
  return ad::scale(total, S(-1) / static_cast<S>(m));
}

template <typename S>
Tensor<S> dis_loss_D(const std::vector<Tensor<S>>& real, const std::vector<Tensor<S>>& fake,
                     LossVariant variant) {
  const std::size_t m = detail::batch_of(real);
  if (detail::batch_of(fake) != m || fake.size() != real.size()) {
    throw DimensionError("dis_loss_D: real and fake scores differ in shape");
  }
  Tensor<S> total;
  auto accumulate = [&](Tensor<S> term) { total = total.defined() ? ad::add(total, term) : term; };
  for (std::size_t j = 0; j < real.size(); ++j) {
    if (variant == LossVariant::Bce) {
      detail::require_probabilities(real[j], "dis_loss_D");
      detail::require_probabilities(fake[j], "dis_loss_D");
      accumulate(ad::sum(ad::log_clamped(real[j])));
      accumulate(ad::sum(ad::log_clamped(ad::add_scalar(ad::scale(fake[j], S(-1)), S(1)))));
    } else {
      accumulate(ad::sum(ad::min_zero(ad::add_scalar(real[j], S(-1)))));
      accumulate(ad::sum(ad::min_zero(ad::add_scalar(ad::scale(fake[j], S(-1)), S(-1)))));
    }
  }
  return ad::scale(total, S(-1) / static_cast<S>(m));
}

// Zero-weighted terms are left out entirely, so (0, 0) returns `ce` itself.
template <typename S>
Tensor<S> dmac_total_loss(const Tensor<S>& ce, const Tensor<S>& det_g, const Tensor<S>& dis_g,
                          const LossWeights& w) {
  if (w.lambda_det < 0 || w.lambda_dis < 0) throw ParameterError("loss weights must be >= 0");
  Tensor<S> total = ce;
  if (w.lambda_det != 0) total = ad::add(total, ad::scale(det_g, static_cast<S>(w.lambda_det)));
  if (w.lambda_dis != 0) total = ad::add(total, ad::scale(dis_g, static_cast<S>(w.lambda_dis)));
  return total;
}

}  // namespace dmac::adversary
