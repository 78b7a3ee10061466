#pragma once

// Training objectives. Each loss is a differentiable op with a closed-form
// backward; inputs are probabilities (1 x N) or logits (K x P).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "grace/autograd.hpp"
#include "grace/config.hpp"
#include "grace/types.hpp"

namespace grace::losses {

using ag::Var;

inline constexpr double kProbClamp = 1e-7;

namespace detail {

inline void check_lengths(const Var& probs, std::span<const std::uint8_t> target) {
  if (probs.rows() != 1 || probs.cols() != static_cast<Index>(target.size()))
    throw std::invalid_argument("loss: prediction/target length mismatch");
  if (target.empty()) throw std::invalid_argument("loss: empty input");
}

inline Var scalar_result(double value, const Var& input, std::function<void(ag::Node&)> bw) {
  Matrix v(1, 1);
  v(0, 0) = value;
  return ag::detail::make_result(std::move(v), {input}, std::move(bw));
}

}  // namespace detail

/// Mean over vertices of -alpha_t (1 - p_t)^gamma log(p_t), with
/// alpha_t = alpha for positives and 1 - alpha for negatives.
inline Var focal_loss(const Var& probs, std::span<const std::uint8_t> target, double alpha, double gamma) {
  detail::check_lengths(probs, target);
  const Index n = probs.cols();
  const auto& p = probs.value();
  RowVector dldp(n);
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const double raw = p(0, i);
    const double pc = std::clamp(raw, kProbClamp, 1 - kProbClamp);
    const bool pos = target[static_cast<std::size_t>(i)] != 0;
    const double pt = pos ? pc : 1 - pc;
    const double at = pos ? alpha : 1 - alpha;
    const double q = 1 - pt;
    const double mod = std::pow(q, gamma);
    total += -at * mod * std::log(pt);
    // d/dpt [-at q^g log pt] = -at (-g q^(g-1) log pt + q^g / pt)
    double dpt = -at * (mod / pt);
    if (gamma != 0) dpt += at * gamma * std::pow(q, gamma - 1) * std::log(pt);
    const bool clamped = raw <= kProbClamp || raw >= 1 - kProbClamp;
    dldp[i] = clamped ? 0.0 : (pos ? dpt : -dpt) / static_cast<double>(n);
  }
  return detail::scalar_result(total / static_cast<double>(n), probs, [dldp](ag::Node& self) {
    ag::detail::accumulate(*self.parents[0], self.grad(0, 0) * dldp);
  });
}

/// 1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps).
inline Var dice_loss(const Var& probs, std::span<const std::uint8_t> target, double epsilon) {
  detail::check_lengths(probs, target);
  const Index n = probs.cols();
  const auto& p = probs.value();
  double spt = 0, sp = 0, st = 0;
  for (Index i = 0; i < n; ++i) {
    const double t = target[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    spt += p(0, i) * t;
    sp += p(0, i);
    st += t;
  }
  const double num = 2 * spt + epsilon;
  const double den = sp + st + epsilon;
  RowVector dldp(n);
  for (Index i = 0; i < n; ++i) {
    const double t = target[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    dldp[i] = -(2 * t * den - num) / (den * den);
  }
  return detail::scalar_result(1 - num / den, probs, [dldp](ag::Node& self) {
    ag::detail::accumulate(*self.parents[0], self.grad(0, 0) * dldp);
  });
}

/// Mean binary cross-entropy, optionally class-weighted (w_pos, w_neg).
inline Var bce_loss(const Var& probs, std::span<const std::uint8_t> target, double w_pos = 1.0, double w_neg = 1.0) {
  detail::check_lengths(probs, target);
  const Index n = probs.cols();
  const auto& p = probs.value();
  RowVector dldp(n);
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const double raw = p(0, i);
    const double pc = std::clamp(raw, kProbClamp, 1 - kProbClamp);
    const bool pos = target[static_cast<std::size_t>(i)] != 0;
    total += pos ? -w_pos * std::log(pc) : -w_neg * std::log(1 - pc);
    const bool clamped = raw <= kProbClamp || raw >= 1 - kProbClamp;
    const double d = pos ? -w_pos / pc : w_neg / (1 - pc);
    dldp[i] = clamped ? 0.0 : d / static_cast<double>(n);
  }
  return detail::scalar_result(total / static_cast<double>(n), probs, [dldp](ag::Node& self) {
    ag::detail::accumulate(*self.parents[0], self.grad(0, 0) * dldp);
  });
}

namespace detail {

/// log(sigmoid(u)) without overflow.
inline double log_sigmoid(double u) { return u >= 0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u)); }

}  // namespace detail

/// focal_loss evaluated on logits (1 x N). Equal to focal_loss(sigmoid(z))
/// wherever the probability lies inside the clamp range; beyond it the
/// gradient stays finite and nonzero instead of being cut by the clamp.
inline Var focal_loss_with_logits(const Var& logits, std::span<const std::uint8_t> target, double alpha,
                                  double gamma) {
  detail::check_lengths(logits, target);
  const Index n = logits.cols();
  const auto& z = logits.value();
  RowVector dldz(n);
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const bool pos = target[static_cast<std::size_t>(i)] != 0;
    const double sign = pos ? 1.0 : -1.0;
    const double u = sign * z(0, i);
    const double at = pos ? alpha : 1 - alpha;
    const double log_pt = detail::log_sigmoid(u);
    const double pt = ag::stable_sigmoid(u);
    const double q = ag::stable_sigmoid(-u);
    const double mod = std::pow(q, gamma);
    total += -at * mod * log_pt;
    // d/du [-at q^g log pt] with dq/du = -pt q and d(log pt)/du = q.
    const double du = at * gamma * mod * pt * log_pt - at * mod * q;
    dldz[i] = sign * du / static_cast<double>(n);
  }
  return detail::scalar_result(total / static_cast<double>(n), logits, [dldz](ag::Node& self) {
    ag::detail::accumulate(*self.parents[0], self.grad(0, 0) * dldz);
  });
}

/// bce_loss evaluated on logits, with the same clamp-free gradient.
inline Var bce_loss_with_logits(const Var& logits, std::span<const std::uint8_t> target, double w_pos = 1.0,
                                double w_neg = 1.0) {
  detail::check_lengths(logits, target);
  const Index n = logits.cols();
  const auto& z = logits.value();
  RowVector dldz(n);
  double total = 0;
  for (Index i = 0; i < n; ++i) {
    const bool pos = target[static_cast<std::size_t>(i)] != 0;
    const double w = pos ? w_pos : w_neg;
    const double u = pos ? z(0, i) : -z(0, i);
    total += -w * detail::log_sigmoid(u);
    const double du = -w * ag::stable_sigmoid(-u);
    dldz[i] = (pos ? du : -du) / static_cast<double>(n);
  }
  return detail::scalar_result(total / static_cast<double>(n), logits, [dldz](ag::Node& self) {
    ag::detail::accumulate(*self.parents[0], self.grad(0, 0) * dldz);
  });
}

/// L_c: lambda * focal + (1 - lambda) * dice, or plain BCE for the
/// loss-ablation variant.
inline Var contact_loss(const Var& probs, std::span<const std::uint8_t> target, const LossConfig& cfg) {
  if (cfg.variant == LossVariant::kBce) return bce_loss(probs, target);
  const double lambda = cfg.focal_dice_mix;
  if (lambda == 1.0) return focal_loss(probs, target, cfg.focal_alpha, cfg.focal_gamma);
  if (lambda == 0.0) return dice_loss(probs, target, cfg.dice_epsilon);
  return ag::add(ag::scale(focal_loss(probs, target, cfg.focal_alpha, cfg.focal_gamma), lambda),
                 ag::scale(dice_loss(probs, target, cfg.dice_epsilon), 1 - lambda));
}

/// contact_loss on logits (1 x N): the focal and BCE terms use their logit
/// forms, dice takes sigmoid(z).
inline Var contact_loss_with_logits(const Var& logits, std::span<const std::uint8_t> target,
                                   const LossConfig& cfg) {
  if (cfg.variant == LossVariant::kBce) return bce_loss_with_logits(logits, target);
  const double lambda = cfg.focal_dice_mix;
  if (lambda == 1.0) return focal_loss_with_logits(logits, target, cfg.focal_alpha, cfg.focal_gamma);
  const Var dice = dice_loss(ag::sigmoid(logits), target, cfg.dice_epsilon);
  if (lambda == 0.0) return dice;
  return ag::add(ag::scale(focal_loss_with_logits(logits, target, cfg.focal_alpha, cfg.focal_gamma), lambda),
                 ag::scale(dice, 1 - lambda));
}

/// L_p: mean pixel cross-entropy of ((J+1) x H*W) logits against a part mask.
inline Var part_loss(const Var& logits, const PartMask& mask) {
  const Index classes = logits.rows();
  const Index pixels = logits.cols();
  if (pixels != mask.height * mask.width || static_cast<Index>(mask.mask.size()) != pixels)
    throw std::invalid_argument("part_loss: logits and mask shapes differ");
  if (classes != mask.parts + 1) throw std::invalid_argument("part_loss: expected J+1 logit rows");
  const auto& z = logits.value();
  auto grad = std::make_shared<Matrix>(classes, pixels);
  double total = 0;
  for (Index j = 0; j < pixels; ++j) {
    const Index label = mask.mask[static_cast<std::size_t>(j)];
    if (label > mask.parts) throw std::invalid_argument("part_loss: mask value exceeds J");
    const double m = z.col(j).maxCoeff();
    const auto e = (z.col(j).array() - m).exp();
    const double s = e.sum();
    total += std::log(s) + m - z(label, j);
    grad->col(j) = (e / s).matrix();
    (*grad)(label, j) -= 1.0;
  }
  *grad /= static_cast<double>(pixels);
  return detail::scalar_result(total / static_cast<double>(pixels), logits, [grad](ag::Node& self) {
    ag::detail::accumulate(*self.parents[0], self.grad(0, 0) * (*grad));
  });
}

/// L_total = omega_1 L_c + omega_2 L_p. An undefined `part` drops the
/// second term entirely.
inline Var total_loss(const Var& contact, const Var& part, const LossConfig& cfg) {
  Var lc = ag::scale(contact, cfg.contact_weight);
  if (!part.defined()) return lc;
  return ag::add(lc, ag::scale(part, cfg.part_weight));
}

}  // namespace grace::losses
