#pragma once

// Foreground-masked registration objective
//
//   L(u) = -NCC_w(fixed, moving o (x + u)) + lambda * S(u)
//
// NCC_w is a global normalized cross-correlation with voxel weights
// w = mask * (1 + kappa * P) (P an optional prior map), and S is the mean over
// voxels of the nine squared forward differences of u. The gradient is the
// exact adjoint of both terms, using the derivative of the trilinear
// interpolant rather than a finite-difference image gradient.

#include "protoreg/core.hpp"
#include "protoreg/volgrid.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace protoreg {

/// Variance floor below which NCC is reported as 0 and flagged degenerate.
inline constexpr double kNccVarianceFloor = 1e-12;

struct LossBreakdown {
  double ncc = 0.0;
  double smoothness = 0.0;
  double total = 0.0;
  Index count = 0;
  bool degenerate = false;
};

struct NccStats {
  double ncc = 0.0;
  Index count = 0;
  bool degenerate = false;
  double weight_sum = 0.0;
  double mean_fixed = 0.0;
  double mean_warped = 0.0;
  double sff = 0.0;
  double sgg = 0.0;
  double sfg = 0.0;
};

/// Per-voxel similarity weights mask * (1 + kappa * prior).
template <typename Scalar>
class SimilarityWeights {
 public:
  SimilarityWeights(const Volume<Scalar>& mask, const Volume<Scalar>* prior = nullptr,
                    double kappa = 1.0) {
    if (!is_binary(mask)) throw ValidationError("similarity mask must be binary");
    count_ = count_nonzero(mask);
    if (count_ < 2) throw ValidationError("similarity mask needs at least 2 foreground voxels");
    values_ = mask.template cast<double>();
    if (prior != nullptr) {
      require_same_dims(mask.grid(), prior->grid(), "similarity weights");
      if (!(kappa >= 0.0)) throw ValidationError("prior weight kappa must be nonnegative");
      values_.data() *= 1.0 + kappa * prior->data().template cast<double>();
    }
  }

  const Volumed& values() const { return values_; }
  const Grid& grid() const { return values_.grid(); }
  Index count() const { return count_; }

 private:
  Volumed values_;
  Index count_ = 0;
};

namespace detail {

template <typename A, typename B>
NccStats ncc_from(const A& fixed, const B& warped, const Volumed& w, Index count) {
  NccStats s;
  s.count = count;
  const Index n = w.size();
  double sw = 0.0, sf = 0.0, sg = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double wi = w[i];
    if (wi == 0.0) continue;
    sw += wi;
    sf += wi * double(fixed[i]);
    sg += wi * double(warped[i]);
  }
  s.weight_sum = sw;
  s.mean_fixed = sf / sw;
  s.mean_warped = sg / sw;
  double sff = 0.0, sgg = 0.0, sfg = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double wi = w[i];
    if (wi == 0.0) continue;
    const double a = double(fixed[i]) - s.mean_fixed;
    const double b = double(warped[i]) - s.mean_warped;
    sff += wi * a * a;
    sgg += wi * b * b;
    sfg += wi * a * b;
  }
  s.sff = sff;
  s.sgg = sgg;
  s.sfg = sfg;
  if (sff / sw < kNccVarianceFloor || sgg / sw < kNccVarianceFloor) {
    s.degenerate = true;
    s.ncc = 0.0;
  } else {
    s.ncc = std::clamp(sfg / std::sqrt(sff * sgg), -1.0, 1.0);
  }
  return s;
}

}  // namespace detail

template <typename Scalar>
NccStats masked_ncc_stats(const Volume<Scalar>& fixed, const Volume<Scalar>& warped,
                          const SimilarityWeights<Scalar>& weights) {
  require_same_dims(fixed.grid(), warped.grid(), "masked_ncc");
  require_same_dims(fixed.grid(), weights.grid(), "masked_ncc");
  return detail::ncc_from(fixed.data(), warped.data(), weights.values(), weights.count());
}

template <typename Scalar>
double masked_ncc(const Volume<Scalar>& fixed, const Volume<Scalar>& warped,
                  const SimilarityWeights<Scalar>& weights) {
  return masked_ncc_stats(fixed, warped, weights).ncc;
}

/// Global NCC over mask voxels, optionally weighted by 1 + kappa * prior.
template <typename Scalar>
double masked_ncc(const Volume<Scalar>& fixed, const Volume<Scalar>& warped,
                  const Volume<Scalar>& mask, const Volume<Scalar>* prior = nullptr,
                  double kappa = 1.0) {
  return masked_ncc(fixed, warped, SimilarityWeights<Scalar>(mask, prior, kappa));
}

/// Mean over voxels of the sum of the 9 squared forward differences (voxel
/// units). Differences that would leave the grid are omitted.
template <typename Scalar>
double smoothness(const DisplacementField<Scalar>& field) {
  const Dims& d = field.dims();
  if ((d < 2).any()) throw ValidationError("smoothness: every axis needs at least 2 voxels");
  const Index stride[3] = {1, d[0], d[0] * d[1]};
  const auto& u = field.data();
  double sum = 0.0;
  for (Index z = 0; z < d[2]; ++z)
    for (Index y = 0; y < d[1]; ++y)
      for (Index x = 0; x < d[0]; ++x) {
        const Index i = field.grid().index(x, y, z);
        const Index p[3] = {x, y, z};
        for (int a = 0; a < 3; ++a) {
          if (p[a] + 1 >= d[a]) continue;
          const Index j = i + stride[a];
          for (int c = 0; c < 3; ++c) {
            const double diff = double(u(c, j)) - double(u(c, i));
            sum += diff * diff;
          }
        }
      }
  return sum / double(field.size());
}

/// Gradient of smoothness(): (2/N) times the negative Neumann Laplacian.
template <typename Scalar>
DisplacementField<Scalar> smoothness_gradient(const DisplacementField<Scalar>& field) {
  const Dims& d = field.dims();
  if ((d < 2).any()) throw ValidationError("smoothness: every axis needs at least 2 voxels");
  const Index stride[3] = {1, d[0], d[0] * d[1]};
  const auto& u = field.data();
  const double scale = 2.0 / double(field.size());
  DisplacementField<Scalar> out(field.grid());
  parallel_for(field.size(), [&](Index i) {
    Index p[3];
    detail::unravel(d, i, p[0], p[1], p[2]);
    for (int c = 0; c < 3; ++c) {
      const double ui = double(u(c, i));
      double g = 0.0;
      for (int a = 0; a < 3; ++a) {
        if (p[a] > 0) g += ui - double(u(c, i - stride[a]));
        if (p[a] + 1 < d[a]) g -= double(u(c, i + stride[a])) - ui;
      }
      out.data()(c, i) = Scalar(scale * g);
    }
  });
  return out;
}

template <typename Scalar>
LossBreakdown total_loss(const Volume<Scalar>& fixed, const Volume<Scalar>& moving,
                         const DisplacementField<Scalar>& field,
                         const SimilarityWeights<Scalar>& weights, double lambda) {
  require_same_dims(fixed.grid(), moving.grid(), "total_loss");
  const Volume<Scalar> warped = warp(moving, field);
  const NccStats s = masked_ncc_stats(fixed, warped, weights);
  LossBreakdown b;
  b.ncc = s.ncc;
  b.count = s.count;
  b.degenerate = s.degenerate;
  b.smoothness = smoothness(field);
  b.total = -b.ncc + lambda * b.smoothness;
  return b;
}

template <typename Scalar>
LossBreakdown total_loss(const Volume<Scalar>& fixed, const Volume<Scalar>& moving,
                         const DisplacementField<Scalar>& field, const Volume<Scalar>& mask,
                         double lambda, const Volume<Scalar>* prior = nullptr,
                         double kappa = 1.0) {
  return total_loss(fixed, moving, field, SimilarityWeights<Scalar>(mask, prior, kappa), lambda);
}

template <typename Scalar>
struct LossAndGradient {
  LossBreakdown loss;
  DisplacementField<Scalar> gradient;
};

/// Loss and dL/du at `field` in a single warp pass.
template <typename Scalar>
LossAndGradient<Scalar> loss_and_gradient(const Volume<Scalar>& fixed,
                                          const Volume<Scalar>& moving,
                                          const DisplacementField<Scalar>& field,
                                          const SimilarityWeights<Scalar>& weights,
                                          double lambda) {
  require_same_dims(fixed.grid(), moving.grid(), "loss_gradient");
  require_same_dims(fixed.grid(), field.grid(), "loss_gradient");
  require_same_dims(fixed.grid(), weights.grid(), "loss_gradient");
  const Dims d = fixed.dims();
  const Index n = fixed.size();
  const Volumed& w = weights.values();

  Eigen::ArrayXd warped(n);
  Eigen::Array3Xd slope(3, n);
  parallel_for(n, [&](Index i) {
    if (w[i] == 0.0) {
      warped[i] = 0.0;
      slope.col(i).setZero();
      return;
    }
    Index x, y, z;
    detail::unravel(d, i, x, y, z);
    const auto u = field[i];
    Vec3 g;
    const double v = detail::trilinear_grad(moving, double(x) + double(u[0]),
                                            double(y) + double(u[1]), double(z) + double(u[2]), g);
    // Round through Scalar so the loss matches warp() + masked_ncc bit for bit.
    warped[i] = double(Scalar(v));
    slope.col(i) = g.array();
  });

  const NccStats s = detail::ncc_from(fixed.data(), warped, w, weights.count());
  LossAndGradient<Scalar> out{LossBreakdown{}, smoothness_gradient(field)};
  out.loss.ncc = s.ncc;
  out.loss.count = s.count;
  out.loss.degenerate = s.degenerate;
  out.loss.smoothness = smoothness(field);
  out.loss.total = -out.loss.ncc + lambda * out.loss.smoothness;

  auto& grad = out.gradient.data();
  if (s.degenerate) {
    grad *= Scalar(lambda);
    return out;
  }
  const double inv_norm = 1.0 / std::sqrt(s.sff * s.sgg);
  const double cross = s.sfg * inv_norm / s.sgg;
  parallel_for(n, [&](Index i) {
    const double wi = w[i];
    Eigen::Array3d g = lambda * grad.col(i).template cast<double>();
    if (wi != 0.0) {
      const double a = double(fixed[i]) - s.mean_fixed;
      const double b = warped[i] - s.mean_warped;
      const double dncc = wi * (a * inv_norm - cross * b);
      g -= dncc * slope.col(i);
    }
    grad.col(i) = g.template cast<Scalar>();
  });
  return out;
}

template <typename Scalar>
DisplacementField<Scalar> loss_gradient(const Volume<Scalar>& fixed, const Volume<Scalar>& moving,
                                        const DisplacementField<Scalar>& field,
                                        const SimilarityWeights<Scalar>& weights, double lambda) {
  return loss_and_gradient(fixed, moving, field, weights, lambda).gradient;
}

template <typename Scalar>
DisplacementField<Scalar> loss_gradient(const Volume<Scalar>& fixed, const Volume<Scalar>& moving,
                                        const DisplacementField<Scalar>& field,
                                        const Volume<Scalar>& mask, double lambda,
                                        const Volume<Scalar>* prior = nullptr,
                                        double kappa = 1.0) {
  return loss_gradient(fixed, moving, field, SimilarityWeights<Scalar>(mask, prior, kappa),
                       lambda);
}

}  // namespace protoreg
