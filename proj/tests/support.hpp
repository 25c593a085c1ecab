#pragma once

// Random instances and brute-force reference implementations. The oracles
// follow the definitions directly (explicit loops, all-pairs searches, long
// double sums) and share no code with the library beyond the containers.

#include "protoreg/core.hpp"
#include "protoreg/priors.hpp"
#include "protoreg/rng.hpp"
#include "protoreg/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace protoreg::testing {

inline Grid make_grid(Index nx, Index ny, Index nz, Vec3 spacing = Vec3::Ones()) {
  Grid g;
  g.dims = Dims(nx, ny, nz);
  g.spacing = spacing;
  return g;
}

template <typename S = double>
Volume<S> random_volume(const Grid& g, CounterRng& rng, double lo = 0.0, double hi = 1.0) {
  Volume<S> v(g);
  for (Index i = 0; i < v.size(); ++i) v[i] = S(lo + (hi - lo) * rng.uniform());
  return v;
}

/// Binary mask with roughly `fraction` foreground and at least `min_count` voxels.
template <typename S = double>
Volume<S> random_mask(const Grid& g, CounterRng& rng, double fraction = 0.6, Index min_count = 4) {
  Volume<S> m(g);
  for (;;) {
    for (Index i = 0; i < m.size(); ++i) m[i] = rng.uniform() < fraction ? S(1) : S(0);
    if (count_nonzero(m) >= min_count) return m;
  }
}

/// Displacements whose fractional part stays in [0.1, 0.9] so sample points
/// keep clear of the interpolant's kinks at integer coordinates.
inline DisplacementFieldd random_offgrid_field(const Grid& g, CounterRng& rng) {
  DisplacementFieldd u(g);
  for (Index i = 0; i < u.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      const double whole = std::floor(3.0 * rng.uniform()) - 1.0;
      u.data()(c, i) = whole + 0.1 + 0.8 * rng.uniform();
    }
  return u;
}

template <typename S>
DisplacementField<S> random_field(const Grid& g, CounterRng& rng, double amplitude) {
  DisplacementField<S> u(g);
  for (Index i = 0; i < u.size(); ++i)
    for (int c = 0; c < 3; ++c) u.data()(c, i) = S(amplitude * (2.0 * rng.uniform() - 1.0));
  return u;
}

namespace oracle {

inline bool inside(const Dims& d, Index x, Index y, Index z) {
  return x >= 0 && y >= 0 && z >= 0 && x < d[0] && y < d[1] && z < d[2];
}

template <typename S>
double trilinear(const Volume<S>& v, double x, double y, double z) {
  const Index x0 = Index(std::floor(x)), y0 = Index(std::floor(y)), z0 = Index(std::floor(z));
  double acc = 0.0;
  for (Index k = z0; k <= z0 + 1; ++k)
    for (Index j = y0; j <= y0 + 1; ++j)
      for (Index i = x0; i <= x0 + 1; ++i) {
        const double w = (1.0 - std::abs(x - double(i))) * (1.0 - std::abs(y - double(j))) *
                         (1.0 - std::abs(z - double(k)));
        if (w > 0.0 && inside(v.dims(), i, j, k)) acc += w * double(v(i, j, k));
      }
  return acc;
}

template <typename S>
Volume<S> warp(const Volume<S>& m, const DisplacementField<S>& u) {
  Volume<S> out(m.grid());
  for (Index z = 0; z < m.dims()[2]; ++z)
    for (Index y = 0; y < m.dims()[1]; ++y)
      for (Index x = 0; x < m.dims()[0]; ++x) {
        const auto d = u(x, y, z);
        out(x, y, z) =
            S(trilinear(m, double(x) + double(d[0]), double(y) + double(d[1]), double(z) + double(d[2])));
      }
  return out;
}

/// Weighted Pearson correlation from raw moments in long double.
template <typename S>
double masked_ncc(const Volume<S>& f, const Volume<S>& g, const Eigen::ArrayXd& w) {
  long double sw = 0, sf = 0, sg = 0, sff = 0, sgg = 0, sfg = 0;
  for (Index i = 0; i < f.size(); ++i) {
    const long double wi = w[i], a = f[i], b = g[i];
    sw += wi;
    sf += wi * a;
    sg += wi * b;
    sff += wi * a * a;
    sgg += wi * b * b;
    sfg += wi * a * b;
  }
  const long double cff = sff - sf * sf / sw, cgg = sgg - sg * sg / sw, cfg = sfg - sf * sg / sw;
  if (cff / sw < 1e-12L || cgg / sw < 1e-12L) return 0.0;
  return double(cfg / std::sqrt(cff * cgg));
}

template <typename S>
Eigen::ArrayXd weights(const Volume<S>& mask, const Volume<S>* prior = nullptr, double kappa = 1.0) {
  Eigen::ArrayXd w(mask.size());
  for (Index i = 0; i < mask.size(); ++i)
    w[i] = double(mask[i]) * (prior ? 1.0 + kappa * double((*prior)[i]) : 1.0);
  return w;
}

/// Mean over voxels of the squared forward differences present in the grid.
template <typename S>
double smoothness(const DisplacementField<S>& u) {
  const Dims d = u.dims();
  long double sum = 0;
  for (Index z = 0; z < d[2]; ++z)
    for (Index y = 0; y < d[1]; ++y)
      for (Index x = 0; x < d[0]; ++x) {
        const Index nb[3][3] = {{x + 1, y, z}, {x, y + 1, z}, {x, y, z + 1}};
        for (const auto& n : nb) {
          if (!inside(d, n[0], n[1], n[2])) continue;
          for (int c = 0; c < 3; ++c) {
            const long double diff =
                (long double)u(n[0], n[1], n[2])[c] - (long double)u(x, y, z)[c];
            sum += diff * diff;
          }
        }
      }
  return double(sum / (long double)u.size());
}

template <typename S>
double total_loss(const Volume<S>& f, const Volume<S>& m, const DisplacementField<S>& u,
                  const Eigen::ArrayXd& w, double lambda) {
  return -oracle::masked_ncc(f, oracle::warp(m, u), w) + lambda * oracle::smoothness(u);
}

inline double mse(const Volumef& f, const Volumef& g, const Volumef& mask) {
  long double s = 0;
  Index n = 0;
  for (Index i = 0; i < f.size(); ++i)
    if (mask[i] != 0.0f) {
      const long double d = (long double)f[i] - (long double)g[i];
      s += d * d;
      ++n;
    }
  return double(s / n);
}

/// Direct windowed SSIM: every window enumerated, two-pass statistics.
inline double ssim(const Volumef& f, const Volumef& g, const Volumef& mask, Index window = 7,
                   double k1 = 0.01, double k2 = 0.03) {
  const Dims d = f.dims();
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Index i = 0; i < f.size(); ++i)
    if (mask[i] != 0.0f) {
      lo = std::min(lo, double(f[i]));
      hi = std::max(hi, double(f[i]));
    }
  const double L = hi - lo, c1 = (k1 * L) * (k1 * L), c2 = (k2 * L) * (k2 * L);
  const Index h = window / 2;
  long double total = 0;
  Index centres = 0;
  for (Index z = 0; z < d[2]; ++z)
    for (Index y = 0; y < d[1]; ++y)
      for (Index x = 0; x < d[0]; ++x) {
        if (mask(x, y, z) == 0.0f) continue;
        std::vector<double> a, b;
        for (Index k = z - h; k <= z + h; ++k)
          for (Index j = y - h; j <= y + h; ++j)
            for (Index i = x - h; i <= x + h; ++i)
              if (inside(d, i, j, k) && mask(i, j, k) != 0.0f) {
                a.push_back(f(i, j, k));
                b.push_back(g(i, j, k));
              }
        const double n = double(a.size());
        double ma = 0, mb = 0;
        for (std::size_t t = 0; t < a.size(); ++t) {
          ma += a[t];
          mb += b[t];
        }
        ma /= n;
        mb /= n;
        double va = 0, vb = 0, cov = 0;
        for (std::size_t t = 0; t < a.size(); ++t) {
          va += (a[t] - ma) * (a[t] - ma);
          vb += (b[t] - mb) * (b[t] - mb);
          cov += (a[t] - ma) * (b[t] - mb);
        }
        va /= n;
        vb /= n;
        cov /= n;
        total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++centres;
      }
  return double(total / centres);
}

inline double relvoldiff(const Volumef& a, const Volumef& b) {
  Index na = 0, nb = 0;
  for (Index i = 0; i < a.size(); ++i) {
    na += a[i] != 0.0f;
    nb += b[i] != 0.0f;
  }
  const double v = a.grid().spacing.prod();
  return 100.0 * std::abs(double(na) * v - double(nb) * v) / (double(na) * v);
}

/// All-pairs search for the nearest voxel centre of the opposite class (mm).
inline Volumed signed_distance(const Volumef& mask) {
  const Grid& g = mask.grid();
  const Dims d = g.dims;
  Volumed out(g);
  for (Index z = 0; z < d[2]; ++z)
    for (Index y = 0; y < d[1]; ++y)
      for (Index x = 0; x < d[0]; ++x) {
        const bool in = mask(x, y, z) != 0.0f;
        double best = std::numeric_limits<double>::infinity();
        for (Index k = 0; k < d[2]; ++k)
          for (Index j = 0; j < d[1]; ++j)
            for (Index i = 0; i < d[0]; ++i) {
              if ((mask(i, j, k) != 0.0f) == in) continue;
              const Vec3 r(double(i - x) * g.spacing[0], double(j - y) * g.spacing[1],
                           double(k - z) * g.spacing[2]);
              best = std::min(best, r.norm());
            }
        out(x, y, z) = in ? -best : best;
      }
  return out;
}

inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

inline Volumed anatomy_map(const StructureSet& s, const PriorParams& p) {
  const Volumed sdf = oracle::signed_distance(s.ctv);
  Volumed out(s.ctv.grid());
  for (Index i = 0; i < out.size(); ++i) {
    const double dd = sdf[i];
    const double prox = dd <= 0.0 ? 1.0 : std::exp(-dd * dd / (2.0 * p.sigma_mm * p.sigma_mm));
    const double band = std::abs(dd) <= p.band_mm ? 1.0 : 0.0;
    double oar = 0.0;
    for (const auto& o : s.oars)
      if (o.mask[i] != 0.0f) oar = 1.0;
    out[i] = clamp01(p.w_prox * prox + p.w_band * band + p.w_oar * oar);
  }
  return out;
}

inline Volumed risk_map(const Volumef& dose, const StructureSet& s, const PriorParams& p) {
  const Grid& g = dose.grid();
  const Dims d = g.dims;
  double dmax = 0.0;
  for (Index i = 0; i < dose.size(); ++i) dmax = std::max(dmax, double(dose[i]));
  auto dn = [&](Index x, Index y, Index z) { return double(dose(x, y, z)) / dmax; };
  Volumed grad(g);
  double gmax = 0.0;
  for (Index z = 0; z < d[2]; ++z)
    for (Index y = 0; y < d[1]; ++y)
      for (Index x = 0; x < d[0]; ++x) {
        const Index p0[3] = {x, y, z};
        double sq = 0.0;
        for (int a = 0; a < 3; ++a) {
          if (d[a] < 2) continue;
          Index lo[3] = {x, y, z}, hi[3] = {x, y, z};
          if (p0[a] > 0) --lo[a];
          if (p0[a] + 1 < d[a]) ++hi[a];
          const double dv = (dn(hi[0], hi[1], hi[2]) - dn(lo[0], lo[1], lo[2])) /
                            (double(hi[a] - lo[a]) * g.spacing[a]);
          sq += dv * dv;
        }
        grad(x, y, z) = std::sqrt(sq);
        gmax = std::max(gmax, grad(x, y, z));
      }
  Volumed out(g);
  for (Index z = 0; z < d[2]; ++z)
    for (Index y = 0; y < d[1]; ++y)
      for (Index x = 0; x < d[0]; ++x) {
        const double G = gmax > 0.0 ? grad(x, y, z) / gmax : 0.0;
        const double iso = dn(x, y, z) >= p.isodose_fraction ? 1.0 : 0.0;
        double oar = 0.0;
        for (const auto& o : s.oars)
          if (o.mask(x, y, z) != 0.0f) oar = 1.0;
        out(x, y, z) = clamp01(p.w_grad * G + p.w_iso * iso + p.w_doseoar * dn(x, y, z) * oar);
      }
  return out;
}

/// det(I + J) with J from central differences (one-sided at faces), built
/// entry by entry.
template <typename S>
double jacobian_det(const DisplacementField<S>& u, Index x, Index y, Index z) {
  const Dims d = u.dims();
  Eigen::Matrix3d j = Eigen::Matrix3d::Identity();
  for (int a = 0; a < 3; ++a) {
    Index lo[3] = {x, y, z}, hi[3] = {x, y, z};
    if (lo[a] > 0) --lo[a];
    if (hi[a] + 1 < d[a]) ++hi[a];
    const double span = double(hi[a] - lo[a]);
    for (int c = 0; c < 3; ++c)
      j(c, a) += (double(u(hi[0], hi[1], hi[2])[c]) - double(u(lo[0], lo[1], lo[2])[c])) / span;
  }
  return j.determinant();
}

}  // namespace oracle

/// Largest per-component relative error between the analytic loss gradient
/// and central differences of the loss. Components are compared against
/// max(|analytic|, |numeric|, floor * max|analytic|).
struct GradientCheck {
  double max_rel = 0.0;
  Index components = 0;
};

inline GradientCheck check_gradient(const Volumed& fixed, const Volumed& moving,
                                    const DisplacementFieldd& field,
                                    const SimilarityWeights<double>& weights, double lambda,
                                    double h = 1e-3, double floor = 1e-6) {
  const DisplacementFieldd g = loss_gradient(fixed, moving, field, weights, lambda);
  const double gmax = g.data().abs().maxCoeff();
  GradientCheck out;
  DisplacementFieldd probe = field;
  for (Index i = 0; i < field.size(); ++i)
    for (int c = 0; c < 3; ++c) {
      const double u0 = probe.data()(c, i);
      probe.data()(c, i) = u0 + h;
      const double lp = total_loss(fixed, moving, probe, weights, lambda).total;
      probe.data()(c, i) = u0 - h;
      const double lm = total_loss(fixed, moving, probe, weights, lambda).total;
      probe.data()(c, i) = u0;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = g.data()(c, i);
      const double denom = std::max({std::abs(an), std::abs(fd), floor * gmax, 1e-300});
      out.max_rel = std::max(out.max_rel, std::abs(an - fd) / denom);
      ++out.components;
    }
  return out;
}

}  // namespace protoreg::testing
