#include "protoreg/priors.hpp"

#include "protoreg/volgrid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace protoreg {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas h^2 (q - p)^2 + f[p] over the finite sites p.
// Sites with f[p] = inf are skipped; a row without sites stays at inf.
void squared_distance_1d(const std::vector<double>& f, std::vector<double>& out, double h,
                         std::vector<Index>& sites, std::vector<double>& bounds) {
  const Index n = Index(f.size());
  const double h2 = h * h;
  sites.clear();
  bounds.clear();
  auto meet = [&](Index p, Index r) {
    return ((f[r] + h2 * double(r * r)) - (f[p] + h2 * double(p * p))) / (2.0 * h2 * double(r - p));
  };
  for (Index q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (sites.empty()) {
      sites.push_back(q);
      bounds.push_back(-kInf);
      continue;
    }
    double s = meet(sites.back(), q);
    while (s <= bounds.back()) {
      sites.pop_back();
      bounds.pop_back();
      s = meet(sites.back(), q);
    }
    sites.push_back(q);
    bounds.push_back(s);
  }
  if (sites.empty()) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  std::size_t k = 0;
  for (Index q = 0; q < n; ++q) {
    while (k + 1 < sites.size() && bounds[k + 1] < double(q)) ++k;
    const double dq = double(q - sites[k]);
    out[std::size_t(q)] = h2 * dq * dq + f[std::size_t(sites[k])];
  }
}

// Squared mm distance from every voxel to the nearest voxel where `feature`.
Eigen::ArrayXd squared_distance_to(const Grid& g, const Eigen::Array<bool, Eigen::Dynamic, 1>& feature) {
  const Dims& d = g.dims;
  Eigen::ArrayXd dist(g.size());
  for (Index i = 0; i < g.size(); ++i) dist[i] = feature[i] ? 0.0 : kInf;
  const Index stride[3] = {1, d[0], d[0] * d[1]};
  std::vector<Index> sites;
  std::vector<double> bounds;
  for (int a = 0; a < 3; ++a) {
    const Index n = d[a];
    std::vector<double> f(static_cast<std::size_t>(n)), out(static_cast<std::size_t>(n));
    const int b = (a + 1) % 3, c = (a + 2) % 3;
    for (Index j = 0; j < d[c]; ++j)
      for (Index i = 0; i < d[b]; ++i) {
        const Index base = i * stride[b] + j * stride[c];
        for (Index q = 0; q < n; ++q) f[std::size_t(q)] = dist[base + q * stride[a]];
        squared_distance_1d(f, out, g.spacing[a], sites, bounds);
        for (Index q = 0; q < n; ++q) dist[base + q * stride[a]] = out[std::size_t(q)];
      }
  }
  return dist;
}

void require_prior_grid(const Volumef& a, const Volumef& b, const char* what) {
  require_same_dims(a.grid(), b.grid(), what);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

void StructureSet::validate() const {
  if (!is_binary(ctv)) throw ValidationError("CTV mask must be binary");
  for (const auto& oar : oars) {
    require_prior_grid(ctv, oar.mask, "structure set");
    if (!is_binary(oar.mask)) throw ValidationError("OAR mask '" + oar.name + "' must be binary");
  }
  if (body) {
    require_prior_grid(ctv, *body, "structure set");
    if (!is_binary(*body)) throw ValidationError("body mask must be binary");
  }
}

Volumef StructureSet::oar_union() const {
  Volumef u(ctv.grid(), 0.0f);
  for (const auto& oar : oars) u.data() = u.data().max(oar.mask.data());
  return u;
}

void PriorParams::validate() const {
  if (!(sigma_mm > 0.0)) throw ValidationError("sigma_mm must be positive");
  if (!(band_mm >= 0.0)) throw ValidationError("band_mm must be nonnegative");
  for (double w : {w_prox, w_band, w_oar, w_grad, w_iso, w_doseoar})
    if (!(w >= 0.0)) throw ValidationError("prior weights must be nonnegative");
  if (!(isodose_fraction > 0.0 && isodose_fraction <= 1.0))
    throw ValidationError("isodose_fraction must lie in (0, 1]");
  if (!(fusion_alpha >= 0.0 && fusion_alpha <= 1.0))
    throw ValidationError("fusion_alpha must lie in [0, 1]");
  if (!(gate_floor >= 0.0 && gate_floor <= 1.0))
    throw ValidationError("gate_floor must lie in [0, 1]");
  if (!std::isfinite(gate_steepness) || !std::isfinite(gate_center))
    throw ValidationError("gate parameters must be finite");
}

Volumef signed_distance(const Volumef& mask) {
  if (!is_binary(mask)) throw ValidationError("signed_distance: mask must be binary");
  const Index inside = count_nonzero(mask);
  if (inside == 0 || inside == mask.size())
    throw ValidationError("signed_distance: mask is empty or full, boundary undefined");
  const Eigen::Array<bool, Eigen::Dynamic, 1> in = mask.data() != 0.0f;
  const Eigen::ArrayXd to_inside = squared_distance_to(mask.grid(), in);
  const Eigen::ArrayXd to_outside = squared_distance_to(mask.grid(), !in);
  Volumef out(mask.grid());
  for (Index i = 0; i < mask.size(); ++i)
    out[i] = in[i] ? -float(std::sqrt(to_outside[i])) : float(std::sqrt(to_inside[i]));
  return out;
}

PriorMap gaussian_proximity(const Volumef& sdf, double sigma_mm) {
  if (!(sigma_mm > 0.0)) throw ValidationError("gaussian_proximity: sigma must be positive");
  const double k = 1.0 / (2.0 * sigma_mm * sigma_mm);
  return sdf.with_data(sdf.data().unaryExpr([k](float d) {
    const double pos = std::max(double(d), 0.0);
    return float(std::exp(-pos * pos * k));
  }));
}

PriorMap boundary_band(const Volumef& sdf, double band_mm) {
  if (!(band_mm >= 0.0)) throw ValidationError("boundary_band: band must be nonnegative");
  return sdf.with_data((sdf.data().abs().cast<double>() <= band_mm).cast<float>());
}

PriorMap anatomy_map(const StructureSet& structures, const PriorParams& params) {
  params.validate();
  structures.validate();
  if (count_nonzero(structures.ctv) == 0) throw ValidationError("anatomy_map: CTV is empty");
  const Volumef sdf = signed_distance(structures.ctv);
  const Eigen::ArrayXd prox = gaussian_proximity(sdf, params.sigma_mm).data().cast<double>();
  const Eigen::ArrayXd band = boundary_band(sdf, params.band_mm).data().cast<double>();
  const Eigen::ArrayXd oar = structures.oar_union().data().cast<double>();
  const Eigen::ArrayXd a = params.w_prox * prox + params.w_band * band + params.w_oar * oar;
  return sdf.with_data(a.max(0.0).min(1.0).cast<float>());
}

PriorMap risk_map(const Volumef& dose, const StructureSet& structures, const PriorParams& params) {
  params.validate();
  structures.validate();
  require_prior_grid(structures.ctv, dose, "risk_map");
  if (!dose.all_finite() || (dose.data() < 0.0f).any())
    throw ValidationError("risk_map: dose must be finite and nonnegative");
  const double dmax = double(dose.data().maxCoeff());
  if (!(dmax > 0.0)) throw ValidationError("risk_map: dose is identically zero");

  const Grid& g = dose.grid();
  const Dims& d = g.dims;
  const Eigen::ArrayXd dn = dose.data().cast<double>() / dmax;
  const Index stride[3] = {1, d[0], d[0] * d[1]};

  Eigen::ArrayXd grad(dn.size());
  for (Index i = 0; i < dn.size(); ++i) {
    Index p[3];
    detail::unravel(d, i, p[0], p[1], p[2]);
    double sq = 0.0;
    for (int a = 0; a < 3; ++a) {
      if (d[a] < 2) continue;
      double diff;
      if (p[a] == 0)
        diff = dn[i + stride[a]] - dn[i];
      else if (p[a] == d[a] - 1)
        diff = dn[i] - dn[i - stride[a]];
      else
        diff = 0.5 * (dn[i + stride[a]] - dn[i - stride[a]]);
      diff /= g.spacing[a];
      sq += diff * diff;
    }
    grad[i] = std::sqrt(sq);
  }
  const double gmax = grad.maxCoeff();
  if (gmax > 0.0) grad /= gmax;

  const Eigen::ArrayXd iso = (dn >= params.isodose_fraction).cast<double>();
  const Eigen::ArrayXd doar = dn * structures.oar_union().data().cast<double>();
  const Eigen::ArrayXd r = params.w_grad * grad + params.w_iso * iso + params.w_doseoar * doar;
  return dose.with_data(r.max(0.0).min(1.0).cast<float>());
}

PriorMap fuse_priors(const PriorMap& anatomy, const PriorMap& risk, double alpha) {
  require_prior_grid(anatomy, risk, "fuse_priors");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("fuse_priors: alpha must lie in [0, 1]");
  const Eigen::ArrayXd p =
      alpha * anatomy.data().cast<double>() + (1.0 - alpha) * risk.data().cast<double>();
  return anatomy.with_data(p.max(0.0).min(1.0).cast<float>());
}

PriorMap gate(const PriorMap& prior, const PriorParams& params, int level) {
  if (level < 1) throw ValidationError("gate: level must be at least 1");
  Volumef p = prior;
  for (int l = 1; l < level; ++l) p = downsample_avg(p);
  const double s = params.gate_steepness, c = params.gate_center;
  return p.with_data(
      p.data().unaryExpr([s, c](float v) { return float(sigmoid(s * (double(v) - c))); }));
}

Volumef gate_multiplier(const PriorMap& gate_map, const PriorParams& params) {
  const double g0 = params.gate_floor;
  return gate_map.with_data(
      (g0 + (1.0 - g0) * gate_map.data().cast<double>()).cast<float>());
}

}  // namespace protoreg
