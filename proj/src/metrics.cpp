#include "protoreg/metrics.hpp"

#include "protoreg/similarity.hpp"
#include "protoreg/volgrid.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <vector>

namespace protoreg {

namespace {

void check_mask(const Volumef& mask, const Grid& g, const char* what) {
  require_same_dims(g, mask.grid(), what);
  if (!is_binary(mask)) throw ValidationError(std::string(what) + ": mask must be binary");
  if (count_nonzero(mask) == 0) throw ValidationError(std::string(what) + ": mask is empty");
}

// Inclusive-exclusive 3D prefix sums over a (n+1)^3 lattice.
class BoxSums {
 public:
  BoxSums(const Dims& d, const Eigen::ArrayXd& values) : d_(d + 1), sums_(Eigen::ArrayXd::Zero(d_.prod())) {
    for (Index z = 0; z < d[2]; ++z)
      for (Index y = 0; y < d[1]; ++y)
        for (Index x = 0; x < d[0]; ++x) {
          const double v = values[x + d[0] * (y + d[1] * z)];
          at(x + 1, y + 1, z + 1) = v + at(x, y + 1, z + 1) + at(x + 1, y, z + 1) +
                                    at(x + 1, y + 1, z) - at(x, y, z + 1) - at(x, y + 1, z) -
                                    at(x + 1, y, z) + at(x, y, z);
        }
  }

  // Sum over [lo, hi) per axis.
  double box(const Index lo[3], const Index hi[3]) const {
    return at(hi[0], hi[1], hi[2]) - at(lo[0], hi[1], hi[2]) - at(hi[0], lo[1], hi[2]) -
           at(hi[0], hi[1], lo[2]) + at(lo[0], lo[1], hi[2]) + at(lo[0], hi[1], lo[2]) +
           at(hi[0], lo[1], lo[2]) - at(lo[0], lo[1], lo[2]);
  }

 private:
  double& at(Index x, Index y, Index z) { return sums_[x + d_[0] * (y + d_[1] * z)]; }
  double at(Index x, Index y, Index z) const { return sums_[x + d_[0] * (y + d_[1] * z)]; }

  Dims d_;
  Eigen::ArrayXd sums_;
};

}  // namespace

double mse(const Volumef& fixed, const Volumef& warped, const Volumef& mask) {
  require_same_dims(fixed.grid(), warped.grid(), "mse");
  check_mask(mask, fixed.grid(), "mse");
  double sum = 0.0;
  Index n = 0;
  for (Index i = 0; i < fixed.size(); ++i) {
    if (mask[i] == 0.0f) continue;
    const double diff = double(fixed[i]) - double(warped[i]);
    sum += diff * diff;
    ++n;
  }
  return sum / double(n);
}

double ssim(const Volumef& fixed, const Volumef& warped, const Volumef& mask) {
  require_same_dims(fixed.grid(), warped.grid(), "ssim");
  check_mask(mask, fixed.grid(), "ssim");
  const Dims& d = fixed.dims();
  const Eigen::ArrayXd m = mask.data().cast<double>();
  // Background voxels are zeroed so they never reach a window sum.
  const Eigen::ArrayXd a = (mask.data() != 0.0f).select(fixed.data().cast<double>(), 0.0);
  const Eigen::ArrayXd b = (mask.data() != 0.0f).select(warped.data().cast<double>(), 0.0);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (Index i = 0; i < a.size(); ++i)
    if (m[i] != 0.0) {
      lo = std::min(lo, a[i]);
      hi = std::max(hi, a[i]);
    }
  const double range = hi - lo;
  if (!(range > 0.0)) throw ValidationError("ssim: fixed image has zero dynamic range in the mask");
  const double c1 = (kSsimK1 * range) * (kSsimK1 * range);
  const double c2 = (kSsimK2 * range) * (kSsimK2 * range);

  const BoxSums sm(d, m), sa(d, a), sb(d, b), saa(d, a * a), sbb(d, b * b), sab(d, a * b);
  const Index half = kSsimWindow / 2;
  double total = 0.0;
  Index centres = 0;
  for (Index i = 0; i < a.size(); ++i) {
    if (m[i] == 0.0) continue;
    Index p[3];
    detail::unravel(d, i, p[0], p[1], p[2]);
    Index lo_[3], hi_[3];
    for (int ax = 0; ax < 3; ++ax) {
      lo_[ax] = std::max<Index>(0, p[ax] - half);
      hi_[ax] = std::min<Index>(d[ax], p[ax] + half + 1);
    }
    const double n = sm.box(lo_, hi_);
    const double mu_a = sa.box(lo_, hi_) / n;
    const double mu_b = sb.box(lo_, hi_) / n;
    const double var_a = std::max(0.0, saa.box(lo_, hi_) / n - mu_a * mu_a);
    const double var_b = std::max(0.0, sbb.box(lo_, hi_) / n - mu_b * mu_b);
    const double cov = sab.box(lo_, hi_) / n - mu_a * mu_b;
    const double num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
    const double den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
    total += num / den;
    ++centres;
  }
  return total / double(centres);
}

double relvoldiff(const Volumef& ctv_fixed, const Volumef& ctv_propagated) {
  if (!is_binary(ctv_fixed) || !is_binary(ctv_propagated))
    throw ValidationError("relvoldiff: masks must be binary");
  const double vf = double(count_nonzero(ctv_fixed)) * ctv_fixed.grid().voxel_volume();
  if (vf == 0.0) throw ValidationError("relvoldiff: fixed CTV is empty");
  const double vp = double(count_nonzero(ctv_propagated)) * ctv_propagated.grid().voxel_volume();
  return 100.0 * std::abs(vf - vp) / vf;
}

double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) throw ValidationError("percentile of an empty sample");
  std::sort(samples.begin(), samples.end());
  const double pos = q * double(samples.size() - 1);
  const auto k = std::size_t(std::floor(pos));
  if (k + 1 >= samples.size()) return samples.back();
  const double t = pos - double(k);
  return samples[k] + t * (samples[k + 1] - samples[k]);
}

EndpointStats endpoint_error(const DisplacementFieldf& field, const DisplacementFieldf& truth,
                             const Volumef* mask) {
  require_same_dims(field.grid(), truth.grid(), "endpoint_error");
  if (mask != nullptr) check_mask(*mask, field.grid(), "endpoint_error");
  std::vector<double> err;
  err.reserve(std::size_t(field.size()));
  for (Index i = 0; i < field.size(); ++i) {
    if (mask != nullptr && (*mask)[i] == 0.0f) continue;
    err.push_back((field[i].cast<double>() - truth[i].cast<double>()).matrix().norm());
  }
  EndpointStats s;
  s.count = Index(err.size());
  double sum = 0.0;
  for (double e : err) sum += e;
  s.mean = sum / double(err.size());
  s.max = *std::max_element(err.begin(), err.end());
  s.median = percentile(err, 0.5);
  s.p95 = percentile(std::move(err), 0.95);
  return s;
}

double fold_fraction(const DisplacementFieldf& field) {
  const Volumed det = jacobian_det(field.cast<double>());
  const Dims& d = field.dims();
  Index interior = 0, folded = 0;
  for (Index z = 1; z + 1 < d[2]; ++z)
    for (Index y = 1; y + 1 < d[1]; ++y)
      for (Index x = 1; x + 1 < d[0]; ++x) {
        ++interior;
        if (det(x, y, z) <= 0.0) ++folded;
      }
  return interior == 0 ? 0.0 : 100.0 * double(folded) / double(interior);
}

MetricReport evaluate_metrics(const Volumef& fixed, const Volumef& warped,
                              const MetricInputs& extra) {
  require_same_dims(fixed.grid(), warped.grid(), "metrics");
  const Volumef all(fixed.grid(), 1.0f);
  const Volumef& mask = extra.mask != nullptr ? *extra.mask : all;
  check_mask(mask, fixed.grid(), "metrics");

  MetricReport r;
  r.ncc_pct = 100.0 * masked_ncc(fixed, warped, mask);
  r.mse = mse(fixed, warped, mask);
  r.ssim_pct = 100.0 * ssim(fixed, warped, mask);
  r.mask_voxels = count_nonzero(mask);
  r.intensity_min = std::numeric_limits<double>::infinity();
  r.intensity_max = -r.intensity_min;
  for (Index i = 0; i < fixed.size(); ++i)
    if (mask[i] != 0.0f) {
      r.intensity_min = std::min(r.intensity_min, double(fixed[i]));
      r.intensity_max = std::max(r.intensity_max, double(fixed[i]));
    }
  if (extra.ctv_fixed != nullptr && extra.ctv_propagated != nullptr)
    r.relvoldiff_pct = relvoldiff(*extra.ctv_fixed, *extra.ctv_propagated);
  if (extra.field != nullptr) {
    r.fold_pct = fold_fraction(*extra.field);
    if (extra.truth != nullptr)
      r.endpoint = endpoint_error(*extra.field, *extra.truth, extra.mask);
  }
  return r;
}

}  // namespace protoreg
