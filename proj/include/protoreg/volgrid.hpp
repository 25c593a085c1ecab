#pragma once

// Grid operations: interpolation, warping, pooling pyramids, field
// upsampling/composition and Jacobian analysis. All functions are pure.

#include "protoreg/core.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace protoreg {

namespace detail {

// Trilinear interpolation with zero padding outside the grid: each of the 8
// neighbours that falls outside contributes 0.
template <typename Scalar>
double trilinear(const Volume<Scalar>& vol, double x, double y, double z) {
  const Dims& d = vol.dims();
  if (x <= -1.0 || y <= -1.0 || z <= -1.0 || x >= double(d[0]) || y >= double(d[1]) ||
      z >= double(d[2]))
    return 0.0;
  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const Index x0 = Index(fx), y0 = Index(fy), z0 = Index(fz);
  const double tx = x - fx, ty = y - fy, tz = z - fz;
  double acc = 0.0;
  for (Index dz = 0; dz < 2; ++dz) {
    const Index zi = z0 + dz;
    if (zi < 0 || zi >= d[2]) continue;
    const double wz = dz ? tz : 1.0 - tz;
    for (Index dy = 0; dy < 2; ++dy) {
      const Index yi = y0 + dy;
      if (yi < 0 || yi >= d[1]) continue;
      const double wy = dy ? ty : 1.0 - ty;
      for (Index dx = 0; dx < 2; ++dx) {
        const Index xi = x0 + dx;
        if (xi < 0 || xi >= d[0]) continue;
        const double wx = dx ? tx : 1.0 - tx;
        acc += wx * wy * wz * double(vol(xi, yi, zi));
      }
    }
  }
  return acc;
}

// Value and exact partial derivatives (voxel units) of the same interpolant.
// At integer coordinates the derivative is the one-sided (upper cell) slope.
template <typename Scalar>
double trilinear_grad(const Volume<Scalar>& vol, double x, double y, double z, Vec3& grad) {
  grad.setZero();
  const Dims& d = vol.dims();
  if (x <= -1.0 || y <= -1.0 || z <= -1.0 || x >= double(d[0]) || y >= double(d[1]) ||
      z >= double(d[2]))
    return 0.0;
  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const Index x0 = Index(fx), y0 = Index(fy), z0 = Index(fz);
  const double tx = x - fx, ty = y - fy, tz = z - fz;
  double acc = 0.0;
  for (Index dz = 0; dz < 2; ++dz) {
    const Index zi = z0 + dz;
    if (zi < 0 || zi >= d[2]) continue;
    const double wz = dz ? tz : 1.0 - tz;
    const double sz = dz ? 1.0 : -1.0;
    for (Index dy = 0; dy < 2; ++dy) {
      const Index yi = y0 + dy;
      if (yi < 0 || yi >= d[1]) continue;
      const double wy = dy ? ty : 1.0 - ty;
      const double sy = dy ? 1.0 : -1.0;
      for (Index dx = 0; dx < 2; ++dx) {
        const Index xi = x0 + dx;
        if (xi < 0 || xi >= d[0]) continue;
        const double wx = dx ? tx : 1.0 - tx;
        const double sx = dx ? 1.0 : -1.0;
        const double v = double(vol(xi, yi, zi));
        acc += wx * wy * wz * v;
        grad[0] += sx * wy * wz * v;
        grad[1] += wx * sy * wz * v;
        grad[2] += wx * wy * sz * v;
      }
    }
  }
  return acc;
}

inline void unravel(const Dims& d, Index i, Index& x, Index& y, Index& z) {
  x = i % d[0];
  const Index r = i / d[0];
  y = r % d[1];
  z = r / d[1];
}

// d/d(axis) of component `c` at voxel (x,y,z): central in the interior,
// one-sided at faces. Requires dims >= 2 along `axis`.
template <typename Scalar>
double field_derivative(const DisplacementField<Scalar>& f, Index x, Index y, Index z, int c,
                        int axis) {
  const Dims& d = f.dims();
  Index p[3] = {x, y, z};
  const Index n = d[axis];
  Index lo[3] = {x, y, z}, hi[3] = {x, y, z};
  double scale = 1.0;
  if (p[axis] == 0) {
    hi[axis] = 1;
  } else if (p[axis] == n - 1) {
    lo[axis] = n - 2;
  } else {
    lo[axis] = p[axis] - 1;
    hi[axis] = p[axis] + 1;
    scale = 0.5;
  }
  return scale * (double(f(hi[0], hi[1], hi[2])[c]) - double(f(lo[0], lo[1], lo[2])[c]));
}

}  // namespace detail

/// Trilinear sample at a continuous voxel coordinate. Neighbours outside
/// [0, n-1] read as zero.
template <typename Scalar>
double trilinear_sample(const Volume<Scalar>& vol, const Vec3& p) {
  if (!p.allFinite()) throw ValidationError("trilinear_sample: non-finite coordinate");
  return detail::trilinear(vol, p[0], p[1], p[2]);
}

/// output(x) = moving(x + u(x)).
template <typename Scalar>
Volume<Scalar> warp(const Volume<Scalar>& moving, const DisplacementField<Scalar>& field) {
  require_same_dims(moving.grid(), field.grid(), "warp");
  Volume<Scalar> out(moving.grid());
  const Dims d = moving.dims();
  parallel_for(moving.size(), [&](Index i) {
    Index x, y, z;
    detail::unravel(d, i, x, y, z);
    const auto u = field[i];
    out[i] = Scalar(detail::trilinear(moving, double(x) + double(u[0]), double(y) + double(u[1]),
                                      double(z) + double(u[2])));
  });
  return out;
}

/// Factor-2 average pooling. Trailing odd slabs average over the voxels they
/// actually contain. Spacing doubles, origin is kept.
template <typename Scalar>
Volume<Scalar> downsample_avg(const Volume<Scalar>& vol) {
  const Dims& d = vol.dims();
  Grid g = vol.grid();
  g.dims = (d + 1) / 2;
  g.spacing *= 2.0;
  Volume<Scalar> out(g);
  const Dims od = g.dims;
  parallel_for(out.size(), [&](Index i) {
    Index x, y, z;
    detail::unravel(od, i, x, y, z);
    double sum = 0.0;
    int count = 0;
    for (Index zz = 2 * z; zz < std::min(2 * z + 2, d[2]); ++zz)
      for (Index yy = 2 * y; yy < std::min(2 * y + 2, d[1]); ++yy)
        for (Index xx = 2 * x; xx < std::min(2 * x + 2, d[0]); ++xx) {
          sum += double(vol(xx, yy, zz));
          ++count;
        }
    out[i] = Scalar(sum / count);
  });
  return out;
}

/// Resample a coarse field onto the next finer grid (dims `target`, with
/// ceil(target / 2) == coarse dims) and double the displacements. Fine voxel i
/// reads coarse coordinate i / 2, clamped to the coarse extent.
template <typename Scalar>
DisplacementField<Scalar> upsample_field(const DisplacementField<Scalar>& field,
                                         const Dims& target) {
  const Dims& cd = field.dims();
  if ((target <= 0).any() || ((target + 1) / 2 != cd).any())
    throw ValidationError("upsample_field: target " + to_string(target) +
                          " is not a factor-2 refinement of " + to_string(cd));
  Grid g = field.grid();
  g.dims = target;
  g.spacing /= 2.0;
  DisplacementField<Scalar> out(g);
  parallel_for(out.size(), [&](Index i) {
    Index x, y, z;
    detail::unravel(target, i, x, y, z);
    const double c[3] = {std::min(0.5 * double(x), double(cd[0] - 1)),
                         std::min(0.5 * double(y), double(cd[1] - 1)),
                         std::min(0.5 * double(z), double(cd[2] - 1))};
    Index lo[3], hi[3];
    double t[3];
    for (int a = 0; a < 3; ++a) {
      lo[a] = Index(std::floor(c[a]));
      hi[a] = std::min(lo[a] + 1, cd[a] - 1);
      t[a] = c[a] - double(lo[a]);
    }
    // Nested lerps a + t (b - a): equal corners come through unchanged.
    auto at = [&](int dx, int dy, int dz) {
      return field(dx ? hi[0] : lo[0], dy ? hi[1] : lo[1], dz ? hi[2] : lo[2])
          .template cast<double>()
          .matrix()
          .eval();
    };
    auto lerp = [](const Eigen::Vector3d& a, const Eigen::Vector3d& b, double t) {
      return (a + t * (b - a)).eval();
    };
    Eigen::Vector3d plane[2];
    for (int dz = 0; dz < 2; ++dz)
      plane[dz] = lerp(lerp(at(0, 0, dz), at(1, 0, dz), t[0]), lerp(at(0, 1, dz), at(1, 1, dz), t[0]),
                       t[1]);
    const Eigen::Vector3d acc = lerp(plane[0], plane[1], t[2]);
    out[i] = (2.0 * acc).template cast<Scalar>().array();
  });
  return out;
}

/// phi = up + residual, voxel-wise.
template <typename Scalar>
DisplacementField<Scalar> compose_additive(const DisplacementField<Scalar>& up,
                                           const DisplacementField<Scalar>& residual) {
  require_same_dims(up.grid(), residual.grid(), "compose_additive");
  return DisplacementField<Scalar>(up.grid(), up.data() + residual.data());
}

/// det(I + grad u) per voxel, derivatives in voxel units.
template <typename Scalar>
Volume<Scalar> jacobian_det(const DisplacementField<Scalar>& field) {
  const Dims& d = field.dims();
  if ((d < 2).any()) throw ValidationError("jacobian_det: every axis needs at least 2 voxels");
  Volume<Scalar> out(field.grid());
  parallel_for(field.size(), [&](Index i) {
    Index x, y, z;
    detail::unravel(d, i, x, y, z);
    Eigen::Matrix3d j = Eigen::Matrix3d::Identity();
    for (int c = 0; c < 3; ++c)
      for (int a = 0; a < 3; ++a) j(c, a) += detail::field_derivative(field, x, y, z, c, a);
    out[i] = Scalar(j.determinant());
  });
  return out;
}

/// levels[0] is full resolution; levels[l] = downsample_avg(levels[l - 1]).
template <typename Scalar>
struct Pyramid {
  std::vector<Volume<Scalar>> levels;
  std::vector<std::string> warnings;

  int count() const { return int(levels.size()); }
  /// 1-based, level 1 = finest.
  const Volume<Scalar>& level(int l) const { return levels.at(std::size_t(l - 1)); }
};

/// Largest level count whose coarsest level still has 2^(L-1) voxels per axis.
inline int max_pyramid_levels(const Dims& d) {
  int levels = 1;
  while ((d >= (Index(1) << levels)).all()) ++levels;
  return levels;
}

template <typename Scalar>
Pyramid<Scalar> build_pyramid(const Volume<Scalar>& vol, int levels) {
  if (levels < 1) throw ValidationError("build_pyramid: level count must be at least 1");
  Pyramid<Scalar> p;
  const int feasible = max_pyramid_levels(vol.dims());
  if (levels > feasible) {
    p.warnings.push_back("pyramid reduced from " + std::to_string(levels) + " to " +
                         std::to_string(feasible) + " levels for dims " + to_string(vol.dims()));
    levels = feasible;
  }
  p.levels.reserve(std::size_t(levels));
  p.levels.push_back(vol);
  for (int l = 1; l < levels; ++l) p.levels.push_back(downsample_avg(p.levels.back()));
  return p;
}

/// Zero-pad to `target`, content at the low-index corner, origin unchanged.
template <typename Scalar>
Volume<Scalar> pad_to_shape(const Volume<Scalar>& vol, const Dims& target) {
  const Dims& d = vol.dims();
  if ((target < d).any())
    throw ValidationError("pad_to_shape: target " + to_string(target) + " smaller than " +
                          to_string(d));
  Grid g = vol.grid();
  g.dims = target;
  Volume<Scalar> out(g);
  for (Index z = 0; z < d[2]; ++z)
    for (Index y = 0; y < d[1]; ++y)
      for (Index x = 0; x < d[0]; ++x) out(x, y, z) = vol(x, y, z);
  return out;
}

/// Inverse of pad_to_shape: keep the low-index corner of size `target`.
template <typename Scalar>
Volume<Scalar> crop_to_shape(const Volume<Scalar>& vol, const Dims& target) {
  const Dims& d = vol.dims();
  if ((target > d).any() || (target <= 0).any())
    throw ValidationError("crop_to_shape: target " + to_string(target) + " not within " +
                          to_string(d));
  Grid g = vol.grid();
  g.dims = target;
  Volume<Scalar> out(g);
  for (Index z = 0; z < target[2]; ++z)
    for (Index y = 0; y < target[1]; ++y)
      for (Index x = 0; x < target[0]; ++x) out(x, y, z) = vol(x, y, z);
  return out;
}

/// Separable Gaussian blur, sigma in voxels per axis (0 skips the axis).
/// Kernel truncated at 3 sigma, edges clamped.
template <typename Scalar>
Volume<Scalar> gaussian_smooth(const Volume<Scalar>& vol, const Vec3& sigma_vox) {
  const Dims d = vol.dims();
  Eigen::ArrayXd cur = vol.data().template cast<double>();
  Eigen::ArrayXd next(cur.size());
  const Index stride[3] = {1, d[0], d[0] * d[1]};
  for (int a = 0; a < 3; ++a) {
    const double s = sigma_vox[a];
    if (s <= 0.0) continue;
    const Index radius = Index(std::ceil(3.0 * s));
    Eigen::ArrayXd k(2 * radius + 1);
    for (Index t = -radius; t <= radius; ++t) k[t + radius] = std::exp(-0.5 * double(t * t) / (s * s));
    k /= k.sum();
    const Index n = d[a];
    parallel_for(cur.size(), [&](Index i) {
      Index p[3];
      detail::unravel(d, i, p[0], p[1], p[2]);
      const Index base = i - p[a] * stride[a];
      double acc = 0.0;
      for (Index t = -radius; t <= radius; ++t) {
        const Index q = std::clamp(p[a] + t, Index(0), n - 1);
        acc += k[t + radius] * cur[base + q * stride[a]];
      }
      next[i] = acc;
    });
    std::swap(cur, next);
  }
  return vol.with_data(cur.template cast<Scalar>());
}

}  // namespace protoreg
