#include "protoreg/synth.hpp"

#include "protoreg/engine.hpp"
#include "protoreg/rng.hpp"
#include "protoreg/volgrid.hpp"

#include <cmath>

namespace protoreg {

namespace {

Grid grid_of(const PhantomSpec& spec) {
  Grid g;
  g.dims = spec.dims;
  g.spacing = spec.spacing;
  return g;
}

Vec3 grid_centre_mm(const Grid& g) {
  return g.origin + 0.5 * (g.dims.cast<double>() - 1.0).matrix().cwiseProduct(g.spacing);
}

Vec3 voxel_mm(const Grid& g, Index x, Index y, Index z) {
  return g.origin + Vec3(double(x), double(y), double(z)).cwiseProduct(g.spacing);
}

Volumef sphere_mask(const Grid& g, const Vec3& centre, double radius) {
  Volumef m(g);
  for (Index z = 0; z < g.dims[2]; ++z)
    for (Index y = 0; y < g.dims[1]; ++y)
      for (Index x = 0; x < g.dims[0]; ++x)
        m(x, y, z) = (voxel_mm(g, x, y, z) - centre).norm() <= radius ? 1.0f : 0.0f;
  return m;
}

// Unit-variance Gaussian noise smoothed with sigma (voxels); generated on a
// padded grid and cropped so the borders are as smooth as the interior.
Eigen::ArrayXd smooth_noise(const Dims& dims, const Vec3& sigma, std::uint64_t seed,
                            std::uint64_t stream) {
  const Dims pad = (3.0 * sigma.array()).ceil().cast<Index>();
  Grid big;
  big.dims = dims + 2 * pad;
  CounterRng rng(seed, stream);
  Volumed noise(big);
  for (Index i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
  const Volumed s = gaussian_smooth(noise, sigma);
  Eigen::ArrayXd out(dims.prod());
  for (Index z = 0; z < dims[2]; ++z)
    for (Index y = 0; y < dims[1]; ++y)
      for (Index x = 0; x < dims[0]; ++x)
        out[x + dims[0] * (y + dims[1] * z)] = s(x + pad[0], y + pad[1], z + pad[2]);
  return out;
}

}  // namespace

void PhantomSpec::validate() const {
  Grid g;
  g.dims = dims;
  g.spacing = spacing;
  g.validate();
  if (!(body_semi_axes_mm.array() > 0.0).all())
    throw ValidationError("phantom: body semi-axes must be positive");
  if (!(ctv.radius_mm > 0.0)) throw ValidationError("phantom: CTV radius must be positive");
  for (const auto& o : oars)
    if (!(o.radius_mm > 0.0)) throw ValidationError("phantom: OAR radius must be positive");
  if (!(texture_amplitude >= 0.0) || !(texture_corr_mm > 0.0))
    throw ValidationError("phantom: texture amplitude must be >= 0 and correlation length > 0");
  if (!(dose_max > 0.0) || !(dose_tau_mm > 0.0))
    throw ValidationError("phantom: dose model parameters must be positive");
}

void FieldSpec::validate() const {
  if (!(max_displacement >= 0.0)) throw ValidationError("field: max displacement must be >= 0");
  if (!(width > 0.0)) throw ValidationError("field: smoothing width must be positive");
}

Vec3 centre_relative_to_voxel(const Grid& grid, const Vec3& offset_mm) {
  return (grid_centre_mm(grid) + offset_mm - grid.origin).cwiseQuotient(grid.spacing);
}

Phantom make_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Grid g = grid_of(spec);
  const Vec3 c = grid_centre_mm(g);

  Volumef body(g);
  for (Index z = 0; z < g.dims[2]; ++z)
    for (Index y = 0; y < g.dims[1]; ++y)
      for (Index x = 0; x < g.dims[0]; ++x) {
        const Vec3 r = (voxel_mm(g, x, y, z) - c).cwiseQuotient(spec.body_semi_axes_mm);
        body(x, y, z) = r.squaredNorm() <= 1.0 ? 1.0f : 0.0f;
      }

  Phantom ph;
  ph.structures.ctv = sphere_mask(g, c + spec.ctv.center_mm, spec.ctv.radius_mm);
  for (const auto& o : spec.oars)
    ph.structures.oars.push_back({o.name, sphere_mask(g, c + o.center_mm, o.radius_mm)});
  auto inside_body = [&](const Volumef& m) {
    return ((m.data() == 0.0f) || (body.data() != 0.0f)).all();
  };
  if (count_nonzero(ph.structures.ctv) == 0 || !inside_body(ph.structures.ctv))
    throw ValidationError("phantom: CTV must be non-empty and lie inside the body");
  for (const auto& o : ph.structures.oars)
    if (count_nonzero(o.mask) == 0 || !inside_body(o.mask))
      throw ValidationError("phantom: OAR '" + o.name + "' must be non-empty and inside the body");
  ph.structures.body = body;

  const Eigen::ArrayXd b = body.data().cast<double>();
  const Eigen::ArrayXd oar = ph.structures.oar_union().data().cast<double>();
  const Eigen::ArrayXd ctv = ph.structures.ctv.data().cast<double>();
  Eigen::ArrayXd base = 0.5 * b + 0.2 * oar + 0.3 * ctv;
  // Slow cranio-caudal drift so large homogeneous regions are not flat.
  for (Index z = 0; z < g.dims[2]; ++z)
    for (Index y = 0; y < g.dims[1]; ++y)
      for (Index x = 0; x < g.dims[0]; ++x) {
        const Index i = g.index(x, y, z);
        const Vec3 r = (voxel_mm(g, x, y, z) - c).cwiseQuotient(spec.body_semi_axes_mm);
        base[i] += 0.1 * b[i] * (r[2] + 0.5 * r[0]);
      }
  const Vec3 sigma = Vec3::Constant(spec.texture_corr_mm).cwiseQuotient(g.spacing);
  Eigen::ArrayXd tex = smooth_noise(g.dims, sigma, spec.seed, 1);
  const double sd = std::sqrt((tex - tex.mean()).square().mean());
  if (sd > 0.0) tex /= sd;
  const Volumed composed(g, base + spec.texture_amplitude * tex * b);
  ph.image = gaussian_smooth(composed, Vec3::Constant(0.75)).cast<float>();

  Volumef dose(g);
  const Vec3 cc = c + spec.ctv.center_mm;
  const double k = 1.0 / (2.0 * spec.dose_tau_mm * spec.dose_tau_mm);
  for (Index z = 0; z < g.dims[2]; ++z)
    for (Index y = 0; y < g.dims[1]; ++y)
      for (Index x = 0; x < g.dims[0]; ++x) {
        const double d = std::max((voxel_mm(g, x, y, z) - cc).norm() - spec.ctv.radius_mm, 0.0);
        dose(x, y, z) = float(spec.dose_max * std::exp(-d * d * k));
      }
  ph.dose = std::move(dose);
  return ph;
}

DisplacementFieldf rescale_max_norm(const DisplacementFieldf& field, double max_norm) {
  const Eigen::Array3Xd u = field.data().cast<double>();
  const double cur = u.matrix().colwise().norm().maxCoeff();
  if (cur == 0.0 || max_norm == 0.0) return DisplacementFieldf(field.grid());
  return DisplacementFieldf(field.grid(), (u * (max_norm / cur)).cast<float>());
}

DisplacementFieldf make_smooth_field(const Grid& grid, const FieldSpec& spec) {
  spec.validate();
  if (spec.max_displacement == 0.0) return DisplacementFieldf(grid);
  Eigen::Array3Xd u(3, grid.size());
  for (int c = 0; c < 3; ++c)
    u.row(c) = smooth_noise(grid.dims, Vec3::Constant(spec.width), spec.seed, 100 + std::uint64_t(c))
                   .transpose();
  const double cur = u.matrix().colwise().norm().maxCoeff();
  return DisplacementFieldf(grid, (u * (spec.max_displacement / cur)).cast<float>());
}

DisplacementFieldf make_radial_field(const Grid& grid, const Vec3& center_vox, double peak,
                                     double width_vox) {
  if (!(width_vox > 0.0)) throw ValidationError("radial field: width must be positive");
  const double a = peak / (width_vox * std::exp(-0.5));
  DisplacementFieldf out(grid);
  for (Index z = 0; z < grid.dims[2]; ++z)
    for (Index y = 0; y < grid.dims[1]; ++y)
      for (Index x = 0; x < grid.dims[0]; ++x) {
        const Vec3 r = Vec3(double(x), double(y), double(z)) - center_vox;
        const double e = std::exp(-r.squaredNorm() / (2.0 * width_vox * width_vox));
        out(x, y, z) = (a * e * r).cast<float>().array();
      }
  return out;
}

Phantom warp_phantom(const Phantom& phantom, const DisplacementFieldf& truth) {
  Phantom out;
  out.image = warp(phantom.image, truth);
  out.dose = warp(phantom.dose, truth);
  out.structures.ctv = warp_contour(phantom.structures.ctv, truth);
  for (const auto& o : phantom.structures.oars)
    out.structures.oars.push_back({o.name, warp_contour(o.mask, truth)});
  if (phantom.structures.body) out.structures.body = warp_contour(*phantom.structures.body, truth);
  return out;
}

}  // namespace protoreg
