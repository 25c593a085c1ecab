#pragma once

// Deterministic phantoms and ground-truth deformations for verification.

#include "protoreg/core.hpp"
#include "protoreg/priors.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace protoreg {

/// Sphere with its centre given relative to the grid centre (mm).
struct SphereSpec {
  std::string name;
  Vec3 center_mm = Vec3::Zero();
  double radius_mm = 1.0;
};

struct PhantomSpec {
  Dims dims = Dims::Constant(64);
  Vec3 spacing = Vec3::Constant(2.0);
  Vec3 body_semi_axes_mm = Vec3(56.0, 48.0, 54.0);
  SphereSpec ctv{"ctv", Vec3(8.0, 4.0, 0.0), 16.0};
  std::vector<SphereSpec> oars = {{"oar_a", Vec3(-22.0, -18.0, 6.0), 10.0},
                                  {"oar_b", Vec3(-16.0, 22.0, -10.0), 12.0}};
  double texture_amplitude = 0.3;
  double texture_corr_mm = 4.0;
  double dose_max = 60.0;
  double dose_tau_mm = 15.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct FieldSpec {
  double max_displacement = 4.0;
  double width = 8.0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Phantom {
  Volumef image;
  StructureSet structures;
  Volumef dose;
};

/// Smooth tissue classes plus band-limited texture, analytic masks, and a
/// Gaussian-falloff dose around the CTV: D = D_max exp(-d_ctv^2 / (2 tau^2)).
Phantom make_phantom(const PhantomSpec& spec);

/// Gaussian-smoothed white noise per component, rescaled so the largest
/// displacement norm equals spec.max_displacement.
DisplacementFieldf make_smooth_field(const Grid& grid, const FieldSpec& spec);

/// u(x) = a (x - c) exp(-|x - c|^2 / (2 w^2)) in voxel units, with `a` chosen
/// so the peak magnitude (reached at |x - c| = w) equals `peak`. Positive peak
/// pushes outward.
DisplacementFieldf make_radial_field(const Grid& grid, const Vec3& center_vox, double peak,
                                     double width_vox);

/// Scale a field so its largest displacement norm equals `max_norm`.
DisplacementFieldf rescale_max_norm(const DisplacementFieldf& field, double max_norm);

/// The phantom as seen through `truth`: image(x + u(x)), masks warped as
/// contours, dose warped. Registering the result (fixed) back to the original
/// (moving) should recover `truth`.
Phantom warp_phantom(const Phantom& phantom, const DisplacementFieldf& truth);

/// Voxel coordinate of a point given relative to the grid centre (mm).
Vec3 centre_relative_to_voxel(const Grid& grid, const Vec3& offset_mm);

}  // namespace protoreg
