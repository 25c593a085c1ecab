#pragma once

// Spatial priors built from clinical structures and dose: an anatomy map
// (target proximity, target boundary band, organs at risk), a risk map
// (dose gradient, high-dose shell, dose-weighted organs), their fusion, and
// the per-level sigmoid gate derived from the fused map.

#include "protoreg/core.hpp"

#include <optional>
#include <string>
#include <vector>

namespace protoreg {

/// Scalar map with values in [0, 1].
using PriorMap = Volumef;

struct NamedMask {
  std::string name;
  Volumef mask;
};

/// Binary structures on one grid.
struct StructureSet {
  Volumef ctv;
  std::vector<NamedMask> oars;
  std::optional<Volumef> body;

  const Grid& grid() const { return ctv.grid(); }

  /// Throws unless every mask is binary and shares the CTV dims.
  void validate() const;

  /// Voxel-wise union of all OAR masks (zero map when there are none).
  Volumef oar_union() const;
};

struct PriorParams {
  double sigma_mm = 10.0;
  double band_mm = 3.0;
  double w_prox = 0.5;
  double w_band = 0.3;
  double w_oar = 0.2;
  double w_grad = 0.4;
  double w_iso = 0.3;
  double w_doseoar = 0.3;
  double isodose_fraction = 0.9;
  double fusion_alpha = 0.5;
  double gate_steepness = 6.0;
  double gate_center = 0.25;
  double gate_floor = 0.5;

  void validate() const;
};

/// Exact Euclidean distance (mm) from each voxel centre to the nearest voxel
/// centre of the opposite class: positive outside the mask, negative inside.
/// Separable squared-distance transform, anisotropic spacing respected.
Volumef signed_distance(const Volumef& mask);

/// exp(-max(d, 0)^2 / (2 sigma^2)); saturates at 1 inside the structure.
PriorMap gaussian_proximity(const Volumef& sdf, double sigma_mm);

/// 1 where |d| <= band_mm, else 0.
PriorMap boundary_band(const Volumef& sdf, double band_mm);

PriorMap anatomy_map(const StructureSet& structures, const PriorParams& params);

PriorMap risk_map(const Volumef& dose, const StructureSet& structures, const PriorParams& params);

/// clamp(alpha * anatomy + (1 - alpha) * risk, 0, 1).
PriorMap fuse_priors(const PriorMap& anatomy, const PriorMap& risk, double alpha);

/// sigmoid(s * (P_l - c)) where P_l is `prior` average-pooled to `level`
/// (level 1 = input resolution).
PriorMap gate(const PriorMap& prior, const PriorParams& params, int level);

/// g0 + (1 - g0) * gate, so the multiplier lies in [g0, 1).
Volumef gate_multiplier(const PriorMap& gate_map, const PriorParams& params);

}  // namespace protoreg
