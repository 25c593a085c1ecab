#pragma once

#include "protoreg/core.hpp"

#include <optional>
#include <vector>

namespace protoreg {

/// SSIM window edge length (voxels) and stabilising constants.
inline constexpr Index kSsimWindow = 7;
inline constexpr double kSsimK1 = 0.01;
inline constexpr double kSsimK2 = 0.03;

/// Mean squared intensity difference over mask voxels.
double mse(const Volumef& fixed, const Volumef& warped, const Volumef& mask);

/// Mean local SSIM over mask voxel centres. Windows are 7^3, clipped to the
/// grid and restricted to mask voxels; the dynamic range is max - min of the
/// fixed image inside the mask.
double ssim(const Volumef& fixed, const Volumef& warped, const Volumef& mask);

/// 100 * |V_fixed - V_prop| / V_fixed with V = voxel count * voxel volume.
double relvoldiff(const Volumef& ctv_fixed, const Volumef& ctv_propagated);

struct EndpointStats {
  double mean = 0.0;
  double median = 0.0;
  double p95 = 0.0;
  double max = 0.0;
  Index count = 0;
};

/// Statistics of |field - truth| (voxels) over the mask, or all voxels.
EndpointStats endpoint_error(const DisplacementFieldf& field, const DisplacementFieldf& truth,
                             const Volumef* mask = nullptr);

/// Percentage of interior voxels whose Jacobian determinant is <= 0.
double fold_fraction(const DisplacementFieldf& field);

/// Linear-interpolated percentile (q in [0, 1]) of unsorted samples.
double percentile(std::vector<double> samples, double q);

struct MetricReport {
  double ncc_pct = 0.0;
  double mse = 0.0;
  double ssim_pct = 0.0;
  /// Fixed-image intensity range inside the mask, to rescale mse if needed.
  double intensity_min = 0.0;
  double intensity_max = 0.0;
  Index mask_voxels = 0;
  std::optional<double> relvoldiff_pct;
  std::optional<double> fold_pct;
  std::optional<EndpointStats> endpoint;
};

struct MetricInputs {
  const Volumef* mask = nullptr;
  const Volumef* ctv_fixed = nullptr;
  const Volumef* ctv_propagated = nullptr;
  const DisplacementFieldf* field = nullptr;
  const DisplacementFieldf* truth = nullptr;
};

/// Everything computable from the given inputs; missing inputs leave the
/// corresponding optional fields empty. No mask means the whole grid.
MetricReport evaluate_metrics(const Volumef& fixed, const Volumef& warped,
                              const MetricInputs& extra = {});

}  // namespace protoreg
