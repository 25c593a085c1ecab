#pragma once

// Rigid pre-alignment and the coarse-to-fine deformable optimiser.
//
// At each pyramid level l (coarsest first) the engine keeps the upsampled
// coarser field fixed, starts a residual at zero and minimises
//
//   -NCC_w(fixed_l, moving_l o (x + Up(phi_{l+1}) + dphi_l)) + lambda * S(phi_l)
//
// with per-voxel Adam moments. A candidate step is only accepted when it
// lowers the level loss; otherwise the step size is halved. With guidance
// enabled the NCC weights become mask * (1 + kappa * P_l) and each raw step is
// multiplied voxel-wise by the gate multiplier m_l in [g0, 1).

#include "protoreg/condition.hpp"
#include "protoreg/core.hpp"
#include "protoreg/priors.hpp"
#include "protoreg/similarity.hpp"

#include <Eigen/Geometry>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace protoreg {

/// y = R (x - center) + center + translation, all in mm; R = Rz * Ry * Rx.
struct RigidTransform {
  Vec3 rotation = Vec3::Zero();
  Vec3 translation = Vec3::Zero();
  Vec3 center = Vec3::Zero();

  Eigen::Matrix3d rotation_matrix() const;
  Vec3 apply(const Vec3& mm) const { return rotation_matrix() * (mm - center) + center + translation; }
};

struct RigidOptions {
  bool enabled = true;
  int levels = 2;
  int iterations = 200;
  double initial_step_mm = 2.0;
  double min_step_mm = 1e-3;
};

struct RegConfig {
  int levels = 5;
  /// Iteration caps, coarsest level first.
  std::vector<int> iterations = {40, 60, 80, 100, 100};
  double step_size = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double lambda_smooth = 0.2;
  double prior_weight_kappa = 1.0;
  bool use_anatomy = false;
  bool use_risk = false;
  bool use_gate = false;
  bool use_film = false;
  PriorParams priors;
  double convergence_tol = 1e-5;
  int convergence_window = 5;
  std::uint64_t seed = 0;
  RigidOptions rigid;

  void validate() const;
  bool guided() const { return use_anatomy || use_risk || use_gate || use_film; }
  /// Iteration cap for `level` (1 = finest) when `count` levels are in use.
  int iterations_for(int level, int count) const;
};

struct LevelReport {
  int level = 0;
  Dims dims = Dims::Zero();
  LossBreakdown initial;
  LossBreakdown final;
  /// Accepted-iterate loss after each iteration.
  std::vector<double> loss;
  int iterations = 0;
  int accepted = 0;
  int rejected = 0;
  bool converged = false;
  double seconds = 0.0;
};

struct RegReport {
  std::vector<LevelReport> levels;
  LossBreakdown final_loss;
  /// Fraction in [0, 1] of interior voxels with det(J) <= 0.
  double fold_fraction = 0.0;
  std::vector<std::string> flags;
  std::optional<RigidTransform> rigid;
  std::uint64_t seed = 0;
};

/// Thrown when the loss turns non-finite; carries what was done so far.
class RegistrationAborted : public NumericalError {
 public:
  RegistrationAborted(const std::string& what, RegReport report)
      : NumericalError(what), report_(std::move(report)) {}
  const RegReport& report() const { return report_; }

 private:
  RegReport report_;
};

/// Optional clinical inputs; all on the fixed grid.
struct ClinicalPriors {
  const StructureSet* structures = nullptr;
  const Volumef* dose = nullptr;
  std::vector<Embedding> embeddings;
  const AdapterWeights* adapter = nullptr;
};

/// One optimiser step, exposed for inspection.
struct UpdateTrace {
  int level = 0;
  int iteration = 0;
  const DisplacementFieldf* raw = nullptr;
  const DisplacementFieldf* gated = nullptr;
  const Volumef* multiplier = nullptr;
  bool accepted = false;
};

using UpdateObserver = std::function<void(const UpdateTrace&)>;

struct RegistrationResult {
  DisplacementFieldf field;
  RegReport report;
};

struct RigidResult {
  RigidTransform transform;
  Volumef resampled;
};

/// moving(T(x)) sampled on the fixed grid.
Volumef resample_rigid(const Volumef& moving, const RigidTransform& t, const Grid& fixed_grid);

/// Total displacement (voxels) of moving(T(x + u(x))) relative to x.
DisplacementFieldf compose_rigid(const RigidTransform& t, const DisplacementFieldf& field,
                                 const Grid& moving_grid);

/// Six-parameter masked-NCC maximisation on the coarsest level of a
/// `options.levels` pyramid, refined on each finer level.
RigidResult rigid_align(const Volumef& fixed, const Volumef& moving, const Volumef& mask,
                        const RigidOptions& options = {});

/// The prior map driving guidance (full resolution, before FiLM), or nothing
/// when neither anatomy nor risk guidance is enabled.
std::optional<PriorMap> guidance_prior(const ClinicalPriors& priors, const RegConfig& config);

/// FiLM parameters for each level (index 0 = level 1), or nothing when
/// use_film is off.
std::optional<std::vector<FilmParams>> guidance_film(const ClinicalPriors& priors,
                                                     const RegConfig& config, int levels);

RegistrationResult register_deformable(const Volumef& fixed, const Volumef& moving,
                                       const Volumef* body, const ClinicalPriors& priors,
                                       const RegConfig& config,
                                       const UpdateObserver& observer = {});

/// The same optimiser compiled without any guidance code path.
RegistrationResult register_unguided(const Volumef& fixed, const Volumef& moving,
                                     const Volumef* body, const RegConfig& config);

/// Warp a binary mask as a real image and threshold at 0.5.
Volumef warp_contour(const Volumef& mask, const DisplacementFieldf& field);

}  // namespace protoreg
