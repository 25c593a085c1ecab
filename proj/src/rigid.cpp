#include "protoreg/engine.hpp"

#include "protoreg/volgrid.hpp"

#include <cmath>
#include <numbers>

namespace protoreg {

namespace {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

Eigen::Matrix3d skew(const Vec3& a) {
  Eigen::Matrix3d k;
  k << 0, -a[2], a[1], a[2], 0, -a[0], -a[1], a[0], 0;
  return k;
}

double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  return a <= -std::numbers::pi ? a + 2.0 * std::numbers::pi : a;
}

RigidTransform from_params(const Vector6d& p, const Vec3& center) {
  RigidTransform t;
  t.rotation = p.head<3>();
  t.translation = p.tail<3>();
  t.center = center;
  return t;
}

// -NCC between fixed and the rigidly resampled moving image at one level,
// with its gradient in (rx, ry, rz [rad], tx, ty, tz [mm]).
class RigidObjective {
 public:
  RigidObjective(const Volumef& fixed, const Volumef& moving, const Volumef& mask, Vec3 center)
      : fixed_(fixed), moving_(moving), weights_(mask), center_(center) {}

  double value(const Vector6d& p) const { return evaluate(p, nullptr); }
  double value(const Vector6d& p, Vector6d& grad) const { return evaluate(p, &grad); }

 private:
  double evaluate(const Vector6d& p, Vector6d* grad) const {
    const Grid& fg = fixed_.grid();
    const Grid& mg = moving_.grid();
    const Vec3 ax = Vec3::UnitX(), ay = Vec3::UnitY(), az = Vec3::UnitZ();
    const Eigen::Matrix3d rx = Eigen::AngleAxisd(p[0], ax).toRotationMatrix();
    const Eigen::Matrix3d ry = Eigen::AngleAxisd(p[1], ay).toRotationMatrix();
    const Eigen::Matrix3d rz = Eigen::AngleAxisd(p[2], az).toRotationMatrix();
    const Eigen::Matrix3d r = rz * ry * rx;
    const Eigen::Matrix3d dr[3] = {rz * ry * skew(ax) * rx, rz * skew(ay) * ry * rx,
                                   skew(az) * rz * ry * rx};
    const Vec3 t = p.tail<3>();
    const Vec3 inv_s = mg.spacing.cwiseInverse();

    const Volumed& w = weights_.values();
    const Index n = fixed_.size();
    Eigen::ArrayXd warped = Eigen::ArrayXd::Zero(n);
    Eigen::Array<double, 6, Eigen::Dynamic> jac;
    if (grad != nullptr) jac.setZero(6, n);
    parallel_for(n, [&](Index i) {
      if (w[i] == 0.0) return;
      Index x, y, z;
      detail::unravel(fg.dims, i, x, y, z);
      const Vec3 rel = fg.origin + Vec3(double(x), double(y), double(z)).cwiseProduct(fg.spacing) -
                       center_;
      const Vec3 q = (r * rel + center_ + t - mg.origin).cwiseProduct(inv_s);
      Vec3 slope;
      warped[i] = double(float(detail::trilinear_grad(moving_, q[0], q[1], q[2], slope)));
      if (grad == nullptr) return;
      const Vec3 sm = slope.cwiseProduct(inv_s);  // d value / d mm
      for (int k = 0; k < 3; ++k) jac(k, i) = sm.dot(dr[k] * rel);
      jac.col(i).tail<3>() = sm.array();
    });
    const NccStats s = detail::ncc_from(fixed_.data(), warped, w, weights_.count());
    if (grad != nullptr) {
      grad->setZero();
      if (!s.degenerate) {
        const double inv_norm = 1.0 / std::sqrt(s.sff * s.sgg);
        const double cross = s.sfg * inv_norm / s.sgg;
        for (Index i = 0; i < n; ++i) {
          if (w[i] == 0.0) continue;
          const double a = double(fixed_[i]) - s.mean_fixed;
          const double b = warped[i] - s.mean_warped;
          *grad -= w[i] * (a * inv_norm - cross * b) * jac.col(i).matrix();
        }
      }
    }
    return -s.ncc;
  }

  const Volumef& fixed_;
  const Volumef& moving_;
  SimilarityWeights<float> weights_;
  Vec3 center_;
};

// BFGS with Armijo backtracking in scaled coordinates (rotations times a
// lever arm, so every coordinate is in mm).
Vector6d minimise(const RigidObjective& obj, Vector6d p, double lever, double first_step,
                  double min_step, int iterations) {
  Vector6d scale;
  scale << lever, lever, lever, 1.0, 1.0, 1.0;
  auto to_params = [&](const Vector6d& q) { return Vector6d(q.cwiseQuotient(scale)); };

  Vector6d q = p.cwiseProduct(scale);
  Vector6d gp;
  double fval = obj.value(to_params(q), gp);
  Vector6d g = gp.cwiseQuotient(scale);
  Matrix6d h = Matrix6d::Identity() * (first_step / std::max(g.norm(), 1e-300));
  for (int it = 0; it < iterations; ++it) {
    if (g.norm() == 0.0) break;
    Vector6d dir = -h * g;
    if (g.dot(dir) >= 0.0) {
      h = Matrix6d::Identity() * (first_step / g.norm());
      dir = -h * g;
    }
    double alpha = 1.0;
    bool moved = false;
    Vector6d qn, gn;
    double fn = fval;
    for (int ls = 0; ls < 30; ++ls) {
      qn = q + alpha * dir;
      fn = obj.value(to_params(qn), gp);
      if (fn <= fval + 1e-4 * alpha * g.dot(dir)) {
        moved = true;
        break;
      }
      alpha *= 0.5;
      if ((alpha * dir).norm() < 0.1 * min_step) break;
    }
    if (!moved) break;
    gn = gp.cwiseQuotient(scale);
    const Vector6d s = qn - q;
    const Vector6d y = gn - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      const double rho = 1.0 / sy;
      const Matrix6d v = Matrix6d::Identity() - rho * s * y.transpose();
      h = v * h * v.transpose() + rho * s * s.transpose();
    }
    q = qn;
    g = gn;
    fval = fn;
    if (s.norm() < min_step) break;
  }
  return to_params(q);
}

}  // namespace

Eigen::Matrix3d RigidTransform::rotation_matrix() const {
  return (Eigen::AngleAxisd(rotation[2], Vec3::UnitZ()) *
          Eigen::AngleAxisd(rotation[1], Vec3::UnitY()) *
          Eigen::AngleAxisd(rotation[0], Vec3::UnitX()))
      .toRotationMatrix();
}

Volumef resample_rigid(const Volumef& moving, const RigidTransform& t, const Grid& fixed_grid) {
  const Eigen::Matrix3d r = t.rotation_matrix();
  const Grid& mg = moving.grid();
  Volumef out(fixed_grid);
  parallel_for(out.size(), [&](Index i) {
    Index x, y, z;
    detail::unravel(fixed_grid.dims, i, x, y, z);
    const Vec3 p = fixed_grid.origin + Vec3(double(x), double(y), double(z)).cwiseProduct(fixed_grid.spacing);
    const Vec3 q = (r * (p - t.center) + t.center + t.translation - mg.origin).cwiseQuotient(mg.spacing);
    out[i] = float(detail::trilinear(moving, q[0], q[1], q[2]));
  });
  return out;
}

DisplacementFieldf compose_rigid(const RigidTransform& t, const DisplacementFieldf& field,
                                 const Grid& moving_grid) {
  const Eigen::Matrix3d r = t.rotation_matrix();
  const Grid& g = field.grid();
  DisplacementFieldf out(g);
  parallel_for(out.size(), [&](Index i) {
    Index x, y, z;
    detail::unravel(g.dims, i, x, y, z);
    const Vec3 v{double(x), double(y), double(z)};
    const Vec3 p = g.origin + (v + field[i].cast<double>().matrix()).cwiseProduct(g.spacing);
    const Vec3 q =
        (r * (p - t.center) + t.center + t.translation - moving_grid.origin).cwiseQuotient(moving_grid.spacing);
    out[i] = (q - v).cast<float>().array();
  });
  return out;
}

RigidResult rigid_align(const Volumef& fixed, const Volumef& moving, const Volumef& mask,
                        const RigidOptions& options) {
  require_same_dims(fixed.grid(), moving.grid(), "rigid_align");
  require_same_dims(fixed.grid(), mask.grid(), "rigid_align mask");
  if (!is_binary(mask) || count_nonzero(mask) < 2)
    throw ValidationError("rigid_align: mask must be binary with at least 2 foreground voxels");
  if (options.levels < 1) throw ValidationError("rigid_align: levels must be at least 1");

  const Grid& g = fixed.grid();
  const Vec3 extent = (g.dims.cast<double>() - 1.0).matrix().cwiseProduct(g.spacing);
  const Vec3 center = g.origin + 0.5 * extent;
  const double lever = std::max(0.25 * extent.norm(), g.spacing.maxCoeff());

  const Pyramid<float> fp = build_pyramid(fixed, options.levels);
  const Pyramid<float> mp = build_pyramid(moving, options.levels);
  const Pyramid<float> kp = build_pyramid(mask, options.levels);

  Vector6d p = Vector6d::Zero();
  double first = options.initial_step_mm;
  for (int level = fp.count(); level >= 1; --level) {
    const Volumef& k = kp.level(level);
    const Volumef mask_l = k.with_data((k.data() >= 0.5f).cast<float>());
    if (count_nonzero(mask_l) < 2) continue;
    const RigidObjective obj(fp.level(level), mp.level(level), mask_l, center);
    p = minimise(obj, p, lever, first, options.min_step_mm, options.iterations);
    first *= 0.5;
  }
  for (int k = 0; k < 3; ++k) p[k] = wrap_angle(p[k]);
  RigidResult out;
  out.transform = from_params(p, center);
  out.resampled = resample_rigid(moving, out.transform, g);
  return out;
}

}  // namespace protoreg
