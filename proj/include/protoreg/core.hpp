#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>

namespace protoreg {

using Index = std::ptrdiff_t;
using Dims = Eigen::Array<Index, 3, 1>;
using Vec3 = Eigen::Vector3d;

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs violate a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite or otherwise unusable value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Geometry shared by volumes and fields: voxel counts, mm spacing and origin.
/// Voxel (i, j, k) sits at origin + (i, j, k) * spacing.
struct Grid {
  Dims dims = Dims::Ones();
  Vec3 spacing = Vec3::Ones();
  Vec3 origin = Vec3::Zero();

  Index size() const { return dims.prod(); }

  Index index(Index x, Index y, Index z) const {
    return x + dims[0] * (y + dims[1] * z);
  }

  bool same_dims(const Grid& other) const { return (dims == other.dims).all(); }

  double voxel_volume() const { return spacing.prod(); }

  void validate() const {
    if ((dims <= 0).any()) throw ValidationError("grid dims must be positive");
    if (!(spacing.array() > 0.0).all() || !spacing.allFinite())
      throw ValidationError("grid spacing must be finite and strictly positive");
    if (!origin.allFinite()) throw ValidationError("grid origin must be finite");
  }
};

inline std::string to_string(const Dims& d) {
  return std::to_string(d[0]) + "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]);
}

inline void require_same_dims(const Grid& a, const Grid& b, const char* what) {
  if (!a.same_dims(b))
    throw ValidationError(std::string(what) + ": dims mismatch (" + to_string(a.dims) + " vs " +
                          to_string(b.dims) + ")");
}

/// Scalar 3D grid, x-fastest storage.
template <typename Scalar_>
class Volume {
 public:
  using Scalar = Scalar_;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Volume() = default;

  explicit Volume(const Grid& grid, Scalar fill = Scalar(0))
      : grid_(grid), data_(Storage::Constant(grid.size(), fill)) {
    grid_.validate();
  }

  Volume(const Grid& grid, Storage data) : grid_(grid), data_(std::move(data)) {
    grid_.validate();
    if (data_.size() != grid_.size())
      throw ValidationError("volume data length does not match dims " + to_string(grid_.dims));
  }

  const Grid& grid() const { return grid_; }
  const Dims& dims() const { return grid_.dims; }
  Index size() const { return data_.size(); }

  Scalar& operator()(Index x, Index y, Index z) { return data_[grid_.index(x, y, z)]; }
  Scalar operator()(Index x, Index y, Index z) const { return data_[grid_.index(x, y, z)]; }
  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Volume<Other> cast() const {
    return Volume<Other>(grid_, data_.template cast<Other>());
  }

  /// Same grid metadata, different content.
  Volume with_data(Storage data) const { return Volume(grid_, std::move(data)); }

 private:
  Grid grid_;
  Storage data_;
};

/// Per-voxel displacement (ux, uy, uz) in voxel units of the owning grid.
/// Storage is a 3 x N column-major array, so components are interleaved per voxel.
template <typename Scalar_>
class DisplacementField {
 public:
  using Scalar = Scalar_;
  using Storage = Eigen::Array<Scalar, 3, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, 3, 1>;

  DisplacementField() = default;

  explicit DisplacementField(const Grid& grid)
      : grid_(grid), data_(Storage::Zero(3, grid.size())) {
    grid_.validate();
  }

  DisplacementField(const Grid& grid, Storage data) : grid_(grid), data_(std::move(data)) {
    grid_.validate();
    if (data_.cols() != grid_.size())
      throw ValidationError("field data length does not match dims " + to_string(grid_.dims));
  }

  static DisplacementField constant(const Grid& grid, const Vector& u) {
    return DisplacementField(grid, u.array().replicate(1, grid.size()));
  }

  const Grid& grid() const { return grid_; }
  const Dims& dims() const { return grid_.dims; }
  Index size() const { return data_.cols(); }

  auto operator()(Index x, Index y, Index z) { return data_.col(grid_.index(x, y, z)); }
  auto operator()(Index x, Index y, Index z) const { return data_.col(grid_.index(x, y, z)); }
  auto operator[](Index i) { return data_.col(i); }
  auto operator[](Index i) const { return data_.col(i); }

  Storage& data() { return data_; }
  const Storage& data() const { return data_; }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  DisplacementField<Other> cast() const {
    return DisplacementField<Other>(grid_, data_.template cast<Other>());
  }

 private:
  Grid grid_;
  Storage data_;
};

using Volumef = Volume<float>;
using Volumed = Volume<double>;
using DisplacementFieldf = DisplacementField<float>;
using DisplacementFieldd = DisplacementField<double>;

/// Worker threads for voxel loops; honours PROTOREG_THREADS (0 or unset = hardware).
int thread_count();

namespace detail {
void run_chunks(Index n, int threads, void (*fn)(void*, Index, Index), void* ctx);
}

/// Calls body(i) for i in [0, n). Each index must only write its own outputs;
/// results are then independent of the thread count.
template <typename Body>
void parallel_for(Index n, Body&& body) {
  const int threads = thread_count();
  if (threads <= 1 || n < 8192) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  auto trampoline = [](void* ctx, Index begin, Index end) {
    auto& b = *static_cast<std::remove_reference_t<Body>*>(ctx);
    for (Index i = begin; i < end; ++i) b(i);
  };
  detail::run_chunks(n, threads, trampoline, &body);
}

/// Check that a volume only contains 0 and 1.
template <typename Scalar>
bool is_binary(const Volume<Scalar>& v) {
  return ((v.data() == Scalar(0)) || (v.data() == Scalar(1))).all();
}

template <typename Scalar>
Index count_nonzero(const Volume<Scalar>& v) {
  return (v.data() != Scalar(0)).count();
}

}  // namespace protoreg
