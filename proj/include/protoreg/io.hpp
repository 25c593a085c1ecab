#pragma once

// On-disk formats. A volume or field at base path P is two files:
//
//   P.json  header, canonical JSON (sorted keys, two-space indent):
//           {"components": 1|3, "dims": [nx, ny, nz], "dtype": "f32le",
//            "order": "x-fastest", "origin": [..], "spacing": [..],
//            "tag": "image"|"mask"|"dose"|"field"|"prior"}
//   P.raw   little-endian IEEE-754 binary32, x fastest, field components
//           interleaved per voxel (ux uy uz ux uy uz ...).
//
// A 2x1x1 volume holding [1, 2] has the raw bytes 00 00 80 3F 00 00 00 40.
// Every file is written to a temporary sibling and renamed into place.

#include "protoreg/condition.hpp"
#include "protoreg/core.hpp"
#include "protoreg/engine.hpp"
#include "protoreg/metrics.hpp"
#include "protoreg/priors.hpp"
#include "protoreg/synth.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace protoreg {

using Json = nlohmann::json;

/// A file could not be read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind {
  MalformedJson,
  InvalidHeader,
  UnknownDtype,
  UnknownOrder,
  LengthMismatch,
  WrongComponents,
};

std::string to_string(FormatErrorKind k);

/// File contents do not follow the format; `kind` tells which rule broke.
class FormatError : public ValidationError {
 public:
  FormatError(FormatErrorKind kind, const std::string& what)
      : ValidationError(what + " [" + to_string(kind) + "]"), kind_(kind) {}
  FormatErrorKind kind() const { return kind_; }

 private:
  FormatErrorKind kind_;
};

enum class SemanticTag { Image, Mask, Dose, Field, Prior };

std::string to_string(SemanticTag t);
SemanticTag semantic_tag_from_string(std::string_view s);

inline constexpr std::string_view kDtype = "f32le";
inline constexpr std::string_view kOrder = "x-fastest";

struct VolumeHeader {
  Grid grid;
  int components = 1;
  SemanticTag tag = SemanticTag::Image;

  Json to_json() const;
  /// Throws FormatError with the matching kind.
  static VolumeHeader from_json(const Json& j);
};

/// `base` with a trailing ".json" or ".raw" removed.
std::filesystem::path volume_base(const std::filesystem::path& base);

void write_volume(const std::filesystem::path& base, const Volumef& vol,
                  SemanticTag tag = SemanticTag::Image);
void write_field(const std::filesystem::path& base, const DisplacementFieldf& field);

VolumeHeader read_header(const std::filesystem::path& base);
Volumef read_volume(const std::filesystem::path& base, VolumeHeader* header = nullptr);
DisplacementFieldf read_field(const std::filesystem::path& base);

/// Raw little-endian encoding of a float sequence.
std::string encode_f32le(const float* data, std::size_t count);

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);
/// Canonical text: dump(2) plus a trailing newline.
void write_json_file(const std::filesystem::path& path, const Json& j);
Json read_json_file(const std::filesystem::path& path);

// Configuration and results. Readers reject unknown keys; absent keys keep
// their defaults.
Json to_json(const PriorParams& p);
PriorParams prior_params_from_json(const Json& j);
Json to_json(const RigidOptions& r);
RigidOptions rigid_options_from_json(const Json& j);
Json to_json(const RegConfig& c);
RegConfig reg_config_from_json(const Json& j);
Json to_json(const PhantomSpec& s);
PhantomSpec phantom_spec_from_json(const Json& j);
Json to_json(const FieldSpec& s);
FieldSpec field_spec_from_json(const Json& j);

/// {"dim": 512, "source": "anatomy", "values": [...]}
Json to_json(const Embedding& e);
Embedding embedding_from_json(const Json& j);
/// One embedding object or an array of them.
std::vector<Embedding> embeddings_from_json(const Json& j);

/// {"bias": [2C], "channels": C, "input_dim": 512, "matrix": [2C*512 row-major]}
Json to_json(const AdapterWeights& a);
AdapterWeights adapter_from_json(const Json& j);

Json to_json(const LossBreakdown& b);
Json to_json(const RigidTransform& t);
/// Deterministic content only; per-level wall-clock times are left out.
Json to_json(const RegReport& r);
Json timing_json(const RegReport& r);
Json to_json(const MetricReport& m);

std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& m);

}  // namespace protoreg
