#include "protoreg/io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

namespace protoreg {

namespace fs = std::filesystem;

std::string to_string(FormatErrorKind k) {
  switch (k) {
    case FormatErrorKind::MalformedJson: return "malformed-json";
    case FormatErrorKind::InvalidHeader: return "invalid-header";
    case FormatErrorKind::UnknownDtype: return "unknown-dtype";
    case FormatErrorKind::UnknownOrder: return "unknown-order";
    case FormatErrorKind::LengthMismatch: return "length-mismatch";
    case FormatErrorKind::WrongComponents: return "wrong-components";
  }
  return "unknown";
}

std::string to_string(SemanticTag t) {
  switch (t) {
    case SemanticTag::Image: return "image";
    case SemanticTag::Mask: return "mask";
    case SemanticTag::Dose: return "dose";
    case SemanticTag::Field: return "field";
    case SemanticTag::Prior: return "prior";
  }
  return "image";
}

SemanticTag semantic_tag_from_string(std::string_view s) {
  if (s == "image") return SemanticTag::Image;
  if (s == "mask") return SemanticTag::Mask;
  if (s == "dose") return SemanticTag::Dose;
  if (s == "field") return SemanticTag::Field;
  if (s == "prior") return SemanticTag::Prior;
  throw ValidationError("unknown semantic tag '" + std::string(s) + "'");
}

// ---------------------------------------------------------------- files

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.flush();
    if (!out) throw IoError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into '" + path.string() + "'");
  }
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return ss.str();
}

void write_json_file(const fs::path& path, const Json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

Json read_json_file(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(FormatErrorKind::MalformedJson, path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------- volumes

std::string encode_f32le(const float* data, std::size_t count) {
  std::string out(count * 4, '\0');
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(data[i]);
    for (int b = 0; b < 4; ++b) out[4 * i + std::size_t(b)] = char((u >> (8 * b)) & 0xFFu);
  }
  return out;
}

namespace {

void decode_f32le(const std::string& bytes, float* out, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b)
      u |= std::uint32_t(static_cast<unsigned char>(bytes[4 * i + std::size_t(b)])) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
}

Json vec3_json(const Vec3& v) { return Json::array({v[0], v[1], v[2]}); }
Json dims_json(const Dims& d) { return Json::array({d[0], d[1], d[2]}); }

fs::path with_suffix(const fs::path& base, const char* ext) {
  fs::path p = base;
  p += ext;
  return p;
}

[[noreturn]] void bad_header(const std::string& what) {
  throw FormatError(FormatErrorKind::InvalidHeader, "volume header: " + what);
}

Vec3 header_vec3(const Json& j, const char* key) {
  const Json& a = j.at(key);
  if (!a.is_array() || a.size() != 3) bad_header(std::string(key) + " must be a 3-element array");
  Vec3 v;
  for (int k = 0; k < 3; ++k) {
    if (!a[std::size_t(k)].is_number()) bad_header(std::string(key) + " must hold numbers");
    v[k] = a[std::size_t(k)].get<double>();
  }
  return v;
}

}  // namespace

fs::path volume_base(const fs::path& base) {
  const auto ext = base.extension();
  if (ext == ".json" || ext == ".raw") {
    fs::path p = base;
    p.replace_extension();
    return p;
  }
  return base;
}

Json VolumeHeader::to_json() const {
  return Json{{"components", components},
              {"dims", dims_json(grid.dims)},
              {"dtype", kDtype},
              {"order", kOrder},
              {"origin", vec3_json(grid.origin)},
              {"spacing", vec3_json(grid.spacing)},
              {"tag", to_string(tag)}};
}

VolumeHeader VolumeHeader::from_json(const Json& j) {
  if (!j.is_object()) bad_header("expected a JSON object");
  static const std::set<std::string> keys = {"components", "dims",    "dtype", "order",
                                             "origin",     "spacing", "tag"};
  for (const auto& [k, v] : j.items())
    if (!keys.contains(k)) bad_header("unknown key '" + k + "'");
  for (const auto& k : keys)
    if (!j.contains(k)) bad_header("missing key '" + k + "'");

  if (!j["dtype"].is_string() || j["dtype"].get<std::string>() != kDtype)
    throw FormatError(FormatErrorKind::UnknownDtype,
                      "volume header: dtype must be \"" + std::string(kDtype) + "\", got " +
                          j["dtype"].dump());
  if (!j["order"].is_string() || j["order"].get<std::string>() != kOrder)
    throw FormatError(FormatErrorKind::UnknownOrder,
                      "volume header: order must be \"" + std::string(kOrder) + "\", got " +
                          j["order"].dump());

  VolumeHeader h;
  const Json& d = j["dims"];
  if (!d.is_array() || d.size() != 3) bad_header("dims must be a 3-element array");
  for (int k = 0; k < 3; ++k) {
    if (!d[std::size_t(k)].is_number_integer()) bad_header("dims must be integers");
    h.grid.dims[k] = d[std::size_t(k)].get<Index>();
  }
  h.grid.spacing = header_vec3(j, "spacing");
  h.grid.origin = header_vec3(j, "origin");
  try {
    h.grid.validate();
  } catch (const ValidationError& e) {
    bad_header(e.what());
  }
  if (!j["components"].is_number_integer()) bad_header("components must be an integer");
  h.components = j["components"].get<int>();
  if (h.components != 1 && h.components != 3)
    bad_header("components must be 1 or 3, got " + std::to_string(h.components));
  if (!j["tag"].is_string()) bad_header("tag must be a string");
  try {
    h.tag = semantic_tag_from_string(j["tag"].get<std::string>());
  } catch (const ValidationError& e) {
    bad_header(e.what());
  }
  if ((h.tag == SemanticTag::Field) != (h.components == 3))
    bad_header("tag 'field' goes with exactly 3 components");
  return h;
}

namespace {

void write_any(const fs::path& base_in, const Grid& grid, int components, SemanticTag tag,
               const float* data, std::size_t count) {
  grid.validate();
  const fs::path base = volume_base(base_in);
  VolumeHeader h;
  h.grid = grid;
  h.components = components;
  h.tag = tag;
  write_file_atomic(with_suffix(base, ".raw"), encode_f32le(data, count));
  write_json_file(with_suffix(base, ".json"), h.to_json());
}

std::vector<float> read_payload(const fs::path& base, const VolumeHeader& h) {
  const fs::path raw = with_suffix(base, ".raw");
  const std::string bytes = read_file(raw);
  const std::size_t count = std::size_t(h.grid.size()) * std::size_t(h.components);
  if (bytes.size() != count * 4)
    throw FormatError(FormatErrorKind::LengthMismatch,
                      raw.string() + ": expected " + std::to_string(count * 4) + " bytes, found " +
                          std::to_string(bytes.size()));
  std::vector<float> out(count);
  decode_f32le(bytes, out.data(), count);
  return out;
}

}  // namespace

void write_volume(const fs::path& base, const Volumef& vol, SemanticTag tag) {
  if (tag == SemanticTag::Field) throw ValidationError("write_volume: use write_field for fields");
  write_any(base, vol.grid(), 1, tag, vol.data().data(), std::size_t(vol.size()));
}

void write_field(const fs::path& base, const DisplacementFieldf& field) {
  write_any(base, field.grid(), 3, SemanticTag::Field, field.data().data(),
            std::size_t(3 * field.size()));
}

VolumeHeader read_header(const fs::path& base) {
  const fs::path p = with_suffix(volume_base(base), ".json");
  try {
    return VolumeHeader::from_json(read_json_file(p));
  } catch (const FormatError& e) {
    throw FormatError(e.kind(), p.string() + ": " + e.what());
  }
}

Volumef read_volume(const fs::path& base_in, VolumeHeader* header) {
  const fs::path base = volume_base(base_in);
  const VolumeHeader h = read_header(base);
  if (h.components != 1)
    throw FormatError(FormatErrorKind::WrongComponents,
                      base.string() + ": expected a scalar volume, header has 3 components");
  const std::vector<float> data = read_payload(base, h);
  Volumef vol(h.grid);
  vol.data() = Eigen::Map<const Eigen::ArrayXf>(data.data(), Index(data.size()));
  if (header != nullptr) *header = h;
  return vol;
}

DisplacementFieldf read_field(const fs::path& base_in) {
  const fs::path base = volume_base(base_in);
  const VolumeHeader h = read_header(base);
  if (h.components != 3)
    throw FormatError(FormatErrorKind::WrongComponents,
                      base.string() + ": expected a displacement field, header has 1 component");
  const std::vector<float> data = read_payload(base, h);
  DisplacementFieldf f(h.grid);
  f.data() = Eigen::Map<const Eigen::Array3Xf>(data.data(), 3, h.grid.size());
  return f;
}

// ---------------------------------------------------------------- config JSON

namespace {

// Reads keys from one JSON object, keeping defaults for absent keys and
// rejecting keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string context) : j_(j), ctx_(std::move(context)) {
    if (!j.is_object()) throw ValidationError(ctx_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const Json::exception& e) {
      throw ValidationError(ctx_ + "." + key + ": " + e.what());
    }
  }

  void get_vec3(const char* key, Vec3& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::vector<double> v = as_vector<double>(*it, key);
    out = Vec3(v[0], v[1], v[2]);
  }

  void get_dims(const char* key, Dims& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::vector<Index> v = as_vector<Index>(*it, key);
    out = Dims(v[0], v[1], v[2]);
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.contains(k)) throw ValidationError(ctx_ + ": unknown key '" + k + "'");
  }

  const std::string& context() const { return ctx_; }

 private:
  template <typename T>
  std::vector<T> as_vector(const Json& a, const char* key) const {
    if (!a.is_array() || a.size() != 3)
      throw ValidationError(ctx_ + "." + key + ": expected a 3-element array");
    try {
      return a.get<std::vector<T>>();
    } catch (const Json::exception& e) {
      throw ValidationError(ctx_ + "." + key + ": " + e.what());
    }
  }

  const Json& j_;
  std::string ctx_;
  std::set<std::string> seen_;
};

Json sphere_json(const SphereSpec& s) {
  return Json{{"center_mm", vec3_json(s.center_mm)}, {"name", s.name}, {"radius_mm", s.radius_mm}};
}

SphereSpec sphere_from_json(const Json& j, const std::string& ctx) {
  SphereSpec s;
  ObjectReader r(j, ctx);
  r.get("name", s.name);
  r.get_vec3("center_mm", s.center_mm);
  r.get("radius_mm", s.radius_mm);
  r.finish();
  return s;
}

}  // namespace

Json to_json(const PriorParams& p) {
  return Json{{"band_mm", p.band_mm},
              {"fusion_alpha", p.fusion_alpha},
              {"gate_center", p.gate_center},
              {"gate_floor", p.gate_floor},
              {"gate_steepness", p.gate_steepness},
              {"isodose_fraction", p.isodose_fraction},
              {"sigma_mm", p.sigma_mm},
              {"w_band", p.w_band},
              {"w_doseoar", p.w_doseoar},
              {"w_grad", p.w_grad},
              {"w_iso", p.w_iso},
              {"w_oar", p.w_oar},
              {"w_prox", p.w_prox}};
}

PriorParams prior_params_from_json(const Json& j) {
  PriorParams p;
  ObjectReader r(j, "priors");
  r.get("sigma_mm", p.sigma_mm);
  r.get("band_mm", p.band_mm);
  r.get("w_prox", p.w_prox);
  r.get("w_band", p.w_band);
  r.get("w_oar", p.w_oar);
  r.get("w_grad", p.w_grad);
  r.get("w_iso", p.w_iso);
  r.get("w_doseoar", p.w_doseoar);
  r.get("isodose_fraction", p.isodose_fraction);
  r.get("fusion_alpha", p.fusion_alpha);
  r.get("gate_steepness", p.gate_steepness);
  r.get("gate_center", p.gate_center);
  r.get("gate_floor", p.gate_floor);
  r.finish();
  p.validate();
  return p;
}

Json to_json(const RigidOptions& o) {
  return Json{{"enabled", o.enabled},
              {"initial_step_mm", o.initial_step_mm},
              {"iterations", o.iterations},
              {"levels", o.levels},
              {"min_step_mm", o.min_step_mm}};
}

RigidOptions rigid_options_from_json(const Json& j) {
  RigidOptions o;
  ObjectReader r(j, "rigid");
  r.get("enabled", o.enabled);
  r.get("levels", o.levels);
  r.get("iterations", o.iterations);
  r.get("initial_step_mm", o.initial_step_mm);
  r.get("min_step_mm", o.min_step_mm);
  r.finish();
  return o;
}

Json to_json(const RegConfig& c) {
  return Json{{"beta1", c.beta1},
              {"beta2", c.beta2},
              {"convergence_tol", c.convergence_tol},
              {"convergence_window", c.convergence_window},
              {"iterations", c.iterations},
              {"lambda_smooth", c.lambda_smooth},
              {"levels", c.levels},
              {"prior_weight_kappa", c.prior_weight_kappa},
              {"priors", to_json(c.priors)},
              {"rigid", to_json(c.rigid)},
              {"seed", c.seed},
              {"step_size", c.step_size},
              {"use_anatomy", c.use_anatomy},
              {"use_film", c.use_film},
              {"use_gate", c.use_gate},
              {"use_risk", c.use_risk}};
}

RegConfig reg_config_from_json(const Json& j) {
  RegConfig c;
  ObjectReader r(j, "config");
  r.get("levels", c.levels);
  r.get("iterations", c.iterations);
  r.get("step_size", c.step_size);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("lambda_smooth", c.lambda_smooth);
  r.get("prior_weight_kappa", c.prior_weight_kappa);
  r.get("use_anatomy", c.use_anatomy);
  r.get("use_risk", c.use_risk);
  r.get("use_gate", c.use_gate);
  r.get("use_film", c.use_film);
  r.get("convergence_tol", c.convergence_tol);
  r.get("convergence_window", c.convergence_window);
  r.get("seed", c.seed);
  if (const Json* p = r.child("priors")) c.priors = prior_params_from_json(*p);
  if (const Json* p = r.child("rigid")) c.rigid = rigid_options_from_json(*p);
  r.finish();
  // A level count without caps gets the default schedule's fine end.
  if (j.contains("levels") && !j.contains("iterations")) {
    const std::vector<int> def = RegConfig{}.iterations;
    c.iterations.clear();
    for (int l = c.levels; l >= 1; --l)
      c.iterations.push_back(def[std::size_t(std::max<Index>(0, Index(def.size()) - l))]);
  }
  c.validate();
  return c;
}

Json to_json(const PhantomSpec& s) {
  Json oars = Json::array();
  for (const auto& o : s.oars) oars.push_back(sphere_json(o));
  return Json{{"body_semi_axes_mm", vec3_json(s.body_semi_axes_mm)},
              {"ctv", sphere_json(s.ctv)},
              {"dims", dims_json(s.dims)},
              {"dose_max", s.dose_max},
              {"dose_tau_mm", s.dose_tau_mm},
              {"oars", oars},
              {"seed", s.seed},
              {"spacing", vec3_json(s.spacing)},
              {"texture_amplitude", s.texture_amplitude},
              {"texture_corr_mm", s.texture_corr_mm}};
}

PhantomSpec phantom_spec_from_json(const Json& j) {
  PhantomSpec s;
  ObjectReader r(j, "phantom");
  r.get_dims("dims", s.dims);
  r.get_vec3("spacing", s.spacing);
  r.get_vec3("body_semi_axes_mm", s.body_semi_axes_mm);
  if (const Json* c = r.child("ctv")) s.ctv = sphere_from_json(*c, "phantom.ctv");
  if (const Json* o = r.child("oars")) {
    if (!o->is_array()) throw ValidationError("phantom.oars: expected an array");
    s.oars.clear();
    for (std::size_t i = 0; i < o->size(); ++i)
      s.oars.push_back(sphere_from_json((*o)[i], "phantom.oars[" + std::to_string(i) + "]"));
  }
  r.get("texture_amplitude", s.texture_amplitude);
  r.get("texture_corr_mm", s.texture_corr_mm);
  r.get("dose_max", s.dose_max);
  r.get("dose_tau_mm", s.dose_tau_mm);
  r.get("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

Json to_json(const FieldSpec& s) {
  return Json{{"max_displacement", s.max_displacement}, {"seed", s.seed}, {"width", s.width}};
}

FieldSpec field_spec_from_json(const Json& j) {
  FieldSpec s;
  ObjectReader r(j, "field");
  r.get("max_displacement", s.max_displacement);
  r.get("width", s.width);
  r.get("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

// ---------------------------------------------------------------- conditioning

Json to_json(const Embedding& e) {
  return Json{{"dim", e.values.size()},
              {"source", to_string(e.source)},
              {"values", std::vector<float>(e.values.data(), e.values.data() + e.values.size())}};
}

Embedding embedding_from_json(const Json& j) {
  ObjectReader r(j, "embedding");
  Index dim = -1;
  std::string source = "anatomy";
  std::vector<float> values;
  r.get("dim", dim);
  r.get("source", source);
  r.get("values", values);
  r.finish();
  if (!j.contains("values")) throw ValidationError("embedding: missing 'values'");
  if (dim >= 0 && dim != Index(values.size()))
    throw ValidationError("embedding: dim " + std::to_string(dim) + " does not match " +
                          std::to_string(values.size()) + " values");
  Embedding e;
  e.source = prompt_source_from_string(source);
  e.values = Eigen::Map<const Eigen::VectorXf>(values.data(), Index(values.size()));
  e.validate();
  return e;
}

std::vector<Embedding> embeddings_from_json(const Json& j) {
  std::vector<Embedding> out;
  if (j.is_array()) {
    for (const auto& e : j) out.push_back(embedding_from_json(e));
  } else {
    out.push_back(embedding_from_json(j));
  }
  if (out.empty()) throw ValidationError("embeddings: none given");
  return out;
}

Json to_json(const AdapterWeights& a) {
  std::vector<float> flat;
  flat.reserve(std::size_t(a.matrix.size()));
  for (Index r = 0; r < a.matrix.rows(); ++r)
    for (Index c = 0; c < a.matrix.cols(); ++c) flat.push_back(a.matrix(r, c));
  return Json{{"bias", std::vector<float>(a.bias.data(), a.bias.data() + a.bias.size())},
              {"channels", a.channels()},
              {"input_dim", a.matrix.cols()},
              {"matrix", flat}};
}

AdapterWeights adapter_from_json(const Json& j) {
  ObjectReader r(j, "adapter");
  Index channels = 0, input_dim = kEmbeddingDim;
  std::vector<float> bias, matrix;
  r.get("channels", channels);
  r.get("input_dim", input_dim);
  r.get("bias", bias);
  r.get("matrix", matrix);
  r.finish();
  if (channels < 1) throw ValidationError("adapter: channels must be at least 1");
  if (input_dim != kEmbeddingDim)
    throw ValidationError("adapter: input_dim must be " + std::to_string(kEmbeddingDim));
  if (Index(bias.size()) != 2 * channels || Index(matrix.size()) != 2 * channels * input_dim)
    throw ValidationError("adapter: expected " + std::to_string(2 * channels) + " biases and " +
                          std::to_string(2 * channels * input_dim) + " matrix entries");
  AdapterWeights a;
  a.matrix = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      matrix.data(), 2 * channels, input_dim);
  a.bias = Eigen::Map<const Eigen::VectorXf>(bias.data(), 2 * channels);
  if (!a.matrix.allFinite() || !a.bias.allFinite())
    throw ValidationError("adapter: non-finite weights");
  return a;
}

// ---------------------------------------------------------------- results

Json to_json(const LossBreakdown& b) {
  return Json{{"count", b.count},
              {"degenerate", b.degenerate},
              {"ncc", b.ncc},
              {"smoothness", b.smoothness},
              {"total", b.total}};
}

Json to_json(const RigidTransform& t) {
  return Json{{"center_mm", vec3_json(t.center)},
              {"rotation_rad", vec3_json(t.rotation)},
              {"translation_mm", vec3_json(t.translation)}};
}

Json to_json(const RegReport& r) {
  Json levels = Json::array();
  for (const auto& l : r.levels)
    levels.push_back(Json{{"accepted", l.accepted},
                          {"converged", l.converged},
                          {"dims", dims_json(l.dims)},
                          {"final", to_json(l.final)},
                          {"initial", to_json(l.initial)},
                          {"iterations", l.iterations},
                          {"level", l.level},
                          {"loss", l.loss},
                          {"rejected", l.rejected}});
  Json j{{"final_loss", to_json(r.final_loss)},
         {"flags", r.flags},
         {"fold_fraction", r.fold_fraction},
         {"levels", levels},
         {"seed", r.seed}};
  if (r.rigid) j["rigid"] = to_json(*r.rigid);
  return j;
}

Json timing_json(const RegReport& r) {
  Json levels = Json::array();
  double total = 0.0;
  for (const auto& l : r.levels) {
    levels.push_back(Json{{"level", l.level}, {"seconds", l.seconds}});
    total += l.seconds;
  }
  return Json{{"levels", levels}, {"total_seconds", total}};
}

Json to_json(const MetricReport& m) {
  Json j{{"intensity_max", m.intensity_max},
         {"intensity_min", m.intensity_min},
         {"mask_voxels", m.mask_voxels},
         {"mse", m.mse},
         {"ncc_pct", m.ncc_pct},
         {"ssim_pct", m.ssim_pct}};
  if (m.relvoldiff_pct) j["relvoldiff_pct"] = *m.relvoldiff_pct;
  if (m.fold_pct) j["fold_pct"] = *m.fold_pct;
  if (m.endpoint)
    j["endpoint"] = Json{{"count", m.endpoint->count},
                         {"max", m.endpoint->max},
                         {"mean", m.endpoint->mean},
                         {"median", m.endpoint->median},
                         {"p95", m.endpoint->p95}};
  return j;
}

std::string metric_csv_header() {
  return "ncc_pct,mse,ssim_pct,relvoldiff_pct,fold_pct,epe_mean,epe_p95\n";
}

std::string metric_csv_row(const MetricReport& m) {
  auto num = [](double v) { return Json(v).dump(); };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  std::string row = num(m.ncc_pct) + "," + num(m.mse) + "," + num(m.ssim_pct) + "," +
                    opt(m.relvoldiff_pct) + "," + opt(m.fold_pct) + ",";
  if (m.endpoint) row += num(m.endpoint->mean) + "," + num(m.endpoint->p95);
  else row += ",";
  return row + "\n";
}

}  // namespace protoreg
