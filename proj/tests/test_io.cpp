#include "doctest.h"
#include "support.hpp"

#include "protoreg/io.hpp"

#include <filesystem>
#include <fstream>

using namespace protoreg;
using namespace protoreg::testing;
namespace fs = std::filesystem;

namespace {

// A fresh directory per test case, removed afterwards.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("protoreg_io_" + name + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& leaf) const { return path / leaf; }
};

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

FormatErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.kind();
  }
  FAIL("no FormatError thrown");
  return FormatErrorKind::MalformedJson;
}

Grid odd_grid() {
  Grid g;
  g.dims = Dims(5, 3, 4);
  g.spacing = Vec3(0.75, 1.25, 2.5);
  g.origin = Vec3(-10.5, 3.0, 0.125);
  return g;
}

}  // namespace

TEST_CASE("the documented 8-byte fixture") {
  TempDir dir("fixture");
  Grid g;
  g.dims = Dims(2, 1, 1);
  Volumef v(g);
  v[0] = 1.0f;
  v[1] = 2.0f;
  write_volume(dir / "v", v);
  const std::string raw = read_file(dir / "v.raw");
  const std::string expect("\x00\x00\x80\x3F\x00\x00\x00\x40", 8);
  CHECK(raw == expect);
  CHECK(encode_f32le(v.data().data(), 2) == expect);
}

TEST_CASE("volume and field round trips are bit-exact") {
  TempDir dir("roundtrip");
  CounterRng rng(1);
  const Grid g = odd_grid();
  Volumef v = random_volume<float>(g, rng, -1e3, 1e3);
  v[0] = -0.0f;
  v[1] = std::numeric_limits<float>::denorm_min();
  v[2] = std::numeric_limits<float>::max();
  write_volume(dir / "img", v, SemanticTag::Dose);
  VolumeHeader h;
  const Volumef back = read_volume(dir / "img.json", &h);
  CHECK(std::memcmp(back.data().data(), v.data().data(), sizeof(float) * std::size_t(v.size())) == 0);
  CHECK(h.tag == SemanticTag::Dose);
  CHECK(h.components == 1);
  CHECK((h.grid.dims == g.dims).all());
  CHECK(h.grid.spacing == g.spacing);
  CHECK(h.grid.origin == g.origin);

  const DisplacementFieldf u = random_field<float>(g, rng, 3.0);
  write_field(dir / "u", u);
  CHECK(fs::file_size(dir / "u.raw") == std::uintmax_t(12 * g.size()));
  const DisplacementFieldf ub = read_field(dir / "u.raw");
  CHECK((ub.data() == u.data()).all());
  CHECK(read_header(dir / "u").tag == SemanticTag::Field);
  CHECK(read_header(dir / "u").components == 3);

  // Rewriting what was read gives identical bytes.
  write_volume(dir / "img2", back, SemanticTag::Dose);
  CHECK(read_file(dir / "img.raw") == read_file(dir / "img2.raw"));
  CHECK(read_file(dir / "img.json") == read_file(dir / "img2.json"));
  // No temporary files are left behind.
  for (const auto& e : fs::directory_iterator(dir.path))
    CHECK(e.path().string().find(".tmp") == std::string::npos);
}

TEST_CASE("header JSON is canonical") {
  TempDir dir("header");
  Grid g;
  g.dims = Dims(2, 1, 1);
  write_volume(dir / "v", Volumef(g), SemanticTag::Mask);
  const std::string text = read_file(dir / "v.json");
  CHECK(text ==
        "{\n  \"components\": 1,\n  \"dims\": [\n    2,\n    1,\n    1\n  ],\n  \"dtype\": \"f32le\",\n"
        "  \"order\": \"x-fastest\",\n  \"origin\": [\n    0.0,\n    0.0,\n    0.0\n  ],\n"
        "  \"spacing\": [\n    1.0,\n    1.0,\n    1.0\n  ],\n  \"tag\": \"mask\"\n}\n");
}

TEST_CASE("format errors carry distinct kinds") {
  TempDir dir("errors");
  const Grid g = odd_grid();
  CounterRng rng(2);
  write_volume(dir / "v", random_volume<float>(g, rng));
  const Json good = read_json_file(dir / "v.json");

  SUBCASE("truncated raw file") {
    const std::string raw = read_file(dir / "v.raw");
    write_text(dir / "v.raw", raw.substr(0, raw.size() - 3));
    CHECK(kind_of([&] { read_volume(dir / "v"); }) == FormatErrorKind::LengthMismatch);
  }
  SUBCASE("two components") {
    Json j = good;
    j["components"] = 2;
    write_text(dir / "v.json", j.dump());
    CHECK_THROWS_AS(read_volume(dir / "v"), ValidationError);
    CHECK(kind_of([&] { read_volume(dir / "v"); }) == FormatErrorKind::InvalidHeader);
  }
  SUBCASE("unknown dtype") {
    Json j = good;
    j["dtype"] = "f64le";
    write_text(dir / "v.json", j.dump());
    CHECK(kind_of([&] { read_volume(dir / "v"); }) == FormatErrorKind::UnknownDtype);
  }
  SUBCASE("unknown order") {
    Json j = good;
    j["order"] = "z-fastest";
    write_text(dir / "v.json", j.dump());
    CHECK(kind_of([&] { read_volume(dir / "v"); }) == FormatErrorKind::UnknownOrder);
  }
  SUBCASE("malformed JSON") {
    write_text(dir / "v.json", "{\"dims\": [5, 3");
    CHECK(kind_of([&] { read_volume(dir / "v"); }) == FormatErrorKind::MalformedJson);
  }
  SUBCASE("bad dims and unknown keys") {
    Json j = good;
    j["dims"] = {5, 0, 4};
    CHECK(kind_of([&] { VolumeHeader::from_json(j); }) == FormatErrorKind::InvalidHeader);
    j = good;
    j["extra"] = 1;
    CHECK(kind_of([&] { VolumeHeader::from_json(j); }) == FormatErrorKind::InvalidHeader);
  }
  SUBCASE("component count does not match the requested type") {
    CHECK(kind_of([&] { read_field(dir / "v"); }) == FormatErrorKind::WrongComponents);
    write_field(dir / "u", DisplacementFieldf(g));
    CHECK(kind_of([&] { read_volume(dir / "u"); }) == FormatErrorKind::WrongComponents);
  }
  SUBCASE("missing files") {
    CHECK_THROWS_AS(read_volume(dir / "absent"), IoError);
    fs::remove(dir / "v.raw");
    CHECK_THROWS_AS(read_volume(dir / "v"), IoError);
  }
  CHECK(to_string(FormatErrorKind::LengthMismatch) == "length-mismatch");
}

TEST_CASE("phantom round trip") {
  TempDir dir("phantom");
  PhantomSpec s;
  s.dims = Dims(24, 20, 16);
  const Phantom p = make_phantom(s);
  write_volume(dir / "image", p.image);
  write_volume(dir / "ctv", p.structures.ctv, SemanticTag::Mask);
  write_volume(dir / "dose", p.dose, SemanticTag::Dose);
  CHECK((read_volume(dir / "image").data() == p.image.data()).all());
  CHECK((read_volume(dir / "ctv").data() == p.structures.ctv.data()).all());
  CHECK((read_volume(dir / "dose").data() == p.dose.data()).all());
}

TEST_CASE("configuration round trips") {
  RegConfig c;
  c.levels = 3;
  c.iterations = {7, 8, 9};
  c.step_size = 0.3;
  c.use_anatomy = c.use_gate = true;
  c.priors.sigma_mm = 12.5;
  c.rigid.enabled = false;
  c.seed = 42;
  const Json j = to_json(c);
  const RegConfig back = reg_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.iterations == c.iterations);
  CHECK(back.priors.sigma_mm == 12.5);
  CHECK_FALSE(back.rigid.enabled);

  // Absent keys keep their defaults; unknown keys are rejected.
  const RegConfig partial = reg_config_from_json(Json{{"lambda_smooth", 0.1}});
  CHECK(partial.lambda_smooth == 0.1);
  CHECK(partial.levels == RegConfig{}.levels);
  CHECK_THROWS_AS(reg_config_from_json(Json{{"lamda_smooth", 0.1}}), ValidationError);
  CHECK_THROWS_AS(reg_config_from_json(Json{{"priors", {{"sigma", 1.0}}}}), ValidationError);
  CHECK_THROWS_AS(reg_config_from_json(Json{{"levels", "five"}}), ValidationError);

  const RegConfig three = reg_config_from_json(Json{{"levels", 3}});
  CHECK(three.iterations == std::vector<int>{80, 100, 100});

  PhantomSpec ps;
  ps.dims = Dims(10, 12, 14);
  ps.oars.pop_back();
  ps.seed = 9;
  CHECK(to_json(phantom_spec_from_json(to_json(ps))) == to_json(ps));
  const FieldSpec fsx{1.5, 3.0, 4};
  const FieldSpec fb = field_spec_from_json(to_json(fsx));
  CHECK(fb.max_displacement == 1.5);
  CHECK(fb.width == 3.0);
  CHECK(fb.seed == 4u);
}

TEST_CASE("embedding and adapter round trips") {
  const Embedding e = pseudo_embedding("right parotid", 3, PromptSource::Diagnosis);
  const Embedding eb = embedding_from_json(to_json(e));
  CHECK((eb.values.array() == e.values.array()).all());
  CHECK(eb.source == PromptSource::Diagnosis);
  const std::vector<Embedding> many = embeddings_from_json(Json::array({to_json(e), to_json(e)}));
  CHECK(many.size() == 2u);
  CHECK(embeddings_from_json(to_json(e)).size() == 1u);

  const AdapterWeights w = AdapterWeights::random(2, 5);
  const AdapterWeights wb = adapter_from_json(to_json(w));
  CHECK((wb.matrix.array() == w.matrix.array()).all());
  CHECK((wb.bias.array() == w.bias.array()).all());
  Json bad = to_json(w);
  bad["matrix"].erase(0);
  CHECK_THROWS_AS(adapter_from_json(bad), ValidationError);
}

TEST_CASE("report JSON is deterministic and complete") {
  RegReport r;
  LevelReport l;
  l.level = 1;
  l.loss = {-0.5, -0.6};
  l.iterations = 2;
  l.accepted = 2;
  l.seconds = 1.25;
  r.levels = {l};
  r.final_loss.total = -0.6;
  r.final_loss.ncc = 0.6;
  r.flags = {"note"};
  const Json j = to_json(r);
  CHECK(j.dump().find("seconds") == std::string::npos);
  CHECK(timing_json(r).dump().find("1.25") != std::string::npos);
  CHECK(j == to_json(r));

  MetricReport m;
  m.ncc_pct = 99.5;
  m.relvoldiff_pct = 3.0;
  const Json mj = to_json(m);
  CHECK(mj.at("ncc_pct") == 99.5);
  CHECK(mj.contains("relvoldiff_pct"));
  CHECK_FALSE(mj.contains("endpoint"));
  CHECK(metric_csv_row(m).find("99.5") != std::string::npos);
  const std::string header = metric_csv_header(), row = metric_csv_row(m);
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
}

TEST_CASE("volume_base") {
  CHECK(volume_base("a/b.json") == fs::path("a/b"));
  CHECK(volume_base("a/b.raw") == fs::path("a/b"));
  CHECK(volume_base("a/b") == fs::path("a/b"));
  CHECK(volume_base("a/b.nii") == fs::path("a/b.nii"));
}
