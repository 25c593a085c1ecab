#include "protoreg/cli.hpp"

#include "protoreg/engine.hpp"
#include "protoreg/io.hpp"
#include "protoreg/metrics.hpp"
#include "protoreg/priors.hpp"
#include "protoreg/synth.hpp"
#include "protoreg/volgrid.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <optional>

namespace protoreg {

namespace fs = std::filesystem;

namespace {

struct PhantomArgs {
  std::string spec, out;
};

struct PriorsArgs {
  std::string ctv, dose, params, body, out;
  std::vector<std::string> oars;
};

struct RegisterArgs {
  std::string fixed, moving, body, ctv, dose, embeddings, adapter, config, out;
  std::vector<std::string> oars;
};

struct WarpArgs {
  std::string image, mask, field, out;
};

struct MetricsArgs {
  std::string fixed, warped, mask, ctv_fixed, ctv_prop, field, truth, out, csv;
};

std::string name_of(const std::string& path) { return volume_base(path).filename().string(); }

// out(v) = vol(v + u(v)) on the field's grid; the sampled volume may have
// other dims (its voxel coordinates are what the field points into).
Volumef sample_through(const Volumef& vol, const DisplacementFieldf& field) {
  const Grid& g = field.grid();
  Volumef out(g);
  parallel_for(out.size(), [&](Index i) {
    Index x, y, z;
    detail::unravel(g.dims, i, x, y, z);
    const auto u = field[i];
    out[i] = float(detail::trilinear(vol, double(x) + double(u[0]), double(y) + double(u[1]),
                                     double(z) + double(u[2])));
  });
  return out;
}

DisplacementFieldf crop_field(const DisplacementFieldf& f, const Grid& target) {
  if (f.grid().same_dims(target)) return f;
  DisplacementFieldf out(target);
  for (Index z = 0; z < target.dims[2]; ++z)
    for (Index y = 0; y < target.dims[1]; ++y)
      for (Index x = 0; x < target.dims[0]; ++x) out(x, y, z) = f(x, y, z);
  return out;
}

void write_mask(const fs::path& p, const Volumef& m) { write_volume(p, m, SemanticTag::Mask); }

int cmd_phantom(const PhantomArgs& a, std::ostream& out) {
  Json spec_json = read_json_file(a.spec);
  if (!spec_json.is_object()) throw ValidationError("phantom spec: expected a JSON object");
  std::optional<FieldSpec> deformation;
  if (spec_json.contains("deformation")) {
    deformation = field_spec_from_json(spec_json["deformation"]);
    spec_json.erase("deformation");
  }
  const PhantomSpec spec = phantom_spec_from_json(spec_json);
  const Phantom ph = make_phantom(spec);
  const fs::path dir(a.out);
  auto write_set = [&](const Phantom& p, const std::string& prefix) {
    write_volume(dir / (prefix + "image"), p.image, SemanticTag::Image);
    write_volume(dir / (prefix + "dose"), p.dose, SemanticTag::Dose);
    write_mask(dir / (prefix + "ctv"), p.structures.ctv);
    if (p.structures.body) write_mask(dir / (prefix + "body"), *p.structures.body);
    for (const auto& o : p.structures.oars) write_mask(dir / (prefix + o.name), o.mask);
  };
  write_set(ph, "");
  if (deformation) {
    const DisplacementFieldf truth = make_smooth_field(ph.image.grid(), *deformation);
    write_field(dir / "truth", truth);
    write_set(warp_phantom(ph, truth), "deformed_");
  }
  out << "phantom " << to_string(spec.dims) << " written to " << dir.string() << "\n";
  return kExitOk;
}

StructureSet read_structures(const std::string& ctv, const std::vector<std::string>& oars,
                             const std::string& body) {
  StructureSet s;
  s.ctv = read_volume(ctv);
  for (const auto& o : oars) s.oars.push_back({name_of(o), read_volume(o)});
  if (!body.empty()) s.body = read_volume(body);
  s.validate();
  return s;
}

int cmd_priors(const PriorsArgs& a, std::ostream& out) {
  const PriorParams params =
      a.params.empty() ? PriorParams{} : prior_params_from_json(read_json_file(a.params));
  const StructureSet s = read_structures(a.ctv, a.oars, a.body);
  const Volumef dose = read_volume(a.dose);
  require_same_dims(s.grid(), dose.grid(), "priors dose");
  const PriorMap anatomy = anatomy_map(s, params);
  const PriorMap risk = risk_map(dose, s, params);
  const PriorMap fused = fuse_priors(anatomy, risk, params.fusion_alpha);
  const fs::path dir(a.out);
  write_volume(dir / "anatomy", anatomy, SemanticTag::Prior);
  write_volume(dir / "risk", risk, SemanticTag::Prior);
  write_volume(dir / "fused", fused, SemanticTag::Prior);
  out << "priors written to " << dir.string() << "\n";
  return kExitOk;
}

int cmd_register(const RegisterArgs& a, std::ostream& out) {
  const RegConfig config =
      a.config.empty() ? RegConfig{} : reg_config_from_json(read_json_file(a.config));
  const Volumef fixed = read_volume(a.fixed);
  const Volumef moving = read_volume(a.moving);
  const Dims common = fixed.dims().max(moving.dims());
  const bool padded = !(common == fixed.dims()).all();
  auto pad = [&](const Volumef& v) {
    require_same_dims(fixed.grid(), v.grid(), "register input on the fixed grid");
    return pad_to_shape(v, common);
  };
  const Volumef fp = pad_to_shape(fixed, common);
  const Volumef mp = pad_to_shape(moving, common);

  std::optional<Volumef> body;
  if (!a.body.empty()) body = pad(read_volume(a.body));
  else if (padded) body = pad(Volumef(fixed.grid(), 1.0f));

  std::optional<StructureSet> structures;
  if (!a.ctv.empty()) {
    StructureSet s = read_structures(a.ctv, a.oars, "");
    StructureSet p{pad(s.ctv), {}, body};
    for (const auto& o : s.oars) p.oars.push_back({o.name, pad(o.mask)});
    structures = std::move(p);
  } else if (!a.oars.empty()) {
    throw ValidationError("register: --oars needs --ctv");
  }
  std::optional<Volumef> dose;
  if (!a.dose.empty()) dose = pad(read_volume(a.dose));
  std::optional<AdapterWeights> adapter_w;
  if (!a.adapter.empty()) adapter_w = adapter_from_json(read_json_file(a.adapter));

  ClinicalPriors priors;
  priors.structures = structures ? &*structures : nullptr;
  priors.dose = dose ? &*dose : nullptr;
  priors.adapter = adapter_w ? &*adapter_w : nullptr;
  if (!a.embeddings.empty()) priors.embeddings = embeddings_from_json(read_json_file(a.embeddings));

  std::optional<RigidResult> rigid;
  if (config.rigid.enabled) {
    const Volumef rigid_mask = body ? *body : Volumef(fp.grid(), 1.0f);
    rigid = rigid_align(fp, mp, rigid_mask, config.rigid);
  }
  const Volumef& moving_def = rigid ? rigid->resampled : mp;
  RegistrationResult result =
      register_deformable(fp, moving_def, body ? &*body : nullptr, priors, config);
  DisplacementFieldf total = result.field;
  if (rigid) {
    result.report.rigid = rigid->transform;
    total = compose_rigid(rigid->transform, result.field, mp.grid());
  }
  const DisplacementFieldf field = crop_field(total, fixed.grid());

  const fs::path dir(a.out);
  write_field(dir / "field", field);
  write_volume(dir / "warped", sample_through(moving, field), SemanticTag::Image);
  write_json_file(dir / "report.json", to_json(result.report));
  write_json_file(dir / "timing.json", timing_json(result.report));
  out << "registered: ncc " << result.report.final_loss.ncc << ", fold fraction "
      << result.report.fold_fraction << "\n";
  return kExitOk;
}

int cmd_warp(const WarpArgs& a, std::ostream& out) {
  if (a.image.empty() == a.mask.empty())
    throw ValidationError("warp: give exactly one of --image or --mask");
  const DisplacementFieldf field = read_field(a.field);
  if (!a.mask.empty()) {
    const Volumef mask = read_volume(a.mask);
    if (!is_binary(mask)) throw ValidationError("warp: --mask must be binary");
    const Volumef w = sample_through(mask, field);
    write_mask(a.out, w.with_data((w.data() >= 0.5f).cast<float>()));
  } else {
    VolumeHeader h;
    const Volumef image = read_volume(a.image, &h);
    write_volume(a.out, sample_through(image, field), h.tag);
  }
  out << "warped volume written to " << volume_base(a.out).string() << "\n";
  return kExitOk;
}

int cmd_metrics(const MetricsArgs& a, std::ostream& out) {
  const Volumef fixed = read_volume(a.fixed);
  const Volumef warped = read_volume(a.warped);
  std::optional<Volumef> mask, ctv_fixed, ctv_prop;
  std::optional<DisplacementFieldf> field, truth;
  if (!a.mask.empty()) mask = read_volume(a.mask);
  if (!a.ctv_fixed.empty()) ctv_fixed = read_volume(a.ctv_fixed);
  if (!a.ctv_prop.empty()) ctv_prop = read_volume(a.ctv_prop);
  if (ctv_fixed.has_value() != ctv_prop.has_value())
    throw ValidationError("metrics: --ctv-fixed and --ctv-prop go together");
  if (!a.field.empty()) field = read_field(a.field);
  if (!a.truth.empty()) {
    if (!field) throw ValidationError("metrics: --truth needs --field");
    truth = read_field(a.truth);
  }
  MetricInputs in;
  in.mask = mask ? &*mask : nullptr;
  in.ctv_fixed = ctv_fixed ? &*ctv_fixed : nullptr;
  in.ctv_propagated = ctv_prop ? &*ctv_prop : nullptr;
  in.field = field ? &*field : nullptr;
  in.truth = truth ? &*truth : nullptr;
  const MetricReport report = evaluate_metrics(fixed, warped, in);
  write_json_file(a.out, to_json(report));
  if (!a.csv.empty()) write_file_atomic(a.csv, metric_csv_header() + metric_csv_row(report));
  out << "ncc " << report.ncc_pct << "%, ssim " << report.ssim_pct << "%, mse " << report.mse
      << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Prior-guided deformable registration of 3D volumes", "protoreg"};
  app.require_subcommand(1);

  PhantomArgs pa;
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom");
  phantom->add_option("--spec", pa.spec, "Phantom spec JSON")->required();
  phantom->add_option("--out", pa.out, "Output directory")->required();

  PriorsArgs pr;
  auto* priors = app.add_subcommand("priors", "Build anatomy, risk and fused prior maps");
  priors->add_option("--ctv", pr.ctv, "CTV mask")->required();
  priors->add_option("--oars", pr.oars, "OAR masks")->expected(0, -1);
  priors->add_option("--dose", pr.dose, "Dose volume")->required();
  priors->add_option("--body", pr.body, "Body mask");
  priors->add_option("--params", pr.params, "Prior parameter JSON");
  priors->add_option("--out", pr.out, "Output directory")->required();

  RegisterArgs ra;
  auto* reg = app.add_subcommand("register", "Rigid then deformable registration");
  reg->add_option("--fixed", ra.fixed, "Fixed image")->required();
  reg->add_option("--moving", ra.moving, "Moving image")->required();
  reg->add_option("--body", ra.body, "Body mask (fixed grid)");
  reg->add_option("--ctv", ra.ctv, "CTV mask (fixed grid)");
  reg->add_option("--oars", ra.oars, "OAR masks (fixed grid)")->expected(0, -1);
  reg->add_option("--dose", ra.dose, "Dose volume (fixed grid)");
  reg->add_option("--embeddings", ra.embeddings, "Prompt embedding JSON");
  reg->add_option("--adapter", ra.adapter, "Adapter weight JSON");
  reg->add_option("--config", ra.config, "Registration config JSON");
  reg->add_option("--out", ra.out, "Output directory")->required();

  WarpArgs wa;
  auto* warp_cmd = app.add_subcommand("warp", "Apply a displacement field");
  // Exactly one input kind.
  auto* source = warp_cmd->add_option_group("input");
  source->add_option("--image", wa.image, "Image to warp");
  source->add_option("--mask", wa.mask, "Binary mask to warp as a contour");
  source->require_option(1);
  warp_cmd->add_option("--field", wa.field, "Displacement field")->required();
  warp_cmd->add_option("--out", wa.out, "Output base path")->required();

  MetricsArgs ma;
  auto* met = app.add_subcommand("metrics", "Evaluate alignment metrics");
  met->add_option("--fixed", ma.fixed, "Fixed image")->required();
  met->add_option("--warped", ma.warped, "Warped moving image")->required();
  met->add_option("--mask", ma.mask, "Evaluation mask");
  met->add_option("--ctv-fixed", ma.ctv_fixed, "CTV on the fixed image");
  met->add_option("--ctv-prop", ma.ctv_prop, "Propagated CTV");
  met->add_option("--field", ma.field, "Estimated field");
  met->add_option("--truth", ma.truth, "Ground-truth field");
  met->add_option("--out", ma.out, "Output JSON")->required();
  met->add_option("--csv", ma.csv, "Optional one-row CSV");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* sub = nullptr;
    for (const auto* s : app.get_subcommands()) sub = s;
    err << (sub != nullptr ? sub->help() : app.help());
    return kExitUsage;
  }

  try {
    if (phantom->parsed()) return cmd_phantom(pa, out);
    if (priors->parsed()) return cmd_priors(pr, out);
    if (reg->parsed()) return cmd_register(ra, out);
    if (warp_cmd->parsed()) return cmd_warp(wa, out);
    if (met->parsed()) return cmd_metrics(ma, out);
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const RegistrationAborted& e) {
    err << "registration aborted: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace protoreg
