#include "protoreg/engine.hpp"

#include "protoreg/metrics.hpp"
#include "protoreg/volgrid.hpp"

#include <chrono>
#include <cmath>

namespace protoreg {

void RegConfig::validate() const {
  if (levels < 1) throw ValidationError("levels must be at least 1");
  if (int(iterations.size()) != levels)
    throw ValidationError("iterations must list one cap per level (" + std::to_string(levels) +
                          "), got " + std::to_string(iterations.size()));
  for (int n : iterations)
    if (n < 0) throw ValidationError("iteration caps must be nonnegative");
  if (!(step_size > 0.0)) throw ValidationError("step_size must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ValidationError("beta1 and beta2 must lie in [0, 1)");
  if (!(lambda_smooth >= 0.0)) throw ValidationError("lambda_smooth must be nonnegative");
  if (!(prior_weight_kappa >= 0.0)) throw ValidationError("prior_weight_kappa must be nonnegative");
  if (!(convergence_tol >= 0.0) || convergence_window < 1)
    throw ValidationError("convergence settings must be nonnegative with a window of at least 1");
  if ((use_gate || use_film) && !(use_anatomy || use_risk))
    throw ValidationError("use_gate and use_film need use_anatomy or use_risk to supply a prior");
  if (rigid.levels < 1 || rigid.iterations < 0 || !(rigid.initial_step_mm > 0.0) ||
      !(rigid.min_step_mm > 0.0))
    throw ValidationError("invalid rigid options");
  priors.validate();
}

int RegConfig::iterations_for(int level, int count) const {
  // Caps are listed coarse to fine; a reduced pyramid keeps the fine end.
  if (level < 1 || level > count) return 0;
  return iterations.at(iterations.size() - std::size_t(level));
}

std::optional<PriorMap> guidance_prior(const ClinicalPriors& priors, const RegConfig& config) {
  if (!config.use_anatomy && !config.use_risk) return std::nullopt;
  std::optional<PriorMap> anatomy, risk;
  if (config.use_anatomy) {
    if (priors.structures == nullptr || count_nonzero(priors.structures->ctv) == 0)
      throw ValidationError("anatomy guidance needs a non-empty CTV");
    anatomy = anatomy_map(*priors.structures, config.priors);
  }
  if (config.use_risk) {
    if (priors.dose == nullptr) throw ValidationError("risk guidance needs a dose volume");
    if (priors.structures != nullptr) {
      risk = risk_map(*priors.dose, *priors.structures, config.priors);
    } else {
      StructureSet none{Volumef(priors.dose->grid(), 0.0f), {}, std::nullopt};
      risk = risk_map(*priors.dose, none, config.priors);
    }
  }
  if (anatomy && risk) return fuse_priors(*anatomy, *risk, config.priors.fusion_alpha);
  return anatomy ? anatomy : risk;
}

std::optional<std::vector<FilmParams>> guidance_film(const ClinicalPriors& priors,
                                                     const RegConfig& config, int levels) {
  if (!config.use_film) return std::nullopt;
  if (priors.embeddings.empty() || priors.adapter == nullptr)
    throw ValidationError("FiLM guidance needs at least one embedding and adapter weights");
  const Embedding e = mean_embedding(priors.embeddings);
  const Index channels = priors.adapter->channels();
  const FilmParams all = adapter(e, *priors.adapter, channels);
  std::vector<FilmParams> per_level;
  if (channels == 1) {
    per_level.assign(std::size_t(levels), all);
  } else if (channels >= levels) {
    for (int l = 0; l < levels; ++l)
      per_level.push_back({all.gamma.segment(l, 1), all.beta.segment(l, 1)});
  } else {
    throw ValidationError("adapter must produce 1 channel or one channel per level");
  }
  return per_level;
}

Volumef warp_contour(const Volumef& mask, const DisplacementFieldf& field) {
  require_same_dims(mask.grid(), field.grid(), "warp_contour");
  if (!is_binary(mask)) throw ValidationError("warp_contour: mask must be binary");
  const Volumef w = warp(mask, field);
  return w.with_data((w.data() >= 0.5f).cast<float>());
}

namespace {

using Clock = std::chrono::steady_clock;

Volumef binarize(const Volumef& v) { return v.with_data((v.data() >= 0.5f).cast<float>()); }

Volumef pool_to_level(Volumef v, int level) {
  for (int l = 1; l < level; ++l) v = downsample_avg(v);
  return v;
}

bool finite(const LossBreakdown& b) { return std::isfinite(b.total) && std::isfinite(b.ncc); }

template <bool Guided>
RegistrationResult run(const Volumef& fixed, const Volumef& moving, const Volumef* body,
                       const ClinicalPriors& priors, const RegConfig& config,
                       const UpdateObserver& observer) {
  config.validate();
  require_same_dims(fixed.grid(), moving.grid(), "register");
  if (!fixed.all_finite() || !moving.all_finite())
    throw ValidationError("register: images contain non-finite values");
  const Volumef mask = body != nullptr ? *body : Volumef(fixed.grid(), 1.0f);
  require_same_dims(fixed.grid(), mask.grid(), "register body mask");
  if (!is_binary(mask)) throw ValidationError("register: body mask must be binary");

  RegReport report;
  report.seed = config.seed;

  std::optional<PriorMap> prior;
  std::optional<std::vector<FilmParams>> film_params;
  if constexpr (Guided) {
    prior = guidance_prior(priors, config);
    if (prior) require_same_dims(fixed.grid(), prior->grid(), "register prior");
  }

  const Pyramid<float> fixed_pyr = build_pyramid(fixed, config.levels);
  const Pyramid<float> moving_pyr = build_pyramid(moving, config.levels);
  const Pyramid<float> mask_pyr = build_pyramid(mask, config.levels);
  for (const auto& w : fixed_pyr.warnings) report.flags.push_back(w);
  const int count = fixed_pyr.count();
  if constexpr (Guided) film_params = guidance_film(priors, config, count);

  const double lambda = config.lambda_smooth;
  const double b1 = config.beta1, b2 = config.beta2;
  DisplacementFieldf phi;

  for (int level = count; level >= 1; --level) {
    const auto start = Clock::now();
    const Volumef& f = fixed_pyr.level(level);
    const Volumef& mv = moving_pyr.level(level);
    const Volumef mask_l = binarize(mask_pyr.level(level));
    const DisplacementFieldf up =
        level == count ? DisplacementFieldf(f.grid()) : upsample_field(phi, f.dims());

    LevelReport lr;
    lr.level = level;
    lr.dims = f.dims();
    if (count_nonzero(mask_l) < 2) {
      report.flags.push_back("level " + std::to_string(level) + " skipped: mask too small");
      phi = up;
      report.levels.push_back(lr);
      continue;
    }

    Volumef prior_l;
    const Volumef* prior_ptr = nullptr;
    std::optional<Volumef> multiplier;
    if constexpr (Guided) {
      if (prior) {
        prior_l = pool_to_level(*prior, level);
        if (film_params) {
          FeatureGrid<float> fg{{prior_l}};
          prior_l = film(fg, (*film_params)[std::size_t(level - 1)]).channels[0];
          prior_l.data() = prior_l.data().max(0.0f).min(1.0f);
        }
        prior_ptr = &prior_l;
        if (config.use_gate)
          multiplier = gate_multiplier(gate(prior_l, config.priors, 1), config.priors);
      }
    }
    const SimilarityWeights<float> weights(mask_l, prior_ptr, config.prior_weight_kappa);

    DisplacementFieldf residual(f.grid());
    DisplacementFieldf trial(f.grid());
    DisplacementFieldf raw(f.grid());
    DisplacementFieldf gated(f.grid());
    Eigen::Array3Xd m1 = Eigen::Array3Xd::Zero(3, f.size());
    Eigen::Array3Xd m2 = Eigen::Array3Xd::Zero(3, f.size());
    Eigen::Array3Xd m1c, m2c, step_field;

    LossAndGradient<float> current = loss_and_gradient(f, mv, up, weights, lambda);
    if (!finite(current.loss)) {
      report.levels.push_back(lr);
      throw RegistrationAborted("non-finite initial loss at level " + std::to_string(level),
                                report);
    }
    lr.initial = current.loss;

    // Gradients scale like 1/N; rescale so Adam's epsilon stays negligible.
    const double scale = double(f.size());
    double step = config.step_size;
    int t = 0;
    const int cap = config.iterations_for(level, count);
    const std::size_t window = std::size_t(config.convergence_window);
    for (int it = 0; it < cap; ++it) {
      const Eigen::Array3Xd g = current.gradient.data().cast<double>() * scale;
      const int tc = t + 1;
      m1c = b1 * m1 + (1.0 - b1) * g;
      m2c = b2 * m2 + (1.0 - b2) * g.square();
      const double c1 = 1.0 - std::pow(b1, tc);
      if (b2 > 0.0) {
        const double c2 = 1.0 - std::pow(b2, tc);
        step_field = step * (m1c / c1) / ((m2c / c2).sqrt() + 1e-8);
      } else {
        step_field = step * m1c / c1;
      }
      raw.data() = step_field.cast<float>();
      if (multiplier)
        gated.data() =
            (step_field.rowwise() * multiplier->data().cast<double>().transpose()).cast<float>();
      else
        gated.data() = raw.data();
      trial.data() = residual.data() - gated.data();

      LossAndGradient<float> cand =
          loss_and_gradient(f, mv, compose_additive(up, trial), weights, lambda);
      if (!finite(cand.loss)) {
        lr.seconds = std::chrono::duration<double>(Clock::now() - start).count();
        report.levels.push_back(lr);
        throw RegistrationAborted("non-finite loss at level " + std::to_string(level) +
                                      ", iteration " + std::to_string(it),
                                  report);
      }
      const bool accept = cand.loss.total < current.loss.total;
      if (observer)
        observer(UpdateTrace{level, it, &raw, &gated, multiplier ? &*multiplier : nullptr, accept});
      if (accept) {
        std::swap(residual, trial);
        std::swap(m1, m1c);
        std::swap(m2, m2c);
        t = tc;
        current = std::move(cand);
        ++lr.accepted;
        step = std::min(config.step_size, step * 1.25);
      } else {
        ++lr.rejected;
        step *= 0.5;
      }
      lr.loss.push_back(current.loss.total);
      lr.iterations = it + 1;

      const std::size_t k = lr.loss.size();
      if (k > window) {
        const double now = lr.loss[k - 1], then = lr.loss[k - 1 - window];
        if (std::abs(then - now) < config.convergence_tol * std::max(std::abs(now), 1e-12)) {
          lr.converged = true;
          break;
        }
      }
    }
    lr.final = current.loss;
    phi = compose_additive(up, residual);
    lr.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    report.levels.push_back(lr);
  }

  report.final_loss = total_loss(fixed, moving, phi, SimilarityWeights<float>(mask), lambda);
  report.fold_fraction = fold_fraction(phi) / 100.0;
  if (report.final_loss.degenerate) report.flags.push_back("degenerate NCC variance");
  return {std::move(phi), std::move(report)};
}

}  // namespace

RegistrationResult register_deformable(const Volumef& fixed, const Volumef& moving,
                                       const Volumef* body, const ClinicalPriors& priors,
                                       const RegConfig& config, const UpdateObserver& observer) {
  return run<true>(fixed, moving, body, priors, config, observer);
}

RegistrationResult register_unguided(const Volumef& fixed, const Volumef& moving,
                                     const Volumef* body, const RegConfig& config) {
  if (config.guided())
    throw ValidationError("register_unguided: configuration enables guidance flags");
  return run<false>(fixed, moving, body, ClinicalPriors{}, config, UpdateObserver{});
}

}  // namespace protoreg
