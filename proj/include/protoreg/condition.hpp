#pragma once

// Text-conditioned feature modulation: prompt embeddings, a linear adapter
// producing per-channel (gamma, beta), and FiLM, out = in * (1 + gamma) + beta.

#include "protoreg/core.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace protoreg {

inline constexpr Index kEmbeddingDim = 512;

enum class PromptSource { Anatomy, Diagnosis, Planning };

std::string to_string(PromptSource s);
PromptSource prompt_source_from_string(std::string_view s);

struct Embedding {
  Eigen::VectorXf values;
  PromptSource source = PromptSource::Anatomy;

  /// Throws unless the vector has 512 finite entries.
  void validate() const;
};

struct FilmParams {
  Eigen::VectorXd gamma;
  Eigen::VectorXd beta;

  Index channels() const { return gamma.size(); }

  static FilmParams identity(Index channels) {
    return {Eigen::VectorXd::Zero(channels), Eigen::VectorXd::Zero(channels)};
  }
};

/// Affine adapter 512 -> 2C. Rows [0, C) give gamma, rows [C, 2C) give beta.
struct AdapterWeights {
  Eigen::MatrixXf matrix;
  Eigen::VectorXf bias;

  Index channels() const { return bias.size() / 2; }

  /// Gaussian entries with standard deviation `scale`, reproducible from `seed`.
  static AdapterWeights random(Index channels, std::uint64_t seed, double scale = 0.01);
  static AdapterWeights zeros(Index channels);
};

/// Channels of identically shaped volumes.
template <typename Scalar>
struct FeatureGrid {
  std::vector<Volume<Scalar>> channels;

  Index channel_count() const { return Index(channels.size()); }
};

template <typename Scalar>
FeatureGrid<Scalar> film(const FeatureGrid<Scalar>& features, const FilmParams& params) {
  if (params.gamma.size() != params.beta.size() ||
      params.gamma.size() != features.channel_count())
    throw ValidationError("film: parameter length does not match channel count");
  if (!params.gamma.allFinite() || !params.beta.allFinite())
    throw ValidationError("film: non-finite parameters");
  FeatureGrid<Scalar> out;
  out.channels.reserve(features.channels.size());
  for (Index c = 0; c < features.channel_count(); ++c) {
    const auto& in = features.channels[std::size_t(c)];
    if (c > 0) require_same_dims(features.channels[0].grid(), in.grid(), "film");
    if (params.gamma[c] == 0.0 && params.beta[c] == 0.0) {
      out.channels.push_back(in);
      continue;
    }
    const double scale = 1.0 + params.gamma[c];
    const double shift = params.beta[c];
    out.channels.push_back(in.with_data(
        (in.data().template cast<double>() * scale + shift).template cast<Scalar>()));
  }
  return out;
}

FilmParams adapter(const Embedding& e, const AdapterWeights& weights, Index channels);

/// Stand-in text encoder: FNV-1a hash of the text seeds a counter-based
/// generator whose Gaussian draws are normalised to a unit 512-vector.
Embedding pseudo_embedding(std::string_view text, std::uint64_t seed = 0,
                           PromptSource source = PromptSource::Anatomy);

/// Element-wise mean of the given embeddings (the way several prompts are
/// combined before the adapter).
Embedding mean_embedding(std::span<const Embedding> embeddings);

}  // namespace protoreg
