#include "protoreg/condition.hpp"

#include "protoreg/rng.hpp"

namespace protoreg {

std::string to_string(PromptSource s) {
  switch (s) {
    case PromptSource::Anatomy: return "anatomy";
    case PromptSource::Diagnosis: return "diagnosis";
    case PromptSource::Planning: return "planning";
  }
  return "anatomy";
}

PromptSource prompt_source_from_string(std::string_view s) {
  if (s == "anatomy") return PromptSource::Anatomy;
  if (s == "diagnosis") return PromptSource::Diagnosis;
  if (s == "planning") return PromptSource::Planning;
  throw ValidationError("unknown prompt source '" + std::string(s) + "'");
}

void Embedding::validate() const {
  if (values.size() != kEmbeddingDim)
    throw ValidationError("embedding must have dimension 512, got " + std::to_string(values.size()));
  if (!values.allFinite()) throw ValidationError("embedding contains non-finite values");
}

AdapterWeights AdapterWeights::random(Index channels, std::uint64_t seed, double scale) {
  if (channels < 1) throw ValidationError("adapter needs at least one channel");
  CounterRng rng(seed, 0xADA7);
  AdapterWeights w;
  w.matrix.resize(2 * channels, kEmbeddingDim);
  // Row-major draw order, matching the serialized layout.
  for (Index r = 0; r < w.matrix.rows(); ++r)
    for (Index c = 0; c < w.matrix.cols(); ++c) w.matrix(r, c) = float(scale * rng.normal());
  w.bias.resize(2 * channels);
  for (Index r = 0; r < w.bias.size(); ++r) w.bias[r] = float(scale * rng.normal());
  return w;
}

AdapterWeights AdapterWeights::zeros(Index channels) {
  return {Eigen::MatrixXf::Zero(2 * channels, kEmbeddingDim), Eigen::VectorXf::Zero(2 * channels)};
}

FilmParams adapter(const Embedding& e, const AdapterWeights& weights, Index channels) {
  e.validate();
  if (channels < 1 || weights.matrix.rows() != 2 * channels ||
      weights.matrix.cols() != kEmbeddingDim || weights.bias.size() != 2 * channels)
    throw ValidationError("adapter weights must be shaped 512 -> " + std::to_string(2 * channels));
  const Eigen::VectorXd out = weights.matrix.cast<double>() * e.values.cast<double>() +
                              weights.bias.cast<double>();
  return {out.head(channels), out.tail(channels)};
}

Embedding pseudo_embedding(std::string_view text, std::uint64_t seed, PromptSource source) {
  if (text.empty()) throw ValidationError("pseudo_embedding: empty prompt");
  std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a offset basis
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  CounterRng rng(h, seed);
  Eigen::VectorXd v(kEmbeddingDim);
  for (Index i = 0; i < kEmbeddingDim; ++i) v[i] = rng.normal();
  v.normalize();
  return {v.cast<float>(), source};
}

Embedding mean_embedding(std::span<const Embedding> embeddings) {
  if (embeddings.empty()) throw ValidationError("mean_embedding: no embeddings given");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(kEmbeddingDim);
  for (const auto& e : embeddings) {
    e.validate();
    acc += e.values.cast<double>();
  }
  acc /= double(embeddings.size());
  return {acc.cast<float>(), embeddings.front().source};
}

}  // namespace protoreg
