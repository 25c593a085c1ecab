#include "doctest.h"
#include "support.hpp"

#include "protoreg/condition.hpp"

#include <array>
#include <string>

using namespace protoreg;
using namespace protoreg::testing;

namespace {

FeatureGrid<double> random_features(Index channels, const Grid& g, CounterRng& rng) {
  FeatureGrid<double> f;
  for (Index c = 0; c < channels; ++c) f.channels.push_back(random_volume(g, rng, -1.0, 1.0));
  return f;
}

FilmParams random_params(Index channels, CounterRng& rng) {
  FilmParams p = FilmParams::identity(channels);
  for (Index c = 0; c < channels; ++c) {
    p.gamma[c] = rng.normal();
    p.beta[c] = rng.normal();
  }
  return p;
}

}  // namespace

TEST_CASE("film") {
  CounterRng rng(1);
  const Grid g = make_grid(4, 4, 4);
  const FeatureGrid<double> x = random_features(2, g, rng);

  SUBCASE("identity parameters are bit-exact") {
    const FeatureGrid<double> out = film(x, FilmParams::identity(2));
    for (int c = 0; c < 2; ++c) CHECK((out.channels[c].data() == x.channels[c].data()).all());
    const FeatureGrid<float> xf{{x.channels[0].cast<float>()}};
    CHECK((film(xf, FilmParams::identity(1)).channels[0].data() == xf.channels[0].data()).all());
  }
  SUBCASE("gamma = -1 leaves only beta") {
    FilmParams p = FilmParams::identity(2);
    p.gamma.setConstant(-1.0);
    p.beta << 0.25, -3.0;
    const FeatureGrid<double> out = film(x, p);
    CHECK((out.channels[0].data() == 0.25).all());
    CHECK((out.channels[1].data() == -3.0).all());
  }
  SUBCASE("matches the per-voxel oracle") {
    const FilmParams p = random_params(2, rng);
    const FeatureGrid<double> out = film(x, p);
    for (int c = 0; c < 2; ++c)
      for (Index i = 0; i < x.channels[c].size(); ++i)
        CHECK(std::abs(out.channels[c][i] - (x.channels[c][i] * (1.0 + p.gamma[c]) + p.beta[c])) < 1e-7);
  }
  SUBCASE("affine superposition identity") {
    for (int t = 0; t < 10; ++t) {
      const FeatureGrid<double> y = random_features(2, g, rng);
      const FilmParams p = random_params(2, rng);
      const double a = rng.normal(), b = rng.normal();
      FeatureGrid<double> mix;
      for (int c = 0; c < 2; ++c)
        mix.channels.push_back(x.channels[c].with_data(a * x.channels[c].data() + b * y.channels[c].data()));
      const FeatureGrid<double> lhs = film(mix, p), fx = film(x, p), fy = film(y, p);
      for (int c = 0; c < 2; ++c) {
        const Eigen::ArrayXd rhs = a * fx.channels[c].data() + b * fy.channels[c].data() -
                                   (a + b - 1.0) * p.beta[c];
        CHECK((lhs.channels[c].data() - rhs).abs().maxCoeff() < 1e-12);
      }
    }
  }
  CHECK_THROWS_AS(film(x, FilmParams::identity(3)), ValidationError);
}

TEST_CASE("adapter") {
  CounterRng rng(2);
  const Index C = 3;
  const AdapterWeights w = AdapterWeights::random(C, 7);
  REQUIRE(w.matrix.rows() == 2 * C);
  REQUIRE(w.matrix.cols() == kEmbeddingDim);

  Embedding zero{Eigen::VectorXf::Zero(kEmbeddingDim), PromptSource::Anatomy};
  const FilmParams at_origin = adapter(zero, w, C);
  for (Index c = 0; c < C; ++c) {
    CHECK(at_origin.gamma[c] == double(w.bias[c]));
    CHECK(at_origin.beta[c] == double(w.bias[C + c]));
  }

  const Embedding e = pseudo_embedding("left parotid sparing", 0);
  const FilmParams none = adapter(e, AdapterWeights::zeros(C), C);
  CHECK((none.gamma.array() == 0.0).all());
  CHECK((none.beta.array() == 0.0).all());

  SUBCASE("matches explicit dot products") {
    const FilmParams p = adapter(e, w, C);
    for (Index r = 0; r < 2 * C; ++r) {
      long double acc = w.bias[r];
      for (Index k = 0; k < kEmbeddingDim; ++k) acc += (long double)w.matrix(r, k) * e.values[k];
      const double got = r < C ? p.gamma[r] : p.beta[r - C];
      CHECK(std::abs(got - double(acc)) < 1e-6);
    }
  }
  SUBCASE("linear in the embedding up to the bias") {
    const Embedding e2 = pseudo_embedding("nodal boost", 0);
    Embedding sum{e.values + e2.values, PromptSource::Anatomy};
    const FilmParams p1 = adapter(e, w, C), p2 = adapter(e2, w, C), ps = adapter(sum, w, C);
    const FilmParams p0 = adapter(zero, w, C);
    CHECK((ps.gamma - (p1.gamma + p2.gamma - p0.gamma)).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((ps.beta - (p1.beta + p2.beta - p0.beta)).cwiseAbs().maxCoeff() < 1e-6);
  }
  CHECK_THROWS_AS(adapter(e, w, 2), ValidationError);
  Embedding short_e{Eigen::VectorXf::Zero(10), PromptSource::Anatomy};
  CHECK_THROWS_AS(adapter(short_e, w, C), ValidationError);
}

TEST_CASE("pseudo_embedding") {
  const Embedding a = pseudo_embedding("gross tumour in the right upper lobe");
  const Embedding b = pseudo_embedding("gross tumour in the right upper lobe");
  CHECK((a.values.array() == b.values.array()).all());
  CHECK(a.values.size() == kEmbeddingDim);
  CHECK(a.values.cast<double>().norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK_THROWS_AS(pseudo_embedding(""), ValidationError);

  const std::array<std::string, 6> corpus = {
      "prostate and seminal vesicles",    "head and neck squamous cell carcinoma",
      "whole breast with tumour bed boost", "spinal cord maximum dose 45 Gy",
      "rectum and bladder sparing",        "left lung lower lobe nodule"};
  double worst = 0.0;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    for (std::size_t j = i + 1; j < corpus.size(); ++j) {
      const Eigen::VectorXd u = pseudo_embedding(corpus[i]).values.cast<double>();
      const Eigen::VectorXd v = pseudo_embedding(corpus[j]).values.cast<double>();
      worst = std::max(worst, std::abs(u.dot(v)));
    }
  CHECK(worst < 0.5);
  // Different seeds give different vectors for the same text.
  CHECK((pseudo_embedding("x", 1).values.array() != pseudo_embedding("x", 2).values.array()).any());
}

TEST_CASE("mean_embedding and prompt sources") {
  const std::array<Embedding, 2> es = {pseudo_embedding("a", 0, PromptSource::Anatomy),
                                       pseudo_embedding("b", 0, PromptSource::Planning)};
  const Embedding m = mean_embedding(es);
  for (Index i = 0; i < kEmbeddingDim; ++i)
    CHECK(m.values[i] == doctest::Approx(0.5 * (double(es[0].values[i]) + double(es[1].values[i]))));
  CHECK_THROWS_AS(mean_embedding(std::span<const Embedding>()), ValidationError);
  for (auto s : {PromptSource::Anatomy, PromptSource::Diagnosis, PromptSource::Planning})
    CHECK(prompt_source_from_string(to_string(s)) == s);
  CHECK_THROWS_AS(prompt_source_from_string("radiology"), ValidationError);
}

TEST_CASE("random adapter weights are reproducible") {
  const AdapterWeights a = AdapterWeights::random(2, 99), b = AdapterWeights::random(2, 99);
  CHECK((a.matrix.array() == b.matrix.array()).all());
  CHECK((a.bias.array() == b.bias.array()).all());
  const double sd = std::sqrt(a.matrix.cast<double>().array().square().mean());
  CHECK(sd == doctest::Approx(0.01).epsilon(0.05));
}
