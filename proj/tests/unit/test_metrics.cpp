#include <gtest/gtest.h>

#include "../support/fixtures.hpp"

using namespace matpal;
using namespace fixtures;

namespace {

EvalReport report(double mse_value, double ssim_value) {
  EvalReport r;
  for (auto* m : {&r.albedo, &r.normals, &r.roughness}) m->mse = mse_value, m->ssim = ssim_value;
  return r;
}

std::vector<Image> constant_set(int n, Rgb colour) {
  Image img(16, 16, 3);
  for (std::size_t i = 0; i < img.data().size(); ++i) img.data()[i] = colour[i % 3];
  return std::vector<Image>(n, img);
}

std::vector<Image> random_set(int n, Rng& rng) {
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) out.push_back(random_image(16, 16, 3, rng, rng.uniform(0, 0.4), rng.uniform(0.6, 1)));
  return out;
}

}  // namespace

TEST(Mse, IdentityAndConstantNegative) {
  Rng rng(1);
  const Image x = random_image(16, 16, 3, rng);
  EXPECT_EQ(mse(x, x), 0.0);
  EXPECT_DOUBLE_EQ(ssim(x, x), 1.0);
  const Image half(8, 8, 3, 0.5);
  Image neg = half;
  for (auto& v : neg.data()) v = 1.0 - v;
  EXPECT_EQ(mse(half, neg), 0.0);
  EXPECT_THROW(mse(x, half), Error);
}

TEST(Ssim, MatchesWindowedOracle) {
  Rng rng(2);
  for (int t = 0; t < 3; ++t) {
    const Image a = random_image(32, 32, 3, rng), b = random_image(32, 32, 3, rng);
    EXPECT_NEAR(ssim(a, b), ssim_reference(a, b), 1e-6);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
    Image c = a;
    for (auto& v : c.data()) v = std::clamp(v + rng.uniform(-0.1, 0.1), 0.0, 1.0);
    EXPECT_NEAR(ssim(a, c), ssim_reference(a, c), 1e-6);
  }
}

TEST(Delta, ClosedForms) {
  const EvalReport base = report(0.02, 0.8);
  EXPECT_EQ(delta_percent(base, base), 0.0);
  EXPECT_NEAR(delta_percent(report(0.01, 0.8), base), 25.0, 1e-12);
  EXPECT_GT(delta_percent(report(0.015, 0.85), base), 0.0);
  EXPECT_LT(delta_percent(report(0.03, 0.8), base), 0.0);
}

TEST(Delta, ZeroBaselineIsUndefined) {
  try {
    delta_percent(report(0.01, 0.9), report(0.0, 0.9));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::undefined_ratio);
  }
  EXPECT_EQ(delta_percent(report(0.0, 1.0), report(0.0, 1.0)), 0.0);
}

TEST(Perceptual, IdentitySymmetryMonotonicity) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Image x = random_image(32, 32, 3, rng, 0.2, 0.8);
    const Image noise = random_image(32, 32, 3, rng, -1.0, 1.0);
    EXPECT_EQ(perceptual_distance(x, x), 0.0);
    double prev = 0.0;
    for (double sigma : {0.02, 0.05, 0.1}) {
      Image y = x;
      for (std::size_t i = 0; i < y.data().size(); ++i) y.data()[i] += sigma * noise.data()[i];
      const double d = perceptual_distance(x, y);
      EXPECT_NEAR(d, perceptual_distance(y, x), 1e-12);
      EXPECT_GT(d, prev) << sigma;
      prev = d;
    }
  }
}

TEST(Perceptual, SinglePixelChangeIsNonZero) {
  Image x(16, 16, 3, 0.5);
  Image y = x;
  y.at(3, 4, 1) = 0.51;
  EXPECT_GT(perceptual_distance(x, y), 0.0);
}

TEST(Fid, IdenticalSetsAtJitterFloor) {
  Rng rng(4);
  const PatchStatsEmbedding e;
  const auto set = random_set(e.dimension() + 1, rng);
  EXPECT_LE(std::abs(fid(set, set, e)), 1e-6 + e.dimension() * kFidJitter);
  auto shuffled = set;
  std::reverse(shuffled.begin(), shuffled.end());
  EXPECT_NEAR(fid(set, shuffled, e), fid(set, set, e), 1e-9);
}

TEST(Fid, ConstantSetsReduceToMeanTerm) {
  const PatchStatsEmbedding e(16);
  const Rgb ca{0.2, 0.4, 0.6}, cb{0.7, 0.1, 0.3};
  // Stats of a constant image: channel value, zero spread, zero gradient.
  const auto sa = e.stats(constant_set(1, ca)[0]);
  for (std::size_t i = 0; i < sa.size(); i += 3) {
    EXPECT_DOUBLE_EQ(sa[i], ca[(i / 3) % 3]);
    EXPECT_EQ(sa[i + 2], 0.0);
  }
  const auto ea = e.embed(constant_set(1, ca)[0]), eb = e.embed(constant_set(1, cb)[0]);
  double mean_term = 0;
  for (int d = 0; d < e.dimension(); ++d) mean_term += (ea[d] - eb[d]) * (ea[d] - eb[d]);
  EXPECT_NEAR(fid(constant_set(17, ca), constant_set(17, cb), e), mean_term, 1e-9);
}

TEST(Fid, InsufficientSamples) {
  Rng rng(5);
  const PatchStatsEmbedding e(16);
  try {
    fid(random_set(10, rng), random_set(20, rng), e);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), ErrorCode::insufficient_samples);
  }
  EXPECT_THROW(kid(random_set(1, rng), random_set(5, rng), e), Error);
}

TEST(Kid, IdenticalSetsNearZero) {
  Rng rng(6);
  const PatchStatsEmbedding e(16);
  const auto a = random_set(30, rng), b = random_set(30, rng);
  const auto c = constant_set(30, {0.9, 0.1, 0.1});
  const double self = kid(a, a, e), apart = kid(a, c, e);
  EXPECT_GT(apart, 0.0);
  EXPECT_LT(std::abs(self), 0.05 * apart);
  EXPECT_LT(std::abs(kid(a, b, e)), 0.05 * apart);
}

TEST(Fid, TextureWordingRanksAhead) {
  // Reference: top-view renders of the class generators, the look the
  // wording is supposed to reach.
  ProceduralBackend backend;
  const PatchStatsEmbedding e(16);
  const std::vector<std::string> classes{"stripes", "bricks", "dots", "noise"};
  const int per_class = 8, res = 64;
  std::vector<Image> reference;
  for (const auto& c : classes)
    for (int i = 0; i < per_class; ++i) {
      const ConceptModel m = class_model(c, res);
      LightingConfig flat;
      reference.push_back(ProceduralBackend::match_moments(
          render(rasterize_material(PatternField(backend.seeded_params(m, res, 1000 + i)), res), flat), m));
    }
  std::vector<double> scores;
  for (const auto& t : generate_templates()) {
    std::vector<Image> set;
    for (const auto& c : classes)
      for (int i = 0; i < per_class; ++i)
        set.push_back(backend.texture(class_model(c, res), t.fill(c), res, static_cast<std::uint64_t>(i)));
    scores.push_back(fid(set, reference, e));
  }
  const double bare = (scores[0] + scores[1]) / 2, texture = (scores[2] + scores[3] + scores[4]) / 3;
  EXPECT_LE(texture, bare);
}

TEST(Resemblance, SameClassCloserThanOtherClass) {
  MaterialsByClass lib;
  const auto ds = gen_synthetic(24, default_synthetic_ontology(), DomainShift::none, 7);
  for (const auto& s : ds.samples) lib[s.class_label].push_back(s.maps);
  const auto r = resemblance_protocol(lib, lib, 20, 3);
  EXPECT_LT(r.ours.mean(), r.upper_bound.mean());
  EXPECT_EQ(r.pairs_per_class, 20);
  EXPECT_EQ(kDefaultPairsPerClass, 100);
  EXPECT_FALSE(r.lower_bound.has_value());
}

TEST(Resemblance, SwappedCollectionsGiveSameOurs) {
  MaterialsByClass a, b;
  const auto x = gen_synthetic(12, default_synthetic_ontology(), DomainShift::none, 8, 16);
  const auto y = gen_synthetic(12, default_synthetic_ontology(), DomainShift::shifted, 9, 16);
  for (const auto& s : x.samples) a[s.class_label].push_back(s.maps);
  for (const auto& s : y.samples) b[s.class_label].push_back(s.maps);
  const auto ab = resemblance_protocol(a, b, 10, 1), ba = resemblance_protocol(b, a, 10, 1);
  EXPECT_NEAR(ab.ours.albedo, ba.ours.albedo, 1e-12);
  EXPECT_NEAR(ab.ours.normals, ba.ours.normals, 1e-12);
  EXPECT_NEAR(ab.ours.roughness, ba.ours.roughness, 1e-12);
}

TEST(Resemblance, SingleClassHasNoUpperBound) {
  Rng rng(10);
  MaterialsByClass one{{"wood", {random_material(16, 16, rng)}}};
  EXPECT_THROW(resemblance_protocol(one, one, 5), Error);
  MaterialsByClass empty{{"wood", {}}};
  EXPECT_THROW(resemblance_protocol(empty, one, 5), Error);
}

TEST(Rerender, IdentityAndRowCount) {
  Rng rng(11);
  const MaterialMaps m = random_material(16, 16, rng), other = random_material(16, 16, rng);
  const auto rows = rerender_compare({{"ours", {{m, m}}}, {"random", {{m, other}}}}, sample_lighting(1, 4));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].maps.mean(), 0.0);
  EXPECT_EQ(rows[0].rendered, 0.0);
  EXPECT_EQ(rows[0].rank, 1);
  EXPECT_EQ(rows[1].rank, 2);
  EXPECT_THROW(rerender_compare({}, sample_lighting(1)), Error);
}
