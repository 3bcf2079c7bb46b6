#include <gtest/gtest.h>

#include <algorithm>

#include "../support/fixtures.hpp"

using namespace matpal;
using namespace fixtures;

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

TrainingConfig small_config(int steps, int batch = 2) {
  TrainingConfig cfg;
  cfg.steps = steps;
  cfg.batch_size = batch;
  return cfg;
}

std::vector<TargetSample> textures_of(const std::vector<SourceSample>& s, std::uint64_t seed) {
  std::vector<TargetSample> out;
  for (std::size_t i = 0; i < s.size(); ++i)
    out.push_back({s[i].id, s[i].class_label, render(s[i].maps, sample_random_lighting(derive_seed(seed, {i}))), {}, {}});
  return out;
}

}  // namespace

TEST(Decomposition, OutputsSatisfyInvariants) {
  const auto model = quick_model(5);
  Rng rng(1);
  for (int i = 0; i < 3; ++i) {
    const MaterialMaps m = decompose(model, random_image(32, 32, 3, rng));
    EXPECT_EQ(m.invariant_violation(), "");
    EXPECT_EQ(m.width(), 32);
  }
}

TEST(Decomposition, DeterministicInference) {
  const auto model = quick_model(5);
  Rng rng(2);
  const Image t = random_image(16, 16, 3, rng);
  const MaterialMaps a = decompose(model, t), b = decompose(model, t);
  EXPECT_EQ(a.albedo, b.albedo);
  EXPECT_EQ(a.normals, b.normals);
  EXPECT_EQ(a.roughness, b.roughness);
}

TEST(Decomposition, RejectsBadShapes) {
  const auto model = quick_model(1);
  EXPECT_THROW(decompose(model, Image(16, 8, 3)), Error);
  EXPECT_THROW(decompose(model, Image(16, 16, 1)), Error);
  EXPECT_THROW(decompose(model, Image(model.stride() + 1, model.stride() + 1, 3)), Error);
  EXPECT_EQ(decompose_any(model, Image(30, 20, 3, 0.5)).width(), 30);
}

TEST(Decomposition, OverfitsSingleMaterial) {
  const auto ds = gen_synthetic(1, default_synthetic_ontology(), DomainShift::none, 5, 32);
  TrainingConfig cfg = small_config(1000, 1);
  const auto model = train_source(ds.samples, cfg, 1);
  const auto& t = ds.samples[0].maps;
  const MaterialMaps p = decompose(model, render(t, sample_random_lighting(77)));
  EXPECT_LE(mse(p.albedo, t.albedo), 5e-3);
  EXPECT_LE(mse(p.normals, t.normals), 5e-3);
  EXPECT_LE(mse(p.roughness, t.roughness), 5e-3);
}

TEST(Decomposition, LossDecreasesOnOneSample) {
  const auto ds = gen_synthetic(1, default_synthetic_ontology(), DomainShift::none, 6, 32);
  const auto model = train_source(ds.samples, small_config(500, 1), 2);
  const auto& log = model.loss_log;
  ASSERT_EQ(log.size(), 500u);
  EXPECT_LT(median({log.end() - 50, log.end()}), median({log.begin(), log.begin() + 50}));
}

TEST(Decomposition, LambdaChangesParameters) {
  const auto ds = gen_synthetic(4, default_synthetic_ontology(), DomainShift::none, 7, 16);
  TrainingConfig a = small_config(10), b = a;
  a.weights.lambda_reg = 0.0;
  b.weights.lambda_reg = 1.0;
  EXPECT_NE(train_source(ds.samples, a, 3).digest(), train_source(ds.samples, b, 3).digest());
}

TEST(Decomposition, TrainingIsBitReproducible) {
  const auto ds = gen_synthetic(4, default_synthetic_ontology(), DomainShift::none, 8, 16);
  const auto a = train_source(ds.samples, small_config(15), 4);
  const auto b = train_source(ds.samples, small_config(15), 4);
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_EQ(a.loss_log, b.loss_log);
  EXPECT_NE(a.digest(), train_source(ds.samples, small_config(15), 5).digest());
}

TEST(PseudoLabel, EmptyAndDeterministic) {
  const auto model = quick_model(5);
  EXPECT_TRUE(pseudo_label(model, {}).empty());
  const auto ds = gen_synthetic(3, default_synthetic_ontology(), DomainShift::shifted, 9, 16);
  const auto t = textures_of(ds.samples, 1);
  const auto a = pseudo_label(model, t), b = pseudo_label(model, t);
  ASSERT_EQ(a.size(), 3u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_TRUE(a[i].pseudo.has_value());
    EXPECT_EQ(a[i].pseudo->invariant_violation(), "");
    EXPECT_EQ(a[i].pseudo_model_digest, model.digest());
    EXPECT_EQ(material_digest(*a[i].pseudo), material_digest(*b[i].pseudo));
  }
}

TEST(Adapt, EmptyTargetEqualsContinuedSourceTraining) {
  const auto ds = gen_synthetic(4, default_synthetic_ontology(), DomainShift::none, 10, 16);
  const auto base = train_source(ds.samples, small_config(5), 6);
  const TrainingConfig cfg = default_adapt_config(small_config(6));
  const auto adapted = adapt(base, ds.samples, {}, cfg, 7);
  DecompositionModel continued = base;
  continued.loss_log.clear();
  train_loop(continued, ds.samples, {}, cfg, 7);
  EXPECT_EQ(adapted.digest(), continued.digest());
  EXPECT_EQ(adapted.loss_log, continued.loss_log);
}

TEST(Adapt, RequiresPseudoMaps) {
  const auto model = quick_model(2);
  const auto ds = gen_synthetic(2, default_synthetic_ontology(), DomainShift::none, 11, 16);
  try {
    adapt(model, ds.samples, textures_of(ds.samples, 2), default_adapt_config(small_config(2)), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::precondition);
  }
}

TEST(Adapt, TargetLossIsTotalLossAgainstPseudoMaps) {
  const auto model = quick_model(5);
  const auto src = gen_synthetic(4, default_synthetic_ontology(), DomainShift::none, 12, 16);
  const auto tgt = gen_synthetic(4, default_synthetic_ontology(), DomainShift::shifted, 12, 16);
  const auto target = pseudo_label(model, textures_of(tgt.samples, 3));
  const TrainingConfig cfg = default_adapt_config(small_config(1, 4));
  const auto batch = plan_batch(src.samples, target, cfg, 9, 0);
  int checked = 0;
  for (const auto& item : batch) {
    if (!item.from_target) continue;
    // Rebuild the supervision from the pseudo-maps and the logged transform.
    const std::uint64_t s = derive_seed(9, {0ull, static_cast<std::uint64_t>(&item - batch.data())});
    Rng aug(derive_seed(s, "augment"));
    const Image& tex = target[item.index].texture;
    const int dx = static_cast<int>(aug.below(static_cast<std::uint64_t>(tex.width())));
    const int dy = static_cast<int>(aug.below(static_cast<std::uint64_t>(tex.height())));
    const int k = static_cast<int>(aug.below(8));
    const MaterialMaps expected_target = transform_material(*target[item.index].pseudo, dx, dy, k);
    const Image expected_input = dihedral(roll(tex, dx, dy), k);
    const auto views = sample_lighting(derive_seed(s, "views"), cfg.weights.view_count);
    const double external = total_loss(decompose(model, expected_input), expected_target, views, cfg.weights);
    EXPECT_NEAR(item_loss(model, item, cfg.weights), external, 1e-6);
    ++checked;
  }
  EXPECT_EQ(checked, 3);
}

TEST(Checkpoint, RoundTripPreservesParameters) {
  TempDir dir;
  const auto model = quick_model(3);
  save_checkpoint(model, dir.path());
  const auto back = load_checkpoint(dir.path());
  EXPECT_EQ(back.digest(), model.digest());
  EXPECT_EQ(back.loss_log, model.loss_log);
  Rng rng(4);
  const Image t = random_image(16, 16, 3, rng);
  EXPECT_EQ(decompose(back, t).albedo, decompose(model, t).albedo);
}

TEST(Checkpoint, CorruptBlobRejected) {
  TempDir dir;
  save_checkpoint(quick_model(1), dir.path());
  auto blob = read_file_bytes(dir / "params.bin");
  blob[0] ^= 1;
  write_file_bytes(dir / "params.bin", blob);
  EXPECT_THROW(load_checkpoint(dir.path()), Error);
}
