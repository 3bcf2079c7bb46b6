// Acceptance suite: one PASS/FAIL line per primary criterion.
#include <chrono>
#include <cstdio>
#include <functional>
#include <sys/wait.h>

#include "../support/fixtures.hpp"

using namespace matpal;
using namespace fixtures;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

struct Criterion {
  std::string name;
  double budget_s;  // 0: no runtime bound
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome render_oracle() {
  Rng rng(2024);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const MaterialMaps m = random_material(16, 16, rng);
    for (const auto& cfg : sample_lighting(static_cast<std::uint64_t>(i), 9)) {
      const Image fast = render(m, cfg), ref = scalar_render_reference(m, cfg);
      for (std::size_t k = 0; k < fast.size(); ++k) worst = std::max(worst, std::abs(fast.data()[k] - ref.data()[k]));
    }
  }
  return {worst <= 1e-6, fmt("max abs error %.3g over 100 materials x 9 configs", worst)};
}

Outcome lighting_contract() {
  int bad = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto cfgs = sample_lighting(seed);
    if (cfgs.size() != 9) ++bad;
    for (std::size_t i = 0; i < cfgs.size(); ++i) {
      const auto& c = cfgs[i];
      if (i < 6 && (c.light_dir.x != -c.view_dir.x || c.light_dir.y != -c.view_dir.y || c.light_dir.z != c.view_dir.z))
        ++bad;
      if (c.light_dir.z <= 0 || c.view_dir.z <= 0) ++bad;
    }
  }
  return {bad == 0, fmt("%d violations over seeds 0..999", bad)};
}

Outcome gradient() {
  Rng rng(7);
  MaterialRanges dark{0.05, 0.3, 0.35, 0.9, 0.4};
  MaterialRanges bright{0.6, 0.9, 0.35, 0.9, 0.4};
  const MaterialMaps m = random_material(8, 8, rng, dark), t = random_material(8, 8, rng, bright);
  const auto probes = gradient_check(m, t, sample_lighting(11), LossWeights{}, 50, 1e-4, 3);
  double worst = 0;
  for (const auto& p : probes) worst = std::max(worst, relative_error(p.analytic, p.numeric));
  return {probes.size() == 50 && worst <= 1e-3, fmt("%zu coordinates, max relative error %.3g", probes.size(), worst)};
}

Outcome poisson() {
  double residual = 0, mean = 0, seam_ratio = 0, idem = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Image img = seamy_image(48 + 8 * static_cast<int>(seed % 5), 40 + 8 * static_cast<int>(seed % 4), seed);
    const Image u = poisson_solve(img);
    for (int c = 0; c < 3; ++c) {
      std::vector<double> uc(u.pixel_count());
      for (int y = 0; y < u.height(); ++y)
        for (int x = 0; x < u.width(); ++x) uc[y * u.width() + x] = u.at(y, x, c);
      const auto lap = periodic_laplacian(uc, u.width(), u.height());
      const auto div = seam_free_divergence(img, c);
      for (std::size_t i = 0; i < lap.size(); ++i) residual = std::max(residual, std::abs(lap[i] - div[i]));
    }
    const auto mi = channel_means(img), mu = channel_means(u);
    for (int c = 0; c < 3; ++c) mean = std::max(mean, std::abs(mi[c] - mu[c]));
    const Image once = poisson_blend(img), twice = poisson_blend(once);
    seam_ratio = std::max(seam_ratio, seam_score(once).combined / seam_score(img).combined);
    for (std::size_t i = 0; i < once.size(); ++i) idem = std::max(idem, std::abs(once.data()[i] - twice.data()[i]));
  }
  const bool ok = residual <= 1e-4 && mean <= 1e-6 && seam_ratio <= 0.25 && idem <= 2e-3;
  return {ok, fmt("20 fixtures: residual %.2g, mean shift %.2g, seam ratio %.3f, idempotence %.2g", residual, mean,
                  seam_ratio, idem)};
}

Outcome ambiguity() {
  const auto p = ambiguous_pair();
  const double one = loss_ren(p.a, p.b, {p.view}), nine = loss_ren(p.a, p.b, sample_lighting(0));
  return {one < 1e-3 && nine > 1e-2, fmt("one-view loss %.3g, nine-view loss %.3g", one, nine)};
}

Outcome uda() {
  const auto onto = default_synthetic_ontology();
  std::string detail;
  bool ok = true;
  double delta_sum = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto S = gen_synthetic(64, onto, DomainShift::none, 100 + seed);
    const auto Ttr = gen_synthetic(64, onto, DomainShift::shifted, 200 + seed);
    const auto Tte = gen_synthetic(16, onto, DomainShift::shifted, 300 + seed);
    const auto Ste = gen_synthetic(16, onto, DomainShift::none, 400 + seed);
    const auto fS = train_source(S.samples, TrainingConfig{}, seed);
    const auto T = pseudo_label(fS, as_target_textures(Ttr.samples, 77));
    const auto fT = adapt(fS, S.samples, T, default_adapt_config(), seed + 1000);
    const auto tS = evaluate(fS, Tte.samples, 9, 4), tT = evaluate(fT, Tte.samples, 9, 4);
    const auto sS = evaluate(fS, Ste.samples, 9, 4), sT = evaluate(fT, Ste.samples, 9, 4);
    const double delta = delta_percent(tT, tS);
    const double degradation = (sT.mean_mse() - sS.mean_mse()) / sS.mean_mse();
    ok = ok && tT.mean_mse() < tS.mean_mse() && degradation <= 0.20;
    delta_sum += delta;
    detail += fmt("seed %d target %.4f->%.4f d%%=%.2f source %+.1f%%; ", static_cast<int>(seed), tS.mean_mse(),
                  tT.mean_mse(), delta, 100 * degradation);
  }
  ok = ok && delta_sum > 0;
  return {ok, detail + fmt("mean d%%=%.2f", delta_sum / 3)};
}

struct E2EState {
  TempDir dir;
  std::optional<DecompositionModel> model;
};

E2EState& e2e_state() {
  static E2EState s;
  return s;
}

const DecompositionModel& e2e_model() {
  auto& s = e2e_state();
  if (!s.model) s.model = default_model(s.dir / "cache");
  return *s.model;
}

Outcome end_to_end() {
  const auto& model = e2e_model();
  const auto sc = two_region_scene(256, 256);
  ProceduralBackend backend;
  ExtractionConfig cfg;
  cfg.resolution = 256;
  const auto out = extract_palette(sc.image, {sc.left, sc.right}, {"stripes", "bricks"}, cfg, {&backend, nullptr, &model, {}, nullptr});
  if (out.stage != Stage::done) return {false, "extraction stage " + to_string(out.stage) + ": " + out.error};
  const PatternParams params[2] = {sc.params_left, sc.params_right};
  const char* cls[2] = {"stripes", "bricks"};
  bool ok = true;
  std::string detail;
  for (int i = 0; i < 2; ++i) {
    if (!out.regions[i].material) return {false, std::string(cls[i]) + " region produced no material"};
    const Image& albedo = out.regions[i].material->albedo;
    const auto subject = TextureSubject::of_class(cls[i]);
    const auto rand = generate(backend, subject, cfg.prompt(subject), cfg.resolution, 1, cfg.tileable, cfg.seed);
    const double own = generator_distance(albedo, params[i]);
    const double other = generator_distance(albedo, params[1 - i]);
    const double baseline = generator_distance(decompose_any(model, rand[0].image).albedo, params[i]);
    ok = ok && own < other && own < baseline;
    detail += fmt("%s own %.4f other %.4f class-prompt %.4f; ", cls[i], own, other, baseline);
  }
  return {ok, detail};
}

Outcome metric_identities() {
  Rng rng(31);
  int bad = 0;
  for (int t = 0; t < 10; ++t) {
    const Image x = random_image(32, 32, 3, rng, 0.1, 0.9), y = random_image(32, 32, 3, rng, 0.1, 0.9);
    if (mse(x, x) != 0.0 || std::abs(ssim(x, x) - 1.0) > 1e-12 || perceptual_distance(x, x) != 0.0) ++bad;
    if (std::abs(mse(x, y) - mse(y, x)) > 1e-15 || std::abs(ssim(x, y) - ssim(y, x)) > 1e-12) ++bad;
    if (std::abs(perceptual_distance(x, y) - perceptual_distance(y, x)) > 1e-12) ++bad;
    if (std::abs(ssim(x, y) - ssim_reference(x, y)) > 1e-6) ++bad;
  }
  EvalReport base, better;
  for (auto* m : {&base.albedo, &base.normals, &base.roughness}) m->mse = 0.02, m->ssim = 0.8;
  for (auto* m : {&better.albedo, &better.normals, &better.roughness}) m->mse = 0.01, m->ssim = 0.8;
  if (std::abs(delta_percent(better, base) - 25.0) > 1e-12 || delta_percent(base, base) != 0.0) ++bad;

  const PatchStatsEmbedding e;
  std::vector<Image> set, other;
  for (int i = 0; i <= e.dimension(); ++i) set.push_back(random_image(16, 16, 3, rng, rng.uniform(0, 0.4), rng.uniform(0.6, 1)));
  for (int i = 0; i <= e.dimension(); ++i) other.push_back(random_image(16, 16, 3, rng, 0.5, 1.0));
  const double fid_self = std::abs(fid(set, set, e)), fid_floor = 1e-6 + e.dimension() * kFidJitter;
  const double fid_apart = fid(set, other, e), kid_self = std::abs(kid(set, set, e)), kid_apart = kid(set, other, e);
  if (fid_self > fid_floor || kid_self >= 0.05 * kid_apart || fid_apart <= fid_floor) ++bad;
  return {bad == 0, fmt("%d failed identities; FID self %.2g (floor %.2g) apart %.3g; KID self %.2g apart %.3g", bad,
                        fid_self, fid_floor, fid_apart, kid_self, kid_apart)};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MATPAL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome reproducibility() {
  auto& s = e2e_state();
  save_checkpoint(e2e_model(), s.dir / "ckpt");
  const auto sc = two_region_scene(128, 128);
  write_png(s.dir / "scene.png", sc.image, 8);
  write_png(s.dir / "left.png", sc.left.to_image(), 8);
  write_png(s.dir / "right.png", sc.right.to_image(), 8);
  auto q = [](const fs::path& p) { return "'" + p.string() + "'"; };
  const std::string common = "extract --image " + q(s.dir / "scene.png") + " --mask " + q(s.dir / "left.png") +
                             " --mask " + q(s.dir / "right.png") + " --checkpoint " + q(s.dir / "ckpt") +
                             " --backend procedural --seed 3 --resolution 256 --candidates 4";
  for (const char* o : {"run1", "run2"})
    if (int code = run_cli(common + " --out " + q(s.dir / o)); code != 0) return {false, fmt("cli exit %d", code)};
  int files = 0, differ = 0;
  for (const auto& entry : fs::recursive_directory_iterator(s.dir / "run1")) {
    if (entry.path().extension() != ".png") continue;
    const auto twin = s.dir / "run2" / fs::relative(entry.path(), s.dir / "run1");
    ++files;
    if (!fs::exists(twin) || read_file_bytes(entry.path()) != read_file_bytes(twin)) ++differ;
  }
  const auto d1 = nlohmann::json::parse(read_text(s.dir / "run1" / "provenance.json"))["config_digest"];
  const auto d2 = nlohmann::json::parse(read_text(s.dir / "run2" / "provenance.json"))["config_digest"];
  return {files >= 6 && differ == 0 && d1 == d2,
          fmt("%d PNGs compared, %d differ, config digests %s", files, differ, d1 == d2 ? "equal" : "differ")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"render-oracle", 30, render_oracle},
      {"lighting-contract", 0, lighting_contract},
      {"gradient-check", 60, gradient},
      {"poisson-suite", 120, poisson},
      {"single-view-ambiguity", 0, ambiguity},
      {"uda-direction", 900, uda},
      {"end-to-end-extraction", 300, end_to_end},
      {"metric-identities", 0, metric_identities},
      {"reproducibility", 0, reproducibility},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.budget_s > 0 && secs > c.budget_s) {
      o.pass = false;
      o.detail += fmt(" (over %.0f s budget)", c.budget_s);
    }
    failures += !o.pass;
    std::printf("%s %-22s %7.1fs  %s\n", o.pass ? "PASS" : "FAIL", c.name.c_str(), secs, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
