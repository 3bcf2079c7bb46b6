#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "../support/fixtures.hpp"

using namespace matpal;
using namespace fixtures;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
};

// Runs the CLI with stdout captured and stderr discarded.
Run cli(const std::string& args) {
  const std::string cmd = std::string(MATPAL_CLI_PATH) + " " + args + " 2>/dev/null";
  Run r{-1, {}};
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_text(p)); }

}  // namespace

TEST(RunConfigFile, RoundTripsLosslessly) {
  TempDir dir;
  RunConfig c;
  c.subcommand = "extract";
  c.seed = 42;
  c.backend = "remote";
  c.backend_url = "http://localhost:9000";
  c.procedural_fallback = true;
  c.paths = {{"image", "a.png"}, {"masks", {"m1.png", "m2.png"}}, {"out", "o"}};
  c.training = {{"steps", 12}, {"step_size", 0.001}};
  c.extraction = {{"resolution", 512}, {"tileable", false}};
  c.options = {{"views", 3}};
  save_run_config(dir / "run.json", c);
  const RunConfig back = load_run_config(dir / "run.json");
  EXPECT_EQ(back, c);
  EXPECT_EQ(run_config_digest(back), run_config_digest(c));
  RunConfig moved = c;
  moved.paths["out"] = "elsewhere";
  EXPECT_EQ(run_config_digest(moved), run_config_digest(c));
  moved.seed = 43;
  EXPECT_NE(run_config_digest(moved), run_config_digest(c));
  nlohmann::json bad = c;
  bad["backend"] = "quantum";
  EXPECT_THROW(bad.get<RunConfig>(), Error);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(cli("tile --no-such-flag").code, 1);
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("tile --out x.png").code, 1);  // missing --in
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, RuntimeFailureExitsTwo) {
  TempDir dir;
  std::ofstream(dir / "junk.png") << "not a png";
  EXPECT_EQ(cli("tile --in " + q(dir / "junk.png") + " --out " + q(dir / "o.png")).code, 2);
}

TEST(Cli, TileDoesNotWorsenSeam) {
  TempDir dir;
  write_png(dir / "seamy.png", seamy_image(96, 80, 3), 16);
  const auto r = cli("tile --in " + q(dir / "seamy.png") + " --out " + q(dir / "tiled.png"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_LE(seam_score(read_png(dir / "tiled.png")).combined, seam_score(read_png(dir / "seamy.png")).combined);
  EXPECT_TRUE(fs::exists(dir / "provenance.json"));
}

TEST(Cli, EvaluateIdenticalTrees) {
  TempDir dir;
  ASSERT_EQ(cli("gen-synthetic --n 3 --size 16 --seed 2 --out " + q(dir / "t")).code, 0);
  const auto r = cli("evaluate --pred " + q(dir / "t") + " --truth " + q(dir / "t") + " --out " + q(dir / "rep"));
  ASSERT_EQ(r.code, 0);
  const auto j = read_json(dir / "rep" / "report.json");
  for (const char* m : {"albedo", "normals", "roughness"}) {
    EXPECT_EQ(j[m]["mse"], 0.0) << m;
    EXPECT_EQ(j[m]["ssim"], 1.0) << m;
  }
  EXPECT_EQ(j["delta_percent"], 0.0);
  EXPECT_EQ(nlohmann::json::parse(r.out), j);
}

TEST(Cli, ExtractContractAndReproducibility) {
  TempDir dir;
  save_checkpoint(quick_model(10), dir / "ckpt");
  const auto sc = two_region_scene(96, 96);
  write_png(dir / "img.png", sc.image, 8);
  write_png(dir / "mask.png", sc.left.to_image(), 8);
  const std::string common = "extract --image " + q(dir / "img.png") + " --mask " + q(dir / "mask.png") +
                             " --checkpoint " + q(dir / "ckpt") +
                             " --backend procedural --seed 0 --resolution 256 --candidates 2 --max-crops 4 --c-in 64";
  for (const char* o : {"a", "b"}) {
    const auto r = cli(common + " --out " + q(dir / o));
    ASSERT_EQ(r.code, 0) << r.out;
  }
  for (const char* m : {"albedo.png", "normal.png", "roughness.png"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / m)) << m;
    EXPECT_EQ(read_file_bytes(dir / "a" / m), read_file_bytes(dir / "b" / m)) << m;
  }
  const auto prov = read_json(dir / "a" / "provenance.json");
  EXPECT_TRUE(prov.contains("config_digest"));
  EXPECT_TRUE(prov.contains("code_version"));
  EXPECT_TRUE(prov["inputs"].contains("image"));
  EXPECT_EQ(prov["config_digest"], read_json(dir / "b" / "provenance.json")["config_digest"]);
}

TEST(Cli, ConfigFileWithFlagOverride) {
  TempDir dir;
  RunConfig c;
  c.subcommand = "gen-synthetic";
  c.seed = 4;
  c.paths = {{"out", (dir / "from-config").string()}};
  c.options = {{"n", 2}, {"size", 16}};
  save_run_config(dir / "run.json", c);
  ASSERT_EQ(cli("gen-synthetic --config " + q(dir / "run.json") + " --n 3").code, 0);
  EXPECT_EQ(load_dataset(dir / "from-config").source.size(), 3u);
  const auto prov = read_json(dir / "from-config" / "provenance.json");
  EXPECT_EQ(prov["config"]["seed"], 4);
}
