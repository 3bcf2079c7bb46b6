#include <gtest/gtest.h>

#include "../support/fixtures.hpp"

using namespace matpal;
using namespace fixtures;

namespace {

ExtractionConfig small_config() {
  ExtractionConfig c;
  c.resolution = 256;
  c.candidates = 2;
  c.crop.c_in = 64;
  c.crop.max_crops = 4;
  c.seed = 5;
  return c;
}

const DecompositionModel& shared_model() {
  static const DecompositionModel m = quick_model(20);
  return m;
}

std::shared_ptr<const DecompositionModel> model_ptr() {
  return std::make_shared<const DecompositionModel>(shared_model());
}

const TwoRegionScene& scene() {
  static const TwoRegionScene s = two_region_scene(96, 96);
  return s;
}

std::vector<std::uint8_t> mask_png(const RegionMask& m) { return encode_png(m.to_image(), 8); }

int stage_rank(const nlohmann::json& j) { return static_cast<int>(stage_from_string(j.at("stage"))); }

JobRequest upload_scene(JobStore& store) {
  JobRequest r;
  r.image_id = store.put_image(encode_png(scene().image, 8));
  r.mask_ids = {store.put_mask(r.image_id, mask_png(scene().left)),
                store.put_mask(r.image_id, mask_png(scene().right))};
  r.config = small_config();
  return r;
}

}  // namespace

TEST(Palette, ZeroMasksRejected) {
  ProceduralBackend backend;
  ExtractionContext ctx{&backend, nullptr, &shared_model(), {}, nullptr};
  try {
    extract_palette(scene().image, {}, {}, small_config(), ctx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_argument);
  }
}

TEST(Palette, TinyRegionFailsAloneWithMonotoneStages) {
  ProceduralBackend backend;
  std::vector<Stage> seen;
  ExtractionContext ctx{&backend, nullptr, &shared_model(),
                        [&](Stage s, double, const PaletteResult&) { seen.push_back(s); }, nullptr};
  RegionMask tiny(scene().image.width(), scene().image.height());
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) tiny.set(x, y);
  const auto out = extract_palette(scene().image, {scene().right, tiny}, {"bricks", "speck"}, small_config(), ctx);
  EXPECT_EQ(out.stage, Stage::done);
  ASSERT_EQ(out.regions.size(), 2u);
  EXPECT_EQ(out.regions[0].stage, Stage::done);
  ASSERT_TRUE(out.regions[0].material.has_value());
  EXPECT_EQ(out.regions[0].material->invariant_violation(), "");
  EXPECT_EQ(out.regions[0].candidates.size(), 2u);
  EXPECT_EQ(out.regions[1].stage, Stage::failed);
  EXPECT_FALSE(out.regions[1].error.empty());
  EXPECT_FALSE(out.regions[1].material.has_value());
  for (std::size_t i = 1; i < seen.size(); ++i) EXPECT_LE(static_cast<int>(seen[i - 1]), static_cast<int>(seen[i]));
}

TEST(Palette, AllRegionsFailingFailsResult) {
  ProceduralBackend backend;
  ExtractionContext ctx{&backend, nullptr, &shared_model(), {}, nullptr};
  RegionMask tiny(scene().image.width(), scene().image.height());
  tiny.set(0, 0);
  const auto out = extract_palette(scene().image, {tiny}, {}, small_config(), ctx);
  EXPECT_EQ(out.stage, Stage::failed);
  EXPECT_NE(out.error.find("region-0"), std::string::npos);
}

TEST(Palette, FallbackBackendUsedWhenPrimaryDown) {
  const int port = closed_port();
  RemoteOptions o;
  o.base_url = "http://127.0.0.1:" + std::to_string(port);
  o.max_attempts = 1;
  RemoteBackend remote(o);
  ProceduralBackend procedural;
  ExtractionContext ctx{&remote, &procedural, &shared_model(), {}, nullptr};
  const auto out = extract_palette(scene().image, {scene().left}, {}, small_config(), ctx);
  EXPECT_EQ(out.stage, Stage::done);
  EXPECT_EQ(out.regions[0].backend_id, "procedural");
}

TEST(Palette, OverrideSelectionRedecomposes) {
  ProceduralBackend backend;
  ExtractionContext ctx{&backend, nullptr, &shared_model(), {}, nullptr};
  auto out = extract_palette(scene().image, {scene().left}, {}, small_config(), ctx);
  auto& r = out.regions[0];
  const std::size_t other = *r.selected == 0 ? 1 : 0;
  override_selection(r, other, shared_model());
  EXPECT_EQ(*r.selected, other);
  EXPECT_TRUE(r.user_selected);
  EXPECT_EQ(material_digest(*r.material), material_digest(decompose_any(shared_model(), r.candidates[other].image)));
  EXPECT_THROW(override_selection(r, 9, shared_model()), Error);
}

TEST(Store, ContentAddressedIds) {
  TempDir dir;
  JobStore store(dir.path());
  const auto png = encode_png(scene().image, 8);
  const auto a = store.put_image(png), b = store.put_image(png);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.rfind("img-", 0), 0u);
  EXPECT_EQ(store.put_mask(a, mask_png(scene().left)), store.put_mask(a, mask_png(scene().left)));
  EXPECT_THROW(store.put_mask(a, mask_png(RegionMask(8, 8))), Error);
  EXPECT_THROW(store.image_path("img-missing"), Error);
  EXPECT_THROW(store.image_path("../etc"), Error);
  const MaterialMaps m = MaterialMaps::flat(8, 8, {0.2, 0.3, 0.4}, 0.5);
  EXPECT_EQ(store.put_material(m), store.put_material(m));
}

TEST(Jobs, LifecycleCacheAndSelect) {
  TempDir dir;
  JobStore store(dir.path());
  JobManager jobs(store, model_ptr(), std::make_shared<ProceduralBackend>());
  const JobRequest req = upload_scene(store);
  const auto sub = jobs.submit(req);
  EXPECT_FALSE(sub.cache_hit);
  int last = -1;
  nlohmann::json st;
  for (int i = 0; i < 2000; ++i) {
    st = jobs.status(sub.job_id);
    ASSERT_GE(stage_rank(st), last) << st.dump();
    last = stage_rank(st);
    if (st["stage"] == "done" || st["stage"] == "failed") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  st = jobs.wait(sub.job_id, std::chrono::minutes(5));
  ASSERT_EQ(st["stage"], "done") << st.dump();
  EXPECT_EQ(st["progress"], 1.0);
  ASSERT_EQ(st["regions"].size(), 2u);
  for (const auto& r : st["regions"]) EXPECT_TRUE(r.contains("material_id")) << r.dump();

  const auto again = jobs.submit(req);
  EXPECT_TRUE(again.cache_hit);
  EXPECT_EQ(again.job_id, sub.job_id);

  // Cancel after done leaves the result alone.
  const auto before = jobs.status(sub.job_id)["regions"];
  EXPECT_EQ(jobs.cancel(sub.job_id)["stage"], "done");
  EXPECT_EQ(jobs.status(sub.job_id)["regions"], before);

  const std::string rid = st["regions"][0]["region_id"];
  const auto sel = jobs.select(sub.job_id, rid, 1);
  EXPECT_EQ(sel["regions"][0]["selected_index"], 1);
  EXPECT_EQ(sel["regions"][0]["user_selected"], true);
  EXPECT_THROW(jobs.select(sub.job_id, "no-such-region", 0), Error);
  EXPECT_THROW(jobs.status("job-unknown"), Error);
}

TEST(Jobs, FreshStoreReproducesMaterialsByteForByte) {
  std::vector<std::string> ids[2];
  std::vector<std::uint8_t> albedo[2];
  for (int run = 0; run < 2; ++run) {
    TempDir dir;
    JobStore store(dir.path());
    JobManager jobs(store, model_ptr(), std::make_shared<ProceduralBackend>());
    JobRequest req = upload_scene(store);
    req.mask_ids.resize(1);
    const auto st = jobs.wait(jobs.submit(req).job_id, std::chrono::minutes(5));
    ASSERT_EQ(st["stage"], "done");
    for (const auto& r : st["regions"]) ids[run].push_back(r["material_id"]);
    albedo[run] = read_file_bytes(store.material_file(ids[run][0], "albedo"));
  }
  EXPECT_EQ(ids[0], ids[1]);
  EXPECT_EQ(albedo[0], albedo[1]);
}

TEST(Jobs, CancelQueuedJob) {
  TempDir dir;
  JobStore store(dir.path());
  JobManager jobs(store, model_ptr(), std::make_shared<ProceduralBackend>(), nullptr, ManagerOptions{1});
  JobRequest first = upload_scene(store);
  JobRequest second = first;
  second.config.seed = 6;
  const auto a = jobs.submit(first), b = jobs.submit(second);
  const auto c = jobs.cancel(b.job_id);
  EXPECT_EQ(c["stage"], "failed");
  EXPECT_EQ(c["error"], "cancelled");
  EXPECT_EQ(jobs.wait(b.job_id, std::chrono::seconds(1))["stage"], "failed");
  EXPECT_EQ(jobs.wait(a.job_id, std::chrono::minutes(5))["stage"], "done");
  EXPECT_THROW(jobs.cancel("job-unknown"), Error);
}

TEST(Jobs, RemoteDownWithoutFallbackFails) {
  TempDir dir;
  JobStore store(dir.path());
  const int port = closed_port();
  RemoteOptions o;
  o.base_url = "http://127.0.0.1:" + std::to_string(port);
  o.backoff = std::chrono::milliseconds(1);
  JobManager jobs(store, model_ptr(), std::make_shared<RemoteBackend>(o));
  const auto st = jobs.wait(jobs.submit(upload_scene(store)).job_id, std::chrono::minutes(1));
  EXPECT_EQ(st["stage"], "failed");
  EXPECT_NE(st["error"].get<std::string>().find("127.0.0.1"), std::string::npos) << st.dump();
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    store_ = std::make_unique<JobStore>(dir_.path());
    jobs_ = std::make_unique<JobManager>(*store_, model_ptr(), std::make_shared<ProceduralBackend>());
    service_ = std::make_unique<Service>(*jobs_);
    port_ = service_->start_background();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    client_->set_read_timeout(std::chrono::seconds(60));
  }
  void TearDown() override {
    service_->stop();
    jobs_->shutdown();
  }
  static std::string bytes(const std::vector<std::uint8_t>& b) { return {b.begin(), b.end()}; }
  nlohmann::json post_json(const std::string& path, const std::string& body, int expect) {
    auto res = client_->Post(path, body, "application/json");
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect) << path << " " << res->body;
    return nlohmann::json::parse(res->body);
  }

  TempDir dir_;
  std::unique_ptr<JobStore> store_;
  std::unique_ptr<JobManager> jobs_;
  std::unique_ptr<Service> service_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

TEST_F(ServiceTest, FullFlow) {
  auto health = client_->Get("/api/health");
  ASSERT_TRUE(health);
  EXPECT_EQ(nlohmann::json::parse(health->body)["status"], "ok");

  auto img = client_->Post("/api/images", bytes(encode_png(scene().image, 8)), "image/png");
  ASSERT_TRUE(img);
  ASSERT_EQ(img->status, 201);
  const std::string image_id = nlohmann::json::parse(img->body)["image_id"];

  httplib::MultipartFormDataItems form{{"file", bytes(mask_png(scene().left)), "mask.png", "image/png"}};
  auto mask = client_->Post("/api/images/" + image_id + "/masks", form);
  ASSERT_TRUE(mask);
  ASSERT_EQ(mask->status, 201);
  const std::string mask_id = nlohmann::json::parse(mask->body)["mask_id"];
  auto bad_mask = client_->Post("/api/images/" + image_id + "/masks", bytes(mask_png(RegionMask(4, 4))), "image/png");
  EXPECT_EQ(bad_mask->status, 400);

  const nlohmann::json job_body{{"image_id", image_id}, {"mask_ids", {mask_id}}, {"config", to_json(small_config())}};
  const std::string job_id = post_json("/api/jobs", job_body.dump(), 202)["job_id"];
  const auto st = jobs_->wait(job_id, std::chrono::minutes(5));
  ASSERT_EQ(st["stage"], "done");

  auto job = client_->Get("/api/jobs/" + job_id);
  ASSERT_EQ(job->status, 200);
  const auto j = nlohmann::json::parse(job->body);
  const auto& region = j["regions"][0];
  const std::string mid = region["material_id"];
  auto albedo = client_->Get(region["maps"]["albedo"].get<std::string>());
  ASSERT_EQ(albedo->status, 200);
  EXPECT_EQ(decode_png(std::vector<std::uint8_t>(albedo->body.begin(), albedo->body.end())).image.width(), 256);
  auto thumb = client_->Get(region["candidates"][1]["thumbnail"].get<std::string>());
  EXPECT_EQ(thumb->status, 200);

  auto r0 = client_->Get("/api/materials/" + mid + "/render.png?light_az=0&light_el=45");
  auto r90 = client_->Get("/api/materials/" + mid + "/render.png?light_az=90&light_el=45");
  ASSERT_EQ(r0->status, 200);
  ASSERT_EQ(r90->status, 200);
  EXPECT_NE(r0->body, r90->body);
  EXPECT_EQ(client_->Get("/api/materials/" + mid + "/render.png?light_az=abc")->status, 400);
  EXPECT_EQ(client_->Get("/api/materials/" + mid + "/render.png?light_el=-10")->status, 400);

  const nlohmann::json sel{{"region_id", region["region_id"]}, {"candidate_index", 1}};
  EXPECT_EQ(post_json("/api/jobs/" + job_id + "/select", sel.dump(), 200)["regions"][0]["selected_index"], 1);
  const nlohmann::json bad_sel{{"region_id", region["region_id"]}, {"candidate_index", 7}};
  post_json("/api/jobs/" + job_id + "/select", bad_sel.dump(), 400);

  EXPECT_EQ(post_json("/api/jobs", job_body.dump(), 200)["cache_hit"], true);
  EXPECT_EQ(post_json("/api/jobs/" + job_id + "/cancel", "", 200)["stage"], "done");
}

TEST_F(ServiceTest, ErrorsAreJson) {
  auto missing = client_->Get("/api/jobs/job-nothing");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(nlohmann::json::parse(missing->body)["error"]["code"], "not_found");
  post_json("/api/jobs", "{not json", 400);
  post_json("/api/jobs", R"({"image_id":"img-x","mask_ids":[]})", 400);
  EXPECT_EQ(client_->Post("/api/images", "garbage", "image/png")->status, 400);
  EXPECT_EQ(client_->Get("/api/materials/mat-none/albedo.png")->status, 404);
}
