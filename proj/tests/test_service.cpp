#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "oracles.hpp"
#include "xlut/service.hpp"

using namespace xlut;
using namespace xlut::service;
using ::testing::HasSubstr;

namespace {

std::string pgm_body(const Image16& img) {
  const Bytes b = encode_pgm(img);
  return std::string(b.begin(), b.end());
}

class ServiceTest : public ::testing::Test {
 protected:
  ServiceTest() : dir_("svc") {
    cfg_.data_dir = dir_.path();
    svc_ = std::make_unique<Service>(cfg_);
    img_ = gen_phantom(3, 64, 64);
  }

  std::string upload_phantom() {
    const Reply r = svc_->upload(pgm_body(img_));
    EXPECT_EQ(r.status, 200) << r.body.dump();
    return r.body.at("image_id").get<std::string>();
  }

  static json grid_body(const std::string& id, const ControlGrid& g) {
    return {{"image_id", id}, {"grid_w", g.grid_w}, {"grid_h", g.grid_h}, {"a", g.a},
            {"b", g.b},       {"wc", g.wc},         {"ww", g.ww},         {"note", "hand"}};
  }

  oracle::TempDir dir_;
  Config cfg_;
  std::unique_ptr<Service> svc_;
  Image16 img_;
};

ControlGrid sample_grid() {
  ControlGrid g = ControlGrid::uniform(3, 2, RemapParams{});
  g.a = {1.0, 1.2, 1.4, 0.8, 1.0, 1.1};
  g.wc = {0.4, 0.5, 0.6, 0.45, 0.5, 0.55};
  return g;
}

}  // namespace

TEST(ServiceHelpers, Sha256KnownVector) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex({reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size()}),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ServiceHelpers, Base64RoundTrip) {
  const std::vector<std::uint8_t> v = {0, 1, 2, 250, 255};
  EXPECT_EQ(base64_encode(v), "AAEC+v8=");
  EXPECT_EQ(base64_decode(base64_encode(v)), v);
  EXPECT_TRUE(base64_encode({}).empty());
}

TEST_F(ServiceTest, UploadIsContentAddressed) {
  const Reply a = svc_->upload(pgm_body(img_));
  const Reply b = svc_->upload(pgm_body(img_));
  ASSERT_EQ(a.status, 200);
  EXPECT_EQ(a.body.at("image_id"), b.body.at("image_id"));
  EXPECT_EQ(a.body.at("width"), 64);
  EXPECT_EQ(a.body.at("height"), 64);
  const Reply c = svc_->upload(pgm_body(gen_phantom(4, 64, 64)));
  EXPECT_NE(a.body.at("image_id"), c.body.at("image_id"));
  const std::string id = a.body.at("image_id");
  EXPECT_EQ(read_pgm(dir_ / ("images/" + id + ".pgm")), img_);
}

TEST_F(ServiceTest, UploadRejectsAsciiPgm) {
  const Reply r = svc_->upload("P2\n1 1\n255\n7\n");
  EXPECT_EQ(r.status, 400);
  EXPECT_THAT(r.body.at("error").get<std::string>(), HasSubstr("unsupported format"));
}

TEST_F(ServiceTest, UploadCap) {
  cfg_.max_upload_bytes = 100;
  Service small(cfg_);
  EXPECT_EQ(small.upload(pgm_body(img_)).status, 413);
  EXPECT_EQ(small.upload(pgm_body(Image16(4, 4))).status, 200);
}

TEST_F(ServiceTest, PreviewMatchesGlobalRemap) {
  const std::string id = upload_phantom();
  const json req = {{"params", {{"wc", 0.375}, {"ww", 0.75}}}, {"downscale", 8}};
  const Reply r = svc_->preview(id, req.dump());
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body.at("width"), 64);
  EXPECT_EQ(base64_decode(r.body.at("pixels").get<std::string>()),
            to_display8(apply_global(img_, GlobalParams{0.375, 0.75})));
  EXPECT_EQ(r.body.at("applied").at("wc").at("min"), 0.375);
}

TEST_F(ServiceTest, PreviewHonoursMaxEdge) {
  const std::string id = svc_->upload(pgm_body(gen_phantom(1, 100, 40))).body.at("image_id");
  const Reply r = svc_->preview(id, R"({"max_edge": 25})");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body.at("width"), 25);
  EXPECT_EQ(r.body.at("height"), 10);
  EXPECT_EQ(base64_decode(r.body.at("pixels").get<std::string>()).size(), 250u);
}

TEST_F(ServiceTest, PreviewErrors) {
  const std::string id = upload_phantom();
  EXPECT_EQ(svc_->preview(id, R"({"params": {"ww": 0}})").status, 422);
  EXPECT_EQ(svc_->preview(id, R"({"grid": {"grid_w": 1}})").status, 422);
  EXPECT_EQ(svc_->preview(id, R"({"grid": {"grid_w": 2, "grid_h": 2, "a": [1, 1]}})").status, 422);
  EXPECT_EQ(svc_->preview(id, "not json").status, 400);
  EXPECT_EQ(svc_->preview(id, "[1]").status, 400);
  EXPECT_EQ(svc_->preview(std::string(64, '0'), "{}").status, 404);
  EXPECT_EQ(svc_->preview("../etc", "{}").status, 404);
}

TEST_F(ServiceTest, AnnotationRoundTrip) {
  const std::string id = upload_phantom();
  const ControlGrid g = sample_grid();
  const Reply s1 = svc_->save_annotation(grid_body(id, g).dump());
  ASSERT_EQ(s1.status, 200) << s1.body.dump();
  EXPECT_EQ(s1.body.at("seq"), 1);
  ControlGrid g2 = g;
  g2.b[0] = 0.05;
  ASSERT_EQ(svc_->save_annotation(grid_body(id, g2).dump()).status, 200);

  const Reply got = svc_->get_annotations(id);
  ASSERT_EQ(got.status, 200);
  ASSERT_EQ(got.body.at("history").size(), 2u);
  const AnnotationRecord latest = record_from_json(got.body.at("latest"));
  EXPECT_EQ(latest.grid, g2);
  EXPECT_EQ(latest.seq, 2);
  EXPECT_EQ(latest.note, "hand");
  EXPECT_FALSE(latest.created_at.empty());
  EXPECT_EQ(record_from_json(got.body.at("history")[0]).grid, g);

  // persisted: a fresh service over the same directory sees the history
  Service again(cfg_);
  EXPECT_EQ(again.get_annotations(id).body.at("history").size(), 2u);
}

TEST_F(ServiceTest, AnnotationErrors) {
  const std::string id = upload_phantom();
  ControlGrid g = sample_grid();
  g.ww[1] = 0.0;
  EXPECT_EQ(svc_->save_annotation(grid_body(id, g).dump()).status, 422);
  EXPECT_EQ(svc_->save_annotation(R"({"image_id": "x"})").status, 422);
  EXPECT_EQ(svc_->save_annotation(grid_body(std::string(64, 'a'), sample_grid()).dump()).status, 404);
  EXPECT_EQ(svc_->get_annotations(std::string(64, 'a')).status, 404);
  const Reply empty = svc_->get_annotations(id);
  EXPECT_EQ(empty.status, 200);
  EXPECT_TRUE(empty.body.at("latest").is_null());
}

TEST_F(ServiceTest, ExportProducesTrainingSample) {
  const std::string id = upload_phantom();
  EXPECT_EQ(svc_->export_annotation(id, "").status, 404);
  const ControlGrid g = sample_grid();
  ASSERT_EQ(svc_->save_annotation(grid_body(id, g).dump()).status, 200);
  const Reply r = svc_->export_annotation(id, R"({"downscale": 16})");
  ASSERT_EQ(r.status, 200) << r.body.dump();
  const Sample s = read_sample(r.body.at("path").get<std::string>());
  EXPECT_EQ(s.input, img_);
  EXPECT_EQ(s.gt_maps, maps_from_control_grid(g, 4, 4, 16));
  EXPECT_EQ(s.gt_img, apply_maps(img_, s.gt_maps));
  EXPECT_EQ(svc_->export_annotation(id, R"({"downscale": 0})").status, 422);
}

TEST_F(ServiceTest, EnhanceNeedsModel) {
  const std::string id = upload_phantom();
  EXPECT_EQ(svc_->enhance(id).status, 409);
  EXPECT_EQ(svc_->enhance(std::string(64, 'b')).status, 404);
}

TEST_F(ServiceTest, EnhanceReturnsPreviewAndHeatmaps) {
  nn::ModelConfig mc;
  mc.features = 8;
  nn::Model model(mc, 2);
  model.snap_to_float();
  nn::save_checkpoint(nn::make_checkpoint(model), dir_ / "m.ckpt");
  cfg_.checkpoint = dir_ / "m.ckpt";
  Service svc(cfg_);
  ASSERT_TRUE(svc.has_model());
  const std::string id = svc.upload(pgm_body(img_)).body.at("image_id");
  const Reply r = svc.enhance(id, R"({"max_edge": 32})");
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body.at("preview").at("width"), 32);

  const Enhanced ref = enhance(model, img_);
  const json& maps = r.body.at("maps");
  EXPECT_EQ(maps.at("map_w"), 8);
  EXPECT_EQ(maps.at("a").get<std::vector<float>>(),
            std::vector<float>(ref.maps.a.pixels().begin(), ref.maps.a.pixels().end()));
  for (const char* c : {"a", "b", "wc", "ww"}) {
    const json& h = r.body.at("heatmaps").at(c);
    const auto px = base64_decode(h.at("pixels").get<std::string>());
    ASSERT_EQ(px.size(), 64u) << c;
    EXPECT_LE(h.at("min").get<double>(), r.body.at("summary").at(c).at("mean").get<double>());
    EXPECT_GE(h.at("max").get<double>(), r.body.at("summary").at(c).at("mean").get<double>());
  }
  const Reply full = svc.enhance(id);
  EXPECT_EQ(base64_decode(full.body.at("preview").at("pixels").get<std::string>()), to_display8(ref.image));
}

TEST_F(ServiceTest, HttpRoundTrip) {
  httplib::Server srv;
  svc_->mount(srv);
  const int port = srv.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  httplib::Client cli("127.0.0.1", port);
  auto up = cli.Post("/api/images", pgm_body(img_), "application/octet-stream");
  ASSERT_TRUE(up);
  EXPECT_EQ(up->status, 200);
  const std::string id = json::parse(up->body).at("image_id");

  auto pv = cli.Post("/api/images/" + id + "/preview", R"({"params": {"ww": 0}})", "application/json");
  ASSERT_TRUE(pv);
  EXPECT_EQ(pv->status, 422);

  auto save = cli.Post("/api/annotations", grid_body(id, sample_grid()).dump(), "application/json");
  ASSERT_TRUE(save);
  EXPECT_EQ(save->status, 200);
  auto get = cli.Get("/api/annotations/" + id);
  ASSERT_TRUE(get);
  EXPECT_EQ(json::parse(get->body).at("latest").at("seq"), 1);
  auto ex = cli.Post("/api/annotations/" + id + "/export", "", "application/json");
  ASSERT_TRUE(ex);
  EXPECT_EQ(ex->status, 200);
  auto en = cli.Post("/api/images/" + id + "/enhance", "", "application/json");
  ASSERT_TRUE(en);
  EXPECT_EQ(en->status, 409);
  auto missing = cli.Get("/api/annotations/nothex");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  srv.stop();
  th.join();
}
