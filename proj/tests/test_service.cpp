#include <doctest.h>

#include <httplib.h>

#include <set>
#include <thread>

#include "densify/png_io.hpp"
#include "densify/service.hpp"
#include "densify/training.hpp"
#include "test_util.hpp"

using namespace densify;
using densify::testing::scratch_dir;
using nlohmann::json;

namespace {

constexpr int kSize = 32;

// Checkpoints trained for one epoch on a few toy scenes, shared by all cases.
const std::filesystem::path& checkpoint_dir() {
  static const std::filesystem::path dir = [] {
    const ClassTaxonomy tax = toy_taxonomy();
    ToyWorldConfig world = default_toy_config(tax);
    world.width = world.height = kSize;
    world.max_instances = 3;
    std::vector<SceneExample> ex;
    for (int i = 0; i < 4; ++i) {
      ToyScene s = generate_toy_world(world, tax, static_cast<std::uint64_t>(i));
      ex.push_back({"s" + std::to_string(i), s.dense, s.instances, std::nullopt});
    }
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.decay_start = 0;
    cfg.width = cfg.height = kSize;
    cfg.batch_size = 4;
    cfg.generator.depth = 3;
    cfg.generator.base_width = 4;
    cfg.discriminator = {1, 2, 4};
    const auto d = scratch_dir("service_ckpt");
    for (auto role : {GeneratorRole::stage1, GeneratorRole::stage2, GeneratorRole::boundary}) {
      train_stage(role, ex, tax, cfg, d);
    }
    return d;
  }();
  return dir;
}

std::shared_ptr<const CompletionPipeline> pipeline() {
  static const std::shared_ptr<const CompletionPipeline> p = CompletionPipeline::load(checkpoint_dir());
  return p;
}

// Twelve car instances on road, plus a person.
std::pair<DenseLabelmap, InstanceMap> parent_layout(const ClassTaxonomy& tax) {
  const ClassId road = *tax.find("road"), car = *tax.find("car"), person = *tax.find("person");
  DenseLabelmap d(kSize, kSize, road);
  InstanceMap inst(kSize, kSize, road);
  for (int i = 0; i < 13; ++i) {
    const ClassId c = i == 12 ? person : car;
    const int x0 = (i % 6) * 5, y0 = 4 + (i / 6) * 8;
    for (int y = y0; y < y0 + 3; ++y)
      for (int x = x0; x < x0 + 4; ++x) {
        d.at(x, y) = c;
        inst.at(x, y) = thing_instance_id(c, static_cast<std::uint32_t>(i));
      }
  }
  return {d, inst};
}

SparseLabelmap sample_input(const ClassTaxonomy& tax) {
  const auto [d, inst] = parent_layout(tax);
  return sample_sparse(d, inst, tax, 0.3, 11);
}

std::string b64(const Grid<ClassId>& g) { return base64_encode(encode_png(labels_to_png(g))); }

Grid<ClassId> labels_of(const json& j, const char* field) {
  return labels_from_png(decode_png(base64_decode(j.at(field).get<std::string>())));
}

std::set<std::uint32_t> retained(const Grid<ClassId>& sparse, const InstanceMap& inst) {
  std::set<std::uint32_t> out;
  for (int y = 0; y < sparse.height(); ++y)
    for (int x = 0; x < sparse.width(); ++x)
      if (sparse.at(x, y) != 255) out.insert(inst.at(x, y));
  return out;
}

// Either a success body with the documented members or an error body.
void check_schema(const HttpReply& r, bool resample, int w, int h) {
  if (r.status != 200) {
    CHECK(r.status >= 400);
    CHECK(r.status < 500);
    REQUIRE(r.body.is_object());
    CHECK(r.body.at("code").is_string());
    CHECK(r.body.at("message").is_string());
    return;
  }
  auto check_variant = [&](const json& v) {
    for (const char* f : {"dense_png_b64", "boundary_png_b64"}) {
      REQUIRE(v.at(f).is_string());
      const RawImage img = decode_png(base64_decode(v.at(f).get<std::string>()));
      CHECK(img.width == w);
      CHECK(img.height == h);
      CHECK(img.channels == 1);
    }
    CHECK(v.at("width") == w);
    CHECK(v.at("height") == h);
    if (v.contains("image_png_b64")) {
      CHECK(decode_png(base64_decode(v.at("image_png_b64").get<std::string>())).channels == 3);
    }
    if (resample) CHECK(v.at("sparse_png_b64").is_string());
  };
  if (resample) {
    REQUIRE(r.body.at("variants").is_array());
    CHECK_FALSE(r.body.at("variants").empty());
    for (const auto& v : r.body.at("variants")) check_variant(v);
  } else {
    check_variant(r.body);
  }
}

}  // namespace

TEST_CASE("complete returns all artifacts and keeps input things") {
  const auto p = pipeline();
  const ClassTaxonomy& tax = p->taxonomy();
  const SparseLabelmap sparse = sample_input(tax);
  const CompletionResult r = p->complete(sparse, 5, true);
  CHECK(r.dense.width() == kSize);
  CHECK(r.boundary.height() == kSize);
  REQUIRE(r.image.has_value());
  CHECK(r.image->width() == kSize);
  CHECK(validate(r.dense, tax).empty());
  for (int y = 0; y < kSize; ++y)
    for (int x = 0; x < kSize; ++x)
      if (sparse.at(x, y) != tax.unlabeled_id()) CHECK(r.dense.at(x, y) == sparse.at(x, y));
  CHECK_FALSE(p->complete(sparse, 5, false).image.has_value());
  CHECK(p->renderer().backend() == RenderBackend::palette);
}

TEST_CASE("same request and seed give byte-identical responses") {
  const CompletionService svc(pipeline());
  const json req = {{"sparse_png_b64", b64(sample_input(pipeline()->taxonomy()))}, {"seed", 3}, {"return_image", true}};
  const HttpReply a = svc.complete(req.dump());
  const HttpReply b = svc.complete(req.dump());
  REQUIRE(a.status == 200);
  CHECK(a.body.dump() == b.body.dump());
  check_schema(a, false, kSize, kSize);
  CHECK(a.body.contains("image_png_b64"));
  const json no_image = {{"sparse_png_b64", req["sparse_png_b64"]}, {"seed", 3}};
  CHECK_FALSE(svc.complete(no_image.dump()).body.contains("image_png_b64"));
}

TEST_CASE("resample draws differing sparse sets") {
  const auto p = pipeline();
  const ClassTaxonomy& tax = p->taxonomy();
  const auto [d, inst] = parent_layout(tax);
  const auto variants = p->resample(d, inst, 0.3, 4, 21, false);
  REQUIRE(variants.size() == 4);
  std::vector<std::set<std::uint32_t>> sets;
  for (const auto& v : variants) {
    sets.push_back(retained(v.sparse, inst));
    CHECK(sets.back().size() == 4);  // round(0.3 * 13)
  }
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = i + 1; j < 4; ++j) CHECK(sets[i] != sets[j]);

  const auto all = p->resample(d, inst, 1.0, 1, 21, false);
  CHECK(retained(all.front().sparse, inst).size() == 13);
  const auto again = p->resample(d, inst, 0.3, 4, 21, false);
  for (std::size_t i = 0; i < 4; ++i) CHECK(again[i].dense == variants[i].dense);
  CHECK_THROWS_AS(p->resample(d, inst, 0.3, 0, 1, false), InvalidInput);
}

TEST_CASE("resample over HTTP handlers") {
  const CompletionService svc(pipeline());
  const auto [d, inst] = parent_layout(pipeline()->taxonomy());
  const json req = {{"dense_png_b64", b64(d)},
                    {"instance_png_b64", base64_encode(encode_png(instances_to_png(inst)))},
                    {"fraction", 0.3},
                    {"k", 3},
                    {"seed", 8}};
  const HttpReply r = svc.resample(req.dump());
  REQUIRE(r.status == 200);
  check_schema(r, true, kSize, kSize);
  CHECK(r.body["variants"].size() == 3);
  CHECK(r.body["variants"][0].contains("image_png_b64"));
  json bad = req;
  bad["k"] = 65;
  CHECK(svc.resample(bad.dump()).status == 400);
  bad = req;
  bad["fraction"] = 0.0;
  CHECK(svc.resample(bad.dump()).status == 400);
}

TEST_CASE("error replies") {
  const CompletionService svc(pipeline());
  const ClassTaxonomy& tax = pipeline()->taxonomy();
  CHECK(svc.complete("{not json").body["code"] == "bad_request");
  CHECK(svc.complete("[]").status == 400);
  CHECK(svc.complete(json{{"seed", 1}}.dump()).body["code"] == "invalid_input");
  CHECK(svc.complete(json{{"sparse_png_b64", "@@@"}}.dump()).status == 400);
  SparseLabelmap with_stuff = SparseLabelmap::unlabeled(kSize, kSize, tax);
  with_stuff.at(3, 3) = *tax.find("road");
  const HttpReply stuff = svc.complete(json{{"sparse_png_b64", b64(with_stuff)}}.dump());
  CHECK(stuff.status == 400);
  CHECK(stuff.body["message"].get<std::string>().find("(3, 3)") != std::string::npos);
  const HttpReply odd = svc.complete(json{{"sparse_png_b64", b64(SparseLabelmap::unlabeled(30, 32, tax))}}.dump());
  CHECK(odd.status == 400);
  CHECK(svc.taxonomy().body == tax.to_json());
}

TEST_CASE("schema holds on 100 randomized requests") {
  const CompletionService svc(pipeline());
  const ClassTaxonomy& tax = pipeline()->taxonomy();
  Rng rng(77);
  const auto [d, inst] = parent_layout(tax);
  int ok = 0;
  for (int i = 0; i < 100; ++i) {
    const bool resample = rng.uniform_index(4) == 0;
    int w = kSize;
    json req;
    if (resample) {
      req = {{"dense_png_b64", b64(d)}, {"instance_png_b64", base64_encode(encode_png(instances_to_png(inst)))}};
      if (rng.uniform_index(2)) req["k"] = rng.uniform_int(-1, 3);
      if (rng.uniform_index(2)) req["fraction"] = rng.uniform() * 1.2;
      if (rng.uniform_index(3) == 0) req["return_image"] = false;
    } else {
      w = rng.uniform_index(5) == 0 ? 24 : kSize;
      SparseLabelmap s = SparseLabelmap::unlabeled(w, kSize, tax);
      const int blobs = rng.uniform_int(0, 4);
      for (int b = 0; b < blobs; ++b) {
        const ClassId c = rng.uniform_index(10) == 0 ? tax.stuff_ids()[0]
                                                     : tax.thing_ids()[rng.uniform_index(tax.num_things())];
        const int x0 = rng.uniform_int(0, w - 4), y0 = rng.uniform_int(0, kSize - 4);
        for (int y = y0; y < y0 + 4; ++y)
          for (int x = x0; x < x0 + 3; ++x) s.at(x, y) = c;
      }
      req = {{"sparse_png_b64", b64(s)}};
      if (rng.uniform_index(10) == 0) req["sparse_png_b64"] = "garbage";
      if (rng.uniform_index(10) == 0) req.erase("sparse_png_b64");
    }
    if (rng.uniform_index(2)) req["seed"] = rng.uniform_index(1000);
    if (rng.uniform_index(10) == 0) req["seed"] = "seven";
    if (rng.uniform_index(3) == 0 && !resample) req["return_image"] = true;
    const HttpReply r = resample ? svc.resample(req.dump()) : svc.complete(req.dump());
    check_schema(r, resample, w, kSize);
    if (r.status == 200) ++ok;
  }
  CHECK(ok > 30);
}

TEST_CASE("HTTP transport; concurrent requests match sequential ones") {
  CompletionService svc(pipeline());
  const int port = svc.bind_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread server([&] { svc.listen_after_bind(); });
  while (!svc.running()) std::this_thread::sleep_for(std::chrono::milliseconds(5));

  httplib::Client client("127.0.0.1", port);
  const auto tax_res = client.Get("/taxonomy");
  REQUIRE(tax_res);
  CHECK(tax_res->status == 200);
  CHECK(json::parse(tax_res->body) == pipeline()->taxonomy().to_json());
  const auto missing = client.Get("/nope");
  REQUIRE(missing);
  CHECK(missing->status == 404);
  CHECK(json::parse(missing->body)["code"] == "not_found");
  const auto bad = client.Post("/complete", "{", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);

  const std::string sparse = b64(sample_input(pipeline()->taxonomy()));
  const int n = 6;
  std::vector<std::string> sequential(n), concurrent(n);
  for (int i = 0; i < n; ++i) {
    const auto r = client.Post("/complete", json{{"sparse_png_b64", sparse}, {"seed", i}}.dump(), "application/json");
    REQUIRE(r);
    REQUIRE(r->status == 200);
    sequential[static_cast<std::size_t>(i)] = r->body;
  }
  std::vector<std::thread> workers;
  for (int i = 0; i < n; ++i) {
    workers.emplace_back([&, i] {
      httplib::Client c("127.0.0.1", port);
      const auto r = c.Post("/complete", json{{"sparse_png_b64", sparse}, {"seed", i}}.dump(), "application/json");
      if (r) concurrent[static_cast<std::size_t>(i)] = r->body;
    });
  }
  for (auto& w : workers) w.join();
  for (int i = 0; i < n; ++i) CHECK(concurrent[static_cast<std::size_t>(i)] == sequential[static_cast<std::size_t>(i)]);

  svc.stop();
  server.join();
  CHECK_FALSE(svc.running());
}

TEST_CASE("loading refuses incomplete or mismatched checkpoint sets") {
  const auto dir = scratch_dir("service_missing");
  CHECK_THROWS_AS(CompletionPipeline::load(dir), IoError);
  for (const char* f : {"stage1.ckpt", "stage2.ckpt", "boundary.ckpt"}) {
    std::filesystem::copy_file(checkpoint_dir() / f, dir / f);
  }
  CHECK_NOTHROW(CompletionPipeline::load(dir));
  // A boundary checkpoint from another taxonomy.
  Checkpoint c = load_checkpoint(dir / "boundary.ckpt");
  const ClassTaxonomy other = densify::testing::small_taxonomy();
  c.taxonomy = other.to_json();
  c.fingerprint = other.fingerprint();
  save_checkpoint(dir / "boundary.ckpt", c);
  CHECK_THROWS_AS(CompletionPipeline::load(dir), FingerprintMismatch);
}
