#include "densify/service.hpp"

#include <httplib.h>

#include "densify/checkpoint.hpp"
#include "densify/dataset.hpp"
#include "densify/png_io.hpp"
#include "densify/rng.hpp"

namespace densify {

CompletionPipeline::CompletionPipeline(ClassTaxonomy taxonomy, Generator stage1, Generator stage2,
                                       Generator boundary, std::unique_ptr<Renderer> renderer)
    : taxonomy_(std::move(taxonomy)),
      stage1_(std::move(stage1)),
      stage2_(std::move(stage2)),
      boundary_(std::move(boundary)),
      renderer_(std::move(renderer)) {
  if (stage1_.role() != GeneratorRole::stage1 || stage2_.role() != GeneratorRole::stage2 ||
      boundary_.role() != GeneratorRole::boundary) {
    throw ConfigError("pipeline needs stage1, stage2 and boundary generators");
  }
  if (!renderer_) renderer_ = std::make_unique<PaletteRenderer>(taxonomy_);
}

std::unique_ptr<CompletionPipeline> CompletionPipeline::load(const std::filesystem::path& dir,
                                                             const std::string& external_command) {
  const auto s1 = dir / "stage1.ckpt";
  for (const char* name : {"stage1.ckpt", "stage2.ckpt", "boundary.ckpt"}) {
    if (!std::filesystem::exists(dir / name)) throw IoError("missing checkpoint " + (dir / name).string());
  }
  ClassTaxonomy taxonomy = ClassTaxonomy::from_json(load_checkpoint(s1).taxonomy);
  Generator g1 = load_generator(s1, taxonomy, GeneratorRole::stage1);
  Generator g2 = load_generator(dir / "stage2.ckpt", taxonomy, GeneratorRole::stage2);
  Generator gb = load_generator(dir / "boundary.ckpt", taxonomy, GeneratorRole::boundary);
  std::unique_ptr<Renderer> renderer;
  if (!external_command.empty()) {
    renderer = std::make_unique<ExternalRenderer>(external_command, dir / "render_scratch");
  } else if (std::filesystem::exists(dir / "renderer.ckpt")) {
    renderer = std::make_unique<LearnedRenderer>(load_generator(dir / "renderer.ckpt", taxonomy, GeneratorRole::renderer),
                                                 taxonomy);
  } else {
    renderer = std::make_unique<PaletteRenderer>(taxonomy);
  }
  return std::make_unique<CompletionPipeline>(std::move(taxonomy), std::move(g1), std::move(g2), std::move(gb),
                                              std::move(renderer));
}

BoundaryMap CompletionPipeline::boundaries_for(const DenseLabelmap& dense, std::uint64_t seed) const {
  const nn::Tensor out = boundary_.infer(to_tensor(encode_one_hot(dense, taxonomy_, ChannelSet::all)), seed);
  BoundaryMap b(dense.width(), dense.height(), 0);
  const std::size_t plane = out.shape().plane();
  auto bd = b.data();
  for (std::size_t i = 0; i < plane; ++i) bd[i] = out[plane + i] > out[i] ? 1 : 0;
  return b;
}

CompletionResult CompletionPipeline::complete(const SparseLabelmap& sparse, std::uint64_t seed,
                                              bool return_image) const {
  const std::vector<Violation> v = validate(sparse, taxonomy_);
  if (!v.empty()) {
    throw InvalidInput("malformed sparse labelmap: " + v.front().to_string() +
                       (v.size() > 1 ? " (+" + std::to_string(v.size() - 1) + " more)" : std::string()));
  }
  const int factor = 1 << std::max(stage1_.spec().depth, stage2_.spec().depth);
  if (sparse.width() % factor != 0 || sparse.height() % factor != 0) {
    throw InvalidInput("labelmap size " + std::to_string(sparse.width()) + "x" + std::to_string(sparse.height()) +
                       " must be a multiple of " + std::to_string(factor));
  }
  CompletionResult r;
  r.sparse = sparse;
  const TwoStageResult ts = two_stage_forward(sparse, stage1_, stage2_, taxonomy_, seed);
  r.dense = decode_argmax(ts.final_map, taxonomy_);
  r.boundary = boundaries_for(r.dense, derive_seed(seed, 3));
  if (return_image) r.image = renderer_->render(r.dense, r.boundary);
  return r;
}

std::vector<CompletionResult> CompletionPipeline::resample(const DenseLabelmap& dense, const InstanceMap& instances,
                                                           double fraction, int k, std::uint64_t seed,
                                                           bool return_image) const {
  if (k < 1) throw InvalidInput("k must be >= 1");
  const std::vector<Violation> v = validate(instances, dense, taxonomy_);
  if (!v.empty()) throw InvalidInput("malformed parent layout: " + v.front().to_string());
  std::vector<CompletionResult> out;
  for (int i = 0; i < k; ++i) {
    const SparseLabelmap sparse =
        sample_sparse(dense, instances, taxonomy_, fraction, derive_seed(seed, static_cast<std::uint64_t>(i)));
    out.push_back(complete(sparse, derive_seed(seed, static_cast<std::uint64_t>(i), 1), return_image));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

HttpReply error_reply(int status, const std::string& code, const std::string& message) {
  return {status, {{"code", code}, {"message", message}}};
}

template <class F>
HttpReply guarded(F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    return error_reply(400, "bad_request", std::string("malformed request: ") + e.what());
  } catch (const InvalidInput& e) {
    return error_reply(400, "invalid_input", e.what());
  } catch (const ConfigError& e) {
    return error_reply(400, "invalid_input", e.what());
  } catch (const FingerprintMismatch& e) {
    return error_reply(409, "taxonomy_mismatch", e.what());
  } catch (const std::exception& e) {
    return error_reply(500, "internal", e.what());
  }
}

std::string png_b64(const RawImage& img) { return base64_encode(encode_png(img)); }

RawImage png_from_b64(const nlohmann::json& body, const char* field) {
  if (!body.contains(field) || !body[field].is_string()) {
    throw InvalidInput(std::string("missing string field '") + field + "'");
  }
  try {
    return decode_png(base64_decode(body[field].get<std::string>()));
  } catch (const InvalidInput&) {
    throw;
  } catch (const std::exception& e) {
    throw InvalidInput(std::string("field '") + field + "' is not a base64 PNG: " + e.what());
  }
}

std::uint64_t seed_of(const nlohmann::json& body) {
  if (!body.contains("seed") || body["seed"].is_null()) return 0;
  if (!body["seed"].is_number_integer()) throw InvalidInput("seed must be an integer");
  return body["seed"].get<std::uint64_t>();
}

nlohmann::json parse_body(const std::string& text) {
  nlohmann::json body = nlohmann::json::parse(text);
  if (!body.is_object()) throw InvalidInput("request body must be a JSON object");
  return body;
}

nlohmann::json result_json(const CompletionResult& r, bool with_sparse) {
  nlohmann::json j = {{"dense_png_b64", png_b64(labels_to_png(r.dense))},
                      {"boundary_png_b64", png_b64(boundary_to_png(r.boundary))},
                      {"width", r.dense.width()},
                      {"height", r.dense.height()}};
  if (with_sparse) j["sparse_png_b64"] = png_b64(labels_to_png(r.sparse));
  if (r.image) j["image_png_b64"] = png_b64(rgb_to_png(*r.image));
  return j;
}

}  // namespace

struct CompletionService::Server {
  httplib::Server http;
};

CompletionService::CompletionService(std::shared_ptr<const CompletionPipeline> pipeline)
    : pipeline_(std::move(pipeline)), server_(std::make_unique<Server>()) {
  if (!pipeline_) throw ConfigError("service needs a pipeline");
  install_routes();
}

CompletionService::~CompletionService() { stop(); }

HttpReply CompletionService::taxonomy() const { return {200, pipeline_->taxonomy().to_json()}; }

HttpReply CompletionService::complete(const std::string& request_body) const {
  return guarded([&] {
    const nlohmann::json body = parse_body(request_body);
    const Grid<ClassId> labels = labels_from_png(png_from_b64(body, "sparse_png_b64"));
    SparseLabelmap sparse(labels.width(), labels.height());
    std::copy(labels.data().begin(), labels.data().end(), sparse.data().begin());
    const bool return_image = body.value("return_image", false);
    const CompletionResult r = pipeline_->complete(sparse, seed_of(body), return_image);
    return HttpReply{200, result_json(r, false)};
  });
}

HttpReply CompletionService::resample(const std::string& request_body) const {
  return guarded([&] {
    const nlohmann::json body = parse_body(request_body);
    const Grid<ClassId> labels = labels_from_png(png_from_b64(body, "dense_png_b64"));
    DenseLabelmap dense(labels.width(), labels.height());
    std::copy(labels.data().begin(), labels.data().end(), dense.data().begin());
    const InstanceMap instances = instances_from_png(png_from_b64(body, "instance_png_b64"));
    if (!dense.same_shape(instances)) throw InvalidInput("dense and instance maps differ in size");
    const std::vector<Violation> v = validate(dense, pipeline_->taxonomy());
    if (!v.empty()) throw InvalidInput("malformed dense labelmap: " + v.front().to_string());
    const double fraction = body.value("fraction", 0.3);
    if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidInput("fraction must lie in (0, 1]");
    const int k = body.value("k", 1);
    if (k < 1 || k > 64) throw InvalidInput("k must lie in [1, 64]");
    const bool return_image = body.value("return_image", true);
    const auto results = pipeline_->resample(dense, instances, fraction, k, seed_of(body), return_image);
    nlohmann::json variants = nlohmann::json::array();
    for (const auto& r : results) variants.push_back(result_json(r, true));
    return HttpReply{200, {{"variants", variants}}};
  });
}

void CompletionService::install_routes() {
  auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body.dump(), "application/json");
  };
  server_->http.Get("/taxonomy", [this, send](const httplib::Request&, httplib::Response& res) {
    send(res, taxonomy());
  });
  server_->http.Post("/complete", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, complete(req.body));
  });
  server_->http.Post("/resample", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, resample(req.body));
  });
  server_->http.set_error_handler([send](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      send(res, error_reply(res.status, res.status == 404 ? "not_found" : "http_error",
                            "request failed with status " + std::to_string(res.status)));
    }
  });
}

bool CompletionService::listen(const std::string& host, int port) { return server_->http.listen(host, port); }

int CompletionService::bind_any_port(const std::string& host) { return server_->http.bind_to_any_port(host); }

bool CompletionService::listen_after_bind() { return server_->http.listen_after_bind(); }

void CompletionService::stop() {
  if (server_ && server_->http.is_running()) server_->http.stop();
}

bool CompletionService::running() const { return server_->http.is_running(); }

}  // namespace densify
