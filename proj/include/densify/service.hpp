#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "densify/labelmap.hpp"
#include "densify/models.hpp"
#include "densify/synthesis.hpp"

namespace densify {

struct CompletionResult {
  SparseLabelmap sparse;
  DenseLabelmap dense;
  BoundaryMap boundary;
  std::optional<RgbImage> image;
};

/// Stage-1, stage-2 and boundary generators plus a renderer. Immutable after
/// construction and safe to call from several threads.
class CompletionPipeline {
 public:
  CompletionPipeline(ClassTaxonomy taxonomy, Generator stage1, Generator stage2, Generator boundary,
                     std::unique_ptr<Renderer> renderer);

  /// Loads stage1.ckpt, stage2.ckpt and boundary.ckpt from `dir`. The renderer
  /// is renderer.ckpt when present (learned), else the palette; a non-empty
  /// `external_command` selects the external backend instead.
  static std::unique_ptr<CompletionPipeline> load(const std::filesystem::path& dir,
                                                  const std::string& external_command = {});

  CompletionResult complete(const SparseLabelmap& sparse, std::uint64_t seed, bool return_image) const;

  /// k sparse draws from the parent, each completed.
  std::vector<CompletionResult> resample(const DenseLabelmap& dense, const InstanceMap& instances, double fraction,
                                         int k, std::uint64_t seed, bool return_image) const;

  const ClassTaxonomy& taxonomy() const { return taxonomy_; }
  const Renderer& renderer() const { return *renderer_; }

  /// Boundary generator output thresholded at the larger of its two channels.
  BoundaryMap boundaries_for(const DenseLabelmap& dense, std::uint64_t seed) const;

 private:
  ClassTaxonomy taxonomy_;
  Generator stage1_;
  Generator stage2_;
  Generator boundary_;
  std::unique_ptr<Renderer> renderer_;
};

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

/// Request handlers independent of the transport.
class CompletionService {
 public:
  explicit CompletionService(std::shared_ptr<const CompletionPipeline> pipeline);

  HttpReply taxonomy() const;
  HttpReply complete(const std::string& request_body) const;
  HttpReply resample(const std::string& request_body) const;

  /// Serves GET /taxonomy, POST /complete and POST /resample until stop().
  /// Returns false when the socket cannot be bound.
  bool listen(const std::string& host, int port);
  /// Binds to an ephemeral port and returns it, or -1.
  int bind_any_port(const std::string& host);
  /// Blocking loop after bind_any_port().
  bool listen_after_bind();
  void stop();
  bool running() const;

  ~CompletionService();

 private:
  struct Server;
  std::shared_ptr<const CompletionPipeline> pipeline_;
  std::unique_ptr<Server> server_;
  void install_routes();
};

}  // namespace densify
