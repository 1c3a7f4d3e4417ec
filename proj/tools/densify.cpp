// Command-line entry point: corpus generation, preparation, training,
// completion, evaluation and the HTTP service.

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <map>

#include "densify/checkpoint.hpp"
#include "densify/dataset.hpp"
#include "densify/metrics.hpp"
#include "densify/png_io.hpp"
#include "densify/rng.hpp"
#include "densify/service.hpp"
#include "densify/simd/kernels.hpp"
#include "densify/synthesis.hpp"
#include "densify/training.hpp"

namespace fs = std::filesystem;
using namespace densify;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << std::endl; }

std::vector<fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<LabelmapPair> read_pair_list(const fs::path& path) {
  const nlohmann::json j = read_json(path);
  if (!j.is_array()) throw ConfigError(path.string() + " must be a JSON list of {input, output}");
  const fs::path root = path.parent_path();
  const auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : root / p; };
  std::vector<LabelmapPair> out;
  for (const auto& e : j) {
    out.emplace_back(load_sparse_labelmap(resolve(e.at("input").get<std::string>())),
                     load_dense_labelmap(resolve(e.at("output").get<std::string>())));
  }
  return out;
}

ClassId class_ref(const ClassTaxonomy& t, const nlohmann::json& j) {
  if (j.is_number_integer()) return static_cast<ClassId>(j.get<int>());
  const auto id = t.find(j.get<std::string>());
  if (!id) throw ConfigError("unknown class '" + j.get<std::string>() + "'");
  return *id;
}

void write_result(const fs::path& dir, const std::string& stem, const CompletionResult& r, bool with_sparse) {
  fs::create_directories(dir);
  if (with_sparse) save_labelmap(dir / (stem + "_sparse.png"), r.sparse);
  save_labelmap(dir / (stem + "_dense.png"), r.dense);
  write_png(dir / (stem + "_boundary.png"), boundary_to_png(r.boundary));
  if (r.image) save_rgb(dir / (stem + "_image.png"), *r.image);
}

CompletionService* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-to-dense labelmap completion"};
  app.require_subcommand(1);

  // toy
  auto* toy = app.add_subcommand("toy", "Write a synthetic street corpus with planted co-occurrence rules");
  fs::path toy_out;
  int toy_count = 256;
  std::uint64_t toy_seed = 1;
  std::string toy_config;
  std::string toy_prefix = "toy";
  toy->add_option("--out", toy_out, "Output directory")->required();
  toy->add_option("--count", toy_count, "Number of scenes");
  toy->add_option("--seed", toy_seed, "Seed");
  toy->add_option("--config", toy_config, "Toy world config JSON");
  toy->add_option("--prefix", toy_prefix, "File name prefix");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Materialize sparse/dense training pairs for inspection");
  fs::path prep_manifest, prep_taxonomy, prep_out;
  double prep_fraction = 0.3;
  std::uint64_t prep_seed = 1;
  int prep_epoch = 1;
  int prep_fallback = -1;
  prepare->add_option("--manifest", prep_manifest)->required();
  prepare->add_option("--taxonomy", prep_taxonomy)->required();
  prepare->add_option("--fraction", prep_fraction);
  prepare->add_option("--out", prep_out)->required();
  prepare->add_option("--seed", prep_seed);
  prepare->add_option("--epoch", prep_epoch);
  prepare->add_option("--fallback", prep_fallback, "Stuff class id for labels outside the taxonomy");

  // train
  auto* train = app.add_subcommand("train", "Train one generator role");
  std::string train_role;
  fs::path train_config, train_manifest, train_taxonomy, train_out;
  std::string train_resume;
  int train_until = -1;
  train->add_option("--role", train_role, "stage1|stage2|single|boundary|renderer")->required();
  train->add_option("--config", train_config)->required();
  train->add_option("--manifest", train_manifest)->required();
  train->add_option("--taxonomy", train_taxonomy)->required();
  train->add_option("--out", train_out)->required();
  train->add_option("--resume", train_resume, "Checkpoint to continue from");
  train->add_option("--until", train_until, "Stop after this epoch");

  // complete
  auto* complete = app.add_subcommand("complete", "Complete a sparse labelmap");
  fs::path comp_ckpt, comp_sparse, comp_out;
  std::uint64_t comp_seed = 0;
  bool comp_image = false;
  std::string comp_external;
  complete->add_option("--checkpoints", comp_ckpt)->required();
  complete->add_option("--sparse", comp_sparse)->required();
  complete->add_option("--out", comp_out)->required();
  complete->add_option("--seed", comp_seed);
  complete->add_flag("--image", comp_image, "Also render an image");
  complete->add_option("--external", comp_external, "External renderer command");

  // resample
  auto* resample = app.add_subcommand("resample", "Draw and complete several sparse maps from one layout");
  fs::path res_ckpt, res_dense, res_inst, res_out;
  double res_fraction = 0.3;
  int res_k = 4;
  std::uint64_t res_seed = 0;
  bool res_image = false;
  resample->add_option("--checkpoints", res_ckpt)->required();
  resample->add_option("--dense", res_dense)->required();
  resample->add_option("--instances", res_inst)->required();
  resample->add_option("--out", res_out)->required();
  resample->add_option("--fraction", res_fraction);
  resample->add_option("--k", res_k);
  resample->add_option("--seed", res_seed);
  resample->add_flag("--image", res_image);

  // eval-fid
  auto* efid = app.add_subcommand("eval-fid", "FID between two image folders");
  fs::path fid_real, fid_gen;
  std::string fid_extractor;
  efid->add_option("--real", fid_real)->required();
  efid->add_option("--gen", fid_gen)->required();
  efid->add_option("--extractor", fid_extractor, "Extractor config JSON");

  // eval-cooc
  auto* ecooc = app.add_subcommand("eval-cooc", "Co-occurrence similarity between two pair lists");
  fs::path cooc_train, cooc_gen, cooc_pairs, cooc_taxonomy;
  ecooc->add_option("--train", cooc_train, "JSON list of {input, output} PNG paths")->required();
  ecooc->add_option("--gen", cooc_gen, "JSON list of {input, output} PNG paths")->required();
  ecooc->add_option("--pairs", cooc_pairs, "JSON list of [c1, c2] names or ids")->required();
  ecooc->add_option("--taxonomy", cooc_taxonomy)->required();

  // eval-seg
  auto* eseg = app.add_subcommand("eval-seg", "Segmentation scores of predicted labelmaps");
  fs::path seg_pred, seg_gt, seg_taxonomy;
  eseg->add_option("--pred", seg_pred)->required();
  eseg->add_option("--gt", seg_gt)->required();
  eseg->add_option("--taxonomy", seg_taxonomy)->required();

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP completion service");
  int serve_port = 8080;
  std::string serve_host = "127.0.0.1";
  fs::path serve_ckpt;
  std::string serve_external;
  serve->add_option("--port", serve_port);
  serve->add_option("--host", serve_host);
  serve->add_option("--checkpoints", serve_ckpt)->required();
  serve->add_option("--external", serve_external, "External renderer command");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*toy) {
      const ClassTaxonomy tax = toy_taxonomy();
      const ToyWorldConfig cfg =
          toy_config.empty() ? default_toy_config(tax) : ToyWorldConfig::from_json(read_json(toy_config), tax);
      const fs::path manifest = write_toy_corpus(toy_out, cfg, tax, toy_count, toy_seed, toy_prefix);
      const auto examples = load_dataset(manifest, tax);
      print({{"manifest", manifest.string()}, {"stats", corpus_stats(examples, tax).to_json(tax)}});
    } else if (*prepare) {
      const ClassTaxonomy tax = ClassTaxonomy::load(prep_taxonomy);
      LoadOptions opts;
      if (prep_fallback >= 0) opts.fallback_class = static_cast<ClassId>(prep_fallback);
      const auto examples = load_dataset(prep_manifest, tax, opts);
      fs::create_directories(prep_out);
      EpochIterator it(examples, tax, prep_fraction, prep_epoch, prep_seed);
      while (auto pair = it.next()) {
        save_labelmap(prep_out / (pair->source_id + "_sparse.png"), pair->sparse);
        save_labelmap(prep_out / (pair->source_id + "_dense.png"), pair->dense);
      }
      print({{"pairs", examples.size()}, {"out", prep_out.string()}, {"stats", corpus_stats(examples, tax).to_json(tax)}});
    } else if (*train) {
      const ClassTaxonomy tax = ClassTaxonomy::load(train_taxonomy);
      const TrainConfig cfg = TrainConfig::load(train_config);
      const auto examples = load_dataset(train_manifest, tax);
      std::cerr << "training " << train_role << " on " << examples.size() << " examples, kernels "
                << simd::isa_name(simd::active_kernels().isa) << "\n";
      const std::optional<fs::path> resume =
          train_resume.empty() ? std::nullopt : std::optional<fs::path>(train_resume);
      const TrainResult r = train_stage(parse_role(train_role), examples, tax, cfg, train_out, resume, train_until);
      for (const auto& rec : r.records) {
        std::cerr << "epoch " << rec.epoch << " lr " << rec.lr << " total " << rec.generator.total << " focal "
                  << rec.generator.focal << " d " << rec.discriminator << " (" << rec.seconds << " s)\n";
      }
      print({{"checkpoint", r.checkpoint.string()}, {"log", r.log.string()}, {"epochs", r.records.size()}});
    } else if (*complete) {
      const auto pipeline = CompletionPipeline::load(comp_ckpt, comp_external);
      const CompletionResult r = pipeline->complete(load_sparse_labelmap(comp_sparse), comp_seed, comp_image);
      write_result(comp_out, comp_sparse.stem().string(), r, false);
      print({{"out", comp_out.string()}, {"width", r.dense.width()}, {"height", r.dense.height()}});
    } else if (*resample) {
      const auto pipeline = CompletionPipeline::load(res_ckpt);
      const auto results = pipeline->resample(load_dense_labelmap(res_dense), load_instance_map(res_inst),
                                              res_fraction, res_k, res_seed, res_image);
      for (std::size_t i = 0; i < results.size(); ++i) {
        write_result(res_out, "variant_" + std::to_string(i), results[i], true);
      }
      print({{"out", res_out.string()}, {"variants", results.size()}});
    } else if (*efid) {
      const auto extractor = make_extractor(fid_extractor.empty() ? nlohmann::json::object() : read_json(fid_extractor));
      const auto load_all = [](const fs::path& dir) {
        std::vector<RgbImage> images;
        for (const auto& p : png_files(dir)) images.push_back(load_rgb(p));
        return images;
      };
      const FeatureStats r = extract_feature_stats(load_all(fid_real), *extractor);
      const FeatureStats g = extract_feature_stats(load_all(fid_gen), *extractor);
      print({{"fid", fid(r, g)}, {"real_images", r.n}, {"gen_images", g.n}, {"dim", r.dim()}});
    } else if (*ecooc) {
      const ClassTaxonomy tax = ClassTaxonomy::load(cooc_taxonomy);
      const CooccurrenceTable t = cooccurrence_table(read_pair_list(cooc_train), tax);
      const CooccurrenceTable g = cooccurrence_table(read_pair_list(cooc_gen), tax);
      std::vector<std::pair<ClassId, ClassId>> pairs;
      for (const auto& p : read_json(cooc_pairs)) pairs.emplace_back(class_ref(tax, p.at(0)), class_ref(tax, p.at(1)));
      print({{"train", t.to_json(tax)}, {"gen", g.to_json(tax)}, {"pairs", cooccurrence_report(t, g, pairs, tax)}});
    } else if (*eseg) {
      const ClassTaxonomy tax = ClassTaxonomy::load(seg_taxonomy);
      ConfusionAccumulator acc(tax);
      std::size_t matched = 0;
      for (const auto& p : png_files(seg_pred)) {
        const fs::path gt = seg_gt / p.filename();
        if (!fs::exists(gt)) throw IoError("no ground truth for " + p.filename().string());
        acc.add(labels_from_png(read_png(p)), labels_from_png(read_png(gt)));
        ++matched;
      }
      nlohmann::json report = segmentation_scores(acc).to_json(acc.classes(), tax);
      report["images"] = matched;
      print(report);
    } else if (*serve) {
      auto pipeline = std::shared_ptr<const CompletionPipeline>(CompletionPipeline::load(serve_ckpt, serve_external));
      CompletionService service(pipeline);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "serving on " << serve_host << ":" << serve_port << "\n";
      if (!service.listen(serve_host, serve_port)) {
        std::cerr << "error: cannot listen on " << serve_host << ":" << serve_port << "\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
