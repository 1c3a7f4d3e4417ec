#include "densify/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "densify/png_io.hpp"
#include "densify/rng.hpp"
#include "densify/synthesis.hpp"

namespace densify {

std::vector<std::uint32_t> thing_instance_ids(const DenseLabelmap& dense, const InstanceMap& instances,
                                              const ClassTaxonomy& taxonomy) {
  if (!dense.same_shape(instances)) throw InvalidInput("dense and instance maps differ in size");
  std::set<std::uint32_t> ids;
  const auto d = dense.data();
  const auto inst = instances.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (taxonomy.is_thing(d[i])) ids.insert(inst[i]);
  }
  return {ids.begin(), ids.end()};
}

std::size_t retained_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidInput("fraction must lie in (0, 1]");
  if (n == 0) return 0;
  // The epsilon keeps products such as 0.3 * 5 from rounding to the lower side.
  const auto k = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5 + 1e-9));
  return std::clamp<std::size_t>(k, 1, n);
}

SparseLabelmap sample_sparse(const DenseLabelmap& dense, const InstanceMap& instances,
                             const ClassTaxonomy& taxonomy, double fraction, std::uint64_t seed) {
  std::vector<std::uint32_t> ids = thing_instance_ids(dense, instances, taxonomy);
  const std::size_t k = retained_count(ids.size(), fraction);
  Rng rng(seed);
  rng.shuffle(ids);
  ids.resize(k);
  std::sort(ids.begin(), ids.end());

  SparseLabelmap out = SparseLabelmap::unlabeled(dense.width(), dense.height(), taxonomy);
  const auto d = dense.data();
  const auto inst = instances.data();
  auto o = out.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (taxonomy.is_thing(d[i]) && std::binary_search(ids.begin(), ids.end(), inst[i])) o[i] = d[i];
  }
  return out;
}

std::uint64_t epoch_seed(std::uint64_t base_seed, int epoch, const std::string& source_id) {
  return derive_seed(base_seed, static_cast<std::uint64_t>(epoch), fnv1a64(source_id));
}

EpochIterator::EpochIterator(const std::vector<SceneExample>& examples, const ClassTaxonomy& taxonomy,
                             double fraction, int epoch, std::uint64_t base_seed)
    : examples_(examples), taxonomy_(taxonomy), fraction_(fraction), epoch_(epoch), base_seed_(base_seed) {
  if (examples_.empty()) throw InvalidInput("epoch iterator needs a nonempty dataset");
}

std::optional<ScenePair> EpochIterator::next() {
  const std::size_t i = cursor_.fetch_add(1);
  if (i >= examples_.size()) return std::nullopt;
  const SceneExample& ex = examples_[i];
  ScenePair pair;
  pair.sparse = sample_sparse(ex.dense, ex.instances, taxonomy_, fraction_,
                              epoch_seed(base_seed_, epoch_, ex.source_id));
  pair.dense = ex.dense;
  pair.instances = ex.instances;
  pair.image = ex.image;
  pair.source_id = ex.source_id;
  return pair;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("manifest " + path.string() + ": " + e.what());
  }
  if (!j.is_array()) throw IoError("manifest " + path.string() + " must be a JSON list");
  const std::filesystem::path root = path.parent_path();
  const auto resolve = [&](const std::string& p) {
    const std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : root / fp;
  };
  std::vector<ManifestEntry> out;
  for (const auto& e : j) {
    try {
      ManifestEntry m;
      m.labelmap = resolve(e.at("labelmap").get<std::string>());
      m.instance_map = resolve(e.at("instance_map").get<std::string>());
      if (e.contains("image") && !e["image"].is_null()) m.image = resolve(e["image"].get<std::string>());
      m.source_id = e.value("source_id", m.labelmap.stem().string());
      out.push_back(std::move(m));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("manifest " + path.string() + " entry " + std::to_string(out.size()) + ": " + ex.what());
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  const std::filesystem::path root = path.parent_path().empty() ? "." : path.parent_path();
  const auto rel = [&](const std::filesystem::path& p) {
    std::error_code ec;
    auto r = std::filesystem::relative(p, root, ec);
    return (ec || r.empty()) ? p.string() : r.generic_string();
  };
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json item = {{"labelmap", rel(e.labelmap)},
                           {"instance_map", rel(e.instance_map)},
                           {"source_id", e.source_id}};
    item["image"] = e.image ? nlohmann::json(rel(*e.image)) : nlohmann::json(nullptr);
    j.push_back(std::move(item));
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

SceneExample load_cityscapes_example(const std::filesystem::path& labelmap_path,
                                     const std::filesystem::path& instance_path,
                                     const std::optional<std::filesystem::path>& image_path,
                                     const ClassTaxonomy& taxonomy, const LoadOptions& options,
                                     std::string source_id) {
  if (options.fallback_class && !taxonomy.is_stuff(*options.fallback_class)) {
    throw ConfigError("fallback class " + std::to_string(*options.fallback_class) + " must be a stuff class");
  }
  SceneExample ex;
  ex.source_id = source_id.empty() ? labelmap_path.stem().string() : std::move(source_id);
  ex.dense = load_dense_labelmap(labelmap_path);
  ex.instances = load_instance_map(instance_path);
  if (!ex.dense.same_shape(ex.instances)) {
    throw InvalidInput("dimension mismatch: labelmap " + labelmap_path.string() + " is " +
                       std::to_string(ex.dense.width()) + "x" + std::to_string(ex.dense.height()) +
                       ", instance map " + instance_path.string() + " is " + std::to_string(ex.instances.width()) +
                       "x" + std::to_string(ex.instances.height()));
  }
  auto d = ex.dense.data();
  auto inst = ex.instances.data();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (taxonomy.contains(d[i])) continue;
    if (!options.fallback_class) {
      const int w = ex.dense.width();
      throw InvalidInput(labelmap_path.string() + ": class id " + std::to_string(d[i]) + " at pixel (" +
                         std::to_string(static_cast<int>(i) % w) + "," + std::to_string(static_cast<int>(i) / w) +
                         ") is not in the taxonomy and no fallback class is configured");
    }
    d[i] = *options.fallback_class;
    inst[i] = *options.fallback_class;
  }
  if (image_path) {
    ex.image = load_rgb(*image_path);
    if (ex.image->width() != ex.dense.width() || ex.image->height() != ex.dense.height()) {
      throw InvalidInput("dimension mismatch: image " + image_path->string() + " differs from its labelmap");
    }
  }
  std::vector<Violation> v = validate(ex.instances, ex.dense, taxonomy);
  if (!v.empty()) {
    throw InvalidInput(instance_path.string() + ": " + v.front().to_string() + " (" + std::to_string(v.size()) +
                       " violations)");
  }
  return ex;
}

std::vector<SceneExample> load_dataset(const std::filesystem::path& manifest, const ClassTaxonomy& taxonomy,
                                       const LoadOptions& options) {
  std::vector<SceneExample> out;
  for (const auto& e : read_manifest(manifest)) {
    out.push_back(load_cityscapes_example(e.labelmap, e.instance_map, e.image, taxonomy, options, e.source_id));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

const ThingSize& size_of(const ToyWorldConfig& c, ClassId cls) {
  for (const auto& s : c.sizes) {
    if (s.cls == cls) return s;
  }
  throw ConfigError("toy config has no size for class " + std::to_string(cls));
}

std::string_view placement_name(Placement p) {
  switch (p) {
    case Placement::below:
      return "below";
    case Placement::above:
      return "above";
    case Placement::left_of:
      return "left_of";
    case Placement::right_of:
      return "right_of";
  }
  return "below";
}

Placement parse_placement(const std::string& s) {
  if (s == "below") return Placement::below;
  if (s == "above") return Placement::above;
  if (s == "left_of") return Placement::left_of;
  if (s == "right_of") return Placement::right_of;
  throw ConfigError("unknown placement '" + s + "'");
}

ClassId class_by_name(const ClassTaxonomy& t, const nlohmann::json& j) {
  if (j.is_number_integer()) return static_cast<ClassId>(j.get<int>());
  const auto id = t.find(j.get<std::string>());
  if (!id) throw ConfigError("unknown class '" + j.get<std::string>() + "'");
  return *id;
}

struct Box {
  int x, y, w, h;
};

/// Companion box touching the trigger box on the requested side, centered.
Box companion_box(const Box& t, const ThingSize& s, Placement p) {
  switch (p) {
    case Placement::below:
      return {t.x + (t.w - s.width) / 2, t.y + t.h, s.width, s.height};
    case Placement::above:
      return {t.x + (t.w - s.width) / 2, t.y - s.height, s.width, s.height};
    case Placement::left_of:
      return {t.x - s.width, t.y + (t.h - s.height) / 2, s.width, s.height};
    case Placement::right_of:
      return {t.x + t.w, t.y + (t.h - s.height) / 2, s.width, s.height};
  }
  return t;
}

}  // namespace

void ToyWorldConfig::validate(const ClassTaxonomy& taxonomy) const {
  if (width <= 0 || height <= 0) throw ConfigError("toy world dimensions must be positive");
  if (min_instances < 0 || max_instances < min_instances) throw ConfigError("toy instance range is invalid");
  if (max_attempts < 1) throw ConfigError("max_attempts must be >= 1");
  if (!(placement_top >= 0.0 && placement_top < 1.0)) throw ConfigError("placement_top must lie in [0, 1)");
  if (max_instances > 0 && spawn_classes.empty()) throw ConfigError("toy config needs spawn classes");
  for (ClassId c : spawn_classes) {
    if (!taxonomy.is_thing(c)) throw ConfigError("spawn class " + std::to_string(c) + " is not a thing");
    size_of(*this, c);
  }
  for (const auto& r : rules) {
    if (!taxonomy.is_thing(r.trigger) || !taxonomy.is_thing(r.companion)) {
      throw ConfigError("rule classes must both be things");
    }
    const ThingSize& ts = size_of(*this, r.trigger);
    const ThingSize& cs = size_of(*this, r.companion);
    const bool vertical = r.placement == Placement::below || r.placement == Placement::above;
    if ((vertical && ts.height + cs.height > height) || (!vertical && ts.width + cs.width > width)) {
      throw ConfigError("rule companion cannot stay in-image");
    }
  }
  for (const auto& s : sizes) {
    if (s.width < 1 || s.height < 1 || s.width > width || s.height > height) {
      throw ConfigError("thing size out of range for class " + std::to_string(s.cls));
    }
  }
  if (stuff_layout == StuffLayout::bands) {
    if (bands.empty()) throw ConfigError("band layout needs at least one band");
    for (const auto& b : bands) {
      if (!taxonomy.is_stuff(b.cls)) throw ConfigError("band class " + std::to_string(b.cls) + " is not stuff");
    }
  }
}

ToyWorldConfig ToyWorldConfig::from_json(const nlohmann::json& j, const ClassTaxonomy& taxonomy) {
  ToyWorldConfig c;
  try {
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.min_instances = j.value("min_instances", c.min_instances);
    c.max_instances = j.value("max_instances", c.max_instances);
    c.placement_top = j.value("placement_top", c.placement_top);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
    const std::string layout = j.value("stuff_layout", std::string("bands"));
    if (layout == "bands") {
      c.stuff_layout = StuffLayout::bands;
    } else if (layout == "uniform") {
      c.stuff_layout = StuffLayout::uniform;
    } else {
      throw ConfigError("unknown stuff layout '" + layout + "'");
    }
    for (const auto& b : j.value("bands", nlohmann::json::array())) {
      c.bands.push_back({class_by_name(taxonomy, b.at("class")), b.at("end").get<double>()});
    }
    for (const auto& s : j.value("sizes", nlohmann::json::array())) {
      c.sizes.push_back({class_by_name(taxonomy, s.at("class")), s.at("width").get<int>(), s.at("height").get<int>()});
    }
    for (const auto& s : j.value("spawn_classes", nlohmann::json::array())) {
      c.spawn_classes.push_back(class_by_name(taxonomy, s));
    }
    for (const auto& r : j.value("rules", nlohmann::json::array())) {
      c.rules.push_back({class_by_name(taxonomy, r.at("trigger")), class_by_name(taxonomy, r.at("companion")),
                         parse_placement(r.value("placement", std::string("below")))});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("toy config: ") + e.what());
  }
  c.validate(taxonomy);
  return c;
}

nlohmann::json ToyWorldConfig::to_json(const ClassTaxonomy& taxonomy) const {
  const auto name = [&](ClassId id) { return taxonomy.info(id).name; };
  nlohmann::json j = {{"width", width},
                      {"height", height},
                      {"min_instances", min_instances},
                      {"max_instances", max_instances},
                      {"placement_top", placement_top},
                      {"max_attempts", max_attempts},
                      {"stuff_layout", stuff_layout == StuffLayout::bands ? "bands" : "uniform"}};
  j["bands"] = nlohmann::json::array();
  for (const auto& b : bands) j["bands"].push_back({{"class", name(b.cls)}, {"end", b.end}});
  j["sizes"] = nlohmann::json::array();
  for (const auto& s : sizes) j["sizes"].push_back({{"class", name(s.cls)}, {"width", s.width}, {"height", s.height}});
  j["spawn_classes"] = nlohmann::json::array();
  for (ClassId c : spawn_classes) j["spawn_classes"].push_back(name(c));
  j["rules"] = nlohmann::json::array();
  for (const auto& r : rules) {
    j["rules"].push_back(
        {{"trigger", name(r.trigger)}, {"companion", name(r.companion)}, {"placement", placement_name(r.placement)}});
  }
  return j;
}

ToyScene generate_toy_world(const ToyWorldConfig& config, const ClassTaxonomy& taxonomy, std::uint64_t seed) {
  config.validate(taxonomy);
  const int W = config.width;
  const int H = config.height;
  ToyScene scene{DenseLabelmap(W, H, taxonomy.stuff_ids().front()), InstanceMap(W, H, taxonomy.stuff_ids().front())};
  if (config.stuff_layout == StuffLayout::bands) {
    for (int y = 0; y < H; ++y) {
      ClassId cls = config.bands.back().cls;
      for (const auto& b : config.bands) {
        if (static_cast<double>(y) < b.end * H) {
          cls = b.cls;
          break;
        }
      }
      for (int x = 0; x < W; ++x) {
        scene.dense.at(x, y) = cls;
        scene.instances.at(x, y) = cls;
      }
    }
  }

  Rng rng(seed);
  std::vector<std::uint8_t> occupied(static_cast<std::size_t>(W) * H, 0);
  const int top = static_cast<int>(std::ceil(config.placement_top * H));
  const auto fits = [&](const Box& b) {
    if (b.x < 0 || b.y < top || b.x + b.w > W || b.y + b.h > H) return false;
    for (int y = std::max(0, b.y - 1); y < std::min(H, b.y + b.h + 1); ++y) {
      for (int x = std::max(0, b.x - 1); x < std::min(W, b.x + b.w + 1); ++x) {
        if (occupied[static_cast<std::size_t>(y) * W + x]) return false;
      }
    }
    return true;
  };
  std::map<ClassId, std::uint32_t> next_index;
  const auto paint = [&](const Box& b, ClassId cls) {
    const std::uint32_t id = thing_instance_id(cls, next_index[cls]++);
    for (int y = b.y; y < b.y + b.h; ++y) {
      for (int x = b.x; x < b.x + b.w; ++x) {
        occupied[static_cast<std::size_t>(y) * W + x] = 1;
        scene.dense.at(x, y) = cls;
        scene.instances.at(x, y) = id;
      }
    }
  };

  const int count = config.max_instances > 0 ? rng.uniform_int(config.min_instances, config.max_instances) : 0;
  for (int n = 0; n < count; ++n) {
    const ClassId cls = config.spawn_classes[rng.uniform_index(config.spawn_classes.size())];
    const ThingSize& size = size_of(config, cls);
    std::vector<const PlacementRule*> rules;
    for (const auto& r : config.rules) {
      if (r.trigger == cls) rules.push_back(&r);
    }
    bool placed = false;
    for (int attempt = 0; attempt < config.max_attempts && !placed; ++attempt) {
      const Box box{rng.uniform_int(0, W - size.width), rng.uniform_int(top, H - size.height), size.width,
                    size.height};
      if (!fits(box)) continue;
      std::vector<std::pair<Box, ClassId>> companions;
      bool ok = true;
      for (const PlacementRule* r : rules) {
        const Box cb = companion_box(box, size_of(config, r->companion), r->placement);
        // The companion touches its trigger, so only test it against other objects.
        if (cb.x < 0 || cb.y < 0 || cb.x + cb.w > W || cb.y + cb.h > H) {
          ok = false;
          break;
        }
        for (int y = std::max(0, cb.y - 1); ok && y < std::min(H, cb.y + cb.h + 1); ++y) {
          for (int x = std::max(0, cb.x - 1); x < std::min(W, cb.x + cb.w + 1); ++x) {
            if (occupied[static_cast<std::size_t>(y) * W + x]) {
              ok = false;
              break;
            }
          }
        }
        companions.emplace_back(cb, r->companion);
      }
      // Companions of one trigger must not overlap each other or the trigger.
      for (std::size_t i = 0; ok && i < companions.size(); ++i) {
        for (std::size_t j = i + 1; j < companions.size(); ++j) {
          const Box& a = companions[i].first;
          const Box& b = companions[j].first;
          if (a.x < b.x + b.w && b.x < a.x + a.w && a.y < b.y + b.h && b.y < a.y + a.h) ok = false;
        }
      }
      if (!ok) continue;
      paint(box, cls);
      for (const auto& [cb, ccls] : companions) paint(cb, ccls);
      placed = true;
    }
    if (!placed) {
      throw GenerationError("could not place a " + taxonomy.info(cls).name + " instance (and companions) after " +
                            std::to_string(config.max_attempts) + " attempts");
    }
  }
  return scene;
}

ClassTaxonomy toy_taxonomy() {
  return ClassTaxonomy({
      {7, "road", ClassKind::stuff, {128, 64, 128}},
      {8, "sidewalk", ClassKind::stuff, {244, 35, 232}},
      {11, "building", ClassKind::stuff, {70, 70, 70}},
      {21, "vegetation", ClassKind::stuff, {107, 142, 35}},
      {23, "sky", ClassKind::stuff, {70, 130, 180}},
      {24, "person", ClassKind::thing, {220, 20, 60}},
      {25, "rider", ClassKind::thing, {255, 0, 0}},
      {26, "car", ClassKind::thing, {0, 0, 142}},
      {33, "bicycle", ClassKind::thing, {119, 11, 32}},
  });
}

ToyWorldConfig default_toy_config(const ClassTaxonomy& taxonomy) {
  const auto id = [&](const char* name) {
    const auto v = taxonomy.find(name);
    if (!v) throw ConfigError(std::string("taxonomy lacks class ") + name);
    return *v;
  };
  ToyWorldConfig c;
  c.bands = {{id("sky"), 0.25}, {id("building"), 0.45}, {id("sidewalk"), 0.55}, {id("road"), 1.0}};
  c.sizes = {{id("person"), 3, 7}, {id("rider"), 4, 7}, {id("car"), 10, 6}, {id("bicycle"), 6, 4}};
  c.spawn_classes = {id("person"), id("rider"), id("car")};
  c.rules = {{id("rider"), id("bicycle"), Placement::below}};
  c.min_instances = 2;
  c.max_instances = 5;
  c.placement_top = 0.4;
  return c;
}

RgbImage toy_image(const DenseLabelmap& dense, const InstanceMap& instances, const ClassTaxonomy& taxonomy,
                   std::uint64_t seed) {
  RgbImage img = render_palette(dense, extract_boundaries(instances), taxonomy);
  Rng rng(seed);
  for (auto& byte : img.bytes()) {
    const int v = static_cast<int>(byte) + rng.uniform_int(-8, 8);
    byte = static_cast<std::uint8_t>(std::clamp(v, 0, 255));
  }
  return img;
}

std::filesystem::path write_toy_corpus(const std::filesystem::path& dir, const ToyWorldConfig& config,
                                       const ClassTaxonomy& taxonomy, int count, std::uint64_t seed,
                                       const std::string& prefix) {
  if (count < 1) throw ConfigError("toy corpus needs at least one scene");
  std::filesystem::create_directories(dir);
  {
    std::ofstream t(dir / "taxonomy.json");
    t << taxonomy.to_json().dump(2) << "\n";
    std::ofstream c(dir / "toy_config.json");
    c << config.to_json(taxonomy).dump(2) << "\n";
    if (!t || !c) throw IoError("cannot write toy corpus metadata to " + dir.string());
  }
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < count; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%05d", prefix.c_str(), i);
    const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(i));
    const ToyScene scene = generate_toy_world(config, taxonomy, s);
    ManifestEntry e;
    e.source_id = name;
    e.labelmap = dir / (std::string(name) + "_labelIds.png");
    e.instance_map = dir / (std::string(name) + "_instanceIds.png");
    e.image = dir / (std::string(name) + "_image.png");
    save_labelmap(e.labelmap, scene.dense);
    save_instance_map(e.instance_map, scene.instances);
    save_rgb(*e.image, toy_image(scene.dense, scene.instances, taxonomy, derive_seed(s, 1)));
    entries.push_back(std::move(e));
  }
  const auto manifest = dir / "manifest.json";
  write_manifest(manifest, entries);
  return manifest;
}

nlohmann::json CorpusStats::to_json(const ClassTaxonomy& taxonomy) const {
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [cls, n] : instances_per_class) per[taxonomy.info(cls).name] = n;
  return {{"examples", examples}, {"mean_thing_instances", mean_thing_instances}, {"instances_per_class", per}};
}

CorpusStats corpus_stats(const std::vector<SceneExample>& examples, const ClassTaxonomy& taxonomy) {
  CorpusStats s;
  s.examples = examples.size();
  std::map<ClassId, std::size_t> per;
  for (ClassId c : taxonomy.thing_ids()) per[c] = 0;
  std::size_t total = 0;
  for (const auto& ex : examples) {
    const auto ids = thing_instance_ids(ex.dense, ex.instances, taxonomy);
    total += ids.size();
    for (std::uint32_t id : ids) {
      const auto cls = static_cast<ClassId>(id >= kInstanceDivisor ? id / kInstanceDivisor : id);
      if (per.count(cls)) ++per[cls];
    }
  }
  s.mean_thing_instances = examples.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(examples.size());
  s.instances_per_class.assign(per.begin(), per.end());
  return s;
}

}  // namespace densify
