#include <doctest.h>

#include <map>
#include <set>

#include "densify/dataset.hpp"
#include "densify/png_io.hpp"
#include "test_util.hpp"

using namespace densify;
using densify::testing::scratch_dir;
using densify::testing::small_taxonomy;

namespace {

// Row of `n` two-pixel car instances above a road row.
std::pair<DenseLabelmap, InstanceMap> strip(int n) {
  const int w = std::max(1, n) * 2;
  DenseLabelmap d(w, 2, 0);
  InstanceMap inst(w, 2, 0);
  for (int i = 0; i < n; ++i) {
    for (int dx = 0; dx < 2; ++dx) {
      d.at(2 * i + dx, 0) = 2;
      inst.at(2 * i + dx, 0) = thing_instance_id(2, static_cast<std::uint32_t>(i));
    }
  }
  return {d, inst};
}

std::set<std::uint32_t> kept_ids(const SparseLabelmap& s, const InstanceMap& inst, const ClassTaxonomy& tax) {
  std::set<std::uint32_t> out;
  for (int y = 0; y < s.height(); ++y)
    for (int x = 0; x < s.width(); ++x)
      if (s.at(x, y) != tax.unlabeled_id()) out.insert(inst.at(x, y));
  return out;
}

struct Box {
  int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
  void add(int x, int y) {
    x0 = std::min(x0, x);
    y0 = std::min(y0, y);
    x1 = std::max(x1, x);
    y1 = std::max(y1, y);
  }
};

std::map<std::uint32_t, Box> boxes_of(const ToyScene& s, const ClassTaxonomy& tax, ClassId cls) {
  std::map<std::uint32_t, Box> out;
  for (int y = 0; y < s.dense.height(); ++y)
    for (int x = 0; x < s.dense.width(); ++x)
      if (s.dense.at(x, y) == cls) out[s.instances.at(x, y)].add(x, y);
  (void)tax;
  return out;
}

// Every trigger box has a distinct companion box starting on the row below it
// with overlapping columns.
bool rule_holds(const ToyScene& s, const ClassTaxonomy& tax, ClassId trigger, ClassId companion, int* triggers = nullptr,
                int* companions = nullptr) {
  const auto t = boxes_of(s, tax, trigger);
  const auto c = boxes_of(s, tax, companion);
  if (triggers) *triggers = static_cast<int>(t.size());
  if (companions) *companions = static_cast<int>(c.size());
  std::set<std::uint32_t> used;
  for (const auto& [id, tb] : t) {
    bool found = false;
    for (const auto& [cid, cb] : c) {
      if (used.count(cid)) continue;
      if (cb.y0 == tb.y1 + 1 && cb.x0 <= tb.x1 && cb.x1 >= tb.x0) {
        used.insert(cid);
        found = true;
        break;
      }
    }
    if (!found) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("retained count rounding") {
  CHECK(retained_count(0, 0.3) == 0);
  CHECK(retained_count(1, 0.3) == 1);
  CHECK(retained_count(5, 0.3) == 2);  // 1.5 rounds up
  CHECK(retained_count(10, 0.3) == 3);
  CHECK(retained_count(50, 0.3) == 15);
  CHECK(retained_count(7, 1.0) == 7);
  CHECK_THROWS_AS(retained_count(3, 0.0), InvalidInput);
  CHECK_THROWS_AS(retained_count(3, 1.5), InvalidInput);
}

TEST_CASE("ten instances at 0.3 keep exactly three whole instances") {
  const ClassTaxonomy tax = small_taxonomy();
  const auto [d, inst] = strip(10);
  const SparseLabelmap s = sample_sparse(d, inst, tax, 0.3, 17);
  CHECK(kept_ids(s, inst, tax).size() == 3);
  for (int x = 0; x < d.width(); ++x) CHECK(s.at(x, 1) == tax.unlabeled_id());
  CHECK(validate(s, tax).empty());
  CHECK(s == sample_sparse(d, inst, tax, 0.3, 17));
  const auto [d0, i0] = strip(0);
  CHECK(sample_sparse(d0, i0, tax, 0.3, 1) == SparseLabelmap::unlabeled(d0.width(), 2, tax));
  CHECK_THROWS_AS(sample_sparse(d, InstanceMap(3, 3), tax, 0.3, 1), InvalidInput);
}

TEST_CASE("exhaustive retained counts for N in [0, 50]") {
  const ClassTaxonomy tax = small_taxonomy();
  for (int tenths : {1, 3, 5}) {
    for (int n = 0; n <= 50; ++n) {
      const auto [d, inst] = strip(n);
      const std::size_t expected = n == 0 ? 0 : static_cast<std::size_t>(std::max(1, (tenths * n + 5) / 10));
      CHECK(kept_ids(sample_sparse(d, inst, tax, tenths / 10.0, static_cast<std::uint64_t>(n)), inst, tax).size() ==
            expected);
    }
  }
}

TEST_CASE("instance selection frequency with two instances at 0.5") {
  const ClassTaxonomy tax = small_taxonomy();
  const auto [d, inst] = strip(2);
  int first = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto ids = kept_ids(sample_sparse(d, inst, tax, 0.5, seed), inst, tax);
    REQUIRE(ids.size() == 1);
    if (*ids.begin() == thing_instance_id(2, 0)) ++first;
  }
  CHECK(first >= 450);
  CHECK(first <= 550);
}

TEST_CASE("epoch iterator resamples per epoch and replays") {
  const ClassTaxonomy tax = small_taxonomy();
  std::vector<SceneExample> examples;
  for (int i = 0; i < 8; ++i) {
    auto [d, inst] = strip(10);
    examples.push_back({"ex" + std::to_string(i), d, inst, std::nullopt});
  }
  auto drain = [&](int epoch) {
    EpochIterator it(examples, tax, 0.3, epoch, 99);
    std::vector<ScenePair> out;
    while (auto p = it.next()) out.push_back(std::move(*p));
    return out;
  };
  const auto e1 = drain(1);
  const auto e1b = drain(1);
  const auto e2 = drain(2);
  REQUIRE(e1.size() == 8);
  bool any_difference = false;
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(e1[i].sparse == e1b[i].sparse);
    CHECK(e1[i].source_id == examples[i].source_id);
    any_difference = any_difference || !(e1[i].sparse == e2[i].sparse);
  }
  CHECK(any_difference);
  CHECK(epoch_seed(1, 2, "a") != epoch_seed(1, 3, "a"));
  CHECK(epoch_seed(1, 2, "a") != epoch_seed(1, 2, "b"));
  const std::vector<SceneExample> none;
  CHECK_THROWS_AS(EpochIterator(none, tax, 0.3, 1, 1), InvalidInput);
}

TEST_CASE("loading a labelmap/instance pair") {
  const ClassTaxonomy tax = small_taxonomy();
  const auto dir = scratch_dir("load");
  auto [d, inst] = strip(3);
  save_labelmap(dir / "l.png", d);
  save_instance_map(dir / "i.png", inst);
  RgbImage img(d.width(), d.height());
  save_rgb(dir / "c.png", img);
  const SceneExample ex = load_cityscapes_example(dir / "l.png", dir / "i.png", dir / "c.png", tax, {}, "x");
  CHECK(ex.dense == d);
  CHECK(ex.instances == inst);
  CHECK(ex.image.has_value());
  CHECK(validate(ex.dense, tax).empty());
  CHECK(validate(ex.instances, ex.dense, tax).empty());

  save_labelmap(dir / "big.png", DenseLabelmap(512, 256, 0));
  save_instance_map(dir / "small.png", InstanceMap(256, 128, 0));
  try {
    load_cityscapes_example(dir / "big.png", dir / "small.png", std::nullopt, tax);
    FAIL("expected a dimension mismatch");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("dimension mismatch") != std::string::npos);
  }

  DenseLabelmap unknown = d;
  unknown.at(0, 1) = 42;
  save_labelmap(dir / "u.png", unknown);
  CHECK_THROWS_AS(load_cityscapes_example(dir / "u.png", dir / "i.png", std::nullopt, tax), InvalidInput);
  CHECK_THROWS_AS(load_cityscapes_example(dir / "missing.png", dir / "i.png", std::nullopt, tax), IoError);
}

TEST_CASE("fallback remap keeps at most the taxonomy's classes") {
  // 10 things (ids 0..9), 20 stuffs (10..29) and an "other" stuff class.
  std::vector<ClassInfo> classes;
  for (int i = 0; i < 30; ++i) {
    classes.push_back({static_cast<ClassId>(i), "k" + std::to_string(i), i < 10 ? ClassKind::thing : ClassKind::stuff,
                       {0, 0, 0}});
  }
  classes.push_back({200, "other", ClassKind::stuff, {1, 1, 1}});
  const ClassTaxonomy tax(classes);
  const auto dir = scratch_dir("fallback");
  DenseLabelmap raw(30, 10);
  InstanceMap inst(30, 10);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 30; ++x) {
      const int cls = (y * 30 + x) % 150;
      raw.at(x, y) = static_cast<ClassId>(cls);
      inst.at(x, y) = cls < 10 ? thing_instance_id(static_cast<ClassId>(cls), 1) : static_cast<std::uint32_t>(cls);
    }
  }
  save_labelmap(dir / "l.png", raw);
  save_instance_map(dir / "i.png", inst);
  LoadOptions opt;
  opt.fallback_class = 200;
  const SceneExample ex = load_cityscapes_example(dir / "l.png", dir / "i.png", std::nullopt, tax, opt);
  std::set<int> used(ex.dense.data().begin(), ex.dense.data().end());
  CHECK(used.size() <= 31);
  CHECK(used.count(200) == 1);
  CHECK(validate(ex.dense, tax).empty());
  CHECK(validate(ex.instances, ex.dense, tax).empty());
  opt.fallback_class = 3;  // a thing
  CHECK_THROWS_AS(load_cityscapes_example(dir / "l.png", dir / "i.png", std::nullopt, tax, opt), ConfigError);
}

TEST_CASE("manifest round trip resolves relative paths") {
  const auto dir = scratch_dir("manifest");
  std::vector<ManifestEntry> entries{{dir / "a_l.png", dir / "a_i.png", std::nullopt, "a"},
                                     {dir / "b_l.png", dir / "b_i.png", dir / "b_c.png", "b"}};
  write_manifest(dir / "m.json", entries);
  const auto back = read_manifest(dir / "m.json");
  REQUIRE(back.size() == 2);
  CHECK(back[0].labelmap == entries[0].labelmap);
  CHECK_FALSE(back[0].image.has_value());
  CHECK(*back[1].image == *entries[1].image);
  CHECK(back[1].source_id == "b");
  CHECK_THROWS_AS(read_manifest(dir / "none.json"), IoError);
}

TEST_CASE("toy worlds satisfy the planted rule on 100 seeds") {
  const ClassTaxonomy tax = toy_taxonomy();
  const ToyWorldConfig cfg = default_toy_config(tax);
  const ClassId rider = *tax.find("rider");
  const ClassId bike = *tax.find("bicycle");
  int holds = 0, with_riders = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const ToyScene s = generate_toy_world(cfg, tax, seed);
    int riders = 0, bikes = 0;
    if (rule_holds(s, tax, rider, bike, &riders, &bikes)) ++holds;
    if (riders > 0) ++with_riders;
    CHECK(riders == bikes);
    CHECK(validate(s.dense, tax).empty());
    CHECK(validate(s.instances, s.dense, tax).empty());
    CHECK(generate_toy_world(cfg, tax, seed).dense == s.dense);
  }
  CHECK(holds == 100);
  CHECK(with_riders > 20);
}

TEST_CASE("three riders give three bikes; zero instances give pure background") {
  const ClassTaxonomy tax = toy_taxonomy();
  ToyWorldConfig cfg = default_toy_config(tax);
  cfg.spawn_classes = {*tax.find("rider")};
  cfg.min_instances = cfg.max_instances = 3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ToyScene s = generate_toy_world(cfg, tax, seed);
    int riders = 0, bikes = 0;
    CHECK(rule_holds(s, tax, *tax.find("rider"), *tax.find("bicycle"), &riders, &bikes));
    CHECK(riders == 3);
    CHECK(bikes == 3);
  }
  cfg.min_instances = cfg.max_instances = 0;
  const ToyScene empty = generate_toy_world(cfg, tax, 4);
  for (ClassId v : empty.dense.data()) CHECK(tax.is_stuff(v));
}

TEST_CASE("toy config json round trip and impossible placements") {
  const ClassTaxonomy tax = toy_taxonomy();
  const ToyWorldConfig cfg = default_toy_config(tax);
  const ToyWorldConfig back = ToyWorldConfig::from_json(cfg.to_json(tax), tax);
  CHECK(back.to_json(tax) == cfg.to_json(tax));
  CHECK(generate_toy_world(back, tax, 3).dense == generate_toy_world(cfg, tax, 3).dense);

  ToyWorldConfig crowded = cfg;
  crowded.min_instances = crowded.max_instances = 400;
  crowded.max_attempts = 5;
  CHECK_THROWS_AS(generate_toy_world(crowded, tax, 1), GenerationError);
  ToyWorldConfig bad = cfg;
  bad.spawn_classes = {*tax.find("road")};
  CHECK_THROWS_AS(bad.validate(tax), ConfigError);
}

TEST_CASE("toy corpus on disk loads back") {
  const ClassTaxonomy tax = toy_taxonomy();
  const auto dir = scratch_dir("corpus");
  const auto manifest = write_toy_corpus(dir, default_toy_config(tax), tax, 4, 5);
  const ClassTaxonomy stored = ClassTaxonomy::load(dir / "taxonomy.json");
  CHECK(stored == tax);
  const auto examples = load_dataset(manifest, stored);
  REQUIRE(examples.size() == 4);
  CHECK(examples[0].image.has_value());
  const CorpusStats st = corpus_stats(examples, tax);
  CHECK(st.examples == 4);
  CHECK(st.mean_thing_instances > 0.0);
}
