// Acceptance runner: one PASS/FAIL line per criterion, non-zero exit on any failure.
// Reference values are computed here independently of the library code paths.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "densify/dataset.hpp"
#include "densify/labelmap.hpp"
#include "densify/losses.hpp"
#include "densify/metrics.hpp"
#include "densify/models.hpp"
#include "densify/rng.hpp"
#include "densify/training.hpp"

using namespace densify;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

// ---------------------------------------------------------------------------

void check_losses(Outcome& out) {
  const auto t0 = Clock::now();
  Rng rng(11);

  double bce_err = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double p = 0.001 + 0.998 * rng.uniform();
    const double y = rng.uniform();
    const double bce = -y * std::log(p) - (1.0 - y) * std::log(1.0 - p);
    bce_err = std::max(bce_err, std::abs(focal_element(p, y, 0.0) - bce));
  }
  out.require(bce_err <= 1e-9, "gamma=0 equals BCE");
  const double v1 = focal_element(0.9, 0.0, 5.0);
  const double v2 = focal_element(0.5, 1.0, 0.0);
  out.require(std::abs(v1 - 1.35966) <= 1e-5 && std::abs(v1 - std::pow(0.9, 5) * -std::log(0.1)) <= 1e-6,
              "focal(0.9, 0, 5)");
  out.require(std::abs(v2 - 0.693147) <= 1e-6, "focal(0.5, 1, 0)");

  const double h = 1e-5;
  const std::size_t n = 2 * 3 * 3;
  double worst_focal = 0.0;
  double worst_lsgan = 0.0;
  double worst_fm = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(n), y(n), g(n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = 0.02 + 0.96 * rng.uniform();
      y[i] = trial % 2 == 0 ? static_cast<double>(rng.uniform_index(2)) : rng.uniform();
    }
    const double gamma = trial % 3 == 0 ? 0.0 : (trial % 3 == 1 ? 2.0 : 5.0);
    focal_loss<double>(p, y, gamma, g);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> a = p, b = p;
      a[i] += h;
      b[i] -= h;
      const double num = (focal_loss<double>(a, y, gamma) - focal_loss<double>(b, y, gamma)) / (2 * h);
      worst_focal = std::max(worst_focal, rel_err(g[i], num));
    }

    std::vector<std::vector<double>> real(2, std::vector<double>(n)), fake(2, std::vector<double>(n));
    for (int s = 0; s < 2; ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        real[s][i] = 2.0 * rng.uniform() - 0.5;
        fake[s][i] = 2.0 * rng.uniform() - 0.5;
      }
    }
    auto cspans = [](const std::vector<std::vector<double>>& v) {
      std::vector<std::span<const double>> r;
      for (const auto& x : v) r.emplace_back(x);
      return r;
    };
    std::vector<std::vector<double>> gr(2, std::vector<double>(n)), gf(2, std::vector<double>(n)),
        gg(2, std::vector<double>(n));
    std::vector<std::span<double>> sgr{gr[0], gr[1]}, sgf{gf[0], gf[1]}, sgg{gg[0], gg[1]};
    lsgan_discriminator_loss<double>(cspans(real), cspans(fake), sgr, sgf);
    lsgan_generator_loss<double>(cspans(fake), sgg);
    for (int s = 0; s < 2; ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        for (int which = 0; which < 2; ++which) {
          auto a = which == 0 ? real : fake;
          auto b = a;
          a[s][i] += h;
          b[s][i] -= h;
          const double num = which == 0 ? (lsgan_discriminator_loss<double>(cspans(a), cspans(fake)) -
                                           lsgan_discriminator_loss<double>(cspans(b), cspans(fake))) /
                                              (2 * h)
                                        : (lsgan_discriminator_loss<double>(cspans(real), cspans(a)) -
                                           lsgan_discriminator_loss<double>(cspans(real), cspans(b))) /
                                              (2 * h);
          worst_lsgan = std::max(worst_lsgan, rel_err(which == 0 ? gr[s][i] : gf[s][i], num));
        }
        auto a = fake;
        auto b = fake;
        a[s][i] += h;
        b[s][i] -= h;
        const double num =
            (lsgan_generator_loss<double>(cspans(a)) - lsgan_generator_loss<double>(cspans(b))) / (2 * h);
        worst_lsgan = std::max(worst_lsgan, rel_err(gg[s][i], num));
      }
    }

    // Two scales of two layers; differences are kept away from the kink of |.|.
    std::vector<std::vector<double>> fr(4, std::vector<double>(n)), ff(4, std::vector<double>(n)),
        fg(4, std::vector<double>(n));
    for (int l = 0; l < 4; ++l) {
      for (std::size_t i = 0; i < n; ++i) {
        fr[l][i] = rng.normal();
        const double d = (0.01 + rng.uniform()) * (rng.uniform_index(2) ? 1.0 : -1.0);
        ff[l][i] = fr[l][i] + d;
      }
    }
    auto fset = [](const std::vector<std::vector<double>>& v) {
      FeatureSet<const double> r(2);
      for (int l = 0; l < 4; ++l) r[static_cast<std::size_t>(l / 2)].emplace_back(v[static_cast<std::size_t>(l)]);
      return r;
    };
    FeatureSet<double> gset(2);
    for (int l = 0; l < 4; ++l) gset[static_cast<std::size_t>(l / 2)].emplace_back(fg[static_cast<std::size_t>(l)]);
    feature_matching_loss<double>(fset(fr), fset(ff), gset);
    for (int l = 0; l < 4; ++l) {
      for (std::size_t i = 0; i < n; ++i) {
        auto a = ff;
        auto b = ff;
        a[l][i] += h;
        b[l][i] -= h;
        const double num =
            (feature_matching_loss<double>(fset(fr), fset(a)) - feature_matching_loss<double>(fset(fr), fset(b))) /
            (2 * h);
        worst_fm = std::max(worst_fm, rel_err(fg[l][i], num));
      }
    }
  }
  out.require(worst_focal < 1e-3, "focal gradient");
  out.require(worst_lsgan < 1e-3, "lsgan gradient");
  out.require(worst_fm < 1e-3, "feature matching gradient");
  const double secs = seconds_since(t0);
  out.require(secs < 60.0, "runtime < 60 s");
  out.detail << "bce_err=" << bce_err << " focal(0.9,0,5)=" << v1 << " focal(0.5,1,0)=" << v2
             << " max_rel_err focal=" << worst_focal << " lsgan=" << worst_lsgan << " fm=" << worst_fm
             << " time=" << secs << "s";
}

// ---------------------------------------------------------------------------

void check_boundaries(Outcome& out) {
  const auto t0 = Clock::now();
  Rng rng(22);
  int mismatched = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int w = rng.uniform_int(1, 16);
    const int h = rng.uniform_int(1, 16);
    const int k = rng.uniform_int(1, 8);
    std::vector<std::uint32_t> ids(static_cast<std::size_t>(k));
    for (auto& id : ids) id = static_cast<std::uint32_t>(rng.uniform_index(100000));
    InstanceMap inst(w, h);
    // Random blobs: seeded rectangles painted over a random base.
    for (auto& v : inst.data()) v = ids[rng.uniform_index(static_cast<std::uint64_t>(k))];
    for (int r = 0; r < 4; ++r) {
      const int x0 = rng.uniform_int(0, w - 1), y0 = rng.uniform_int(0, h - 1);
      const int x1 = rng.uniform_int(x0, w - 1), y1 = rng.uniform_int(y0, h - 1);
      const std::uint32_t id = ids[rng.uniform_index(static_cast<std::uint64_t>(k))];
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) inst.at(x, y) = id;
    }
    const BoundaryMap got = extract_boundaries(inst);
    const int dx[4] = {1, -1, 0, 0};
    const int dy[4] = {0, 0, 1, -1};
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        int expected = 0;
        for (int d = 0; d < 4; ++d) {
          const int nx = x + dx[d], ny = y + dy[d];
          if (nx >= 0 && ny >= 0 && nx < w && ny < h && inst.at(nx, ny) != inst.at(x, y)) expected = 1;
        }
        if (got.at(x, y) != expected) ++mismatched;
      }
    }
  }
  const double secs = seconds_since(t0);
  out.require(mismatched == 0, "boundary pixels equal brute-force scan");
  out.require(secs < 10.0, "runtime < 10 s");
  out.detail << "maps=100 mismatched_pixels=" << mismatched << " time=" << secs << "s";
}

// ---------------------------------------------------------------------------

FeatureStats random_stats(Rng& rng, int d, int rank) {
  Eigen::MatrixXd a(d, rank);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < rank; ++j) a(i, j) = rng.normal();
  FeatureStats s;
  s.mean = Eigen::VectorXd(d);
  for (int i = 0; i < d; ++i) s.mean(i) = rng.normal();
  s.cov = a * a.transpose() / static_cast<double>(std::max(rank, 1));
  s.n = 100;
  return s;
}

FeatureStats stats_1d(double m, double c) {
  FeatureStats s;
  s.mean = Eigen::VectorXd::Constant(1, m);
  s.cov = Eigen::MatrixXd::Constant(1, 1, c);
  s.n = 2;
  return s;
}

void check_fid(Outcome& out) {
  const auto t0 = Clock::now();
  Rng rng(33);
  double self_max = 0.0;
  double sym_max = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const int d = rng.uniform_int(1, 8);
    const int rank = rng.uniform_int(1, d);
    const FeatureStats a = random_stats(rng, d, rank);
    const FeatureStats b = random_stats(rng, d, rng.uniform_int(1, d));
    self_max = std::max(self_max, std::abs(fid(a, a)));
    sym_max = std::max(sym_max, std::abs(fid(a, b) - fid(b, a)));
  }
  const double c1 = fid(stats_1d(0, 1), stats_1d(1, 1));
  const double c2 = fid(stats_1d(0, 4), stats_1d(0, 1));
  const double secs = seconds_since(t0);
  out.require(self_max <= 1e-6, "FID(X,X) <= 1e-6");
  out.require(std::abs(c1 - 1.0) <= 1e-6, "1-D mean shift case");
  out.require(std::abs(c2 - 1.0) <= 1e-6, "1-D variance case");
  out.require(sym_max <= 1e-6, "symmetry");
  out.require(secs < 30.0, "runtime < 30 s");
  out.detail << "max FID(X,X)=" << self_max << " case_mean=" << c1 << " case_var=" << c2
             << " max asymmetry=" << sym_max << " time=" << secs << "s";
}

// ---------------------------------------------------------------------------

ClassTaxonomy random_taxonomy(Rng& rng, int n_things, int n_stuff) {
  std::vector<int> ids(250);
  for (int i = 0; i < 250; ++i) ids[static_cast<std::size_t>(i)] = i;
  rng.shuffle(ids);
  std::vector<ClassInfo> classes;
  for (int i = 0; i < n_things + n_stuff; ++i) {
    ClassInfo c;
    c.id = static_cast<ClassId>(ids[static_cast<std::size_t>(i)]);
    c.name = "c" + std::to_string(c.id);
    c.kind = i < n_things ? ClassKind::thing : ClassKind::stuff;
    c.color = {static_cast<std::uint8_t>(rng.uniform_index(256)), static_cast<std::uint8_t>(rng.uniform_index(256)),
               static_cast<std::uint8_t>(rng.uniform_index(256))};
    classes.push_back(c);
  }
  rng.shuffle(classes);
  return ClassTaxonomy(classes);
}

void check_cooccurrence(Outcome& out) {
  Rng rng(44);
  std::size_t mismatches = 0;
  std::size_t prob_checked = 0;
  double sim_min = 1.0, sim_max = 0.0;
  std::size_t sims = 0;
  for (int corpus = 0; corpus < 50; ++corpus) {
    const ClassTaxonomy tax = random_taxonomy(rng, rng.uniform_int(2, 5), rng.uniform_int(2, 4));
    const auto& cls = tax.classes();
    auto pick = [&] { return cls[rng.uniform_index(cls.size())].id; };
    auto make_corpus = [&] {
      std::vector<LabelmapPair> pairs;
      const int m = rng.uniform_int(1, 20);
      for (int e = 0; e < m; ++e) {
        const int w = rng.uniform_int(1, 8), h = rng.uniform_int(1, 8);
        SparseLabelmap in = SparseLabelmap::unlabeled(w, h, tax);
        DenseLabelmap o(w, h);
        for (auto& v : o.data()) v = pick();
        for (auto& v : in.data()) {
          if (rng.uniform() < 0.15) v = tax.thing_ids()[rng.uniform_index(tax.num_things())];
        }
        pairs.emplace_back(std::move(in), std::move(o));
      }
      return pairs;
    };
    const auto train = make_corpus();
    const auto gen = make_corpus();
    const CooccurrenceTable t_train = cooccurrence_table(train, tax);
    const CooccurrenceTable t_gen = cooccurrence_table(gen, tax);

    for (const auto* pair_ptr : {&train, &gen}) {
      const auto& pairs = *pair_ptr;
      const CooccurrenceTable& table = pair_ptr == &train ? t_train : t_gen;
      for (const auto& a : cls) {
        for (const auto& b : cls) {
          std::size_t n1 = 0, n12 = 0;
          for (const auto& [in, o] : pairs) {
            const bool in_a = std::find(in.data().begin(), in.data().end(), a.id) != in.data().end();
            const bool in_b = std::find(in.data().begin(), in.data().end(), b.id) != in.data().end();
            const bool out_b = std::find(o.data().begin(), o.data().end(), b.id) != o.data().end();
            if (in_a) {
              ++n1;
              if (out_b && !in_b) ++n12;
            }
          }
          if (table.count(a.id) != n1 || table.count(a.id, b.id) != n12) ++mismatches;
          if (n1 > 0) {
            ++prob_checked;
            if (table.probability(a.id, b.id) != static_cast<double>(n12) / static_cast<double>(n1)) ++mismatches;
          }
        }
      }
    }
    for (const auto& a : cls) {
      for (const auto& b : cls) {
        if (t_train.count(a.id) == 0 || t_gen.count(a.id) == 0) continue;
        const double s = cooccurrence_similarity(t_train, t_gen, a.id, b.id);
        sim_min = std::min(sim_min, s);
        sim_max = std::max(sim_max, s);
        ++sims;
      }
    }
  }
  out.require(mismatches == 0, "counts and probabilities equal the brute-force scan");
  out.require(sims > 0 && sim_min >= 0.0 && sim_max <= 1.0, "sim_oc within [0,1]");
  out.detail << "corpora=50 mismatches=" << mismatches << " probabilities_checked=" << prob_checked
             << " sim_oc range=[" << sim_min << "," << sim_max << "] over " << sims << " pairs";
}

// ---------------------------------------------------------------------------

void check_sampling(Outcome& out) {
  const ClassTaxonomy tax = toy_taxonomy();
  const ClassId car = *tax.find("car");
  const ClassId person = *tax.find("person");
  const ClassId road = *tax.find("road");
  const ClassId sky = *tax.find("sky");
  int wrong_counts = 0, stuff_leaks = 0, split_instances = 0, nondeterministic = 0, cases = 0;
  for (int tenths : {1, 3, 5}) {
    const double f = tenths / 10.0;
    for (int n = 0; n <= 50; ++n) {
      // Row 0: one pixel per instance, alternating classes. Row 1: stuff.
      const int w = std::max(n, 1) * 2;
      DenseLabelmap dense(w, 2, road);
      InstanceMap inst(w, 2, road);
      for (int x = 0; x < w; ++x) {
        dense.at(x, 1) = x % 3 == 0 ? sky : road;
        inst.at(x, 1) = dense.at(x, 1);
      }
      for (int i = 0; i < n; ++i) {
        const ClassId c = i % 2 ? car : person;
        for (int dx = 0; dx < 2; ++dx) {
          dense.at(2 * i + dx, 0) = c;
          inst.at(2 * i + dx, 0) = thing_instance_id(c, static_cast<std::uint32_t>(i));
        }
      }
      const int expected = n == 0 ? 0 : std::max(1, (tenths * n + 5) / 10);
      for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ++cases;
        const SparseLabelmap s = sample_sparse(dense, inst, tax, f, seed);
        if (!(s == sample_sparse(dense, inst, tax, f, seed))) ++nondeterministic;
        std::set<std::uint32_t> kept;
        for (int y = 0; y < 2; ++y) {
          for (int x = 0; x < w; ++x) {
            const ClassId v = s.at(x, y);
            if (tax.is_stuff(dense.at(x, y)) && v != tax.unlabeled_id()) ++stuff_leaks;
            if (v != tax.unlabeled_id()) {
              if (v != dense.at(x, y)) ++split_instances;
              kept.insert(inst.at(x, y));
            }
          }
        }
        for (int i = 0; i < n; ++i) {
          if ((s.at(2 * i, 0) == tax.unlabeled_id()) != (s.at(2 * i + 1, 0) == tax.unlabeled_id())) ++split_instances;
        }
        if (static_cast<int>(kept.size()) != expected) ++wrong_counts;
      }
    }
  }
  out.require(wrong_counts == 0, "retained count");
  out.require(stuff_leaks == 0, "stuff pixels unlabeled");
  out.require(split_instances == 0, "instances kept whole");
  out.require(nondeterministic == 0, "fixed-seed determinism");
  out.detail << "N=0..50 x fractions{0.1,0.3,0.5} x 5 seeds (" << cases << " cases): wrong_counts=" << wrong_counts
             << " stuff_leaks=" << stuff_leaks << " split=" << split_instances
             << " nondeterministic=" << nondeterministic;
}

// ---------------------------------------------------------------------------

void check_pipeline_shapes(Outcome& out) {
  Rng rng(55);
  int shape_errors = 0, range_errors = 0, lost_things = 0, inputs = 0;
  GeneratorSpec spec;
  spec.depth = 2;
  spec.base_width = 4;
  for (int t = 0; t < 20; ++t) {
    const int nt = rng.uniform_int(2, 20), ns = rng.uniform_int(2, 20);
    const ClassTaxonomy tax = random_taxonomy(rng, nt, ns);
    const std::uint64_t seed = rng.next_u64();
    auto make = [&](GeneratorRole role, int in, int out_ch, std::uint64_t s) {
      GeneratorSpec g = spec;
      g.in_channels = in;
      g.out_channels = out_ch;
      return build_generator(g, role, tax, s);
    };
    const int nc = nt + ns;
    const Generator g1 = make(GeneratorRole::stage1, nt + 1, ns, seed);
    const Generator g2 = make(GeneratorRole::stage2, nc, nt + 1, seed + 1);
    const Generator gb = make(GeneratorRole::boundary, nc, 2, seed + 2);
    const int w = 16, h = 12;
    auto check_range = [&](const nn::Tensor& x) {
      for (float v : x.span())
        if (!(v > 0.0f && v < 1.0f)) ++range_errors;
    };
    for (int k = 0; k < 5; ++k) {
      ++inputs;
      SparseLabelmap sparse = SparseLabelmap::unlabeled(w, h, tax);
      const int blobs = rng.uniform_int(0, 4);
      for (int b = 0; b < blobs; ++b) {
        const ClassId c = tax.thing_ids()[rng.uniform_index(tax.num_things())];
        const int x0 = rng.uniform_int(0, w - 1), y0 = rng.uniform_int(0, h - 1);
        for (int y = y0; y < std::min(h, y0 + 4); ++y)
          for (int x = x0; x < std::min(w, x0 + 3); ++x) sparse.at(x, y) = c;
      }
      const nn::Tensor in1 = to_tensor(encode_one_hot(sparse, tax, ChannelSet::things_plus_none));
      const nn::Tensor o1 = g1.infer(in1, 7);
      if (in1.shape().c != nt + 1 || o1.shape() != nn::Shape{1, ns, h, w}) ++shape_errors;
      check_range(o1);
      const TwoStageResult r = two_stage_forward(sparse, g1, g2, tax, 9);
      const nn::Tensor o2 = g2.infer(to_tensor(r.combined_input), 9);
      if (o2.shape() != nn::Shape{1, nt + 1, h, w} || r.combined_input.channels() != nt + ns) ++shape_errors;
      check_range(o2);
      const DenseLabelmap dense = decode_argmax(r.final_map, tax);
      const nn::Tensor ob = gb.infer(to_tensor(encode_one_hot(dense, tax, ChannelSet::all)), 3);
      if (ob.shape() != nn::Shape{1, 2, h, w}) ++shape_errors;
      check_range(ob);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          if (sparse.at(x, y) != tax.unlabeled_id() && dense.at(x, y) != sparse.at(x, y)) ++lost_things;
    }
  }
  out.require(shape_errors == 0, "declared channel counts");
  out.require(range_errors == 0, "outputs in (0,1)");
  out.require(lost_things == 0, "input thing pixels preserved");
  out.detail << "taxonomies=20 inputs=" << inputs << " shape_errors=" << shape_errors
             << " out_of_range=" << range_errors << " changed_thing_pixels=" << lost_things;
}

// ---------------------------------------------------------------------------

struct ToyOptions {
  int train_scenes = 200;
  int heldout_scenes = 100;
  int epochs = 30;
  int decay_start = 20;
  int base_width = 12;
  int disc_width = 8;
  double dropout = 0.0;
  double time_budget = 1800.0;
};

void check_toy(Outcome& out, const std::filesystem::path& workdir, const ToyOptions& opt) {
  const ClassTaxonomy tax = toy_taxonomy();
  const ToyWorldConfig world = default_toy_config(tax);
  const ClassId rider = *tax.find("rider");
  const ClassId bicycle = *tax.find("bicycle");

  std::vector<SceneExample> train;
  for (int i = 0; i < opt.train_scenes; ++i) {
    ToyScene s = generate_toy_world(world, tax, derive_seed(1001, i));
    train.push_back({"train_" + std::to_string(i), std::move(s.dense), std::move(s.instances), std::nullopt});
  }

  TrainConfig cfg;
  cfg.epochs = opt.epochs;
  cfg.decay_start = opt.decay_start;
  cfg.batch_size = 8;
  cfg.seed = 7;
  cfg.generator.depth = 4;
  cfg.generator.base_width = opt.base_width;
  cfg.generator.dropout = opt.dropout;
  cfg.generator.dropout_levels = 2;
  cfg.discriminator.num_scales = 2;
  cfg.discriminator.layers_per_scale = 3;
  cfg.discriminator.base_width = opt.disc_width;

  const auto t0 = Clock::now();
  const std::filesystem::path dir = workdir / "toy";
  std::filesystem::create_directories(dir);
  const TrainResult r1 = train_stage(GeneratorRole::stage1, train, tax, cfg, dir);
  const double t_stage1 = seconds_since(t0);
  const TrainResult r2 = train_stage(GeneratorRole::stage2, train, tax, cfg, dir);
  const double t_train = seconds_since(t0);

  const double focal_first = r1.records.front().generator.focal;
  const double focal_last = r1.records.back().generator.focal;
  const double drop = 1.0 - focal_last / focal_first;

  const Generator g1 = load_generator(r1.checkpoint, tax, GeneratorRole::stage1);
  const Generator g2 = load_generator(r2.checkpoint, tax, GeneratorRole::stage2);
  std::vector<LabelmapPair> gt_pairs, gen_pairs;
  std::size_t invalid = 0, pixels = 0;
  for (int i = 0; i < opt.heldout_scenes; ++i) {
    const ToyScene s = generate_toy_world(world, tax, derive_seed(2002, i));
    const SparseLabelmap sparse = sample_sparse(s.dense, s.instances, tax, 0.3, derive_seed(3003, i));
    const DenseLabelmap gen =
        decode_argmax(two_stage_forward(sparse, g1, g2, tax, derive_seed(4004, i)).final_map, tax);
    for (ClassId v : gen.data()) {
      ++pixels;
      if (!tax.contains(v)) ++invalid;
    }
    gt_pairs.emplace_back(sparse, s.dense);
    gen_pairs.emplace_back(sparse, gen);
  }
  const CooccurrenceTable t_gt = cooccurrence_table(gt_pairs, tax);
  const CooccurrenceTable t_gen = cooccurrence_table(gen_pairs, tax);
  double sim = -1.0;
  if (t_gt.count(rider) > 0) sim = cooccurrence_similarity(t_gt, t_gen, rider, bicycle);

  out.require(opt.train_scenes >= 200 && opt.epochs <= 100, "corpus >= 200 scenes and <= 100 epochs");
  out.require(drop >= 0.5, "(a) stage-1 focal drop >= 50%");
  out.require(sim >= 0.8, "(b) sim_oc(bicycle|rider) >= 0.8");
  out.require(invalid == 0, "(c) valid class ids");
  out.require(t_train <= opt.time_budget, "training wall time within budget");
  out.detail << "scenes=" << opt.train_scenes << " epochs=" << opt.epochs << " stage1 focal " << focal_first << " -> "
             << focal_last << " (drop " << 100.0 * drop << "%)";
  if (t_gt.count(rider) > 0) {
    out.detail << " P_gt(bicycle|rider)=" << t_gt.probability(rider, bicycle)
               << " P_gen=" << t_gen.probability(rider, bicycle);
  }
  out.detail << " sim_oc=" << sim << " invalid_pixels=" << invalid << "/" << pixels << " train_time=" << t_train
             << "s (stage1 " << t_stage1 << "s)";
}

// ---------------------------------------------------------------------------

void check_segmentation(Outcome& out) {
  const ClassTaxonomy tax({{0, "a", ClassKind::stuff, {0, 0, 0}}, {1, "b", ClassKind::thing, {1, 1, 1}}});
  Grid<ClassId> gt(4, 2), pred(4, 2, 0);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) gt.at(x, y) = x < 2 ? 0 : 1;
  ConfusionAccumulator acc(tax);
  acc.add(pred, gt);
  const SegmentationScores s = segmentation_scores(acc);
  out.require(s.miou == 0.25, "mIoU 0.25");
  out.require(s.pixel_accuracy == 0.5, "pixel accuracy 0.5");
  out.require(s.mean_accuracy == 0.5, "mean accuracy 0.5");
  out.detail << "mIoU=" << s.miou << " pixel_acc=" << s.pixel_accuracy << " mean_acc=" << s.mean_accuracy;
}

void check_schedule(Outcome& out) {
  TrainConfig cfg;
  cfg.epochs = 200;
  const double a = learning_rate(cfg, 100), b = learning_rate(cfg, 150), c = learning_rate(cfg, 200);
  out.require(a == 0.001, "lr(100)");
  out.require(b == 0.0005, "lr(150)");
  out.require(c == 0.0, "lr(200)");
  out.detail << "lr(100)=" << a << " lr(150)=" << b << " lr(200)=" << c
             << " (built without any secondary component)";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string workdir = "acceptance_work";
  std::vector<std::string> only;
  ToyOptions toy;
  app.add_option("--workdir", workdir, "scratch directory");
  app.add_option("--only", only, "run only the named checks");
  app.add_option("--toy-scenes", toy.train_scenes);
  app.add_option("--toy-epochs", toy.epochs);
  app.add_option("--toy-decay-start", toy.decay_start);
  app.add_option("--toy-width", toy.base_width);
  app.add_option("--toy-disc-width", toy.disc_width);
  app.add_option("--toy-dropout", toy.dropout);
  CLI11_PARSE(app, argc, argv);
  std::filesystem::create_directories(workdir);

  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> checks = {
      {"loss-correctness", check_losses},
      {"boundary-oracle", check_boundaries},
      {"fid-suite", check_fid},
      {"cooccurrence-oracle", check_cooccurrence},
      {"sampling-contract", check_sampling},
      {"pipeline-shape", check_pipeline_shapes},
      {"toy-end-to-end", [&](Outcome& o) { check_toy(o, workdir, toy); }},
      {"segmentation-harness", check_segmentation},
      {"lr-schedule", check_schedule},
  };
  int failures = 0;
  for (const auto& [name, fn] : checks) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      fn(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail.str() << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
