#include <doctest.h>

#include <cmath>
#include <limits>
#include <map>

#include "densify/labelmap.hpp"
#include "densify/rng.hpp"
#include "test_util.hpp"

using namespace densify;
using densify::testing::random_dense;
using densify::testing::small_taxonomy;

TEST_CASE("taxonomy rejects malformed class lists") {
  CHECK_THROWS_AS(ClassTaxonomy({{0, "a", ClassKind::stuff, {}}, {0, "b", ClassKind::thing, {}}}), ConfigError);
  CHECK_THROWS_AS(ClassTaxonomy({{0, "a", ClassKind::stuff, {}}, {5, "b", ClassKind::thing, {}}}, 5), ConfigError);
  CHECK_THROWS_AS(ClassTaxonomy({{0, "a", ClassKind::stuff, {}}, {1, "b", ClassKind::stuff, {}}}), ConfigError);
  CHECK_THROWS_AS(ClassTaxonomy({{0, "a", ClassKind::thing, {}}}), ConfigError);
}

TEST_CASE("taxonomy json round trip preserves the fingerprint") {
  const ClassTaxonomy t = small_taxonomy();
  const ClassTaxonomy u = ClassTaxonomy::from_json(t.to_json());
  CHECK(t == u);
  CHECK(u.num_stuff() == 2);
  CHECK(u.num_things() == 2);
  CHECK(u.is_thing(2));
  CHECK(u.is_stuff(1));
  CHECK_FALSE(u.contains(9));
  CHECK(*u.find("person") == 3);
  const ClassTaxonomy other({{0, "road", ClassKind::stuff, {}}, {2, "car", ClassKind::thing, {}}});
  CHECK(t.fingerprint() != other.fingerprint());
}

TEST_CASE("one-hot of unlabeled-only sparse map activates none") {
  const ClassTaxonomy tax = small_taxonomy();
  const SoftLabelmap s = encode_one_hot(SparseLabelmap::unlabeled(1, 1, tax), tax, ChannelSet::things_plus_none);
  REQUIRE(s.channels() == 3);
  CHECK(s.at(0, 0, 0) == 0.0f);
  CHECK(s.at(1, 0, 0) == 0.0f);
  CHECK(s.at(2, 0, 0) == 1.0f);
  CHECK(s.channel_semantics().back() == kNoneChannel);
}

TEST_CASE("one-hot of [car, unlabeled]") {
  const ClassTaxonomy tax = small_taxonomy();
  SparseLabelmap m = SparseLabelmap::unlabeled(2, 1, tax);
  m.at(0, 0) = 2;
  const SoftLabelmap s = encode_one_hot(m, tax, ChannelSet::things_plus_none);
  CHECK(s.at(0, 0, 0) == 1.0f);
  CHECK(s.at(1, 0, 0) == 0.0f);
  CHECK(s.at(2, 0, 0) == 0.0f);
  CHECK(s.at(0, 1, 0) == 0.0f);
  CHECK(s.at(1, 1, 0) == 0.0f);
  CHECK(s.at(2, 1, 0) == 1.0f);
}

TEST_CASE("one-hot of an all-road dense map over all channels") {
  const ClassTaxonomy tax = small_taxonomy();
  const SoftLabelmap s = encode_one_hot(DenseLabelmap(2, 2, 0), tax, ChannelSet::all);
  REQUIRE(s.channels() == 4);
  for (int c = 0; c < 4; ++c)
    for (float v : s.plane(c)) CHECK(v == (c == 0 ? 1.0f : 0.0f));
}

TEST_CASE("one-hot channel counts and unknown ids") {
  const ClassTaxonomy tax = small_taxonomy();
  const DenseLabelmap d(3, 2, 1);
  CHECK(encode_one_hot(d, tax, ChannelSet::stuffs).channels() == 2);
  CHECK(encode_one_hot(d, tax, ChannelSet::all).channels() == 4);
  DenseLabelmap bad(3, 2, 1);
  bad.at(2, 1) = 77;
  try {
    encode_one_hot(bad, tax, ChannelSet::all);
    FAIL("expected an error");
  } catch (const InvalidInput& e) {
    CHECK(std::string(e.what()).find("(2, 1)") != std::string::npos);
  }
  // A thing pixel has no stuff channel.
  DenseLabelmap with_car(1, 1, 2);
  CHECK_THROWS_AS(encode_one_hot(with_car, tax, ChannelSet::stuffs), InvalidInput);
}

TEST_CASE("sparse one-hot over stuffs or all leaves unlabeled columns empty") {
  const ClassTaxonomy tax = small_taxonomy();
  SparseLabelmap m = SparseLabelmap::unlabeled(2, 1, tax);
  m.at(1, 0) = 3;
  const SoftLabelmap s = encode_one_hot(m, tax, ChannelSet::all);
  for (int c = 0; c < 4; ++c) CHECK(s.at(c, 0, 0) == 0.0f);
  CHECK(s.at(tax.index_of(3), 1, 0) == 1.0f);
}

TEST_CASE("argmax decoding and tie rule") {
  const ClassTaxonomy tax = small_taxonomy();
  SoftLabelmap s(2, 1, {0, 1});
  s.at(0, 0, 0) = 0.1f;
  s.at(1, 0, 0) = 0.9f;
  s.at(0, 1, 0) = 0.5f;
  s.at(1, 1, 0) = 0.5f;
  const DenseLabelmap d = decode_argmax(s, tax);
  CHECK(d.at(0, 0) == 1);
  CHECK(d.at(1, 0) == 0);

  SoftLabelmap none(1, 1, {2, 3, kNoneChannel});
  none.at(2, 0, 0) = 0.8f;
  CHECK(decode_argmax(none, tax).at(0, 0) == tax.unlabeled_id());

  s.at(1, 0, 0) = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(decode_argmax(s, tax), InvalidInput);
}

TEST_CASE("encode then decode is the identity on 100 random maps") {
  const ClassTaxonomy tax = small_taxonomy();
  Rng rng(5);
  for (int i = 0; i < 100; ++i) {
    const DenseLabelmap m = random_dense(rng, tax, rng.uniform_int(1, 12), rng.uniform_int(1, 12));
    CHECK(decode_argmax(encode_one_hot(m, tax, ChannelSet::all), tax) == m);
  }
}

TEST_CASE("overlay identity, precedence and idempotence") {
  const ClassTaxonomy tax = small_taxonomy();
  const SoftLabelmap base = encode_one_hot(DenseLabelmap(3, 2, 0), tax, ChannelSet::stuffs);

  const SoftLabelmap same = overlay(base, SparseLabelmap::unlabeled(3, 2, tax), tax);
  REQUIRE(same.channels() == 4);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 3; ++x) {
      CHECK(same.at(tax.index_of(0), x, y) == 1.0f);
      CHECK(same.at(tax.index_of(1), x, y) == 0.0f);
      CHECK(same.at(tax.index_of(2), x, y) == 0.0f);
      CHECK(same.at(tax.index_of(3), x, y) == 0.0f);
    }
  }

  SparseLabelmap top = SparseLabelmap::unlabeled(3, 2, tax);
  top.at(1, 1) = 2;
  const SoftLabelmap o = overlay(base, top, tax);
  CHECK(o.at(tax.index_of(2), 1, 1) == 1.0f);
  CHECK(o.at(tax.index_of(0), 1, 1) == 0.0f);
  CHECK(o.at(tax.index_of(0), 0, 0) == 1.0f);
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 3; ++x) {
      float sum = 0.0f;
      for (int c = 0; c < 4; ++c) sum += o.at(c, x, y);
      CHECK(sum <= 1.0f);
    }
  }
  CHECK(overlay(o, top, tax) == o);
  CHECK_THROWS_AS(overlay(base, SparseLabelmap::unlabeled(2, 2, tax), tax), InvalidInput);
}

TEST_CASE("compose keeps stuffs unless a thing channel wins") {
  const ClassTaxonomy tax = small_taxonomy();
  SoftLabelmap stuffs(2, 1, channel_semantics(tax, ChannelSet::stuffs));
  stuffs.at(0, 0, 0) = 0.7f;
  stuffs.at(1, 0, 0) = 0.2f;
  stuffs.at(0, 1, 0) = 0.3f;
  stuffs.at(1, 1, 0) = 0.6f;
  SoftLabelmap things(2, 1, channel_semantics(tax, ChannelSet::things_plus_none));
  things.at(0, 0, 0) = 0.9f;  // car wins at x=0
  things.at(2, 0, 0) = 0.1f;
  things.at(2, 1, 0) = 0.8f;  // none wins at x=1
  const SoftLabelmap c = compose_generated(stuffs, things, tax);
  const DenseLabelmap d = decode_argmax(c, tax);
  CHECK(d.at(0, 0) == 2);
  CHECK(d.at(1, 0) == 1);
  CHECK(c.at(tax.index_of(0), 0, 0) == 0.0f);
  CHECK(c.at(tax.index_of(1), 1, 0) == doctest::Approx(0.6f));
}

TEST_CASE("boundaries of simple maps") {
  CHECK(extract_boundaries(InstanceMap(5, 4, 7)) == BoundaryMap(5, 4, 0));

  InstanceMap two(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) two.at(x, y) = x < 2 ? 26001 : 26002;
  const BoundaryMap b = extract_boundaries(two);
  for (int y = 0; y < 4; ++y) {
    CHECK(b.at(0, y) == 0);
    CHECK(b.at(1, y) == 1);
    CHECK(b.at(2, y) == 1);
    CHECK(b.at(3, y) == 0);
  }

  InstanceMap center(3, 3, 1);
  center.at(1, 1) = 2;
  const BoundaryMap c = extract_boundaries(center);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 3; ++x) {
      const bool expected = (x == 1) || (y == 1);
      CHECK(c.at(x, y) == (expected ? 1 : 0));
    }
  }
}

TEST_CASE("boundaries are invariant under relabeling of instance ids") {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    InstanceMap m(rng.uniform_int(1, 16), rng.uniform_int(1, 16));
    for (auto& v : m.data()) v = static_cast<std::uint32_t>(rng.uniform_index(5));
    std::map<std::uint32_t, std::uint32_t> perm;
    std::vector<std::uint32_t> targets{11000, 33001, 7, 26002, 24005};
    rng.shuffle(targets);
    for (std::uint32_t i = 0; i < 5; ++i) perm[i] = targets[i];
    InstanceMap r = m;
    for (auto& v : r.data()) v = perm[v];
    CHECK(extract_boundaries(m) == extract_boundaries(r));
  }
}

TEST_CASE("things_of and stuff_fill") {
  const ClassTaxonomy tax = small_taxonomy();
  DenseLabelmap d(3, 1, 0);
  d.at(1, 0) = 2;
  d.at(2, 0) = 1;
  const SparseLabelmap s = things_of(d, tax);
  CHECK(s.at(0, 0) == tax.unlabeled_id());
  CHECK(s.at(1, 0) == 2);
  CHECK(s.at(2, 0) == tax.unlabeled_id());
  const DenseLabelmap f = stuff_fill(d, tax);
  CHECK(f.at(0, 0) == 0);
  CHECK(f.at(1, 0) == 0);  // tie between road and sky goes to scan order
  CHECK(f.at(2, 0) == 1);
  CHECK(stuff_fill(DenseLabelmap(2, 2, 3), tax) == DenseLabelmap(2, 2, tax.stuff_ids().front()));
}

TEST_CASE("validation reports") {
  const ClassTaxonomy tax = small_taxonomy();
  CHECK(validate(DenseLabelmap(2, 2, 0), tax).empty());
  SparseLabelmap s = SparseLabelmap::unlabeled(2, 2, tax);
  s.at(1, 0) = 0;
  const auto v = validate(s, tax);
  REQUIRE(v.size() == 1);
  CHECK(v[0].x == 1);
  CHECK(v[0].y == 0);
  SoftLabelmap soft(1, 1, {0});
  soft.at(0, 0, 0) = 1.2f;
  CHECK(validate(soft, tax).size() == 1);
  DenseLabelmap dense(2, 1, 2);
  InstanceMap inst(2, 1, 2001);
  CHECK(validate(inst, dense, tax).empty());
  inst.at(1, 0) = 3001;
  CHECK(validate(inst, dense, tax).size() == 1);
  BoundaryMap b(2, 1, 0);
  b.at(0, 0) = 2;
  CHECK(validate(b).size() == 1);
}
