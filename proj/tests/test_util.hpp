#pragma once

#include <filesystem>
#include <string>

#include "densify/labelmap.hpp"
#include "densify/rng.hpp"

namespace densify::testing {

// road 0, sky 1 (stuff); car 2, person 3 (thing).
inline ClassTaxonomy small_taxonomy() {
  return ClassTaxonomy({{0, "road", ClassKind::stuff, {128, 64, 128}},
                        {1, "sky", ClassKind::stuff, {70, 130, 180}},
                        {2, "car", ClassKind::thing, {0, 0, 142}},
                        {3, "person", ClassKind::thing, {220, 20, 60}}});
}

inline DenseLabelmap random_dense(Rng& rng, const ClassTaxonomy& tax, int w, int h) {
  DenseLabelmap m(w, h);
  for (auto& v : m.data()) v = tax.classes()[rng.uniform_index(tax.num_classes())].id;
  return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("densify_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace densify::testing
