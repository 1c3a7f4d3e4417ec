#include "densify/labelmap.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

#include "densify/rng.hpp"

namespace densify {
namespace {

std::string pixel_text(int x, int y) {
  return "(" + std::to_string(x) + ", " + std::to_string(y) + ")";
}

std::string_view kind_name(ClassKind kind) { return kind == ClassKind::thing ? "thing" : "stuff"; }

}  // namespace

// ---------------------------------------------------------------------------
// ClassTaxonomy

ClassTaxonomy::ClassTaxonomy(std::vector<ClassInfo> classes, ClassId unlabeled_id)
    : classes_(std::move(classes)), unlabeled_id_(unlabeled_id) {
  index_.fill(-1);
  for (std::size_t i = 0; i < classes_.size(); ++i) {
    const ClassInfo& c = classes_[i];
    if (c.id == unlabeled_id_) {
      throw ConfigError("class '" + c.name + "' uses the unlabeled sentinel id " +
                        std::to_string(unlabeled_id_));
    }
    if (index_[c.id] >= 0) throw ConfigError("duplicate class id " + std::to_string(c.id));
    index_[c.id] = static_cast<int>(i);
    (c.kind == ClassKind::thing ? thing_ids_ : stuff_ids_).push_back(c.id);
  }
  if (stuff_ids_.empty()) throw ConfigError("taxonomy needs at least one stuff class");
  if (thing_ids_.empty()) throw ConfigError("taxonomy needs at least one thing class");
}

ClassTaxonomy ClassTaxonomy::from_json(const nlohmann::json& j) {
  try {
    std::vector<ClassInfo> classes;
    for (const auto& entry : j.at("classes")) {
      ClassInfo info;
      const int id = entry.at("id").get<int>();
      if (id < 0 || id > 255) throw ConfigError("class id out of 8-bit range: " + std::to_string(id));
      info.id = static_cast<ClassId>(id);
      info.name = entry.at("name").get<std::string>();
      const auto kind = entry.at("kind").get<std::string>();
      if (kind == "stuff") {
        info.kind = ClassKind::stuff;
      } else if (kind == "thing") {
        info.kind = ClassKind::thing;
      } else {
        throw ConfigError("class '" + info.name + "' has unknown kind '" + kind + "'");
      }
      if (entry.contains("color")) {
        const auto& rgb = entry.at("color");
        if (!rgb.is_array() || rgb.size() != 3) throw ConfigError("color must be [r,g,b]");
        for (int k = 0; k < 3; ++k) info.color[k] = static_cast<std::uint8_t>(rgb[k].get<int>());
      }
      classes.push_back(std::move(info));
    }
    const int unlabeled = j.value("unlabeled_id", 255);
    if (unlabeled < 0 || unlabeled > 255) throw ConfigError("unlabeled_id out of 8-bit range");
    return ClassTaxonomy(std::move(classes), static_cast<ClassId>(unlabeled));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed taxonomy JSON: ") + e.what());
  }
}

ClassTaxonomy ClassTaxonomy::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open taxonomy file " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("taxonomy " + path.string() + ": " + e.what());
  }
}

nlohmann::json ClassTaxonomy::to_json() const {
  nlohmann::json classes = nlohmann::json::array();
  for (const ClassInfo& c : classes_) {
    classes.push_back({{"id", c.id},
                       {"name", c.name},
                       {"kind", kind_name(c.kind)},
                       {"color", {c.color[0], c.color[1], c.color[2]}}});
  }
  return {{"classes", classes}, {"unlabeled_id", unlabeled_id_}};
}

bool ClassTaxonomy::is_thing(int id) const {
  const int i = lookup(id);
  return i >= 0 && classes_[static_cast<std::size_t>(i)].kind == ClassKind::thing;
}

bool ClassTaxonomy::is_stuff(int id) const {
  const int i = lookup(id);
  return i >= 0 && classes_[static_cast<std::size_t>(i)].kind == ClassKind::stuff;
}

const ClassInfo& ClassTaxonomy::info(ClassId id) const {
  const int i = lookup(id);
  if (i < 0) throw InvalidInput("unknown class id " + std::to_string(id));
  return classes_[static_cast<std::size_t>(i)];
}

std::optional<ClassId> ClassTaxonomy::find(std::string_view name) const {
  for (const ClassInfo& c : classes_) {
    if (c.name == name) return c.id;
  }
  return std::nullopt;
}

std::uint64_t ClassTaxonomy::fingerprint() const { return fnv1a64(to_json().dump()); }

// ---------------------------------------------------------------------------
// RgbImage / SoftLabelmap

RgbImage::RgbImage(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw InvalidInput("image dimensions must be positive");
  data_.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill[0];
    data_[i + 1] = fill[1];
    data_[i + 2] = fill[2];
  }
}

Rgb RgbImage::at(int x, int y) const {
  const std::size_t o = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                         static_cast<std::size_t>(x)) * 3;
  return {data_[o], data_[o + 1], data_[o + 2]};
}

void RgbImage::set(int x, int y, Rgb value) {
  const std::size_t o = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                         static_cast<std::size_t>(x)) * 3;
  data_[o] = value[0];
  data_[o + 1] = value[1];
  data_[o + 2] = value[2];
}

SoftLabelmap::SoftLabelmap(int width, int height, std::vector<int> channel_semantics, float fill)
    : width_(width), height_(height), semantics_(std::move(channel_semantics)) {
  if (width <= 0 || height <= 0) throw InvalidInput("soft labelmap dimensions must be positive");
  if (semantics_.empty()) throw InvalidInput("soft labelmap needs at least one channel");
  data_.assign(semantics_.size() * pixels(), fill);
}

int SoftLabelmap::channel_of(int class_or_none) const {
  for (std::size_t c = 0; c < semantics_.size(); ++c) {
    if (semantics_[c] == class_or_none) return static_cast<int>(c);
  }
  return -1;
}

// ---------------------------------------------------------------------------
// Encoding / decoding

std::vector<int> channel_semantics(const ClassTaxonomy& taxonomy, ChannelSet set) {
  std::vector<int> out;
  switch (set) {
    case ChannelSet::things_plus_none:
      out.assign(taxonomy.thing_ids().begin(), taxonomy.thing_ids().end());
      out.push_back(kNoneChannel);
      break;
    case ChannelSet::stuffs:
      out.assign(taxonomy.stuff_ids().begin(), taxonomy.stuff_ids().end());
      break;
    case ChannelSet::all:
      for (const ClassInfo& c : taxonomy.classes()) out.push_back(c.id);
      break;
  }
  return out;
}

namespace {

// class id -> channel for the given semantics, -1 when absent.
std::array<int, 256> channel_lookup(const std::vector<int>& semantics) {
  std::array<int, 256> lut;
  lut.fill(-1);
  for (std::size_t c = 0; c < semantics.size(); ++c) {
    if (semantics[c] >= 0) lut[static_cast<std::size_t>(semantics[c])] = static_cast<int>(c);
  }
  return lut;
}

}  // namespace

SoftLabelmap encode_one_hot(const DenseLabelmap& map, const ClassTaxonomy& taxonomy,
                            ChannelSet set) {
  if (set == ChannelSet::things_plus_none) {
    throw InvalidInput("things_plus_none encoding applies to sparse labelmaps only");
  }
  SoftLabelmap out(map.width(), map.height(), channel_semantics(taxonomy, set));
  const auto lut = channel_lookup(out.channel_semantics());
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const ClassId cls = map.at(x, y);
      const int ch = lut[cls];
      if (ch < 0) {
        throw InvalidInput("pixel " + pixel_text(x, y) + " holds class id " + std::to_string(cls) +
                           (taxonomy.contains(cls) ? " outside the requested channel set"
                                                   : " unknown to the taxonomy"));
      }
      out.at(ch, x, y) = 1.0f;
    }
  }
  return out;
}

SoftLabelmap encode_one_hot(const SparseLabelmap& map, const ClassTaxonomy& taxonomy,
                            ChannelSet set) {
  SoftLabelmap out(map.width(), map.height(), channel_semantics(taxonomy, set));
  const auto lut = channel_lookup(out.channel_semantics());
  const int none = out.channel_of(kNoneChannel);
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const ClassId cls = map.at(x, y);
      if (cls == taxonomy.unlabeled_id()) {
        if (none >= 0) out.at(none, x, y) = 1.0f;
        continue;
      }
      const int ch = lut[cls];
      if (ch < 0) {
        throw InvalidInput("pixel " + pixel_text(x, y) + " holds class id " + std::to_string(cls) +
                           (taxonomy.contains(cls) ? " outside the requested channel set"
                                                   : " unknown to the taxonomy"));
      }
      out.at(ch, x, y) = 1.0f;
    }
  }
  return out;
}

DenseLabelmap decode_argmax(const SoftLabelmap& soft, const ClassTaxonomy& taxonomy) {
  if (soft.channels() < 1) throw InvalidInput("soft labelmap has no channels");
  DenseLabelmap out(soft.width(), soft.height());
  const auto& sem = soft.channel_semantics();
  for (int y = 0; y < soft.height(); ++y) {
    for (int x = 0; x < soft.width(); ++x) {
      int best = 0;
      float best_value = soft.at(0, x, y);
      if (std::isnan(best_value)) throw InvalidInput("NaN at pixel " + pixel_text(x, y));
      for (int c = 1; c < soft.channels(); ++c) {
        const float v = soft.at(c, x, y);
        if (std::isnan(v)) throw InvalidInput("NaN at pixel " + pixel_text(x, y));
        if (v > best_value) {
          best_value = v;
          best = c;
        }
      }
      const int cls = sem[static_cast<std::size_t>(best)];
      out.at(x, y) = cls == kNoneChannel ? taxonomy.unlabeled_id() : static_cast<ClassId>(cls);
    }
  }
  return out;
}

SoftLabelmap overlay(const SoftLabelmap& base, const SparseLabelmap& top,
                     const ClassTaxonomy& taxonomy) {
  if (base.width() != top.width() || base.height() != top.height()) {
    throw InvalidInput("overlay dimension mismatch: base " + std::to_string(base.width()) + "x" +
                       std::to_string(base.height()) + ", top " + std::to_string(top.width()) +
                       "x" + std::to_string(top.height()));
  }
  SoftLabelmap out(base.width(), base.height(), channel_semantics(taxonomy, ChannelSet::all));
  const auto lut = channel_lookup(out.channel_semantics());
  for (int c = 0; c < base.channels(); ++c) {
    const int sem = base.channel_semantics()[static_cast<std::size_t>(c)];
    if (sem == kNoneChannel) continue;
    const int dst = sem >= 0 && sem < 256 ? lut[static_cast<std::size_t>(sem)] : -1;
    if (dst < 0) throw InvalidInput("overlay base channel class " + std::to_string(sem) + " unknown");
    auto src = base.plane(c);
    auto d = out.plane(dst);
    std::copy(src.begin(), src.end(), d.begin());
  }
  for (int y = 0; y < top.height(); ++y) {
    for (int x = 0; x < top.width(); ++x) {
      const ClassId cls = top.at(x, y);
      if (cls == taxonomy.unlabeled_id()) continue;
      if (!taxonomy.is_thing(cls)) {
        throw InvalidInput("overlay top pixel " + pixel_text(x, y) + " holds non-thing class " +
                           std::to_string(cls));
      }
      for (int c = 0; c < out.channels(); ++c) out.at(c, x, y) = 0.0f;
      out.at(lut[cls], x, y) = 1.0f;
    }
  }
  return out;
}

SoftLabelmap compose_generated(const SoftLabelmap& stuffs, const SoftLabelmap& things,
                               const ClassTaxonomy& taxonomy) {
  if (stuffs.width() != things.width() || stuffs.height() != things.height()) {
    throw InvalidInput("compose dimension mismatch");
  }
  SoftLabelmap out(stuffs.width(), stuffs.height(), channel_semantics(taxonomy, ChannelSet::all));
  const auto lut = channel_lookup(out.channel_semantics());
  const auto& tsem = things.channel_semantics();
  for (int y = 0; y < out.height(); ++y) {
    for (int x = 0; x < out.width(); ++x) {
      int best = 0;
      for (int c = 1; c < things.channels(); ++c) {
        if (things.at(c, x, y) > things.at(best, x, y)) best = c;
      }
      const bool generated_thing = tsem[static_cast<std::size_t>(best)] != kNoneChannel &&
                                   taxonomy.is_thing(tsem[static_cast<std::size_t>(best)]);
      if (generated_thing) {
        for (int c = 0; c < things.channels(); ++c) {
          const int sem = tsem[static_cast<std::size_t>(c)];
          if (sem == kNoneChannel || !taxonomy.is_thing(sem)) continue;
          out.at(lut[static_cast<std::size_t>(sem)], x, y) = things.at(c, x, y);
        }
      } else {
        for (int c = 0; c < stuffs.channels(); ++c) {
          const int sem = stuffs.channel_semantics()[static_cast<std::size_t>(c)];
          if (sem == kNoneChannel || !taxonomy.is_stuff(sem)) continue;
          out.at(lut[static_cast<std::size_t>(sem)], x, y) = stuffs.at(c, x, y);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Boundaries and derived maps

BoundaryMap extract_boundaries(const InstanceMap& instances) {
  const int w = instances.width();
  const int h = instances.height();
  BoundaryMap out(w, h, 0);
  const auto in = instances.data();
  auto bd = out.data();
  const std::size_t stride = static_cast<std::size_t>(w);
  // Every differing horizontal or vertical pair marks both of its pixels.
  for (int y = 0; y < h; ++y) {
    const std::size_t row = static_cast<std::size_t>(y) * stride;
    for (int x = 0; x + 1 < w; ++x) {
      if (in[row + x] != in[row + x + 1]) {
        bd[row + x] = 1;
        bd[row + x + 1] = 1;
      }
    }
    if (y + 1 < h) {
      for (int x = 0; x < w; ++x) {
        if (in[row + x] != in[row + stride + x]) {
          bd[row + x] = 1;
          bd[row + stride + x] = 1;
        }
      }
    }
  }
  return out;
}

SparseLabelmap things_of(const DenseLabelmap& dense, const ClassTaxonomy& taxonomy) {
  SparseLabelmap out(dense.width(), dense.height(), taxonomy.unlabeled_id());
  for (int y = 0; y < dense.height(); ++y) {
    for (int x = 0; x < dense.width(); ++x) {
      const ClassId cls = dense.at(x, y);
      if (taxonomy.is_thing(cls)) out.at(x, y) = cls;
    }
  }
  return out;
}

DenseLabelmap stuff_fill(const DenseLabelmap& dense, const ClassTaxonomy& taxonomy) {
  const int w = dense.width();
  const int h = dense.height();
  DenseLabelmap out = dense;
  std::vector<char> filled(out.size(), 0);
  std::deque<std::pair<int, int>> frontier;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (taxonomy.is_stuff(dense.at(x, y))) {
        filled[static_cast<std::size_t>(y) * w + x] = 1;
        frontier.emplace_back(x, y);
      }
    }
  }
  if (frontier.empty()) {
    std::fill(out.data().begin(), out.data().end(), taxonomy.stuff_ids().front());
    return out;
  }
  constexpr int dx[4] = {0, -1, 1, 0};
  constexpr int dy[4] = {-1, 0, 0, 1};
  while (!frontier.empty()) {
    const auto [x, y] = frontier.front();
    frontier.pop_front();
    for (int k = 0; k < 4; ++k) {
      const int nx = x + dx[k];
      const int ny = y + dy[k];
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const std::size_t idx = static_cast<std::size_t>(ny) * w + nx;
      if (filled[idx]) continue;
      filled[idx] = 1;
      out.at(nx, ny) = out.at(x, y);
      frontier.emplace_back(nx, ny);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Validation

std::string Violation::to_string() const {
  std::ostringstream os;
  os << field;
  if (channel >= 0) os << " channel " << channel;
  if (x >= 0) os << " at " << pixel_text(x, y);
  os << ": " << message;
  return os.str();
}

std::vector<Violation> validate(const DenseLabelmap& map, const ClassTaxonomy& taxonomy) {
  std::vector<Violation> out;
  if (map.empty()) out.push_back({"dense", -1, -1, -1, "empty labelmap"});
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const ClassId cls = map.at(x, y);
      if (cls == taxonomy.unlabeled_id()) {
        out.push_back({"dense", x, y, -1, "unlabeled sentinel in dense labelmap"});
      } else if (!taxonomy.contains(cls)) {
        out.push_back({"dense", x, y, -1, "unknown class id " + std::to_string(cls)});
      }
    }
  }
  return out;
}

std::vector<Violation> validate(const SparseLabelmap& map, const ClassTaxonomy& taxonomy) {
  std::vector<Violation> out;
  if (map.empty()) out.push_back({"sparse", -1, -1, -1, "empty labelmap"});
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const ClassId cls = map.at(x, y);
      if (cls == taxonomy.unlabeled_id()) continue;
      if (!taxonomy.contains(cls)) {
        out.push_back({"sparse", x, y, -1, "unknown class id " + std::to_string(cls)});
      } else if (!taxonomy.is_thing(cls)) {
        out.push_back({"sparse", x, y, -1,
                       "stuff class '" + taxonomy.info(cls).name + "' in sparse labelmap"});
      }
    }
  }
  return out;
}

std::vector<Violation> validate(const SoftLabelmap& map, const ClassTaxonomy& taxonomy) {
  std::vector<Violation> out;
  for (int c = 0; c < map.channels(); ++c) {
    const int sem = map.channel_semantics()[static_cast<std::size_t>(c)];
    if (sem != kNoneChannel && !taxonomy.contains(sem)) {
      out.push_back({"soft", -1, -1, c, "channel class " + std::to_string(sem) + " unknown"});
    }
  }
  for (int c = 0; c < map.channels(); ++c) {
    for (int y = 0; y < map.height(); ++y) {
      for (int x = 0; x < map.width(); ++x) {
        const float v = map.at(c, x, y);
        if (!(v >= 0.0f && v <= 1.0f)) {
          out.push_back({"soft", x, y, c, "probability " + std::to_string(v) + " outside [0,1]"});
        }
      }
    }
  }
  return out;
}

std::vector<Violation> validate(const InstanceMap& instances, const DenseLabelmap& dense,
                                const ClassTaxonomy& taxonomy) {
  std::vector<Violation> out;
  if (!instances.same_shape(dense)) {
    out.push_back({"instances", -1, -1, -1, "dimensions differ from the labelmap"});
    return out;
  }
  for (int y = 0; y < dense.height(); ++y) {
    for (int x = 0; x < dense.width(); ++x) {
      const ClassId cls = dense.at(x, y);
      const std::uint32_t id = instances.at(x, y);
      if (taxonomy.is_thing(cls)) {
        // Crowd regions carry the bare class id.
        const bool ok = id == cls || id / kInstanceDivisor == cls;
        if (!ok) {
          out.push_back({"instances", x, y, -1,
                         "instance id " + std::to_string(id) + " does not encode thing class " +
                             std::to_string(cls)});
        }
      } else if (taxonomy.is_stuff(cls) && id != cls) {
        out.push_back({"instances", x, y, -1,
                       "stuff pixel instance id " + std::to_string(id) + " != class " +
                           std::to_string(cls)});
      }
    }
  }
  return out;
}

std::vector<Violation> validate(const BoundaryMap& map) {
  std::vector<Violation> out;
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      if (map.at(x, y) > 1) {
        out.push_back({"boundary", x, y, -1, "value " + std::to_string(map.at(x, y)) + " not binary"});
      }
    }
  }
  return out;
}

}  // namespace densify
