#include "densify/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "densify/png_io.hpp"

namespace densify {
namespace {

constexpr char kMagic[8] = {'D', 'N', 'S', 'F', 'Y', 'C', 'K', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint payloads are little-endian float32");

nlohmann::json shape_json(const nn::Shape& s) { return {s.n, s.c, s.h, s.w}; }

nn::Shape shape_from(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw IoError("checkpoint: malformed tensor shape");
  nn::Shape s{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw IoError("checkpoint: negative tensor extent");
  return s;
}

struct Writer {
  nlohmann::json index = nlohmann::json::array();
  std::vector<std::uint8_t> payload;

  void add(const std::string& group, const std::string& name, const nn::Tensor& t) {
    index.push_back({{"group", group}, {"name", name}, {"shape", shape_json(t.shape())}, {"offset", payload.size()}});
    const auto* bytes = reinterpret_cast<const std::uint8_t*>(t.ptr());
    payload.insert(payload.end(), bytes, bytes + t.numel() * sizeof(float));
  }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  for (const auto& t : ckpt.generator) w.add("generator", t.name, t.tensor);
  for (const auto& t : ckpt.discriminator) w.add("discriminator", t.name, t.tensor);
  const auto add_opt = [&](const std::string& group, const OptimizerState& opt) {
    for (std::size_t i = 0; i < opt.m.size(); ++i) w.add(group + ".m", std::to_string(i), opt.m[i]);
    for (std::size_t i = 0; i < opt.v.size(); ++i) w.add(group + ".v", std::to_string(i), opt.v[i]);
  };
  add_opt("generator_opt", ckpt.generator_opt);
  add_opt("discriminator_opt", ckpt.discriminator_opt);

  nlohmann::json header = {
      {"format", 1},
      {"role", role_name(ckpt.role)},
      {"generator_spec", ckpt.generator_spec.to_json()},
      {"discriminator_spec", ckpt.discriminator_spec.to_json()},
      {"discriminator_in_channels", ckpt.discriminator_in_channels},
      {"taxonomy", ckpt.taxonomy},
      {"fingerprint", ckpt.fingerprint},
      {"epoch", ckpt.epoch},
      {"config", ckpt.config},
      {"generator_opt_steps", ckpt.generator_opt.steps},
      {"discriminator_opt_steps", ckpt.discriminator_opt.steps},
      {"tensors", w.index},
  };
  const std::string text = header.dump();
  std::vector<std::uint8_t> bytes(kMagic, kMagic + sizeof(kMagic));
  const std::uint64_t len = text.size();
  const auto* lp = reinterpret_cast<const std::uint8_t*>(&len);
  bytes.insert(bytes.end(), lp, lp + sizeof(len));
  bytes.insert(bytes.end(), text.begin(), text.end());
  bytes.insert(bytes.end(), w.payload.begin(), w.payload.end());

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  write_file_bytes(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move checkpoint into place at " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  const std::string where = "checkpoint " + path.string();
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IoError(where + ": not a checkpoint file");
  }
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 8, sizeof(len));
  if (len > bytes.size() - 16) throw IoError(where + ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(where + ": bad header: " + e.what());
  }
  const std::size_t base = 16 + len;

  Checkpoint c;
  try {
    c.role = parse_role(header.at("role").get<std::string>());
    c.generator_spec = GeneratorSpec::from_json(header.at("generator_spec"));
    c.discriminator_spec = DiscriminatorSpec::from_json(header.at("discriminator_spec"));
    c.discriminator_in_channels = header.at("discriminator_in_channels").get<int>();
    c.taxonomy = header.at("taxonomy");
    c.fingerprint = header.at("fingerprint").get<std::uint64_t>();
    c.epoch = header.at("epoch").get<int>();
    c.config = header.value("config", nlohmann::json::object());
    c.generator_opt.steps = header.value("generator_opt_steps", 0L);
    c.discriminator_opt.steps = header.value("discriminator_opt_steps", 0L);
    for (const auto& entry : header.at("tensors")) {
      nn::Tensor t(shape_from(entry.at("shape")));
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t size = t.numel() * sizeof(float);
      if (offset > bytes.size() - base || size > bytes.size() - base - offset) {
        throw IoError(where + ": tensor payload out of range");
      }
      std::memcpy(t.ptr(), bytes.data() + base + offset, size);
      const std::string group = entry.at("group").get<std::string>();
      std::string name = entry.at("name").get<std::string>();
      if (group == "generator") {
        c.generator.push_back({std::move(name), std::move(t)});
      } else if (group == "discriminator") {
        c.discriminator.push_back({std::move(name), std::move(t)});
      } else if (group == "generator_opt.m") {
        c.generator_opt.m.push_back(std::move(t));
      } else if (group == "generator_opt.v") {
        c.generator_opt.v.push_back(std::move(t));
      } else if (group == "discriminator_opt.m") {
        c.discriminator_opt.m.push_back(std::move(t));
      } else if (group == "discriminator_opt.v") {
        c.discriminator_opt.v.push_back(std::move(t));
      } else {
        throw IoError(where + ": unknown tensor group '" + group + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError(where + ": bad header field: " + e.what());
  }
  return c;
}

void require_fingerprint(const Checkpoint& ckpt, const ClassTaxonomy& taxonomy, const std::string& what) {
  if (ckpt.fingerprint != taxonomy.fingerprint()) {
    throw FingerprintMismatch(what + " was trained for a different class taxonomy");
  }
}

std::vector<NamedTensor> snapshot(const std::vector<nn::NamedParameter>& params) {
  std::vector<NamedTensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back({p.name, p.var.value()});
  return out;
}

void restore(const std::vector<nn::NamedParameter>& params, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const nn::Tensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t.tensor;
  for (const auto& p : params) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw IoError("checkpoint lacks parameter '" + p.name + "'");
    if (it->second->shape() != p.var.shape()) {
      throw IoError("parameter '" + p.name + "' has shape " + it->second->shape().str() + ", model expects " +
                    p.var.shape().str());
    }
    nn::Var v = p.var;
    v.mutable_value() = *it->second;
  }
  if (by_name.size() != params.size()) throw IoError("checkpoint has parameters the model does not");
}

Generator load_generator(const std::filesystem::path& path, const ClassTaxonomy& taxonomy,
                         GeneratorRole expected_role) {
  const Checkpoint c = load_checkpoint(path);
  require_fingerprint(c, taxonomy, path.string());
  if (c.role != expected_role) {
    throw ConfigError(path.string() + " holds a " + std::string(role_name(c.role)) + " generator, expected " +
                      std::string(role_name(expected_role)));
  }
  Generator g = build_generator(c.generator_spec, c.role, taxonomy, 0);
  restore(g.named_parameters(), c.generator);
  return g;
}

}  // namespace densify
