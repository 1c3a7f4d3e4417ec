#include "densify/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "densify/nn/ops.hpp"
#include "densify/rng.hpp"
#include "densify/synthesis.hpp"

namespace densify {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (decay_start < 0 || decay_start >= epochs) throw ConfigError("decay_start must lie in [0, epochs)");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (width < 1 || height < 1) throw ConfigError("resolution must be positive");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must lie in (0, 1]");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  const int factor = 1 << generator.depth;
  if (generator.depth < 1 || width % factor != 0 || height % factor != 0) {
    throw ConfigError("resolution " + std::to_string(width) + "x" + std::to_string(height) +
                      " is not divisible by 2^depth = " + std::to_string(factor));
  }
  weights.validate();
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.value("epochs", c.epochs);
    c.decay_start = j.value("decay_start", c.decay_start);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.width = j.value("width", c.width);
    c.height = j.value("height", c.height);
    c.fraction = j.value("fraction", c.fraction);
    if (j.contains("weights")) c.weights = LossWeights::from_json(j["weights"]);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("generator")) c.generator = GeneratorSpec::from_json(j["generator"]);
    if (j.contains("discriminator")) c.discriminator = DiscriminatorSpec::from_json(j["discriminator"]);
    c.perceptual_seed = j.value("perceptual_seed", c.perceptual_seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"decay_start", decay_start},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"batch_size", batch_size},
          {"width", width},
          {"height", height},
          {"fraction", fraction},
          {"weights", weights.to_json()},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"generator", generator.to_json()},
          {"discriminator", discriminator.to_json()},
          {"perceptual_seed", perceptual_seed}};
}

double learning_rate(const TrainConfig& config, int epoch) {
  if (epoch <= config.decay_start) return config.lr;
  if (epoch >= config.epochs) return 0.0;
  const double remaining = static_cast<double>(config.epochs - epoch) /
                           static_cast<double>(config.epochs - config.decay_start);
  return config.lr * remaining;
}

TrainingSample build_sample(GeneratorRole role, const ScenePair& pair, const ClassTaxonomy& taxonomy) {
  switch (role) {
    case GeneratorRole::stage1:
      return {to_tensor(encode_one_hot(pair.sparse, taxonomy, ChannelSet::things_plus_none)),
              to_tensor(encode_one_hot(stuff_fill(pair.dense, taxonomy), taxonomy, ChannelSet::stuffs))};
    case GeneratorRole::stage2: {
      const SoftLabelmap stuffs = encode_one_hot(stuff_fill(pair.dense, taxonomy), taxonomy, ChannelSet::stuffs);
      return {to_tensor(overlay(stuffs, pair.sparse, taxonomy)),
              to_tensor(encode_one_hot(things_of(pair.dense, taxonomy), taxonomy, ChannelSet::things_plus_none))};
    }
    case GeneratorRole::single_stage:
      return {to_tensor(encode_one_hot(pair.sparse, taxonomy, ChannelSet::all)),
              to_tensor(encode_one_hot(pair.dense, taxonomy, ChannelSet::all))};
    case GeneratorRole::boundary: {
      const BoundaryMap b = extract_boundaries(pair.instances);
      nn::Tensor target({1, 2, b.height(), b.width()});
      const auto bd = b.data();
      for (std::size_t i = 0; i < bd.size(); ++i) {
        target[i] = bd[i] ? 0.0f : 1.0f;
        target[bd.size() + i] = bd[i] ? 1.0f : 0.0f;
      }
      return {to_tensor(encode_one_hot(pair.dense, taxonomy, ChannelSet::all)), std::move(target)};
    }
    case GeneratorRole::renderer:
      if (!pair.image) throw InvalidInput("renderer training needs an image for " + pair.source_id);
      return {renderer_input(pair.dense, extract_boundaries(pair.instances), taxonomy), image_tensor(*pair.image)};
  }
  throw ConfigError("unknown role");
}

nlohmann::json EpochRecord::to_json() const {
  nlohmann::json j = {{"epoch", epoch}, {"lr", lr}, {"d_loss", discriminator}};
  const nlohmann::json g = generator.to_json();
  for (const auto& [k, v] : g.items()) j[k] = v;
  return j;
}

struct Trainer::State {
  GeneratorRole role;
  TrainConfig config;
  ClassTaxonomy taxonomy;
  std::vector<SceneExample> examples;
  Generator generator;
  Discriminator discriminator;
  nn::Adam g_opt;
  nn::Adam d_opt;
  std::unique_ptr<PerceptualExtractor> extractor;
  int epoch = 0;

  State(GeneratorRole r, TrainConfig c, ClassTaxonomy t, std::vector<SceneExample> ex, Generator g, Discriminator d)
      : role(r),
        config(std::move(c)),
        taxonomy(std::move(t)),
        examples(std::move(ex)),
        generator(std::move(g)),
        discriminator(std::move(d)),
        g_opt(generator.parameters(), adam_config(config)),
        d_opt(discriminator.parameters(), adam_config(config)) {
    if (role == GeneratorRole::boundary || role == GeneratorRole::renderer) {
      extractor = std::make_unique<RandomConvExtractor>(config.perceptual_seed);
    }
  }

  static nn::AdamConfig adam_config(const TrainConfig& c) {
    return {static_cast<float>(c.beta1), static_cast<float>(c.beta2), 1e-8f};
  }
};

namespace {

TrainConfig with_channels(TrainConfig config, GeneratorRole role, const ClassTaxonomy& taxonomy) {
  const ChannelContract cc = channel_contract(role, taxonomy);
  config.generator.in_channels = cc.in_channels;
  config.generator.out_channels = cc.out_channels;
  config.validate();
  return config;
}

void check_examples(const std::vector<SceneExample>& examples, const TrainConfig& config) {
  if (examples.empty()) throw InvalidInput("training dataset is empty");
  for (const auto& ex : examples) {
    if (ex.dense.width() != config.width || ex.dense.height() != config.height) {
      throw InvalidInput("example " + ex.source_id + " is " + std::to_string(ex.dense.width()) + "x" +
                         std::to_string(ex.dense.height()) + ", config expects " + std::to_string(config.width) +
                         "x" + std::to_string(config.height));
    }
  }
}

bool finite_report(const LossReport& r) {
  return std::isfinite(r.adv) && std::isfinite(r.focal) && std::isfinite(r.feature_match) &&
         std::isfinite(r.perceptual) && std::isfinite(r.total);
}

}  // namespace

Trainer::Trainer(GeneratorRole role, TrainConfig config, ClassTaxonomy taxonomy, std::vector<SceneExample> examples) {
  config = with_channels(std::move(config), role, taxonomy);
  check_examples(examples, config);
  Generator g = build_generator(config.generator, role, taxonomy, derive_seed(config.seed, 0x67u));
  const int d_in = config.generator.in_channels + config.generator.out_channels;
  Discriminator d = build_discriminator(config.discriminator, d_in, derive_seed(config.seed, 0x64u));
  state_ = std::make_unique<State>(role, std::move(config), std::move(taxonomy), std::move(examples), std::move(g),
                                   std::move(d));
}

Trainer::Trainer(std::unique_ptr<State> state) : state_(std::move(state)) {}
Trainer::~Trainer() = default;
Trainer::Trainer(Trainer&&) noexcept = default;
Trainer& Trainer::operator=(Trainer&&) noexcept = default;

int Trainer::epochs_completed() const { return state_->epoch; }
GeneratorRole Trainer::role() const { return state_->role; }
const TrainConfig& Trainer::config() const { return state_->config; }
const Generator& Trainer::generator() const { return state_->generator; }
const Discriminator& Trainer::discriminator() const { return state_->discriminator; }

EpochRecord Trainer::run_epoch(const std::optional<std::filesystem::path>& diagnostics_dir) {
  State& s = *state_;
  const auto t0 = std::chrono::steady_clock::now();
  const int epoch = s.epoch + 1;
  const double lr = learning_rate(s.config, epoch);

  std::vector<ScenePair> pairs;
  EpochIterator it(s.examples, s.taxonomy, s.config.fraction, epoch, s.config.seed);
  while (auto p = it.next()) pairs.push_back(std::move(*p));
  Rng order_rng(derive_seed(s.config.seed, static_cast<std::uint64_t>(epoch), 0x6f72646572u));
  order_rng.shuffle(pairs);

  const std::vector<nn::Var> g_params = s.generator.parameters();
  const std::vector<nn::Var> d_params = s.discriminator.parameters();
  EpochRecord rec;
  rec.epoch = epoch;
  rec.lr = lr;
  std::size_t batches = 0;
  const auto batch = static_cast<std::size_t>(s.config.batch_size);
  for (std::size_t start = 0; start < pairs.size(); start += batch, ++batches) {
    const std::size_t end = std::min(pairs.size(), start + batch);
    std::vector<nn::Tensor> inputs;
    std::vector<nn::Tensor> targets;
    for (std::size_t i = start; i < end; ++i) {
      TrainingSample ts = build_sample(s.role, pairs[i], s.taxonomy);
      inputs.push_back(std::move(ts.input));
      targets.push_back(std::move(ts.target));
    }
    const nn::Var x = nn::Var::constant(stack(inputs));
    const nn::Tensor y = stack(targets);

    // Generator step; the discriminator is frozen so no gradient reaches it.
    nn::set_requires_grad(d_params, false);
    const nn::Var g_star = s.generator.forward(x, derive_seed(s.config.seed, static_cast<std::uint64_t>(epoch), batches));
    const CompositeLoss loss =
        s.extractor ? composite_bd_loss(g_star, y, x, s.discriminator, *s.extractor, s.config.weights,
                                        s.role == GeneratorRole::renderer ? -1 : 1)
                    : composite_oc_loss(g_star, y, x, s.discriminator, s.config.weights);
    nn::set_requires_grad(d_params, true);

    double d_value = 0.0;
    if (finite_report(loss.report)) {
      s.g_opt.zero_grad();
      nn::backward(loss.total);
      s.g_opt.step(static_cast<float>(lr));
      s.g_opt.zero_grad();

      nn::Var d_loss = discriminator_objective(x, y, g_star.value(), s.discriminator, &d_value);
      if (std::isfinite(d_value)) {
        s.d_opt.zero_grad();
        nn::backward(d_loss);
        s.d_opt.step(static_cast<float>(lr));
        s.d_opt.zero_grad();
      }
    }
    if (!finite_report(loss.report) || !std::isfinite(d_value)) {
      std::string where = "epoch " + std::to_string(epoch) + " batch " + std::to_string(batches);
      if (diagnostics_dir) {
        nlohmann::json snap = {{"role", role_name(s.role)}, {"epoch", epoch}, {"batch", batches}, {"lr", lr},
                               {"generator", loss.report.to_json()}, {"d_loss", d_value}};
        snap["sources"] = nlohmann::json::array();
        for (std::size_t i = start; i < end; ++i) snap["sources"].push_back(pairs[i].source_id);
        std::filesystem::create_directories(*diagnostics_dir);
        const auto file = *diagnostics_dir / ("nonfinite_" + std::string(role_name(s.role)) + "_e" +
                                              std::to_string(epoch) + "_b" + std::to_string(batches) + ".json");
        std::ofstream(file) << snap.dump(2) << "\n";
        where += ", snapshot at " + file.string();
      }
      throw TrainingError("non-finite loss at " + where);
    }
    rec.generator.adv += loss.report.adv;
    rec.generator.focal += loss.report.focal;
    rec.generator.feature_match += loss.report.feature_match;
    rec.generator.perceptual += loss.report.perceptual;
    rec.generator.total += loss.report.total;
    rec.discriminator += d_value;
  }
  const double nb = static_cast<double>(batches);
  rec.generator.adv /= nb;
  rec.generator.focal /= nb;
  rec.generator.feature_match /= nb;
  rec.generator.perceptual /= nb;
  rec.generator.total /= nb;
  rec.discriminator /= nb;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  s.epoch = epoch;
  return rec;
}

Checkpoint Trainer::checkpoint() const {
  const State& s = *state_;
  Checkpoint c;
  c.role = s.role;
  c.generator_spec = s.config.generator;
  c.discriminator_spec = s.config.discriminator;
  c.discriminator_in_channels = s.discriminator.in_channels();
  c.taxonomy = s.taxonomy.to_json();
  c.fingerprint = s.taxonomy.fingerprint();
  c.epoch = s.epoch;
  c.config = s.config.to_json();
  c.generator = snapshot(s.generator.named_parameters());
  c.discriminator = snapshot(s.discriminator.named_parameters());
  c.generator_opt = {s.g_opt.steps_taken(), s.g_opt.first_moments(), s.g_opt.second_moments()};
  c.discriminator_opt = {s.d_opt.steps_taken(), s.d_opt.first_moments(), s.d_opt.second_moments()};
  return c;
}

void Trainer::save(const std::filesystem::path& path) const {
  try {
    save_checkpoint(path, checkpoint());
  } catch (const Error& e) {
    throw TrainingError(std::string("checkpoint write failed: ") + e.what());
  }
}

Trainer Trainer::resume(const std::filesystem::path& checkpoint, TrainConfig config, ClassTaxonomy taxonomy,
                        std::vector<SceneExample> examples) {
  const Checkpoint c = load_checkpoint(checkpoint);
  require_fingerprint(c, taxonomy, checkpoint.string());
  Trainer t(c.role, std::move(config), std::move(taxonomy), std::move(examples));
  State& s = *t.state_;
  if (c.generator_spec.to_json() != s.config.generator.to_json() ||
      c.discriminator_spec.to_json() != s.config.discriminator.to_json()) {
    throw ConfigError(checkpoint.string() + ": architecture differs from the config");
  }
  if (c.epoch > s.config.epochs) {
    throw ConfigError(checkpoint.string() + " is at epoch " + std::to_string(c.epoch) + ", beyond the configured " +
                      std::to_string(s.config.epochs));
  }
  restore(s.generator.named_parameters(), c.generator);
  restore(s.discriminator.named_parameters(), c.discriminator);
  s.g_opt.restore(c.generator_opt.steps, c.generator_opt.m, c.generator_opt.v);
  s.d_opt.restore(c.discriminator_opt.steps, c.discriminator_opt.m, c.discriminator_opt.v);
  s.epoch = c.epoch;
  return t;
}

TrainResult train_stage(GeneratorRole role, const std::vector<SceneExample>& examples, const ClassTaxonomy& taxonomy,
                        const TrainConfig& config, const std::filesystem::path& out_dir,
                        const std::optional<std::filesystem::path>& resume_from, int until_epoch) {
  std::filesystem::create_directories(out_dir);
  Trainer trainer = resume_from ? Trainer::resume(*resume_from, config, taxonomy, examples)
                                : Trainer(role, config, taxonomy, examples);
  if (trainer.role() != role) {
    throw ConfigError("checkpoint holds a " + std::string(role_name(trainer.role())) + " generator, asked to train " +
                      std::string(role_name(role)));
  }
  const int last = until_epoch < 0 ? trainer.config().epochs : std::min(until_epoch, trainer.config().epochs);
  TrainResult result;
  result.checkpoint = out_dir / (std::string(role_name(role)) + ".ckpt");
  result.log = out_dir / (std::string(role_name(role)) + ".log.jsonl");
  std::ofstream log(result.log, resume_from ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot open metric log " + result.log.string());
  while (trainer.epochs_completed() < last) {
    EpochRecord rec = trainer.run_epoch(out_dir);
    log << rec.to_json().dump() << "\n" << std::flush;
    result.records.push_back(rec);
    const int every = trainer.config().checkpoint_every;
    if (every > 0 && rec.epoch % every == 0 && rec.epoch != last) trainer.save(result.checkpoint);
  }
  trainer.save(result.checkpoint);
  return result;
}

}  // namespace densify
