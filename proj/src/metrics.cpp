#include "densify/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <mutex>
#include <sstream>

#include "densify/nn/layers.hpp"
#include "densify/png_io.hpp"
#include "densify/rng.hpp"
#include "densify/synthesis.hpp"

namespace densify {

nlohmann::json FeatureStats::to_json() const {
  nlohmann::json m = nlohmann::json::array();
  for (int i = 0; i < mean.size(); ++i) m.push_back(mean[i]);
  nlohmann::json c = nlohmann::json::array();
  for (int i = 0; i < cov.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < cov.cols(); ++j) row.push_back(cov(i, j));
    c.push_back(std::move(row));
  }
  return {{"n", n}, {"mean", m}, {"cov", c}};
}

FeatureAccumulator::FeatureAccumulator(int dim)
    : mean_(Eigen::VectorXd::Zero(dim)), m2_(Eigen::MatrixXd::Zero(dim, dim)) {
  if (dim < 1) throw InvalidInput("feature dimension must be >= 1");
}

void FeatureAccumulator::add(std::span<const double> x) {
  if (static_cast<int>(x.size()) != dim()) {
    throw InvalidInput("feature vector has " + std::to_string(x.size()) + " entries, expected " +
                       std::to_string(dim()));
  }
  const Eigen::Map<const Eigen::VectorXd> v(x.data(), dim());
  ++n_;
  const Eigen::VectorXd delta = v - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (v - mean_).transpose();
}

void FeatureAccumulator::merge(const FeatureAccumulator& other) {
  if (other.dim() != dim()) throw InvalidInput("cannot merge accumulators of different dimension");
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(n_);
  const double nb = static_cast<double>(other.n_);
  const double n = na + nb;
  const Eigen::VectorXd delta = other.mean_ - mean_;
  mean_ += delta * (nb / n);
  m2_ += other.m2_ + delta * delta.transpose() * (na * nb / n);
  n_ += other.n_;
}

FeatureStats FeatureAccumulator::stats() const {
  if (n_ < 2) throw InvalidInput("feature statistics need at least 2 samples, have " + std::to_string(n_));
  FeatureStats s;
  s.n = n_;
  s.mean = mean_;
  const Eigen::MatrixXd c = m2_ / static_cast<double>(n_ - 1);
  s.cov = 0.5 * (c + c.transpose());
  return s;
}

namespace {

constexpr double kImaginaryTolerance = 1e-6;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw Error("covariance square root did not converge");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// Tr sqrt(sqrt(A) B sqrt(A)); nullopt when the imaginary part is too large.
std::optional<double> trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd sa = psd_sqrt(a);
  const Eigen::MatrixXd m = sa * b * sa;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) return std::nullopt;
  double tr = 0.0;
  for (int i = 0; i < es.eigenvalues().size(); ++i) {
    const double l = es.eigenvalues()[i];
    if (l >= 0.0) {
      tr += std::sqrt(l);
    } else if (std::sqrt(-l) > kImaginaryTolerance) {
      return std::nullopt;
    }
  }
  return tr;
}

void check_stats(const FeatureStats& s, const char* which) {
  if (s.cov.rows() != s.dim() || s.cov.cols() != s.dim()) {
    throw InvalidInput(std::string(which) + " covariance does not match its mean");
  }
  if (s.dim() > 0 && (s.cov - s.cov.transpose()).cwiseAbs().maxCoeff() > 1e-8) {
    throw InvalidInput(std::string(which) + " covariance is not symmetric");
  }
}

}  // namespace

double fid(const FeatureStats& real, const FeatureStats& generated) {
  if (real.dim() != generated.dim()) {
    throw InvalidInput("feature dimensions differ: " + std::to_string(real.dim()) + " vs " +
                       std::to_string(generated.dim()));
  }
  check_stats(real, "real");
  check_stats(generated, "generated");
  std::optional<double> tr = trace_sqrt_product(real.cov, generated.cov);
  Eigen::MatrixXd cr = real.cov;
  Eigen::MatrixXd cg = generated.cov;
  if (!tr) {
    const Eigen::MatrixXd jitter = 1e-10 * Eigen::MatrixXd::Identity(real.dim(), real.dim());
    cr += jitter;
    cg += jitter;
    tr = trace_sqrt_product(cr, cg);
    if (!tr) throw Error("matrix square root of the covariance product has a large imaginary component");
  }
  const double mean_term = (real.mean - generated.mean).squaredNorm();
  const double value = mean_term + cr.trace() + cg.trace() - 2.0 * *tr;
  return std::max(value, 0.0);
}

struct ConvEmbedder::Net {
  std::vector<nn::Conv2d> convs;
  int dim = 0;
};

ConvEmbedder::ConvEmbedder(std::uint64_t seed) : net_(std::make_unique<Net>()) {
  Rng rng(seed);
  const int widths[] = {3, 8, 16, 32};
  for (int i = 0; i < 3; ++i) {
    const int k = i == 0 ? 3 : 4;
    const float std = std::sqrt(2.0f / static_cast<float>(widths[i] * k * k));
    nn::Conv2d conv = nn::make_conv(widths[i], widths[i + 1], k, i == 0 ? 1 : 2, 1, rng, std);
    nn::set_requires_grad({conv.weight, conv.bias}, false);
    net_->convs.push_back(std::move(conv));
    net_->dim += widths[i + 1];
  }
}

ConvEmbedder::~ConvEmbedder() = default;

int ConvEmbedder::dim() const { return net_->dim; }

std::vector<double> ConvEmbedder::features(const RgbImage& image) const {
  nn::NoGradGuard guard;
  nn::Var h = nn::Var::constant(image_tensor(image));
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(net_->dim));
  for (const nn::Conv2d& conv : net_->convs) {
    h = nn::leaky_relu(conv(h), 0.2f);
    const nn::Tensor& t = h.value();
    const std::size_t plane = t.shape().plane();
    for (int c = 0; c < t.shape().c; ++c) {
      double s = 0.0;
      const float* p = t.ptr() + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += p[i];
      out.push_back(s / static_cast<double>(plane));
    }
  }
  return out;
}

namespace {
std::mutex& command_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

CommandExtractor::CommandExtractor(std::string command, int dim, std::string scratch_dir)
    : command_(std::move(command)), dim_(dim), scratch_(std::move(scratch_dir)) {
  if (command_.empty()) throw ConfigError("feature command is empty");
  if (dim_ < 1) throw ConfigError("feature command dimension must be >= 1");
}

std::vector<double> CommandExtractor::features(const RgbImage& image) const {
  std::lock_guard lock(command_mutex());
  std::filesystem::create_directories(scratch_);
  const auto path = std::filesystem::path(scratch_) / "feature_in.png";
  save_rgb(path, image);
  const std::string cmd = command_ + " --image '" + path.string() + "'";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw Error("cannot run feature command: " + command_);
  std::string text;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof(buf), pipe)) > 0) text.append(buf, got);
  const int rc = pclose(pipe);
  if (rc != 0) throw Error("feature command exited with status " + std::to_string(rc) + ": " + command_);
  std::istringstream in(text);
  std::vector<double> out;
  double v;
  while (in >> v) out.push_back(v);
  if (static_cast<int>(out.size()) != dim_) {
    throw Error("feature command returned " + std::to_string(out.size()) + " values, expected " +
                std::to_string(dim_));
  }
  return out;
}

std::unique_ptr<ImageFeatureExtractor> make_extractor(const nlohmann::json& config) {
  const std::string type = config.value("type", std::string("conv"));
  if (type == "conv") return std::make_unique<ConvEmbedder>(config.value("seed", std::uint64_t{0xf1d}));
  if (type == "command") {
    return std::make_unique<CommandExtractor>(
        config.at("command").get<std::string>(), config.at("dim").get<int>(),
        config.value("scratch_dir", (std::filesystem::temp_directory_path() / "densify_features").string()));
  }
  throw ConfigError("unknown feature extractor type '" + type + "'");
}

FeatureStats extract_feature_stats(const std::vector<RgbImage>& images, const ImageFeatureExtractor& extractor) {
  if (images.size() < 2) throw InvalidInput("feature statistics need at least 2 images");
  FeatureAccumulator acc(extractor.dim());
  for (const RgbImage& img : images) {
    const std::vector<double> f = extractor.features(img);
    acc.add(f);
  }
  return acc.stats();
}

// ---------------------------------------------------------------------------

CooccurrenceTable::CooccurrenceTable(const ClassTaxonomy& taxonomy) {
  slot_.fill(-1);
  for (const ClassInfo& c : taxonomy.classes()) {
    slot_[c.id] = static_cast<int>(classes_.size());
    classes_.push_back(c.id);
  }
  n1_.assign(classes_.size(), 0);
  n12_.assign(classes_.size() * classes_.size(), 0);
}

std::size_t CooccurrenceTable::index(ClassId c) const {
  const int s = slot_[c];
  if (s < 0) throw InvalidInput("class " + std::to_string(c) + " is not in the taxonomy");
  return static_cast<std::size_t>(s);
}

void CooccurrenceTable::add(const SparseLabelmap& input, const DenseLabelmap& output) {
  if (!input.same_shape(output)) throw InvalidInput("co-occurrence pair differs in size");
  const std::size_t k = classes_.size();
  std::vector<char> in(k, 0);
  std::vector<char> out(k, 0);
  for (ClassId v : input.data()) {
    if (slot_[v] >= 0) in[static_cast<std::size_t>(slot_[v])] = 1;
  }
  for (ClassId v : output.data()) {
    if (slot_[v] >= 0) out[static_cast<std::size_t>(slot_[v])] = 1;
  }
  ++examples_;
  for (std::size_t a = 0; a < k; ++a) {
    if (!in[a]) continue;
    ++n1_[a];
    for (std::size_t b = 0; b < k; ++b) {
      if (out[b] && !in[b]) ++n12_[a * k + b];
    }
  }
}

void CooccurrenceTable::merge(const CooccurrenceTable& other) {
  if (other.classes_ != classes_) throw InvalidInput("cannot merge co-occurrence tables over different classes");
  examples_ += other.examples_;
  for (std::size_t i = 0; i < n1_.size(); ++i) n1_[i] += other.n1_[i];
  for (std::size_t i = 0; i < n12_.size(); ++i) n12_[i] += other.n12_[i];
}

std::size_t CooccurrenceTable::count(ClassId c1) const { return n1_[index(c1)]; }

std::size_t CooccurrenceTable::count(ClassId c1, ClassId c2) const {
  return n12_[index(c1) * classes_.size() + index(c2)];
}

double CooccurrenceTable::probability(ClassId c1, ClassId c2, const std::string& corpus) const {
  const std::size_t n = count(c1);
  if (n == 0) {
    throw UndefinedMetric("co-occurrence undefined: no " + corpus + " input contains class " + std::to_string(c1));
  }
  return static_cast<double>(count(c1, c2)) / static_cast<double>(n);
}

nlohmann::json CooccurrenceTable::to_json(const ClassTaxonomy& taxonomy) const {
  nlohmann::json j = {{"examples", examples_}};
  nlohmann::json n1 = nlohmann::json::object();
  nlohmann::json n12 = nlohmann::json::object();
  for (ClassId a : classes_) {
    if (count(a) == 0) continue;
    n1[taxonomy.info(a).name] = count(a);
    nlohmann::json row = nlohmann::json::object();
    for (ClassId b : classes_) {
      if (count(a, b) > 0) row[taxonomy.info(b).name] = count(a, b);
    }
    n12[taxonomy.info(a).name] = row;
  }
  j["n_c1"] = n1;
  j["n_c1_c2"] = n12;
  return j;
}

CooccurrenceTable cooccurrence_table(const std::vector<LabelmapPair>& pairs, const ClassTaxonomy& taxonomy) {
  CooccurrenceTable t(taxonomy);
  for (const auto& [in, out] : pairs) t.add(in, out);
  return t;
}

double cooccurrence_similarity(const CooccurrenceTable& train, const CooccurrenceTable& generated, ClassId c1,
                               ClassId c2) {
  const double pt = train.probability(c1, c2, "train");
  const double pg = generated.probability(c1, c2, "generated");
  return std::clamp(1.0 - std::abs(pt - pg), 0.0, 1.0);
}

double cooccurrence_similarity(const std::vector<LabelmapPair>& train, const std::vector<LabelmapPair>& generated,
                               ClassId c1, ClassId c2, const ClassTaxonomy& taxonomy) {
  return cooccurrence_similarity(cooccurrence_table(train, taxonomy), cooccurrence_table(generated, taxonomy), c1,
                                 c2);
}

nlohmann::json cooccurrence_report(const CooccurrenceTable& train, const CooccurrenceTable& generated,
                                   const std::vector<std::pair<ClassId, ClassId>>& pairs,
                                   const ClassTaxonomy& taxonomy) {
  nlohmann::json out = nlohmann::json::array();
  const auto entry = [&](ClassId given, ClassId target) {
    nlohmann::json e = {{"given", taxonomy.info(given).name}, {"target", taxonomy.info(target).name}};
    try {
      e["p_train"] = train.probability(given, target, "train");
      e["p_gen"] = generated.probability(given, target, "generated");
      e["sim_oc"] = cooccurrence_similarity(train, generated, given, target);
    } catch (const UndefinedMetric& ex) {
      e["error"] = ex.what();
    }
    return e;
  };
  for (const auto& [a, b] : pairs) {
    out.push_back({{"pair", {taxonomy.info(a).name, taxonomy.info(b).name}},
                   {"target_given_first", entry(a, b)},
                   {"first_given_target", entry(b, a)}});
  }
  return out;
}

// ---------------------------------------------------------------------------

ConfusionAccumulator::ConfusionAccumulator(const ClassTaxonomy& taxonomy) {
  slot_.fill(-1);
  for (const ClassInfo& c : taxonomy.classes()) {
    slot_[c.id] = static_cast<int>(classes_.size());
    classes_.push_back(c.id);
  }
  matrix_.assign(classes_.size() * (classes_.size() + 1), 0);
}

void ConfusionAccumulator::add_count(ClassId gt, ClassId predicted, std::uint64_t n) {
  const int g = slot_[gt];
  if (g < 0) return;  // unlabeled or foreign ground truth carries no score
  const int p = slot_[predicted];
  const std::size_t col = p < 0 ? classes_.size() : static_cast<std::size_t>(p);
  matrix_[static_cast<std::size_t>(g) * (classes_.size() + 1) + col] += n;
  total_ += n;
}

void ConfusionAccumulator::add(const Grid<ClassId>& predicted, const Grid<ClassId>& ground_truth) {
  if (!predicted.same_shape(ground_truth)) throw InvalidInput("prediction and ground truth differ in size");
  const auto p = predicted.data();
  const auto g = ground_truth.data();
  for (std::size_t i = 0; i < p.size(); ++i) add_count(g[i], p[i], 1);
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
  if (other.classes_ != classes_) throw InvalidInput("cannot merge confusion matrices over different classes");
  for (std::size_t i = 0; i < matrix_.size(); ++i) matrix_[i] += other.matrix_[i];
  total_ += other.total_;
}

std::uint64_t ConfusionAccumulator::count(ClassId gt, ClassId predicted) const {
  const int g = slot_[gt];
  const int p = slot_[predicted];
  if (g < 0 || p < 0) return 0;
  return cell(static_cast<std::size_t>(g), static_cast<std::size_t>(p));
}

SegmentationScores segmentation_scores(const ConfusionAccumulator& acc) {
  if (acc.total() == 0) throw UndefinedMetric("segmentation scores need at least one labeled pixel");
  const std::size_t k = acc.num_classes();
  SegmentationScores s;
  s.per_class_iou.assign(k, std::nullopt);
  std::uint64_t correct = 0;
  double iou_sum = 0.0;
  double acc_sum = 0.0;
  std::size_t iou_n = 0;
  std::size_t acc_n = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::uint64_t tp = acc.cell(c, c);
    std::uint64_t gt_total = 0;
    std::uint64_t pred_total = 0;
    for (std::size_t j = 0; j <= k; ++j) gt_total += acc.cell(c, j);
    for (std::size_t i = 0; i < k; ++i) pred_total += acc.cell(i, c);
    correct += tp;
    const std::uint64_t uni = gt_total + pred_total - tp;
    if (uni == 0) continue;
    const double iou = static_cast<double>(tp) / static_cast<double>(uni);
    s.per_class_iou[c] = iou;
    iou_sum += iou;
    ++iou_n;
    if (gt_total > 0) {
      acc_sum += static_cast<double>(tp) / static_cast<double>(gt_total);
      ++acc_n;
    }
  }
  s.miou = iou_sum / static_cast<double>(iou_n);
  s.mean_accuracy = acc_n ? acc_sum / static_cast<double>(acc_n) : 0.0;
  s.pixel_accuracy = static_cast<double>(correct) / static_cast<double>(acc.total());
  return s;
}

nlohmann::json SegmentationScores::to_json(const std::vector<ClassId>& classes, const ClassTaxonomy& taxonomy) const {
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t i = 0; i < classes.size() && i < per_class_iou.size(); ++i) {
    if (per_class_iou[i]) per[taxonomy.info(classes[i]).name] = *per_class_iou[i];
  }
  return {{"miou", miou}, {"mean_accuracy", mean_accuracy}, {"pixel_accuracy", pixel_accuracy}, {"per_class_iou", per}};
}

}  // namespace densify
