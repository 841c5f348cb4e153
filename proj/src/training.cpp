#include "tumorforge/training.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "tumorforge/errors.hpp"
#include "tumorforge/evaluation.hpp"

namespace tumorforge {

namespace fs = std::filesystem;

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::kGBinary: return "g_binary";
    case Stage::kGGrade: return "g_grade";
    case Stage::kInpaint: return "inpaint";
    case Stage::kSegmentation: return "segmentation";
  }
  return "unknown";
}

std::string StepLog::to_line() const {
  std::ostringstream out;
  out.precision(8);
  out << "stage=" << to_string(stage) << " epoch=" << epoch << " step=" << step;
  for (const auto& [name, value] : terms) out << ' ' << name << '=' << value;
  return out.str();
}

TrainConfig TrainConfig::for_stage(Stage stage) {
  TrainConfig cfg;
  if (stage == Stage::kSegmentation) cfg.learning_rate = 2e-4;
  return cfg;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be > 0");
  if (epochs < 0) throw InvalidConfig("epochs must be >= 0");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (checkpoint_every < 1) throw InvalidConfig("checkpoint_every must be >= 1");
  const auto [b1, b2] = adam_betas;
  if (!(b1 >= 0.0 && b1 < 1.0 && b2 >= 0.0 && b2 < 1.0)) throw InvalidConfig("adam betas must lie in [0, 1)");
  loss_weights.validate();
}

// ---------------------------------------------------------------------------
// Stage inputs

torch::Tensor to_tensor(const Plane& plane) {
  auto values = plane.values();
  return torch::from_blob(const_cast<float*>(values.data()), {1, plane.height(), plane.width()}, torch::kFloat32)
      .clone();
}

torch::Tensor to_tensor(const MCSlice& slice) {
  std::vector<torch::Tensor> channels;
  for (int c = 0; c < kNumContrasts; ++c) channels.push_back(to_tensor(slice.channel(c)));
  return torch::cat(channels, 0);
}

Plane to_plane(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat32).contiguous();
  if (!(c.dim() == 2 || (c.dim() == 3 && c.size(0) == 1))) throw ShapeMismatch("to_plane expects [H, W] or [1, H, W]");
  const auto h = c.size(-2), w = c.size(-1);
  const float* p = c.data_ptr<float>();
  return Plane(static_cast<int>(h), static_cast<int>(w), std::vector<float>(p, p + h * w));
}

torch::Tensor binary_input(const ConcentricCircles& circles, const BinaryMask& brain) {
  const BinaryMask disk = render_disk(circles.cx, circles.cy, circles.r1, brain.height(), brain.width());
  return torch::cat({to_tensor(disk.plane()), to_tensor(brain.plane())}, 0);
}

torch::Tensor grade_input(const ConcentricCircles& circles, const BinaryMask& tumor) {
  const GradeMask rings = render_circles(circles, tumor.height(), tumor.width());
  return torch::cat({to_tensor(rings.plane()), to_tensor(tumor.plane())}, 0);
}

std::pair<torch::Tensor, torch::Tensor> inpaint_input(const MCSlice& images, const GradeMask& grade) {
  const torch::Tensor g = to_tensor(grade.plane());
  const torch::Tensor x = to_tensor(images);
  const torch::Tensor keep = (g <= 0.0f).to(torch::kFloat32);
  return {torch::cat({x * keep, g}, 0), g};
}

torch::Tensor composite(const torch::Tensor& output, const torch::Tensor& x, const torch::Tensor& mask) {
  return torch::where(mask > 0.5f, output, x);
}

std::vector<const SliceRecord*> split_records(const DatasetManifest& data, std::string_view split,
                                              bool tumor_only) {
  std::vector<const SliceRecord*> out;
  if (data.splits.count(std::string(split))) {
    out = data.split(split);
  } else {
    for (const auto& r : data.records) out.push_back(&r);
  }
  if (tumor_only) std::erase_if(out, [](const SliceRecord* r) { return !r->has_tumor(); });
  return out;
}

namespace {

// Stacked per-record tensors of one stage: network input and target, except
// for inpainting where x holds the images and y the grade masks.
struct StageData {
  torch::Tensor x;
  torch::Tensor y;
  std::int64_t size() const { return x.defined() ? x.size(0) : 0; }
};

GradeMask grade_of(const SliceRecord& r) {
  return r.grade_mask ? *r.grade_mask : GradeMask::zeros(r.images.height(), r.images.width());
}

StageData build_stage_data(NetworkKind kind, const std::vector<const SliceRecord*>& records) {
  std::vector<torch::Tensor> xs, ys;
  for (const SliceRecord* r : records) {
    const GradeMask grade = grade_of(*r);
    switch (kind) {
      case NetworkKind::kGBinary:
        xs.push_back(binary_input(simplify_to_circles(grade), brain_support(*r)));
        ys.push_back(to_tensor(binarize(grade).plane()));
        break;
      case NetworkKind::kGGrade:
        xs.push_back(grade_input(simplify_to_circles(grade), binarize(grade)));
        ys.push_back(to_tensor(grade.plane()));
        break;
      case NetworkKind::kGInpaint:
        xs.push_back(to_tensor(r->images));
        ys.push_back(to_tensor(grade.plane()));
        break;
      case NetworkKind::kUNetSeg: {
        xs.push_back(to_tensor(r->images));
        const LabelMap labels = labels_from_grade(grade, brain_support(*r));
        ys.push_back(torch::tensor(std::vector<std::int64_t>(labels.labels.begin(), labels.labels.end()))
                         .reshape({labels.height, labels.width}));
        break;
      }
      default: throw InvalidConfig("no training data layout for " + std::string(to_string(kind)));
    }
  }
  if (xs.empty()) return {};
  return {torch::stack(xs), torch::stack(ys)};
}

// Per-batch objective of the single-network stages.
torch::Tensor supervised_loss(const NetworkHandle& net, const torch::Tensor& x, const torch::Tensor& y,
                              Reduction reduction) {
  if (net.kind == NetworkKind::kUNetSeg) {
    return torch::nn::functional::cross_entropy(
        net.forward_raw(x), y,
        torch::nn::functional::CrossEntropyFuncOptions().reduction(
            reduction == Reduction::kSum ? torch::nn::CrossEntropyLossOptions::reduction_t(torch::kSum)
                                         : torch::nn::CrossEntropyLossOptions::reduction_t(torch::kMean)));
  }
  return l1_loss(net.forward(x), y, reduction);
}

torch::Tensor inpaint_generate(const NetworkHandle& g, const torch::Tensor& images, const torch::Tensor& grade) {
  const torch::Tensor mask = (grade > 0.0f).to(torch::kFloat32);
  const torch::Tensor x = torch::cat({images * (1.0f - mask), grade}, 1);
  return composite(g.forward(x, grade), images, mask);
}

constexpr std::int64_t kEvalBatch = 32;

// Mean per-element loss over the whole set.
double evaluate(const NetworkHandle& net, const StageData& data) {
  torch::NoGradGuard no_grad;
  double total = 0.0;
  double count = 0.0;
  for (std::int64_t i = 0; i < data.size(); i += kEvalBatch) {
    const auto n = std::min(kEvalBatch, data.size() - i);
    const auto x = data.x.narrow(0, i, n);
    const auto y = data.y.narrow(0, i, n);
    torch::Tensor loss;
    double elements = 0.0;
    if (net.kind == NetworkKind::kGInpaint) {
      loss = l1_loss(inpaint_generate(net, x, y), x, Reduction::kSum);
      elements = static_cast<double>(x.numel());
    } else {
      loss = supervised_loss(net, x, y, Reduction::kSum);
      elements = static_cast<double>(y.numel());
    }
    total += loss.item<double>();
    count += elements;
  }
  return count > 0.0 ? total / count : 0.0;
}

int infer_size(const std::vector<const SliceRecord*>& records) {
  const auto& images = records.front()->images;
  if (images.height() != images.width()) throw DimensionMismatch("training slices must be square");
  for (const SliceRecord* r : records) {
    if (r->images.height() != images.height() || r->images.width() != images.width()) {
      throw DimensionMismatch("training slices differ in size");
    }
  }
  return images.height();
}

struct Splits {
  std::vector<const SliceRecord*> train;
  std::vector<const SliceRecord*> val;
};

Splits stage_splits(const DatasetManifest& data, bool tumor_only, Stage stage) {
  Splits s;
  s.train = split_records(data, "train", tumor_only);
  if (s.train.empty()) {
    throw EmptyDataset(std::string(to_string(stage)) + ": no usable training records" +
                       (tumor_only ? " (none carries a tumor)" : ""));
  }
  if (data.splits.count("val")) s.val = split_records(data, "val", tumor_only);
  if (s.val.empty()) s.val = s.train;
  return s;
}

fs::path checkpoint_path(const fs::path& dir, NetworkKind kind, int epoch) {
  char name[64];
  std::snprintf(name, sizeof(name), "%s_epoch%04d.tfck", std::string(to_string(kind)).c_str(), epoch);
  return dir / name;
}

std::vector<std::int64_t> shuffled(std::int64_t n, std::mt19937_64& rng) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

torch::Tensor batch_index(const std::vector<std::int64_t>& order, std::size_t begin, std::size_t end) {
  return torch::tensor(std::vector<std::int64_t>(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                                 order.begin() + static_cast<std::ptrdiff_t>(end)));
}

void append_epoch_terms(TrainReport& report, const std::map<std::string, double>& sums, int steps) {
  for (const auto& [name, sum] : sums) report.terms[name].push_back(sum / std::max(steps, 1));
}

// Tracks checkpoints and keeps a copy of the best one.
class CheckpointKeeper {
 public:
  CheckpointKeeper(const TrainConfig& cfg, TrainReport& report) : cfg_(cfg), report_(report) {
    if (!cfg.checkpoint_dir.empty()) {
      std::error_code ec;
      fs::create_directories(cfg.checkpoint_dir, ec);
      if (ec) throw IOFailure("cannot create " + cfg.checkpoint_dir.string() + ": " + ec.message());
    }
  }

  bool due(int epoch) const { return epoch % cfg_.checkpoint_every == 0 || epoch == cfg_.epochs; }

  // Returns true when this checkpoint is the new best.
  bool save(NetworkHandle& net, const NetworkHandle* partner, int epoch, double val) {
    net.epoch = epoch;
    net.validation_loss = val;
    CheckpointInfo info{epoch, val, {}};
    if (!cfg_.checkpoint_dir.empty()) {
      info.path = checkpoint_path(cfg_.checkpoint_dir, net.kind, epoch);
      save_checkpoint(net, info.path);
      if (partner) {
        NetworkHandle p = *partner;
        p.epoch = epoch;
        p.validation_loss = val;
        save_checkpoint(p, checkpoint_path(cfg_.checkpoint_dir, partner->kind, epoch));
      }
    }
    report_.checkpoints.push_back(info);
    if (best_.has_value() && !(val < best_val_)) return false;
    best_ = net.clone();
    if (partner) best_partner_ = partner->clone();
    best_val_ = val;
    report_.chosen_epoch = epoch;
    return true;
  }

  NetworkHandle best_or(const NetworkHandle& fallback) const { return best_ ? *best_ : fallback; }
  NetworkHandle best_partner_or(const NetworkHandle& fallback) const {
    return best_partner_ ? *best_partner_ : fallback;
  }

 private:
  const TrainConfig& cfg_;
  TrainReport& report_;
  std::optional<NetworkHandle> best_;
  std::optional<NetworkHandle> best_partner_;
  double best_val_ = 0.0;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

TrainedNetwork train_supervised(const DatasetManifest& data, const TrainConfig& cfg, Stage stage, NetworkKind kind,
                                bool tumor_only) {
  cfg.validate();
  torch::set_num_threads(1);
  const auto start = std::chrono::steady_clock::now();
  const Splits splits = stage_splits(data, tumor_only, stage);
  const int size = infer_size(splits.train);
  const StageData train = build_stage_data(kind, splits.train);
  const StageData val = build_stage_data(kind, splits.val);

  TrainedNetwork result;
  NetworkHandle net = build_network(kind, {size, cfg.width, cfg.seed});
  TrainReport& report = result.report;
  report.initial_val_loss = evaluate(net, val);
  if (cfg.epochs == 0) {
    net.validation_loss = report.initial_val_loss;
    result.network = net;
    report.wall_seconds = seconds_since(start);
    return result;
  }

  torch::optim::Adam opt(net.module->parameters(),
                         torch::optim::AdamOptions(cfg.learning_rate)
                             .betas({cfg.adam_betas.first, cfg.adam_betas.second}));
  std::mt19937_64 rng(cfg.seed);
  CheckpointKeeper keeper(cfg, report);
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    net.module->train();
    const auto order = shuffled(train.size(), rng);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const auto idx = batch_index(order, b, std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size)));
      const torch::Tensor loss =
          supervised_loss(net, train.x.index_select(0, idx), train.y.index_select(0, idx), cfg.loss_weights.reduction);
      opt.zero_grad();
      loss.backward();
      opt.step();
      const double value = loss.item<double>();
      loss_sum += value;
      ++batches;
      ++step;
      StepLog log{stage, epoch, step, {{"loss", value}}};
      if (cfg.on_step) cfg.on_step(log);
      report.steps.push_back(std::move(log));
    }
    report.train_loss.push_back(loss_sum / batches);
    report.terms["loss"].push_back(loss_sum / batches);
    const double v = evaluate(net, val);
    report.val_loss.push_back(v);
    if (keeper.due(epoch)) keeper.save(net, nullptr, epoch, v);
  }
  result.network = keeper.best_or(net);
  report.wall_seconds = seconds_since(start);
  return result;
}

}  // namespace

TrainedNetwork train_g_binary(const DatasetManifest& data, const TrainConfig& cfg) {
  return train_supervised(data, cfg, Stage::kGBinary, NetworkKind::kGBinary, true);
}

TrainedNetwork train_g_grade(const DatasetManifest& data, const TrainConfig& cfg) {
  return train_supervised(data, cfg, Stage::kGGrade, NetworkKind::kGGrade, true);
}

TrainedNetwork train_segmentation(const DatasetManifest& data, const TrainConfig& cfg) {
  return train_supervised(data, cfg, Stage::kSegmentation, NetworkKind::kUNetSeg, false);
}

// ---------------------------------------------------------------------------
// Adversarial inpainting

InpaintTrainer::InpaintTrainer(int size, const TrainConfig& cfg)
    : cfg_(cfg),
      g_(build_g_inpaint({size, cfg.width, cfg.seed})),
      d_(build_d_inpaint({size, cfg.width, cfg.seed + 1})) {
  cfg.validate();
  if (cfg.loss_weights.w_cont > 0.0) psi_ = build_feature_extractor(cfg.feature);
  const auto adam = [&] {
    return torch::optim::AdamOptions(cfg.learning_rate).betas({cfg.adam_betas.first, cfg.adam_betas.second});
  };
  g_opt_ = std::make_unique<torch::optim::Adam>(g_.module->parameters(), adam());
  d_opt_ = std::make_unique<torch::optim::Adam>(d_.module->parameters(), adam());
}

torch::Tensor InpaintTrainer::fake(const torch::Tensor& images, const torch::Tensor& grade) const {
  return inpaint_generate(g_, images, grade);
}

torch::Tensor InpaintTrainer::generate(const torch::Tensor& images, const torch::Tensor& grade) const {
  torch::NoGradGuard no_grad;
  return fake(images, grade);
}

double InpaintTrainer::d_step(const torch::Tensor& images, const torch::Tensor& grade) {
  d_.set_requires_grad(true);
  const torch::Tensor f = generate(images, grade);
  const torch::Tensor d_real = d_.forward(torch::cat({images, grade}, 1));
  const torch::Tensor d_fake = d_.forward(torch::cat({f, grade}, 1));
  const torch::Tensor objective = adversarial_loss(d_real, d_fake);
  d_opt_->zero_grad();
  (-objective).backward();
  d_opt_->step();
  return objective.item<double>();
}

std::map<std::string, double> InpaintTrainer::g_step(const torch::Tensor& images, const torch::Tensor& grade) {
  d_.set_requires_grad(false);
  const torch::Tensor f = fake(images, grade);
  torch::Tensor d_fake;
  if (cfg_.loss_weights.w_adv > 0.0) d_fake = d_.forward(torch::cat({f, grade}, 1));
  const InpaintLoss loss = total_inpaint_loss(f, images, d_fake, psi_ ? &*psi_ : nullptr, cfg_.loss_weights);
  g_opt_->zero_grad();
  loss.total.backward();
  g_opt_->step();
  d_.set_requires_grad(true);
  return {{"total", loss.total.item<double>()},
          {"pix", loss.pix.item<double>()},
          {"cont", loss.cont.item<double>()},
          {"adv", loss.adv.item<double>()}};
}

TrainedInpaint train_inpaint(const DatasetManifest& data, const TrainConfig& cfg) {
  cfg.validate();
  torch::set_num_threads(1);
  const auto start = std::chrono::steady_clock::now();
  const Splits splits = stage_splits(data, true, Stage::kInpaint);
  const int size = infer_size(splits.train);
  const StageData train = build_stage_data(NetworkKind::kGInpaint, splits.train);
  const StageData val = build_stage_data(NetworkKind::kGInpaint, splits.val);

  TrainedInpaint result;
  InpaintTrainer trainer(size, cfg);
  TrainReport& report = result.report;
  report.initial_val_loss = evaluate(trainer.generator(), val);
  NetworkHandle g = trainer.generator();
  NetworkHandle d = trainer.discriminator();
  if (cfg.epochs == 0) {
    g.validation_loss = report.initial_val_loss;
    result.generator = g;
    result.discriminator = d;
    report.wall_seconds = seconds_since(start);
    return result;
  }

  std::mt19937_64 rng(cfg.seed);
  CheckpointKeeper keeper(cfg, report);
  const bool adversarial = cfg.loss_weights.w_adv > 0.0;
  int step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    g.module->train();
    d.module->train();
    const auto order = shuffled(train.size(), rng);
    std::map<std::string, double> sums;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const auto idx = batch_index(order, b, std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size)));
      const torch::Tensor images = train.x.index_select(0, idx);
      const torch::Tensor grade = train.y.index_select(0, idx);
      StepLog log{Stage::kInpaint, epoch, ++step, {}};
      if (adversarial) log.terms["d"] = trainer.d_step(images, grade);
      for (const auto& [name, value] : trainer.g_step(images, grade)) log.terms[name] = value;
      for (const auto& [name, value] : log.terms) sums[name] += value;
      ++batches;
      if (cfg.on_step) cfg.on_step(log);
      report.steps.push_back(std::move(log));
    }
    report.train_loss.push_back(sums["total"] / batches);
    append_epoch_terms(report, sums, batches);
    const double v = evaluate(g, val);
    report.val_loss.push_back(v);
    if (keeper.due(epoch)) keeper.save(g, &d, epoch, v);
  }
  result.generator = keeper.best_or(g);
  result.discriminator = keeper.best_partner_or(d);
  report.wall_seconds = seconds_since(start);
  return result;
}

// ---------------------------------------------------------------------------
// Selection

double validation_loss(const NetworkHandle& network, const std::vector<const SliceRecord*>& records) {
  const bool tumor_only = network.kind != NetworkKind::kUNetSeg;
  std::vector<const SliceRecord*> usable = records;
  if (tumor_only) std::erase_if(usable, [](const SliceRecord* r) { return !r->has_tumor(); });
  if (usable.empty()) throw EmptyDataset("no records to validate " + std::string(to_string(network.kind)));
  return evaluate(network, build_stage_data(network.kind, usable));
}

const CheckpointInfo& select_best(const std::vector<CheckpointInfo>& checkpoints) {
  if (checkpoints.empty()) throw NoCheckpoints("nothing to select from");
  const CheckpointInfo* best = &checkpoints.front();
  for (const auto& c : checkpoints) {
    if (c.validation_loss < best->validation_loss ||
        (c.validation_loss == best->validation_loss && c.epoch < best->epoch)) {
      best = &c;
    }
  }
  return *best;
}

NetworkHandle select_best(const fs::path& directory, NetworkKind kind, const DatasetManifest& validation) {
  std::vector<fs::path> files;
  const std::string prefix = std::string(to_string(kind)) + "_epoch";
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(directory, ec)) {
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() == ".tfck" && name.rfind(prefix, 0) == 0) files.push_back(entry.path());
  }
  if (files.empty()) throw NoCheckpoints("no " + std::string(to_string(kind)) + " checkpoints in " + directory.string());
  std::sort(files.begin(), files.end());
  const bool tumor_only = kind != NetworkKind::kUNetSeg;
  auto records = split_records(validation, "val", tumor_only);
  std::vector<CheckpointInfo> infos;
  std::vector<NetworkHandle> nets;
  for (const auto& f : files) {
    NetworkHandle net = load_checkpoint(f);
    net.validation_loss = validation_loss(net, records);
    infos.push_back({net.epoch, net.validation_loss, f});
    nets.push_back(std::move(net));
  }
  const CheckpointInfo& best = select_best(infos);
  return nets[static_cast<std::size_t>(&best - infos.data())];
}

}  // namespace tumorforge
