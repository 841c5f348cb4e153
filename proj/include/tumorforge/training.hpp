#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tumorforge/core_data.hpp"
#include "tumorforge/geometry.hpp"
#include "tumorforge/losses.hpp"
#include "tumorforge/networks.hpp"

namespace tumorforge {

enum class Stage { kGBinary, kGGrade, kInpaint, kSegmentation };
std::string_view to_string(Stage stage);

/// One optimization step, reported through TrainConfig::on_step.
struct StepLog {
  Stage stage = Stage::kGBinary;
  int epoch = 0;
  int step = 0;
  std::map<std::string, double> terms;

  /// `stage=inpaint epoch=3 step=41 adv=0.0071 ...`
  std::string to_line() const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 200;
  int batch_size = 8;
  int checkpoint_every = 10;
  std::uint64_t seed = 0;
  LossWeights loss_weights;
  std::pair<double, double> adam_betas{0.9, 0.999};
  /// Channel multiplier of the trained networks; <= 0 picks auto_width(size).
  double width = 0.0;
  /// Ψ used by the content term.
  FeatureExtractorOptions feature;
  /// When set, every checkpoint is also written here.
  std::filesystem::path checkpoint_dir;
  std::function<void(const StepLog&)> on_step;

  /// Defaults per stage (learning rate 2e-4 for segmentation, 1e-3 otherwise).
  static TrainConfig for_stage(Stage stage);
  /// Throws InvalidConfig.
  void validate() const;
};

struct CheckpointInfo {
  int epoch = 0;
  double validation_loss = 0.0;
  std::filesystem::path path;
};

struct TrainReport {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // per epoch
  /// Validation loss of the freshly initialized network.
  double initial_val_loss = 0.0;
  /// Per-epoch means of the logged step terms (e.g. "pix", "adv", "d").
  std::map<std::string, std::vector<double>> terms;
  std::vector<StepLog> steps;
  std::vector<CheckpointInfo> checkpoints;
  int chosen_epoch = 0;
  double wall_seconds = 0.0;
};

// ---------------------------------------------------------------------------
// Stage inputs

torch::Tensor to_tensor(const Plane& plane);    // [1, H, W]
torch::Tensor to_tensor(const MCSlice& slice);  // [4, H, W]
Plane to_plane(const torch::Tensor& t);          // from [H, W] or [1, H, W]

/// G_binary input: rendered c1 disk ⧺ brain shape.
torch::Tensor binary_input(const ConcentricCircles& circles, const BinaryMask& brain);
/// G_grade input: grade-valued concentric circles ⧺ binary tumor mask.
torch::Tensor grade_input(const ConcentricCircles& circles, const BinaryMask& tumor);
/// G_inpaint inputs: masked contrasts ⧺ grade mask, and the grade mask alone.
std::pair<torch::Tensor, torch::Tensor> inpaint_input(const MCSlice& images, const GradeMask& grade);
/// output·m + x·(1 − m), per pixel; exact selection so unmasked pixels equal x bit for bit.
torch::Tensor composite(const torch::Tensor& output, const torch::Tensor& x, const torch::Tensor& mask);

/// Records of a split; falls back to all records when the manifest has no
/// such split. `tumor_only` drops tumor-free records.
std::vector<const SliceRecord*> split_records(const DatasetManifest& data, std::string_view split,
                                              bool tumor_only);

// ---------------------------------------------------------------------------
// Training loops. Each trains on the "train" split and validates on "val"
// (on "train" when there is no validation data), returning the checkpoint
// with the lowest validation loss.

struct TrainedNetwork {
  NetworkHandle network;
  TrainReport report;
};

TrainedNetwork train_g_binary(const DatasetManifest& data, const TrainConfig& cfg);
TrainedNetwork train_g_grade(const DatasetManifest& data, const TrainConfig& cfg);
TrainedNetwork train_segmentation(const DatasetManifest& data, const TrainConfig& cfg);

struct TrainedInpaint {
  NetworkHandle generator;
  NetworkHandle discriminator;
  TrainReport report;
};
TrainedInpaint train_inpaint(const DatasetManifest& data, const TrainConfig& cfg);

/// Alternating adversarial steps on one batch. Exposed for probes.
class InpaintTrainer {
 public:
  InpaintTrainer(int size, const TrainConfig& cfg);

  /// Ascent step on mean(D(real)) + mean(1 − D(composite fake)); returns that value.
  double d_step(const torch::Tensor& images, const torch::Tensor& grade);
  /// Descent step on the weighted generator loss with D frozen; returns the
  /// weighted terms under "total", "pix", "cont" and "adv".
  std::map<std::string, double> g_step(const torch::Tensor& images, const torch::Tensor& grade);
  /// Composited generator output without gradients.
  torch::Tensor generate(const torch::Tensor& images, const torch::Tensor& grade) const;

  const NetworkHandle& generator() const { return g_; }
  const NetworkHandle& discriminator() const { return d_; }

 private:
  torch::Tensor fake(const torch::Tensor& images, const torch::Tensor& grade) const;

  TrainConfig cfg_;
  NetworkHandle g_;
  NetworkHandle d_;
  std::optional<NetworkHandle> psi_;
  std::unique_ptr<torch::optim::Adam> g_opt_;
  std::unique_ptr<torch::optim::Adam> d_opt_;
};

/// Validation loss of a trained network on records, per kind: mean L1 for the
/// mask generators, composited mean L1 for G_inpaint, cross-entropy for the
/// segmentation network.
double validation_loss(const NetworkHandle& network, const std::vector<const SliceRecord*>& records);

/// Lowest validation loss; ties go to the earliest epoch. Throws NoCheckpoints.
const CheckpointInfo& select_best(const std::vector<CheckpointInfo>& checkpoints);
/// Loads every `*.tfck` of `kind` in `directory`, scores it on the "val"
/// split of `validation` and returns the best. Throws NoCheckpoints.
NetworkHandle select_best(const std::filesystem::path& directory, NetworkKind kind,
                          const DatasetManifest& validation);

}  // namespace tumorforge
