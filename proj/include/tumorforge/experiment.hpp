#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <vector>

#include "tumorforge/core_data.hpp"
#include "tumorforge/evaluation.hpp"
#include "tumorforge/networks.hpp"
#include "tumorforge/training.hpp"

namespace tumorforge {

/// One row per slice: Ψ(image) globally average-pooled over space.
Eigen::MatrixXd extract_features(const std::vector<const SliceRecord*>& records, const NetworkHandle& psi);
double fid_between(const std::vector<const SliceRecord*>& a, const std::vector<const SliceRecord*>& b,
                   const FeatureExtractorOptions& feature, const FidOptions& options = {});

/// Slices of i.i.d. uniform noise over the normalized range, inside a full-frame brain.
DatasetManifest uniform_noise_set(int n, int size, std::uint64_t seed);

/// Argmax labels of the segmentation network.
LabelMap predict_labels(const NetworkHandle& net, const MCSlice& images);

struct SegEvaluation {
  std::array<RegionCounts, 3> counts{};  // pooled over all slices
  SegScores scores;
  int slices = 0;
};
SegEvaluation evaluate_segmentation(const NetworkHandle& net, const std::vector<const SliceRecord*>& records);

struct ExperimentRow {
  std::string method;
  SegScores scores;
};

struct AugmentationReport {
  ExperimentRow baseline;
  ExperimentRow augmented;
  TrainReport baseline_training;
  TrainReport augmented_training;
  int real_count = 0;
  int synth_count = 0;
};

/// Real "train" records plus the first round(ratio·|train|) synthesized
/// records (capped by availability) as "train", real "val" as "val".
DatasetManifest augmented_manifest(const DatasetManifest& real, const DatasetManifest& synth, double synth_ratio);

struct AugmentationOptions {
  /// Synthesized records added per real training record (capped by availability).
  double synth_ratio = 1.0;
};

/// Trains a segmentation network on the "train" split of `real` and another
/// on it plus synthesized records, both with cfg (same seed), validates on
/// `real`'s "val" split and scores on every record of `test`.
/// Throws SplitOverlap when a test id is also a training id.
AugmentationReport augmentation_experiment(const DatasetManifest& real, const DatasetManifest& synth,
                                           const DatasetManifest& test, const TrainConfig& cfg,
                                           const AugmentationOptions& options = {});

/// Table laid out as method × (Dice, Sensitivity, Precision) × (WT, TC, ET).
std::string format_table(const std::vector<ExperimentRow>& rows);
std::string format_csv(const std::vector<ExperimentRow>& rows);
/// Parses format_csv output back into rows. Throws CorruptRecord.
std::vector<ExperimentRow> parse_csv(const std::string& text);

}  // namespace tumorforge
