#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tumorforge/core_data.hpp"

namespace tumorforge {

/// Exclusive per-pixel classes predicted by the segmentation network.
enum class SegLabel : std::uint8_t { kBackground = 0, kBrain = 1, kEdema = 2, kEnhancing = 3, kNecrotic = 4 };
inline constexpr int kNumSegLabels = 5;

struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = 0);
  std::uint8_t& operator()(int row, int col) { return labels[static_cast<std::size_t>(row * width + col)]; }
  std::uint8_t operator()(int row, int col) const { return labels[static_cast<std::size_t>(row * width + col)]; }
};

/// Background outside the brain, non-tumor brain, then one label per grade.
LabelMap labels_from_grade(const GradeMask& grade, const BinaryMask& brain);
/// Tumor labels back to grade values; background and brain map to 0.
GradeMask grade_from_labels(const LabelMap& labels);

enum class Region { kWT = 0, kTC = 1, kET = 2 };
inline constexpr std::array<Region, 3> kRegions{Region::kWT, Region::kTC, Region::kET};
inline constexpr std::array<const char*, 3> kRegionNames{"WT", "TC", "ET"};

/// WT = grade > 0, TC = grade >= 0.75, ET = grade == 0.75.
bool in_region(Region region, float grade);

struct RegionCounts {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;

  RegionCounts& operator+=(const RegionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  std::int64_t total() const { return tp + fp + fn + tn; }
};

struct RegionScores {
  double dice = 0.0;
  double sensitivity = 0.0;
  double precision = 0.0;
};

struct SegScores {
  std::array<RegionScores, 3> regions{};
  const RegionScores& operator[](Region r) const { return regions[static_cast<std::size_t>(r)]; }
};

std::array<RegionCounts, 3> region_counts(const GradeMask& pred, const GradeMask& gt);
/// Dice = 2TP/(2TP+FP+FN), sensitivity = TP/(TP+FN), precision = TP/(TP+FP).
/// A region empty in both maps scores 1; a zero denominator otherwise scores 0.
RegionScores scores_from_counts(const RegionCounts& counts);
SegScores seg_metrics(const LabelMap& pred, const GradeMask& gt);
SegScores seg_metrics(const GradeMask& pred, const GradeMask& gt);

struct FidOptions {
  double ridge = 1e-6;
  /// Weight of the scaled-identity target in covariance shrinkage; 0 disables it.
  double shrinkage = 0.0;
};

/// Fréchet distance between Gaussians fitted to the rows of `a` and `b`.
/// Covariances are unbiased. Throws DimensionMismatch, TooFewSamples.
double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const FidOptions& options = {});
/// Same distance from given statistics (ridge added to both covariances).
double fid_from_stats(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                      const Eigen::MatrixXd& cov_b, double ridge = 1e-6);

}  // namespace tumorforge
