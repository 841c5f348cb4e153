#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <utility>

#include "tumorforge/core_data.hpp"
#include "tumorforge/geometry.hpp"
#include "tumorforge/networks.hpp"

namespace tumorforge {

struct SynthesisConfig {
  int n_images = 0;
  std::pair<double, double> center_range{80.0, 160.0};
  std::pair<double, double> radius_range{0.0, 40.0};
  int max_attempts_per_image = 1000;
  std::uint64_t seed = 0;
  /// When set, every attempt uses these circles instead of sampling.
  std::optional<ConcentricCircles> circles;

  /// Centers [0.3125·S, 0.625·S], radii [0, 0.15625·S].
  static SynthesisConfig for_size(int size);
  /// Throws InvalidConfig; ranges must lie inside a size×size frame.
  void validate(int size) const;
};

/// Uniform center, three uniform radii sorted into r1 >= r2 >= r3.
ConcentricCircles sample_circles(std::mt19937_64& rng, const SynthesisConfig& cfg);

struct ModelBundle {
  std::optional<NetworkHandle> g_binary;
  std::optional<NetworkHandle> g_grade;
  std::optional<NetworkHandle> g_inpaint;

  /// Throws UntrainedModel when a network is missing or has no training epochs.
  void check() const;
};
/// `g_binary.tfck`, `g_grade.tfck` and `g_inpaint.tfck` from one directory.
ModelBundle load_models(const std::filesystem::path& directory);

struct Synthesized {
  bool accepted = false;
  MCSlice image;
  GradeMask grade;
  BinaryMask binary;
};

/// One pass of the synthesis body. `brain` is the normal slice's brain
/// support. Rejected (accepted = false) when the predicted tumor leaves it.
Synthesized synthesize_one(const MCSlice& normal, const BinaryMask& brain, const ConcentricCircles& circles,
                           const ModelBundle& models);
Synthesized synthesize_one(const SliceRecord& normal, const ConcentricCircles& circles, const ModelBundle& models);

/// Draws (normal, circles) pairs until cfg.n_images acceptances. Image j uses
/// its own stream seeded with seed + j and starts at normal j, moving to the
/// next normal on every rejected attempt. Tumor-free records of `normals` are
/// used as the normal pool. Throws EmptyDataset, RejectionBudgetExceeded.
DatasetManifest synthesize_batch(const DatasetManifest& normals, const SynthesisConfig& cfg,
                                 const ModelBundle& models);

}  // namespace tumorforge
