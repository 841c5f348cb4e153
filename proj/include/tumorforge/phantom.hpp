#pragma once

#include <cstdint>

#include "tumorforge/core_data.hpp"

namespace tumorforge {

/// Procedural stand-in for a multi-contrast tumor dataset.
struct PhantomConfig {
  int size = 64;
  int n_subjects = 40;
  int slices_per_subject = 10;
  double tumor_probability = 0.5;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Raw (unnormalized) phantom slices with ground-truth grade masks and brain
/// masks. Subjects are split into "train", "val" and "test" (val and test take
/// one tenth of the subjects each, at least one subject when there are three or
/// more). Subject k draws from its own stream seeded with seed + k.
DatasetManifest generate_phantom(const PhantomConfig& config);

}  // namespace tumorforge
