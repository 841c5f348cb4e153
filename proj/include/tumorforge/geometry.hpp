#pragma once

#include "tumorforge/core_data.hpp"

namespace tumorforge {

/// Five-parameter tumor simplification. Coordinates are in pixel units with
/// pixel (row, col) centered at (x = col, y = row). c1 (radius r1) is the
/// whole tumor, c3 (radius r3) the necrotic core.
struct ConcentricCircles {
  double cx = 0.0;
  double cy = 0.0;
  double r1 = 0.0;
  double r2 = 0.0;
  double r3 = 0.0;

  /// Throws ValidationError unless r1 >= r2 >= r3 >= 0 and the center lies in
  /// the [0, width-1] x [0, height-1] frame.
  void validate(int height, int width) const;

  friend bool operator==(const ConcentricCircles&, const ConcentricCircles&) = default;
};

struct PixelPoint {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

/// β: 1 where value > threshold.
BinaryMask binarize(const Plane& plane, float threshold = 0.0f);
BinaryMask binarize(const GradeMask& mask, float threshold = 0.0f);
BinaryMask binarize(const BinaryMask& mask, float threshold = 0.0f);

/// Mean coordinate of the set pixels. Throws EmptyMask.
PixelPoint centroid(const BinaryMask& mask);

/// Area-preserving concentric circles centered on the whole-tumor centroid.
ConcentricCircles simplify_to_circles(const GradeMask& mask);

/// Rasterizes the circles by pixel-center distance (inclusive). A zero radius
/// covers nothing.
GradeMask render_circles(const ConcentricCircles& circles, int height, int width);

/// The filled outer circle c1 alone.
BinaryMask render_disk(double cx, double cy, double radius, int height, int width);

/// x · (1 - m) on every contrast. Throws DimensionMismatch.
MCSlice apply_mask(const MCSlice& slice, const BinaryMask& mask);

/// Nearest grade level per pixel; ties go to the lower level.
GradeMask quantize_grades(const Plane& continuous);

}  // namespace tumorforge
