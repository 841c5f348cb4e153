#include "tumorforge/geometry.hpp"

#include <cmath>
#include <numbers>

#include "tumorforge/errors.hpp"

namespace tumorforge {

void ConcentricCircles::validate(int height, int width) const {
  if (!(r1 >= r2 && r2 >= r3 && r3 >= 0.0)) {
    throw ValidationError("circle radii must satisfy r1 >= r2 >= r3 >= 0");
  }
  if (!(cx >= 0.0 && cx <= width - 1 && cy >= 0.0 && cy <= height - 1)) {
    throw ValidationError("circle center outside the image frame");
  }
}

BinaryMask binarize(const Plane& plane, float threshold) {
  Plane out(plane.height(), plane.width());
  auto src = plane.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > threshold ? 1.0f : 0.0f;
  return BinaryMask(std::move(out));
}

BinaryMask binarize(const GradeMask& mask, float threshold) { return binarize(mask.plane(), threshold); }

BinaryMask binarize(const BinaryMask& mask, float threshold) { return binarize(mask.plane(), threshold); }

PixelPoint centroid(const BinaryMask& mask) {
  double sx = 0.0, sy = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < mask.height(); ++r) {
    for (int c = 0; c < mask.width(); ++c) {
      if (mask(r, c) != 0.0f) {
        sx += c;
        sy += r;
        ++n;
      }
    }
  }
  if (n == 0) throw EmptyMask("centroid of an empty mask");
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

ConcentricCircles simplify_to_circles(const GradeMask& mask) {
  const PixelPoint center = centroid(binarize(mask));
  const auto ncr = static_cast<double>(mask.count(kNecroticGrade));
  const auto et = static_cast<double>(mask.count(kEnhancingGrade));
  const auto ed = static_cast<double>(mask.count(kEdemaGrade));
  ConcentricCircles c;
  c.cx = center.x;
  c.cy = center.y;
  c.r3 = std::sqrt(ncr / std::numbers::pi);
  c.r2 = std::sqrt((ncr + et) / std::numbers::pi);
  c.r1 = std::sqrt((ncr + et + ed) / std::numbers::pi);
  return c;
}

GradeMask render_circles(const ConcentricCircles& circles, int height, int width) {
  circles.validate(height, width);
  Plane out(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double d = std::hypot(c - circles.cx, r - circles.cy);
      float v = kBackgroundGrade;
      if (circles.r3 > 0.0 && d <= circles.r3) {
        v = kNecroticGrade;
      } else if (circles.r2 > 0.0 && d <= circles.r2) {
        v = kEnhancingGrade;
      } else if (circles.r1 > 0.0 && d <= circles.r1) {
        v = kEdemaGrade;
      }
      out(r, c) = v;
    }
  }
  return GradeMask(std::move(out));
}

BinaryMask render_disk(double cx, double cy, double radius, int height, int width) {
  Plane out(height, width);
  if (radius > 0.0) {
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        if (std::hypot(c - cx, r - cy) <= radius) out(r, c) = 1.0f;
      }
    }
  }
  return BinaryMask(std::move(out));
}

MCSlice apply_mask(const MCSlice& slice, const BinaryMask& mask) {
  if (slice.height() != mask.height() || slice.width() != mask.width()) {
    throw DimensionMismatch("mask shape differs from slice shape");
  }
  MCSlice out = slice;
  auto m = mask.plane().values();
  for (int ch = 0; ch < kNumContrasts; ++ch) {
    auto v = out.channel(ch).values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (m[i] != 0.0f) v[i] = 0.0f;
    }
  }
  return out;
}

GradeMask quantize_grades(const Plane& continuous) {
  Plane out(continuous.height(), continuous.width());
  auto src = continuous.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const float v = src[i];
    if (!std::isfinite(v)) throw ValidationError("non-finite value in grade map");
    // Ascending level scan with strict comparison keeps ties at the lower level.
    float best = kGradeLevels[0];
    float best_dist = std::fabs(v - best);
    for (std::size_t k = 1; k < kGradeLevels.size(); ++k) {
      const float d = std::fabs(v - kGradeLevels[k]);
      if (d < best_dist) {
        best = kGradeLevels[k];
        best_dist = d;
      }
    }
    dst[i] = best;
  }
  return GradeMask(std::move(out));
}

}  // namespace tumorforge
