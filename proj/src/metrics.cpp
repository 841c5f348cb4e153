#include "tumorforge/evaluation.hpp"

#include <algorithm>
#include <cmath>

#include "tumorforge/errors.hpp"

namespace tumorforge {

LabelMap::LabelMap(int h, int w, std::uint8_t fill)
    : height(h), width(w), labels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), fill) {}

LabelMap labels_from_grade(const GradeMask& grade, const BinaryMask& brain) {
  if (grade.height() != brain.height() || grade.width() != brain.width()) {
    throw DimensionMismatch("grade mask and brain mask differ in shape");
  }
  LabelMap out(grade.height(), grade.width());
  for (int r = 0; r < grade.height(); ++r) {
    for (int c = 0; c < grade.width(); ++c) {
      const float g = grade(r, c);
      SegLabel label = brain(r, c) != 0.0f ? SegLabel::kBrain : SegLabel::kBackground;
      if (g == kEdemaGrade) label = SegLabel::kEdema;
      if (g == kEnhancingGrade) label = SegLabel::kEnhancing;
      if (g == kNecroticGrade) label = SegLabel::kNecrotic;
      out(r, c) = static_cast<std::uint8_t>(label);
    }
  }
  return out;
}

GradeMask grade_from_labels(const LabelMap& labels) {
  Plane out(labels.height, labels.width);
  auto dst = out.values();
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    switch (static_cast<SegLabel>(labels.labels[i])) {
      case SegLabel::kEdema: dst[i] = kEdemaGrade; break;
      case SegLabel::kEnhancing: dst[i] = kEnhancingGrade; break;
      case SegLabel::kNecrotic: dst[i] = kNecroticGrade; break;
      case SegLabel::kBackground:
      case SegLabel::kBrain: break;
      default: throw ValidationError("label out of range: " + std::to_string(labels.labels[i]));
    }
  }
  return GradeMask(std::move(out));
}

bool in_region(Region region, float grade) {
  switch (region) {
    case Region::kWT: return grade > 0.0f;
    case Region::kTC: return grade >= kEnhancingGrade;
    case Region::kET: return grade == kEnhancingGrade;
  }
  return false;
}

std::array<RegionCounts, 3> region_counts(const GradeMask& pred, const GradeMask& gt) {
  if (pred.height() != gt.height() || pred.width() != gt.width()) {
    throw DimensionMismatch("prediction and ground truth differ in shape");
  }
  std::array<RegionCounts, 3> counts{};
  auto p = pred.plane().values();
  auto g = gt.plane().values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (std::size_t k = 0; k < kRegions.size(); ++k) {
      const bool pp = in_region(kRegions[k], p[i]);
      const bool gg = in_region(kRegions[k], g[i]);
      auto& c = counts[k];
      if (pp && gg) ++c.tp;
      else if (pp) ++c.fp;
      else if (gg) ++c.fn;
      else ++c.tn;
    }
  }
  return counts;
}

RegionScores scores_from_counts(const RegionCounts& c) {
  if (c.tp + c.fp + c.fn == 0) return {1.0, 1.0, 1.0};
  auto ratio = [](std::int64_t num, std::int64_t den) { return den == 0 ? 0.0 : double(num) / double(den); };
  return {ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn), ratio(c.tp, c.tp + c.fn), ratio(c.tp, c.tp + c.fp)};
}

SegScores seg_metrics(const GradeMask& pred, const GradeMask& gt) {
  const auto counts = region_counts(pred, gt);
  SegScores s;
  for (std::size_t k = 0; k < counts.size(); ++k) s.regions[k] = scores_from_counts(counts[k]);
  return s;
}

SegScores seg_metrics(const LabelMap& pred, const GradeMask& gt) {
  if (pred.height != gt.height() || pred.width != gt.width()) {
    throw DimensionMismatch("label map and ground truth differ in shape");
  }
  return seg_metrics(grade_from_labels(pred), gt);
}

namespace {

// Symmetric PSD square root through eigendecomposition, clamping negative
// eigenvalues produced by round-off.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(m);
  const Eigen::VectorXd roots = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return solver.eigenvectors() * roots.asDiagonal() * solver.eigenvectors().transpose();
}

}  // namespace

double fid_from_stats(const Eigen::VectorXd& mu_a, const Eigen::MatrixXd& cov_a, const Eigen::VectorXd& mu_b,
                      const Eigen::MatrixXd& cov_b, double ridge) {
  const auto d = mu_a.size();
  if (mu_b.size() != d || cov_a.rows() != d || cov_a.cols() != d || cov_b.rows() != d || cov_b.cols() != d) {
    throw DimensionMismatch("feature statistics differ in dimension");
  }
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
  const Eigen::MatrixXd sa = cov_a + ridge * eye;
  const Eigen::MatrixXd sb = cov_b + ridge * eye;
  // tr((Σa Σb)^½) = tr((√Σa Σb √Σa)^½); the inner product is symmetric.
  const Eigen::MatrixXd root_a = sqrt_psd(sa);
  Eigen::MatrixXd inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(inner, Eigen::EigenvaluesOnly);
  const double tr_cross = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_cross;
  return std::max(0.0, value);
}

double fid(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const FidOptions& options) {
  if (a.cols() != b.cols()) throw DimensionMismatch("feature sets differ in dimension");
  const auto dim = a.cols();
  auto stats = [&](const Eigen::MatrixXd& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    if (x.rows() < 2 || (options.shrinkage <= 0.0 && x.rows() <= dim)) {
      throw TooFewSamples(std::to_string(x.rows()) + " samples for " + std::to_string(dim) +
                          "-dimensional features");
    }
    mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
    cov = centered.transpose() * centered / double(x.rows() - 1);
    if (options.shrinkage > 0.0) {
      const double target = cov.trace() / double(dim);
      cov = (1.0 - options.shrinkage) * cov + options.shrinkage * target * Eigen::MatrixXd::Identity(dim, dim);
    }
  };
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  stats(a, mu_a, cov_a);
  stats(b, mu_b, cov_b);
  return fid_from_stats(mu_a, cov_a, mu_b, cov_b, options.ridge);
}

}  // namespace tumorforge
