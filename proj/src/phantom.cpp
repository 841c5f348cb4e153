#include "tumorforge/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "tumorforge/errors.hpp"

namespace tumorforge {

namespace {

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Per-contrast transfer: intensity = gain * (base + slope * tissue), CSF
// replaces the tissue term inside the ventricles.
struct ContrastModel {
  double base;
  double slope;
  double csf;
};
constexpr std::array<ContrastModel, kNumContrasts> kContrastModels{{
    {70.0, 30.0, 25.0},    // FLAIR
    {50.0, 60.0, 15.0},    // T1w
    {55.0, 55.0, 20.0},    // T1c
    {130.0, -50.0, 210.0}  // T2w
}};

// Multiplicative intensity change per tumor grade and contrast.
constexpr std::array<std::array<double, kNumContrasts>, 3> kTumorFactors{{
    {1.60, 0.85, 0.90, 1.45},  // edema
    {1.40, 0.80, 1.90, 1.30},  // enhancing
    {1.10, 0.55, 0.70, 1.70},  // necrotic / non-enhancing
}};

std::vector<double> blur_axis(const std::vector<double>& src, int size, double sigma, bool rows) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    norm += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= norm;
  std::vector<double> out(src.size(), 0.0);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int rr = rows ? std::clamp(r + i, 0, size - 1) : r;
        const int cc = rows ? c : std::clamp(c + i, 0, size - 1);
        acc += kernel[static_cast<std::size_t>(i + radius)] * src[static_cast<std::size_t>(rr * size + cc)];
      }
      out[static_cast<std::size_t>(r * size + c)] = acc;
    }
  }
  return out;
}

// Gaussian-filtered white noise rescaled to [-1, 1].
std::vector<double> smooth_noise(Rng& rng, int size, double sigma) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> field(static_cast<std::size_t>(size * size));
  for (auto& v : field) v = normal(rng);
  field = blur_axis(blur_axis(field, size, sigma, false), size, sigma, true);
  double peak = 0.0;
  for (double v : field) peak = std::max(peak, std::fabs(v));
  if (peak > 0.0) {
    for (auto& v : field) v /= peak;
  }
  return field;
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

struct SubjectParams {
  double ex, ey;  // brain center
  double ax, ay;  // semi-axes at the widest slice
  std::array<double, kNumContrasts> gain;
};

SliceRecord make_slice(Rng& rng, const PhantomConfig& cfg, const SubjectParams& subject, int subject_index,
                       int slice_index) {
  const int n = cfg.size;
  const double s = static_cast<double>(n);
  const double scale =
      0.75 + 0.25 * std::sin(std::numbers::pi * (slice_index + 1) / (cfg.slices_per_subject + 1));
  const double ax = subject.ax * scale;
  const double ay = subject.ay * scale;

  const std::vector<double> tissue_noise = smooth_noise(rng, n, s / 12.0);
  const std::vector<double> pixel_noise = [&] {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(n * n * kNumContrasts));
    for (auto& x : v) x = normal(rng);
    return v;
  }();
  const double vent_ax = 0.07 * s * scale;
  const double vent_ay = 0.13 * s * scale;

  const bool has_tumor = std::bernoulli_distribution(cfg.tumor_probability)(rng);

  Plane grade(n, n);
  Plane brain(n, n);
  std::array<Plane, kNumContrasts> channels;
  for (auto& ch : channels) ch = Plane(n, n);

  std::vector<double> tumor_field;
  double t_enh = 0.0, t_ncr = 0.0;
  if (has_tumor) {
    const double radius = s * uniform(rng, 0.07, 0.15);
    const double margin = 1.5 * radius;
    double tx = subject.ex, ty = subject.ey;
    if (ax > margin && ay > margin) {
      for (int attempt = 0; attempt < 64; ++attempt) {
        const double px = uniform(rng, -1.0, 1.0);
        const double py = uniform(rng, -1.0, 1.0);
        if (px * px + py * py <= 1.0) {
          tx = subject.ex + px * (ax - margin);
          ty = subject.ey + py * (ay - margin);
          break;
        }
      }
    }
    const double angle = uniform(rng, 0.0, std::numbers::pi);
    const double aspect = uniform(rng, 1.0, 1.4);
    t_enh = uniform(rng, 0.62, 0.75);
    t_ncr = uniform(rng, 0.80, 0.95);
    const std::vector<double> shape_noise = smooth_noise(rng, n, std::max(1.5, radius / 2.0));
    // exp(-d^2 / (2 k^2)) crosses 0.5 at d = k * sqrt(2 ln 2); k chosen so that is the radius.
    const double k = radius / std::sqrt(2.0 * std::numbers::ln2);
    tumor_field.assign(static_cast<std::size_t>(n * n), 0.0);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        const double dx = c - tx, dy = r - ty;
        const double u = (ca * dx + sa * dy) / aspect;
        const double v = (-sa * dx + ca * dy) * std::sqrt(aspect);
        const std::size_t i = static_cast<std::size_t>(r * n + c);
        tumor_field[i] = std::exp(-(u * u + v * v) / (2.0 * k * k)) * (1.0 + 0.35 * shape_noise[i]);
      }
    }
  }

  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double nx = (c - subject.ex) / ax;
      const double ny = (r - subject.ey) / ay;
      const double rho = std::sqrt(nx * nx + ny * ny);
      if (rho > 1.0) continue;
      const std::size_t i = static_cast<std::size_t>(r * n + c);
      brain(r, c) = 1.0f;

      const double vx = (c - subject.ex) / vent_ax;
      const double vy = (r - subject.ey) / vent_ay;
      const double csf = 1.0 - smoothstep(0.7, 1.0, std::sqrt(vx * vx + vy * vy));
      const double white = 1.0 - smoothstep(0.55, 0.85, rho);
      const double tissue = std::clamp(0.6 * white + 0.4 * (0.5 + 0.5 * tissue_noise[i]), 0.0, 1.0);

      int grade_index = -1;
      if (!tumor_field.empty() && tumor_field[i] > 0.5) {
        grade_index = tumor_field[i] > t_ncr ? 2 : (tumor_field[i] > t_enh ? 1 : 0);
        grade(r, c) = grade_index == 2 ? kNecroticGrade : (grade_index == 1 ? kEnhancingGrade : kEdemaGrade);
      }

      for (int ch = 0; ch < kNumContrasts; ++ch) {
        const auto& m = kContrastModels[static_cast<std::size_t>(ch)];
        double value = (1.0 - csf) * (m.base + m.slope * tissue) + csf * m.csf;
        if (grade_index >= 0) value *= kTumorFactors[static_cast<std::size_t>(grade_index)][static_cast<std::size_t>(ch)];
        value *= subject.gain[static_cast<std::size_t>(ch)];
        value *= 1.0 + 0.02 * pixel_noise[static_cast<std::size_t>(ch) * static_cast<std::size_t>(n * n) + i];
        channels[static_cast<std::size_t>(ch)](r, c) = static_cast<float>(std::max(value, 1.0));
      }
    }
  }

  char id[32];
  std::snprintf(id, sizeof(id), "s%03d_z%02d", subject_index, slice_index);
  SliceRecord record;
  record.id = id;
  record.images = MCSlice(std::move(channels), false);
  record.grade_mask = GradeMask(std::move(grade));
  record.brain_mask = BinaryMask(std::move(brain));
  record.source = Source::kPhantom;
  record.seed = static_cast<std::int64_t>(cfg.seed + static_cast<std::uint64_t>(subject_index));
  return record;
}

}  // namespace

void PhantomConfig::validate() const {
  if (size < 32) throw InvalidConfig("phantom size must be >= 32");
  if (n_subjects < 1 || slices_per_subject < 1) throw InvalidConfig("phantom needs >= 1 subject and slice");
  if (!(tumor_probability >= 0.0 && tumor_probability <= 1.0)) {
    throw InvalidConfig("tumor_probability must lie in [0, 1]");
  }
}

DatasetManifest generate_phantom(const PhantomConfig& config) {
  config.validate();
  const double s = static_cast<double>(config.size);
  DatasetManifest manifest;

  const int held_out = config.n_subjects >= 3 ? std::max(1, config.n_subjects / 10) : 0;
  const int first_val = config.n_subjects - 2 * held_out;
  const int first_test = config.n_subjects - held_out;
  auto& train = manifest.splits["train"];
  auto& val = manifest.splits["val"];
  auto& test = manifest.splits["test"];

  for (int k = 0; k < config.n_subjects; ++k) {
    Rng rng(config.seed + static_cast<std::uint64_t>(k));
    SubjectParams subject;
    subject.ex = s / 2.0 + uniform(rng, -0.02, 0.02) * s;
    subject.ey = s / 2.0 + uniform(rng, -0.02, 0.02) * s;
    subject.ax = s * uniform(rng, 0.31, 0.36);
    subject.ay = s * uniform(rng, 0.38, 0.44);
    for (auto& g : subject.gain) g = uniform(rng, 0.9, 1.1);

    for (int z = 0; z < config.slices_per_subject; ++z) {
      SliceRecord record = make_slice(rng, config, subject, k, z);
      auto& split = k >= first_test ? test : (k >= first_val ? val : train);
      split.push_back(record.id);
      manifest.records.push_back(std::move(record));
    }
  }
  return manifest;
}

}  // namespace tumorforge
