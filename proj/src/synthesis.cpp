#include "tumorforge/synthesis.hpp"

#include <algorithm>
#include <cstdio>

#include "tumorforge/errors.hpp"
#include "tumorforge/training.hpp"

namespace tumorforge {

SynthesisConfig SynthesisConfig::for_size(int size) {
  SynthesisConfig cfg;
  const double s = size;
  cfg.center_range = {0.3125 * s, 0.625 * s};
  cfg.radius_range = {0.0, 0.15625 * s};
  return cfg;
}

void SynthesisConfig::validate(int size) const {
  if (n_images < 0) throw InvalidConfig("n_images must be >= 0");
  if (max_attempts_per_image < 1) throw InvalidConfig("max_attempts_per_image must be >= 1");
  const auto [c0, c1] = center_range;
  const auto [r0, r1] = radius_range;
  if (!(c0 <= c1 && c0 >= 0.0 && c1 <= size - 1)) throw InvalidConfig("center range outside the image frame");
  if (!(r0 <= r1 && r0 >= 0.0 && r1 <= size)) throw InvalidConfig("radius range outside [0, size]");
  if (circles) circles->validate(size, size);
}

ConcentricCircles sample_circles(std::mt19937_64& rng, const SynthesisConfig& cfg) {
  auto uniform = [&](std::pair<double, double> range) {
    return range.first == range.second ? range.first
                                       : std::uniform_real_distribution<double>(range.first, range.second)(rng);
  };
  ConcentricCircles c;
  c.cx = uniform(cfg.center_range);
  c.cy = uniform(cfg.center_range);
  std::array<double, 3> r{uniform(cfg.radius_range), uniform(cfg.radius_range), uniform(cfg.radius_range)};
  std::sort(r.begin(), r.end(), std::greater<>());
  c.r1 = r[0];
  c.r2 = r[1];
  c.r3 = r[2];
  return c;
}

void ModelBundle::check() const {
  const std::pair<const char*, const std::optional<NetworkHandle>*> all[] = {
      {"g_binary", &g_binary}, {"g_grade", &g_grade}, {"g_inpaint", &g_inpaint}};
  for (const auto& [name, net] : all) {
    if (!net->has_value() || !(*net)->module) throw UntrainedModel(std::string(name) + " is missing");
    if ((*net)->epoch <= 0) throw UntrainedModel(std::string(name) + " has not been trained");
  }
}

ModelBundle load_models(const std::filesystem::path& directory) {
  ModelBundle models;
  models.g_binary = load_checkpoint(directory / "g_binary.tfck");
  models.g_grade = load_checkpoint(directory / "g_grade.tfck");
  models.g_inpaint = load_checkpoint(directory / "g_inpaint.tfck");
  return models;
}

Synthesized synthesize_one(const MCSlice& normal, const BinaryMask& brain, const ConcentricCircles& circles,
                           const ModelBundle& models) {
  models.check();
  const int h = normal.height(), w = normal.width();
  if (brain.height() != h || brain.width() != w) throw DimensionMismatch("brain mask differs from slice shape");
  circles.validate(h, w);
  torch::NoGradGuard no_grad;

  Synthesized out;
  out.binary = BinaryMask::zeros(h, w);
  if (circles.r1 > 0.0) {
    const torch::Tensor p = models.g_binary->forward(binary_input(circles, brain).unsqueeze(0));
    out.binary = binarize(to_plane(p[0]), 0.5f);
  }
  const auto m = out.binary.plane().values();
  const auto b = brain.plane().values();
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] != 0.0f && b[i] == 0.0f) return out;  // rejected
  }
  out.accepted = true;
  if (out.binary.count() == 0) {
    out.image = normal;
    out.grade = GradeMask::zeros(h, w);
    return out;
  }

  const torch::Tensor q = models.g_grade->forward(grade_input(circles, out.binary).unsqueeze(0));
  Plane grade = quantize_grades(to_plane(q[0])).plane();
  auto g = grade.values();
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (m[i] == 0.0f) g[i] = kBackgroundGrade;
    else if (g[i] == kBackgroundGrade) g[i] = kEdemaGrade;
  }
  out.grade = GradeMask(std::move(grade));

  const torch::Tensor x = to_tensor(normal).unsqueeze(0);
  const torch::Tensor gt = to_tensor(out.grade.plane()).unsqueeze(0);
  const torch::Tensor mask = to_tensor(out.binary.plane()).unsqueeze(0);
  const torch::Tensor input = torch::cat({x * (1.0f - mask), gt}, 1);
  const torch::Tensor y = composite(models.g_inpaint->forward(input, gt), x, mask)[0].contiguous();
  std::array<Plane, kNumContrasts> channels;
  for (int c = 0; c < kNumContrasts; ++c) channels[static_cast<std::size_t>(c)] = to_plane(y[c]);
  out.image = MCSlice(std::move(channels), normal.normalized());
  return out;
}

Synthesized synthesize_one(const SliceRecord& normal, const ConcentricCircles& circles, const ModelBundle& models) {
  return synthesize_one(normal.images, brain_support(normal), circles, models);
}

DatasetManifest synthesize_batch(const DatasetManifest& normals, const SynthesisConfig& cfg,
                                 const ModelBundle& models) {
  DatasetManifest out;
  auto& ids = out.splits["train"];
  if (cfg.n_images == 0) return out;
  std::vector<const SliceRecord*> pool;
  for (const auto& r : normals.records) {
    if (!r.has_tumor()) pool.push_back(&r);
  }
  if (pool.empty()) throw EmptyDataset("no tumor-free slices to synthesize from");
  cfg.validate(pool.front()->images.height());
  models.check();
  torch::set_num_threads(1);

  for (int j = 0; j < cfg.n_images; ++j) {
    std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(j));
    bool done = false;
    for (int attempt = 0; attempt < cfg.max_attempts_per_image && !done; ++attempt) {
      const SliceRecord& normal = *pool[static_cast<std::size_t>(j + attempt) % pool.size()];
      const ConcentricCircles circles = cfg.circles ? *cfg.circles : sample_circles(rng, cfg);
      Synthesized s = synthesize_one(normal, circles, models);
      if (!s.accepted) continue;
      char id[32];
      std::snprintf(id, sizeof(id), "syn%05d", j);
      SliceRecord record;
      record.id = id;
      record.images = std::move(s.image);
      record.grade_mask = std::move(s.grade);
      record.brain_mask = brain_support(normal);
      record.source = Source::kSynthesized;
      record.seed = static_cast<std::int64_t>(cfg.seed + static_cast<std::uint64_t>(j));
      ids.push_back(record.id);
      out.records.push_back(std::move(record));
      done = true;
    }
    if (!done) {
      throw RejectionBudgetExceeded("image " + std::to_string(j) + " rejected " +
                                    std::to_string(cfg.max_attempts_per_image) + " times");
    }
  }
  return out;
}

}  // namespace tumorforge
