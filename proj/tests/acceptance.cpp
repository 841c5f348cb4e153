// Acceptance suite: one PASS/FAIL line per criterion. Criterion numbers given
// on the command line restrict the run (models for 6 and 9 come from 5).

#include <torch/torch.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "pipeline.hpp"
#include "tumorforge/evaluation.hpp"
#include "tumorforge/experiment.hpp"
#include "tumorforge/geometry.hpp"
#include "tumorforge/losses.hpp"
#include "tumorforge/networks.hpp"
#include "tumorforge/phantom.hpp"
#include "tumorforge/synthesis.hpp"
#include "tumorforge/training.hpp"

using namespace tumorforge;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

DatasetManifest phantom(int size, int subjects, int slices, std::uint64_t seed, double tumor_probability = 0.5) {
  PhantomConfig cfg;
  cfg.size = size;
  cfg.n_subjects = subjects;
  cfg.slices_per_subject = slices;
  cfg.seed = seed;
  cfg.tumor_probability = tumor_probability;
  return preprocess_dataset(generate_phantom(cfg));
}

bool bit_equal(float a, float b) { return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b); }

// ---------------------------------------------------------------------------

Verdict geometry_round_trip() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> centre(60, 196), r1d(8, 60), frac(0, 1);
  double worst_radius = 0, worst_centre = 0;
  int failures = 0;
  for (int i = 0; i < 100; ++i) {
    const double r1 = r1d(rng);
    const double r2 = r1 * frac(rng);
    const double r3 = r2 * frac(rng);
    const ConcentricCircles c{centre(rng), centre(rng), r1, r2, r3};
    const ConcentricCircles back = simplify_to_circles(render_circles(c, 256, 256));
    const double dr = std::max({std::abs(back.r1 - c.r1), std::abs(back.r2 - c.r2), std::abs(back.r3 - c.r3)});
    const double dc = std::hypot(back.cx - c.cx, back.cy - c.cy);
    worst_radius = std::max(worst_radius, dr);
    worst_centre = std::max(worst_centre, dc);
    failures += dr > 1.5 || dc > 1.0;
  }
  const double t = seconds_since(t0);
  return {failures == 0 && t < 10.0,
          fmt("100 circles, worst radius error %.3f px (<= 1.5), worst centre error %.3f px (<= 1.0), %.2f s (< 10)",
              worst_radius, worst_centre, t)};
}

Verdict area_policy() {
  const DatasetManifest data = phantom(256, 12, 10, 2, 1.0);
  int checked = 0, failures = 0;
  double worst = -1e9;
  for (const auto& r : data.records) {
    if (checked == 100) break;
    if (!r.has_tumor()) continue;
    const ConcentricCircles c = simplify_to_circles(*r.grade_mask);
    const double count = static_cast<double>(binarize(*r.grade_mask).count());
    const double slack = std::abs(std::numbers::pi * c.r1 * c.r1 - count) - (2 * std::numbers::pi * c.r1 + 4);
    worst = std::max(worst, slack);
    failures += slack > 0;
    ++checked;
  }
  return {checked == 100 && failures == 0,
          fmt("%d phantom masks at 256, %d violations, worst |pi r1^2 - count| - (2 pi r1 + 4) = %.3f", checked,
              failures, worst)};
}

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  std::ostringstream detail;
  bool ok = true;
  auto opts = [](std::uint64_t seed) {
    NetworkOptions o;
    o.size = 16;
    o.width = 0.125;
    o.seed = seed;
    return o;
  };
  const std::vector<std::pair<std::string, NetworkHandle>> nets{{"g_binary", build_g_binary(opts(1))},
                                                                {"g_grade", build_g_grade(opts(2))},
                                                                {"g_inpaint", build_g_inpaint(opts(3))},
                                                                {"d_inpaint", build_d_inpaint(opts(4))},
                                                                {"unet_seg", build_unet_seg(opts(5))}};
  double worst = 0;
  for (const auto& [name, net] : nets) {
    const auto r = gradcheck::check_network(net, 16, 24, 7);
    ok = ok && r.checked >= 20 && r.max_rel_error <= 1e-3;
    worst = std::max(worst, r.max_rel_error);
    detail << name << " " << fmt("%.1e", r.max_rel_error) << " (" << r.checked << "), ";
  }

  torch::manual_seed(5);
  const auto opt = torch::TensorOptions().dtype(torch::kFloat64);
  const auto pred = torch::randn({1, 4, 16, 16}, opt).requires_grad_(true);
  const auto target = torch::randn({1, 4, 16, 16}, opt);
  const auto d_real = (torch::rand({3}, opt) * 0.8 + 0.1).requires_grad_(true);
  const auto d_fake = (torch::rand({3}, opt) * 0.8 + 0.1).requires_grad_(true);
  const auto d_out = (torch::rand({1, 1, 1, 1}, opt) * 0.8 + 0.1).requires_grad_(true);
  NetworkHandle psi = build_feature_extractor({});
  psi.to(torch::kFloat64);
  const std::vector<std::tuple<std::string, std::vector<std::pair<std::string, torch::Tensor>>,
                               std::function<torch::Tensor()>>>
      losses{
          {"l1", {{"pred", pred}}, [&] { return tumorforge::l1_loss(pred, target); }},
          {"content", {{"pred", pred}}, [&] { return content_loss(pred, target, psi); }},
          {"adversarial", {{"d_real", d_real}, {"d_fake", d_fake}}, [&] { return adversarial_loss(d_real, d_fake); }},
          {"total",
           {{"pred", pred}, {"d_fake", d_out}},
           [&] { return total_inpaint_loss(pred, target, d_out, &psi, {1, 0.1, 0.01, Reduction::kSum}).total; }},
      };
  for (const auto& [name, targets, loss] : losses) {
    const auto r = gradcheck::check(targets, loss, 24, 3);
    ok = ok && r.checked >= 20 && r.max_rel_error <= 1e-3;
    worst = std::max(worst, r.max_rel_error);
    detail << name << " " << fmt("%.1e", r.max_rel_error) << " (" << r.checked << "), ";
  }
  const double t = seconds_since(t0);
  ok = ok && t < 120.0;
  detail << fmt("worst %.2e (<= 1e-3), %.1f s (< 120)", worst, t);
  return {ok, "16x16, max relative error per check: " + detail.str()};
}

Verdict architecture() {
  torch::NoGradGuard no_grad;
  NetworkOptions o;
  o.size = 256;
  o.width = 1.0;
  const ShapeTrace g = build_g_inpaint(o).trace(torch::zeros({1, 5, 256, 256}), torch::zeros({1, 1, 256, 256}));
  const ShapeTrace d = build_d_inpaint(o).trace(torch::zeros({1, 5, 256, 256}));
  std::map<std::string, std::vector<std::int64_t>> shapes;
  for (const auto& [label, shape] : g) shapes[label.substr(0, label.find(' '))] = shape;
  for (const auto& [label, shape] : d) shapes["d:" + label.substr(0, label.find(' '))] = shape;
  using S = std::vector<std::int64_t>;
  std::vector<std::pair<std::string, S>> expected{{"image_encoder.0", {1, 32, 128, 128}},
                                                  {"image_encoder.4", {1, 128, 64, 64}},
                                                  {"mask_encoder.1", {1, 16, 64, 64}},
                                                  {"fused", {1, 144, 64, 64}},
                                                  {"d:body.8", {1, 1, 1, 1}}};
  for (int c = 0; c < 4; ++c) expected.push_back({"decoder" + std::to_string(c) + ".8", {1, 1, 256, 256}});
  int wrong = 0;
  std::string first_wrong;
  for (const auto& [label, shape] : expected) {
    const auto it = shapes.find(label);
    if (it == shapes.end() || it->second != shape) {
      if (!wrong++) first_wrong = label;
    }
  }
  const S out = build_g_inpaint(o).forward(torch::zeros({1, 5, 256, 256}), torch::zeros({1, 1, 256, 256})).sizes().vec();
  const bool output_ok = out == S{1, 4, 256, 256};
  return {wrong == 0 && output_ok,
          fmt("%zu traced shapes checked at 256 (32x128x128, 128x64x64, 16x64x64 mask branch, 1x256x256 x4, D 1x1x1), "
              "%d mismatched%s%s",
              expected.size(), wrong, wrong ? ", first: " : "", first_wrong.c_str())};
}

// ---------------------------------------------------------------------------

struct DeskModels {
  DatasetManifest data;
  TrainedNetwork binary, grade;
  TrainedInpaint inpaint;
  double seconds = 0;
  ModelBundle bundle() const { return {binary.network, grade.network, inpaint.generator}; }
};

DeskModels train_desk_models() {
  DeskModels m;
  m.data = phantom(64, 40, 10, 0);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 0;
  const auto t0 = Clock::now();
  m.binary = train_g_binary(m.data, cfg);
  m.grade = train_g_grade(m.data, cfg);
  m.inpaint = train_inpaint(m.data, cfg);
  m.seconds = seconds_since(t0);
  return m;
}

Verdict desk_training(const DeskModels& m) {
  const auto& bv = m.binary.report.val_loss;
  const double binary_drop = 1.0 - bv.back() / bv.front();

  // Grades predicted by G_grade over the tumor it is asked to fill, on validation slices.
  std::int64_t inside = 0, right = 0;
  {
    torch::NoGradGuard no_grad;
    for (const auto* r : split_records(m.data, "val", true)) {
      const GradeMask& gt = *r->grade_mask;
      const BinaryMask tumor = binarize(gt);
      const auto y = m.grade.network.forward(grade_input(simplify_to_circles(gt), tumor).unsqueeze(0));
      const GradeMask q = quantize_grades(to_plane(y[0]));
      for (int row = 0; row < gt.height(); ++row) {
        for (int col = 0; col < gt.width(); ++col) {
          if (tumor(row, col) == 0) continue;
          ++inside;
          right += q(row, col) == gt(row, col);
        }
      }
    }
  }
  const double accuracy = inside ? double(right) / double(inside) : 0.0;

  const auto& rep = m.inpaint.report;
  const double pix_drop = 1.0 - rep.val_loss.back() / rep.initial_val_loss;
  const auto& pix = rep.terms.at("pix");
  const double train_pix_drop = 1.0 - pix.back() / pix.front();

  const bool ok = binary_drop >= 0.5 && accuracy >= 0.8 && pix_drop >= 0.4 && m.seconds < 1800;
  return {ok, fmt("400 slices at 64, 30 epochs: G_binary val L1 %.4f -> %.4f (drop %.1f%%, >= 50%%); "
                  "G_grade accuracy %.3f over %lld tumor pixels (>= 0.80); inpaint pixel L1 (val) %.4f -> %.4f "
                  "(drop %.1f%%, >= 40%%; train term epoch 1 -> 30 drop %.1f%%); %.0f s (< 1800)",
                  bv.front(), bv.back(), 100 * binary_drop, accuracy, static_cast<long long>(inside),
                  rep.initial_val_loss, rep.val_loss.back(), 100 * pix_drop, 100 * train_pix_drop, m.seconds)};
}

Verdict end_to_end_synthesis(const DeskModels& m) {
  const ModelBundle models = m.bundle();
  SynthesisConfig cfg = SynthesisConfig::for_size(64);
  cfg.n_images = 64;
  cfg.seed = 2024;
  const DatasetManifest out = synthesize_batch(m.data, cfg, models);

  // Replays the batch loop to recover each sample's source normal slice.
  std::vector<const SliceRecord*> pool;
  for (const auto& r : m.data.records) {
    if (!r.has_tumor()) pool.push_back(&r);
  }
  int contained = 0, faithful = 0, replayed = 0, consistent = 0, nonempty = 0;
  for (int j = 0; j < cfg.n_images && j < static_cast<int>(out.records.size()); ++j) {
    std::mt19937_64 rng(cfg.seed + static_cast<std::uint64_t>(j));
    const SliceRecord* normal = nullptr;
    Synthesized s;
    for (int attempt = 0; attempt < cfg.max_attempts_per_image; ++attempt) {
      normal = pool[static_cast<std::size_t>(j + attempt) % pool.size()];
      s = synthesize_one(*normal, sample_circles(rng, cfg), models);
      if (s.accepted) break;
    }
    const SliceRecord& rec = out.records[static_cast<std::size_t>(j)];
    if (!s.accepted) continue;
    replayed += s.image == rec.images && s.grade == *rec.grade_mask;

    const BinaryMask brain = brain_support(*normal);
    std::int64_t outside_brain = 0, changed = 0, grade_mismatch = 0, tumor = 0;
    for (int y = 0; y < brain.height(); ++y) {
      for (int x = 0; x < brain.width(); ++x) {
        const bool in_tumor = s.binary(y, x) != 0;
        tumor += in_tumor;
        outside_brain += in_tumor && brain(y, x) == 0;
        grade_mismatch += in_tumor != ((*rec.grade_mask)(y, x) > 0);
        if (in_tumor) continue;
        for (int c = 0; c < kNumContrasts; ++c) {
          changed += !bit_equal(rec.images.channel(c)(y, x), normal->images.channel(c)(y, x));
        }
      }
    }
    contained += outside_brain == 0;
    faithful += changed == 0;
    consistent += grade_mismatch == 0;
    nonempty += tumor > 0;
  }
  const int n = static_cast<int>(out.records.size());
  const bool ok = n == 64 && contained == 64 && faithful == 64 && replayed == 64;
  return {ok, fmt("%d samples: %d/64 contained in the brain, %d/64 bit-equal outside the tumor mask, "
                  "%d/64 matched a replay of the batch, %d/64 grade support == binary mask, %d non-empty tumors",
                  n, contained, faithful, replayed, consistent, nonempty)};
}

Verdict fid_ordering() {
  const DatasetManifest data = phantom(64, 40, 10, 3);
  std::vector<const SliceRecord*> a, b, noise;
  for (std::size_t i = 0; i < data.records.size(); ++i) (i % 2 ? b : a).push_back(&data.records[i]);
  const DatasetManifest noise_set = uniform_noise_set(static_cast<int>(a.size()), 64, 4);
  for (const auto& r : noise_set.records) noise.push_back(&r);
  const FeatureExtractorOptions features;
  const double ab = fid_between(a, b, features), an = fid_between(a, noise, features);

  auto one_d = [](double ma, double va, double mb, double vb) {
    Eigen::VectorXd mua(1), mub(1);
    mua << ma;
    mub << mb;
    Eigen::MatrixXd ca(1, 1), cb(1, 1);
    ca << va;
    cb << vb;
    return fid_from_stats(mua, ca, mub, cb, 0.0);
  };
  // (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2
  const std::vector<std::pair<double, double>> cases{{one_d(0, 1, 1, 1), 1.0},
                                                      {one_d(0, 1, 0, 4), 1.0},
                                                      {one_d(2, 9, -1, 1), 13.0},
                                                      {one_d(0.5, 0.25, 0.5, 0.25), 0.0}};
  double worst = 0;
  for (const auto& [got, want] : cases) worst = std::max(worst, std::abs(got - want));
  const bool ok = ab >= 0 && an >= 5 * ab && worst <= 1e-6;
  return {ok, fmt("FID(half A, half B) = %.3g, FID(half A, noise) = %.3g, ratio %.3g (>= 5); "
                  "closed-form 1-D cases worst error %.2e (<= 1e-6)",
                  ab, an, an / std::max(ab, 1e-300), worst)};
}

Verdict metric_oracle() {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> label(0, kNumSegLabels - 1);
  const float grade_of[] = {0.0f, 0.0f, 0.5f, 0.75f, 1.0f};
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    LabelMap pred(16, 16);
    Plane gt(16, 16);
    for (auto& v : pred.labels) v = static_cast<std::uint8_t>(label(rng));
    for (auto& v : gt.values()) v = grade_of[label(rng)];
    const SegScores s = seg_metrics(pred, GradeMask(gt));
    for (int k = 0; k < 3; ++k) {
      long tp = 0, fp = 0, fn = 0;
      for (int i = 0; i < 256; ++i) {
        const float pg = grade_of[pred.labels[static_cast<std::size_t>(i)]], gg = gt.values()[static_cast<std::size_t>(i)];
        // WT: any tumor grade; TC: ET or NCR; ET: the enhancing grade.
        const bool p = k == 0 ? pg > 0 : (k == 1 ? pg >= 0.75f : pg == 0.75f);
        const bool g = k == 0 ? gg > 0 : (k == 1 ? gg >= 0.75f : gg == 0.75f);
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
      }
      const bool empty = tp + fp + fn == 0;
      const double dice = empty ? 1.0 : 2.0 * tp / double(2 * tp + fp + fn);
      const double sens = empty ? 1.0 : (tp + fn ? tp / double(tp + fn) : 0.0);
      const double prec = empty ? 1.0 : (tp + fp ? tp / double(tp + fp) : 0.0);
      const auto& r = s.regions[static_cast<std::size_t>(k)];
      mismatches += r.dice != dice || r.sensitivity != sens || r.precision != prec;
    }
  }
  const Plane p(1, 4, std::vector<float>{0.5f, 0.5f, 0.5f, 0.0f});
  const Plane g(1, 4, std::vector<float>{0.5f, 0.5f, 0.0f, 0.5f});
  const RegionScores wt = seg_metrics(GradeMask(p), GradeMask(g))[Region::kWT];
  const double third = 2.0 / 3.0;
  const bool example = std::abs(wt.dice - third) <= 1e-12 && std::abs(wt.sensitivity - third) <= 1e-12 &&
                       std::abs(wt.precision - third) <= 1e-12;
  return {mismatches == 0 && example,
          fmt("1000 random 16x16 cases x 3 regions, %d mismatches against the counting oracle; "
              "TP=2/FP=1/FN=1 gives dice %.6f, sensitivity %.6f, precision %.6f",
              mismatches, wt.dice, wt.sensitivity, wt.precision)};
}

Verdict augmentation(const DeskModels& m) {
  std::ostringstream detail;
  double base_sum = 0, aug_sum = 0;
  bool each = true;
  for (std::uint64_t seed : {101u, 202u, 303u}) {
    const auto t0 = Clock::now();
    DatasetManifest real = phantom(64, 25, 10, seed);
    auto& train = real.splits.at("train");
    if (train.size() > 200) train.resize(200);

    DatasetManifest normals;
    for (const auto& id : train) normals.records.push_back(real.find(id));
    SynthesisConfig sc = SynthesisConfig::for_size(64);
    sc.n_images = 200;
    sc.seed = seed;
    const DatasetManifest synth = synthesize_batch(normals, sc, m.bundle());

    DatasetManifest test = phantom(64, 12, 10, seed + 7);
    for (auto& r : test.records) r.id = "test_" + r.id;
    test.splits.clear();

    TrainConfig cfg = TrainConfig::for_stage(Stage::kSegmentation);
    cfg.epochs = 30;
    cfg.seed = seed;
    const AugmentationReport r = augmentation_experiment(real, synth, test, cfg);
    const double b = r.baseline.scores[Region::kWT].dice, a = r.augmented.scores[Region::kWT].dice;
    base_sum += b;
    aug_sum += a;
    each = each && a >= b - 0.02;
    detail << fmt("seed %llu: baseline %.4f, augmented %.4f (real %d, synth %d, %.0f s); ",
                  static_cast<unsigned long long>(seed), b, a, r.real_count, r.synth_count, seconds_since(t0));
  }
  const bool ok = each && aug_sum >= base_sum;
  detail << fmt("mean baseline %.4f, mean augmented %.4f", base_sum / 3, aug_sum / 3);
  return {ok, "Dice(WT) on a disjoint test set: " + detail.str()};
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "tumorforge_acceptance_pipeline";
  pipeline::Settings s;
  s.size = 64;
  s.subjects = 20;
  s.slices = 5;
  s.epochs = 10;
  s.n_synth = 16;
  s.seed = 5;
  const pipeline::Outcome first = pipeline::run(root, s);
  if (!first.ok()) return {false, "first pipeline run failed: " + first.errors};
  const auto a = pipeline::snapshot(root);
  const pipeline::Outcome second = pipeline::run(root, s);
  if (!second.ok()) return {false, "second pipeline run failed: " + second.errors};
  const auto diff = pipeline::differences(a, pipeline::snapshot(root));
  int manifests = 0;
  for (const auto& [path, bytes] : a) manifests += path.ends_with("manifest.json");
  std::string detail = fmt("full pipeline at 64 run twice (%zu commands each): %zu output files compared, "
                           "%d dataset manifests, %zu differing",
                           first.statuses.size(), a.size(), manifests, diff.size());
  if (!diff.empty()) detail += ", first: " + diff.front();
  return {diff.empty() && manifests == 3, detail};
}

}  // namespace

int main(int argc, char** argv) {
  torch::set_num_threads(1);
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  auto wanted = [&](int n) { return selected.empty() || selected.count(n); };

  int failed = 0;
  auto report = [&](int n, const std::string& name, const std::function<Verdict()>& f) {
    if (!wanted(n)) return;
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << name << "): " << v.detail << std::endl;
  };

  report(1, "geometry round-trip", geometry_round_trip);
  report(2, "area policy", area_policy);
  report(3, "gradient suite", gradient_suite);
  report(4, "architecture conformance", architecture);

  std::optional<DeskModels> models;
  auto desk = [&]() -> const DeskModels& {
    if (!models) models = train_desk_models();
    return *models;
  };
  report(5, "desk-scale training", [&] { return desk_training(desk()); });
  report(6, "end-to-end synthesis", [&] { return end_to_end_synthesis(desk()); });
  report(7, "FID sanity ordering", fid_ordering);
  report(8, "metric oracle equivalence", metric_oracle);
  report(9, "augmentation direction", [&] { return augmentation(desk()); });
  report(10, "determinism", determinism);
  return failed == 0 ? 0 : 1;
}
