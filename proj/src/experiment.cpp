#include "tumorforge/experiment.hpp"

#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "tumorforge/errors.hpp"

namespace tumorforge {

Eigen::MatrixXd extract_features(const std::vector<const SliceRecord*>& records, const NetworkHandle& psi) {
  torch::NoGradGuard no_grad;
  Eigen::MatrixXd out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const torch::Tensor f =
        psi.module->forward_raw(to_tensor(records[i]->images).unsqueeze(0), {}).mean({2, 3}).to(torch::kFloat64);
    const auto row = f[0].contiguous();
    if (i == 0) out.resize(static_cast<Eigen::Index>(records.size()), row.size(0));
    const double* p = row.data_ptr<double>();
    for (Eigen::Index k = 0; k < out.cols(); ++k) out(static_cast<Eigen::Index>(i), k) = p[k];
  }
  return out;
}

double fid_between(const std::vector<const SliceRecord*>& a, const std::vector<const SliceRecord*>& b,
                   const FeatureExtractorOptions& feature, const FidOptions& options) {
  torch::set_num_threads(1);
  const NetworkHandle psi = build_feature_extractor(feature);
  return fid(extract_features(a, psi), extract_features(b, psi), options);
}

DatasetManifest uniform_noise_set(int n, int size, std::uint64_t seed) {
  DatasetManifest out;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> value(kClipLow, kClipHigh);
  for (int i = 0; i < n; ++i) {
    std::array<Plane, kNumContrasts> channels;
    for (auto& ch : channels) {
      ch = Plane(size, size);
      for (auto& v : ch.values()) v = value(rng);
    }
    char id[32];
    std::snprintf(id, sizeof(id), "noise%05d", i);
    SliceRecord r;
    r.id = id;
    r.images = MCSlice(std::move(channels), true);
    r.grade_mask = GradeMask::zeros(size, size);
    r.brain_mask = BinaryMask(Plane(size, size, 1.0f));
    r.source = Source::kSynthesized;
    r.seed = static_cast<std::int64_t>(seed);
    out.splits["test"].push_back(r.id);
    out.records.push_back(std::move(r));
  }
  return out;
}

LabelMap predict_labels(const NetworkHandle& net, const MCSlice& images) {
  torch::NoGradGuard no_grad;
  const torch::Tensor arg = net.forward_raw(to_tensor(images).unsqueeze(0)).argmax(1)[0].to(torch::kUInt8).contiguous();
  LabelMap out(images.height(), images.width());
  const auto* p = arg.data_ptr<std::uint8_t>();
  std::copy(p, p + out.labels.size(), out.labels.begin());
  return out;
}

SegEvaluation evaluate_segmentation(const NetworkHandle& net, const std::vector<const SliceRecord*>& records) {
  SegEvaluation e;
  for (const SliceRecord* r : records) {
    const GradeMask gt = r->grade_mask ? *r->grade_mask : GradeMask::zeros(r->images.height(), r->images.width());
    const auto counts = region_counts(grade_from_labels(predict_labels(net, r->images)), gt);
    for (std::size_t k = 0; k < counts.size(); ++k) e.counts[k] += counts[k];
    ++e.slices;
  }
  for (std::size_t k = 0; k < e.counts.size(); ++k) e.scores.regions[k] = scores_from_counts(e.counts[k]);
  return e;
}

DatasetManifest augmented_manifest(const DatasetManifest& real, const DatasetManifest& synth, double synth_ratio) {
  const auto train = split_records(real, "train", false);
  const auto wanted = static_cast<std::size_t>(std::max(0.0, synth_ratio) * double(train.size()) + 0.5);
  const std::size_t n_synth = std::min(wanted, synth.records.size());
  DatasetManifest m;
  for (const auto* r : train) {
    m.records.push_back(*r);
    m.splits["train"].push_back(r->id);
  }
  for (std::size_t i = 0; i < n_synth; ++i) {
    m.records.push_back(synth.records[i]);
    m.splits["train"].push_back(synth.records[i].id);
  }
  if (real.splits.count("val")) {
    for (const auto* r : real.split("val")) {
      m.records.push_back(*r);
      m.splits["val"].push_back(r->id);
    }
  }
  m.validate();
  return m;
}

AugmentationReport augmentation_experiment(const DatasetManifest& real, const DatasetManifest& synth,
                                           const DatasetManifest& test, const TrainConfig& cfg,
                                           const AugmentationOptions& options) {
  std::set<std::string> training_ids;
  for (const auto* r : split_records(real, "train", false)) training_ids.insert(r->id);
  for (const auto& r : synth.records) training_ids.insert(r.id);
  std::vector<const SliceRecord*> test_records;
  for (const auto& r : test.records) {
    if (training_ids.count(r.id)) throw SplitOverlap("test record '" + r.id + "' is also used for training");
    test_records.push_back(&r);
  }
  if (test_records.empty()) throw EmptyDataset("no test records");

  const DatasetManifest base_data = augmented_manifest(real, synth, 0.0);
  const DatasetManifest aug_data = augmented_manifest(real, synth, options.synth_ratio);
  AugmentationReport report;
  report.real_count = static_cast<int>(base_data.splits.at("train").size());
  report.synth_count = static_cast<int>(aug_data.splits.at("train").size()) - report.real_count;
  TrainedNetwork base = train_segmentation(base_data, cfg);
  report.baseline = {"baseline", evaluate_segmentation(base.network, test_records).scores};
  report.baseline_training = std::move(base.report);
  TrainedNetwork aug = train_segmentation(aug_data, cfg);
  report.augmented = {"augmented", evaluate_segmentation(aug.network, test_records).scores};
  report.augmented_training = std::move(aug.report);
  return report;
}

namespace {

constexpr const char* kMetricNames[] = {"Dice", "Sensitivity", "Precision"};

double metric(const RegionScores& s, int k) { return k == 0 ? s.dice : (k == 1 ? s.sensitivity : s.precision); }

}  // namespace

std::string format_table(const std::vector<ExperimentRow>& rows) {
  std::size_t name_width = 6;
  for (const auto& r : rows) name_width = std::max(name_width, r.method.size());
  std::ostringstream out;
  char buf[64];
  out << std::string(name_width, ' ');
  for (const char* m : kMetricNames) {
    std::snprintf(buf, sizeof(buf), " | %-20s", m);
    out << buf;
  }
  out << "\n" << std::string(name_width, ' ');
  for (int m = 0; m < 3; ++m) {
    out << " |";
    for (const char* region : kRegionNames) {
      std::snprintf(buf, sizeof(buf), " %6s", region);
      out << buf;
    }
  }
  out << "\n";
  for (const auto& r : rows) {
    out << r.method << std::string(name_width - r.method.size(), ' ');
    for (int m = 0; m < 3; ++m) {
      out << " |";
      for (const auto region : kRegions) {
        std::snprintf(buf, sizeof(buf), " %6.3f", metric(r.scores[region], m));
        out << buf;
      }
    }
    out << "\n";
  }
  return out.str();
}

std::string format_csv(const std::vector<ExperimentRow>& rows) {
  std::ostringstream out;
  out << "method";
  for (const char* m : kMetricNames) {
    for (const char* region : kRegionNames) out << ',' << m << '_' << region;
  }
  out << "\n";
  char buf[32];
  for (const auto& r : rows) {
    out << r.method;
    for (int m = 0; m < 3; ++m) {
      for (const auto region : kRegions) {
        std::snprintf(buf, sizeof(buf), ",%.6f", metric(r.scores[region], m));
        out << buf;
      }
    }
    out << "\n";
  }
  return out.str();
}

std::vector<ExperimentRow> parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<ExperimentRow> rows;
  if (!std::getline(in, line) || line.rfind("method,", 0) != 0) throw CorruptRecord("missing score table header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    ExperimentRow row;
    std::getline(fields, row.method, ',');
    for (int m = 0; m < 3; ++m) {
      for (std::size_t k = 0; k < kRegions.size(); ++k) {
        std::string cell;
        if (!std::getline(fields, cell, ',')) throw CorruptRecord("short score row '" + line + "'");
        double v = 0.0;
        try {
          v = std::stod(cell);
        } catch (const std::exception&) {
          throw CorruptRecord("bad score '" + cell + "'");
        }
        auto& s = row.scores.regions[k];
        (m == 0 ? s.dice : (m == 1 ? s.sensitivity : s.precision)) = v;
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace tumorforge
