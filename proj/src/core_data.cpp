#include "tumorforge/core_data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tumorforge/errors.hpp"

namespace tumorforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string shape_text(int h, int w) { return std::to_string(h) + "x" + std::to_string(w); }

bool is_grade_level(float v) {
  return std::find(kGradeLevels.begin(), kGradeLevels.end(), v) != kGradeLevels.end();
}

void check_id(const std::string& id) {
  if (id.empty() || id.find_first_of("/\\") != std::string::npos || id == "." || id == "..") {
    throw ValidationError("record id '" + id + "' is not a valid file stem");
  }
}

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
}

void write_floats(std::ostream& out, std::span<const float> values) {
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    words[i] = to_little_endian(std::bit_cast<std::uint32_t>(values[i]));
  }
  out.write(reinterpret_cast<const char*>(words.data()),
            static_cast<std::streamsize>(words.size() * sizeof(std::uint32_t)));
}

std::vector<float> read_floats(const std::vector<char>& bytes, std::size_t offset, std::size_t count) {
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t word = 0;
    std::memcpy(&word, bytes.data() + offset + i * sizeof(word), sizeof(word));
    values[i] = std::bit_cast<float>(to_little_endian(word));
  }
  return values;
}

std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOFailure("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

json read_json(const fs::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw IOFailure("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CorruptRecord(std::string(what) + " " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOFailure("cannot write " + path.string());
  out << text;
  if (!out) throw IOFailure("write failed for " + path.string());
}

void ensure_directory(const fs::path& directory) {
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec || !fs::is_directory(directory)) {
    throw IOFailure("cannot create directory " + directory.string() +
                    (ec ? ": " + ec.message() : std::string()));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Plane / masks / slices

Plane::Plane(int height, int width, float fill)
    : height_(height), width_(width),
      data_(static_cast<std::size_t>(std::max(height, 0)) * static_cast<std::size_t>(std::max(width, 0)), fill) {
  if (height < 0 || width < 0) throw ValidationError("negative plane dimensions");
}

Plane::Plane(int height, int width, std::vector<float> values)
    : height_(height), width_(width), data_(std::move(values)) {
  if (height < 0 || width < 0 ||
      data_.size() != static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
    throw ValidationError("plane of " + shape_text(height, width) + " given " +
                          std::to_string(data_.size()) + " values");
  }
}

GradeMask::GradeMask(Plane plane) : plane_(std::move(plane)) {
  for (float v : plane_.values()) {
    if (!is_grade_level(v)) {
      throw ValidationError("grade mask value " + std::to_string(v) + " not in {0, 0.5, 0.75, 1}");
    }
  }
}

GradeMask GradeMask::zeros(int height, int width) { return GradeMask(Plane(height, width)); }

bool GradeMask::is_empty() const noexcept {
  const auto v = plane_.values();
  return std::all_of(v.begin(), v.end(), [](float x) { return x == 0.0f; });
}

std::size_t GradeMask::count(float grade) const noexcept {
  const auto v = plane_.values();
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), grade));
}

BinaryMask::BinaryMask(Plane plane) : plane_(std::move(plane)) {
  for (float v : plane_.values()) {
    if (v != 0.0f && v != 1.0f) {
      throw ValidationError("binary mask value " + std::to_string(v) + " not in {0, 1}");
    }
  }
}

BinaryMask BinaryMask::zeros(int height, int width) { return BinaryMask(Plane(height, width)); }

std::size_t BinaryMask::count() const noexcept {
  const auto v = plane_.values();
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), 1.0f));
}

MCSlice::MCSlice(int height, int width) {
  for (auto& c : channels_) c = Plane(height, width);
}

MCSlice::MCSlice(std::array<Plane, kNumContrasts> channels, bool normalized)
    : channels_(std::move(channels)), normalized_(normalized) {
  validate();
}

void MCSlice::validate() const {
  for (const auto& c : channels_) {
    if (!c.same_shape(channels_[0])) {
      throw ValidationError("contrast planes differ in shape");
    }
  }
  if (normalized_) {
    for (const auto& c : channels_) {
      for (float v : c.values()) {
        if (!(v >= kClipLow && v <= kClipHigh)) {
          throw ValidationError("normalized slice has value " + std::to_string(v) +
                                " outside [-0.5, 5]");
        }
      }
    }
  }
}

std::string_view to_string(Source source) {
  switch (source) {
    case Source::kReal: return "real";
    case Source::kPhantom: return "phantom";
    case Source::kSynthesized: return "synthesized";
  }
  return "unknown";
}

Source parse_source(std::string_view text) {
  if (text == "real") return Source::kReal;
  if (text == "phantom") return Source::kPhantom;
  if (text == "synthesized") return Source::kSynthesized;
  throw ValidationError("unknown source '" + std::string(text) + "'");
}

void SliceRecord::validate() const {
  check_id(id);
  images.validate();
  const int h = images.height();
  const int w = images.width();
  if (grade_mask && (grade_mask->height() != h || grade_mask->width() != w)) {
    throw DimensionMismatch("grade mask of record '" + id + "' is " +
                            shape_text(grade_mask->height(), grade_mask->width()) +
                            ", images are " + shape_text(h, w));
  }
  if (brain_mask && (brain_mask->height() != h || brain_mask->width() != w)) {
    throw DimensionMismatch("brain mask of record '" + id + "' does not match images");
  }
}

BinaryMask brain_support(const SliceRecord& record) {
  if (record.brain_mask) return *record.brain_mask;
  const Plane& t1w = record.images.channel(Contrast::kT1w);
  Plane out(t1w.height(), t1w.width());
  auto src = t1w.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0f ? 1.0f : 0.0f;
  return BinaryMask(std::move(out));
}

// ---------------------------------------------------------------------------
// DatasetManifest

const SliceRecord& DatasetManifest::find(std::string_view id) const {
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw ValidationError("no record with id '" + std::string(id) + "'");
}

std::vector<const SliceRecord*> DatasetManifest::split(std::string_view name) const {
  std::vector<const SliceRecord*> out;
  auto it = splits.find(std::string(name));
  if (it == splits.end()) return out;
  std::map<std::string_view, const SliceRecord*> by_id;
  for (const auto& r : records) by_id.emplace(r.id, &r);
  for (const auto& id : it->second) {
    auto found = by_id.find(id);
    if (found == by_id.end()) throw ValidationError("split '" + it->first + "' names unknown id '" + id + "'");
    out.push_back(found->second);
  }
  return out;
}

void DatasetManifest::validate() const {
  std::set<std::string_view> ids;
  for (const auto& r : records) {
    r.validate();
    if (!ids.insert(r.id).second) throw ValidationError("duplicate record id '" + r.id + "'");
  }
  std::map<std::string_view, std::string_view> owner;
  for (const auto& [name, list] : splits) {
    for (const auto& id : list) {
      if (!ids.count(id)) throw ValidationError("split '" + name + "' names unknown id '" + id + "'");
      auto [it, inserted] = owner.emplace(id, name);
      if (!inserted) {
        throw ValidationError("id '" + id + "' appears in splits '" + std::string(it->second) +
                              "' and '" + name + "'");
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Intensity preprocessing

Plane gaussian_normalize(const Plane& image) {
  if (image.empty()) throw ValidationError("cannot normalize an empty plane");
  double sum = 0.0;
  std::size_t n = 0;
  for (float v : image.values()) {
    if (v != 0.0f) {
      sum += v;
      ++n;
    }
  }
  if (n == 0) throw DegenerateStd("plane has no nonzero support");
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (float v : image.values()) {
    if (v != 0.0f) ss += (v - mean) * (v - mean);
  }
  const double stddev = std::sqrt(ss / static_cast<double>(n));
  if (stddev < 1e-8) throw DegenerateStd("support standard deviation " + std::to_string(stddev));

  Plane out(image.height(), image.width());
  auto src = image.values();
  auto dst = out.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double z = (src[i] - mean) / stddev;
    dst[i] = static_cast<float>(std::clamp(z, double{kClipLow}, double{kClipHigh}));
  }
  return out;
}

SliceRecord preprocess_record(const SliceRecord& record) {
  if (record.images.normalized()) return record;
  SliceRecord out = record;
  out.brain_mask = brain_support(record);
  for (int c = 0; c < kNumContrasts; ++c) {
    out.images.channel(c) = gaussian_normalize(record.images.channel(c));
  }
  out.images.set_normalized(true);
  return out;
}

DatasetManifest preprocess_dataset(const DatasetManifest& manifest) {
  DatasetManifest out;
  out.format_version = manifest.format_version;
  out.splits = manifest.splits;
  out.records.reserve(manifest.records.size());
  for (const auto& r : manifest.records) out.records.push_back(preprocess_record(r));
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

fs::path save_slice(const SliceRecord& record, const fs::path& directory) {
  record.validate();
  ensure_directory(directory);

  const int h = record.images.height();
  const int w = record.images.width();
  json names = json::array();
  for (auto n : kContrastNames) names.push_back(std::string(n));
  if (record.grade_mask) names.push_back("grade");
  if (record.brain_mask) names.push_back("brain");

  const fs::path tensor_path = directory / (record.id + ".mct");
  {
    std::ofstream out(tensor_path, std::ios::binary);
    if (!out) throw IOFailure("cannot write " + tensor_path.string());
    for (int c = 0; c < kNumContrasts; ++c) write_floats(out, record.images.channel(c).values());
    if (record.grade_mask) write_floats(out, record.grade_mask->plane().values());
    if (record.brain_mask) write_floats(out, record.brain_mask->plane().values());
    if (!out) throw IOFailure("write failed for " + tensor_path.string());
  }

  json meta;
  meta["id"] = record.id;
  meta["height"] = h;
  meta["width"] = w;
  meta["channels"] = names.size();
  meta["channel_names"] = names;
  meta["normalized"] = record.images.normalized();
  meta["source"] = std::string(to_string(record.source));
  meta["seed"] = record.seed ? json(*record.seed) : json(nullptr);
  meta["has_grade_mask"] = record.grade_mask.has_value();
  meta["has_brain_mask"] = record.brain_mask.has_value();
  meta["format_version"] = kFormatVersion;

  const fs::path sidecar = directory / (record.id + ".json");
  write_text(sidecar, meta.dump(2) + "\n");
  return sidecar;
}

SliceRecord load_slice(const fs::path& path) {
  fs::path stem = path;
  if (stem.extension() == ".json" || stem.extension() == ".mct") stem.replace_extension();
  const fs::path sidecar = fs::path(stem).concat(".json");
  const fs::path tensor_path = fs::path(stem).concat(".mct");

  const json meta = read_json(sidecar, "slice metadata");
  SliceRecord record;
  std::vector<std::string> names;
  int h = 0, w = 0;
  std::size_t channels = 0;
  bool normalized = false;
  try {
    const int version = meta.at("format_version").get<int>();
    if (version != kFormatVersion) {
      throw UnknownVersion("format_version " + std::to_string(version) + " in " + sidecar.string());
    }
    record.id = meta.at("id").get<std::string>();
    h = meta.at("height").get<int>();
    w = meta.at("width").get<int>();
    channels = meta.at("channels").get<std::size_t>();
    names = meta.at("channel_names").get<std::vector<std::string>>();
    normalized = meta.at("normalized").get<bool>();
    record.source = parse_source(meta.at("source").get<std::string>());
    if (!meta.at("seed").is_null()) record.seed = meta.at("seed").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw CorruptRecord("slice metadata " + sidecar.string() + ": " + e.what());
  } catch (const ValidationError& e) {
    throw CorruptRecord(e.detail());
  }
  if (h <= 0 || w <= 0 || channels != names.size() || channels < kNumContrasts) {
    throw CorruptRecord("inconsistent dimensions in " + sidecar.string());
  }
  for (int c = 0; c < kNumContrasts; ++c) {
    if (names[static_cast<std::size_t>(c)] != kContrastNames[static_cast<std::size_t>(c)]) {
      throw CorruptRecord("unexpected channel order in " + sidecar.string());
    }
  }

  const std::vector<char> bytes = read_bytes(tensor_path);
  const std::size_t plane_size = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  const std::size_t expected = plane_size * channels * sizeof(float);
  if (bytes.size() != expected) {
    throw CorruptRecord(tensor_path.string() + " holds " + std::to_string(bytes.size()) +
                        " bytes, metadata implies " + std::to_string(expected));
  }

  try {
    std::array<Plane, kNumContrasts> planes;
    for (std::size_t c = 0; c < kNumContrasts; ++c) {
      planes[c] = Plane(h, w, read_floats(bytes, c * plane_size * sizeof(float), plane_size));
    }
    record.images = MCSlice(std::move(planes), normalized);
    for (std::size_t c = kNumContrasts; c < channels; ++c) {
      Plane p(h, w, read_floats(bytes, c * plane_size * sizeof(float), plane_size));
      if (names[c] == "grade") {
        record.grade_mask = GradeMask(std::move(p));
      } else if (names[c] == "brain") {
        record.brain_mask = BinaryMask(std::move(p));
      } else {
        throw CorruptRecord("unknown channel '" + names[c] + "' in " + sidecar.string());
      }
    }
    record.validate();
  } catch (const ValidationError& e) {
    throw CorruptRecord(sidecar.string() + ": " + e.detail());
  }
  return record;
}

void save_dataset(const DatasetManifest& manifest, const fs::path& directory) {
  manifest.validate();
  ensure_directory(directory);
  const fs::path record_dir = directory / "records";
  json entries = json::array();
  for (const auto& r : manifest.records) {
    save_slice(r, record_dir);
    entries.push_back({{"id", r.id},
                       {"path", "records/" + r.id + ".json"},
                       {"source", std::string(to_string(r.source))}});
  }
  json doc;
  doc["format_version"] = manifest.format_version;
  doc["records"] = std::move(entries);
  doc["splits"] = manifest.splits;
  write_text(directory / "manifest.json", doc.dump(2) + "\n");
}

DatasetManifest load_dataset(const fs::path& directory) {
  const fs::path manifest_path = directory / "manifest.json";
  const json doc = read_json(manifest_path, "manifest");
  DatasetManifest manifest;
  try {
    manifest.format_version = doc.at("format_version").get<int>();
    if (manifest.format_version != kFormatVersion) {
      throw UnknownVersion("manifest format_version " + std::to_string(manifest.format_version));
    }
    for (const auto& entry : doc.at("records")) {
      manifest.records.push_back(load_slice(directory / entry.at("path").get<std::string>()));
    }
    manifest.splits = doc.at("splits").get<std::map<std::string, std::vector<std::string>>>();
  } catch (const json::exception& e) {
    throw CorruptRecord("manifest " + manifest_path.string() + ": " + e.what());
  }
  try {
    manifest.validate();
  } catch (const ValidationError& e) {
    throw CorruptRecord("manifest " + manifest_path.string() + ": " + e.detail());
  }
  return manifest;
}

}  // namespace tumorforge
