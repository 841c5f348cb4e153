#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tumorforge {

inline constexpr int kNumContrasts = 4;
inline constexpr int kFormatVersion = 1;

/// Channel order of every multi-contrast slice.
enum class Contrast : int { kFlair = 0, kT1w = 1, kT1c = 2, kT2w = 3 };
inline constexpr std::array<std::string_view, kNumContrasts> kContrastNames{
    "FLAIR", "T1w", "T1c", "T2w"};

/// Grade encoding of the tumor sub-regions.
inline constexpr float kBackgroundGrade = 0.0f;
inline constexpr float kEdemaGrade = 0.5f;
inline constexpr float kEnhancingGrade = 0.75f;
inline constexpr float kNecroticGrade = 1.0f;
inline constexpr std::array<float, 4> kGradeLevels{
    kBackgroundGrade, kEdemaGrade, kEnhancingGrade, kNecroticGrade};

/// Single-channel float image, row-major.
class Plane {
 public:
  Plane() = default;
  Plane(int height, int width, float fill = 0.0f);
  Plane(int height, int width, std::vector<float> values);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& operator()(int row, int col) { return data_[index(row, col)]; }
  float operator()(int row, int col) const { return data_[index(row, col)]; }

  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  bool same_shape(const Plane& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Plane&, const Plane&) = default;

 private:
  std::size_t index(int row, int col) const noexcept {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// Tumor grade map; every pixel is one of kGradeLevels (checked on construction).
class GradeMask {
 public:
  GradeMask() = default;
  explicit GradeMask(Plane plane);
  static GradeMask zeros(int height, int width);

  const Plane& plane() const noexcept { return plane_; }
  int height() const noexcept { return plane_.height(); }
  int width() const noexcept { return plane_.width(); }
  float operator()(int row, int col) const { return plane_(row, col); }
  bool is_empty() const noexcept;
  std::size_t count(float grade) const noexcept;

  friend bool operator==(const GradeMask&, const GradeMask&) = default;

 private:
  Plane plane_;
};

/// {0, 1}-valued map (checked on construction).
class BinaryMask {
 public:
  BinaryMask() = default;
  explicit BinaryMask(Plane plane);
  static BinaryMask zeros(int height, int width);

  const Plane& plane() const noexcept { return plane_; }
  int height() const noexcept { return plane_.height(); }
  int width() const noexcept { return plane_.width(); }
  float operator()(int row, int col) const { return plane_(row, col); }
  std::size_t count() const noexcept;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  Plane plane_;
};

/// Four co-registered contrasts (FLAIR, T1w, T1c, T2w) of one axial slice.
class MCSlice {
 public:
  MCSlice() = default;
  MCSlice(int height, int width);
  MCSlice(std::array<Plane, kNumContrasts> channels, bool normalized);

  int height() const noexcept { return channels_[0].height(); }
  int width() const noexcept { return channels_[0].width(); }
  bool normalized() const noexcept { return normalized_; }
  void set_normalized(bool value) noexcept { normalized_ = value; }

  Plane& channel(int index) { return channels_.at(static_cast<std::size_t>(index)); }
  const Plane& channel(int index) const { return channels_.at(static_cast<std::size_t>(index)); }
  Plane& channel(Contrast c) { return channel(static_cast<int>(c)); }
  const Plane& channel(Contrast c) const { return channel(static_cast<int>(c)); }

  /// Throws ValidationError when an invariant is broken.
  void validate() const;

  friend bool operator==(const MCSlice&, const MCSlice&) = default;

 private:
  std::array<Plane, kNumContrasts> channels_;
  bool normalized_ = false;
};

enum class Source { kReal, kPhantom, kSynthesized };
std::string_view to_string(Source source);
Source parse_source(std::string_view text);

struct SliceRecord {
  std::string id;
  MCSlice images;
  std::optional<GradeMask> grade_mask;
  /// Skull-strip support captured before intensity normalization. When absent
  /// the support is recovered as β(T1w), which is only exact on raw data.
  std::optional<BinaryMask> brain_mask;
  Source source = Source::kPhantom;
  std::optional<std::int64_t> seed;

  bool has_tumor() const noexcept { return grade_mask && !grade_mask->is_empty(); }
  void validate() const;

  friend bool operator==(const SliceRecord&, const SliceRecord&) = default;
};

/// Brain support of a record: the stored brain mask, else β(T1w).
BinaryMask brain_support(const SliceRecord& record);

struct DatasetManifest {
  int format_version = kFormatVersion;
  std::vector<SliceRecord> records;
  std::map<std::string, std::vector<std::string>> splits;

  const SliceRecord& find(std::string_view id) const;
  /// Records named by a split; an unknown split yields an empty list.
  std::vector<const SliceRecord*> split(std::string_view name) const;
  /// Splits are disjoint and every id resolves.
  void validate() const;
};

/// Standardizes with statistics of the nonzero pixels, then clips to [-0.5, 5].
Plane gaussian_normalize(const Plane& image);
inline constexpr float kClipLow = -0.5f;
inline constexpr float kClipHigh = 5.0f;

/// Normalizes all four contrasts; records the pre-normalization brain support.
SliceRecord preprocess_record(const SliceRecord& record);
DatasetManifest preprocess_dataset(const DatasetManifest& manifest);

/// Writes `<dir>/<id>.mct` and `<dir>/<id>.json`; returns the sidecar path.
std::filesystem::path save_slice(const SliceRecord& record, const std::filesystem::path& directory);
/// Accepts the sidecar, the tensor file, or the extension-less stem.
SliceRecord load_slice(const std::filesystem::path& path);

/// `<dir>/manifest.json` plus `<dir>/records/`.
void save_dataset(const DatasetManifest& manifest, const std::filesystem::path& directory);
DatasetManifest load_dataset(const std::filesystem::path& directory);

}  // namespace tumorforge
