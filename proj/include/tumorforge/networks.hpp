#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace tumorforge {

/// While alive, collects the branch taken by every non-smooth operation
/// (ReLU, max-pool, clamp, absolute value) evaluated on this thread.
/// Finite-difference checks use it to spot perturbations that cross a kink.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  const std::vector<torch::Tensor>& branches() const { return branches_; }
  static bool active();
  /// Stores a detached copy; no-op without an active recorder.
  static void note(const torch::Tensor& branch);

 private:
  std::vector<torch::Tensor> branches_;
  BranchRecorder* previous_ = nullptr;
};

enum class NetworkKind { kGBinary, kGGrade, kGInpaint, kDInpaint, kUNetSeg, kFeatureExtractor };
std::string_view to_string(NetworkKind kind);
NetworkKind parse_network_kind(std::string_view text);

/// Block vocabulary of the inpainting networks.
///   kCIR  convolution + instance normalization + ReLU
///   kRES  two CIR(k, 1) with an identity skip
///   kUP   nearest-neighbour upsampling by `kernel`
///   kAVG  global average pool
///   kConv bare convolution with bias (network heads)
enum class BlockOp { kCIR, kRES, kUP, kAVG, kConv };

struct BlockSpec {
  BlockOp op = BlockOp::kCIR;
  int kernel = 3;
  int stride = 1;
  int out_channels = 0;  // unused by kRES/kUP/kAVG (they keep the channel count)
};
std::string describe(const BlockSpec& block);

/// Channel counts are the reference widths scaled by `width` (>= 1 channel).
/// A non-positive width selects auto_width(size).
struct NetworkOptions {
  int size = 256;
  double width = 0.0;
  std::uint64_t seed = 0;
};

/// (size / 256)^1.5, capped at 1: reference widths at 256, 1/8 of them at 64.
double auto_width(int size);
int scaled_channels(int reference, double width);
/// Encoder/decoder levels of the mask U-Nets: 4 at 256, 3 at 64, 1 at 16.
int unet_depth(int size);

/// Reference block tables of the inpainting generator and discriminator.
std::vector<BlockSpec> inpaint_image_encoder_blocks();
std::vector<BlockSpec> inpaint_mask_encoder_blocks();
std::vector<BlockSpec> inpaint_decoder_blocks();
std::vector<BlockSpec> discriminator_blocks();

using ShapeTrace = std::vector<std::pair<std::string, std::vector<std::int64_t>>>;

class NetworkModule : public torch::nn::Module {
 public:
  /// Pre-activation output. `aux` is the second input where the network has one.
  virtual torch::Tensor forward_raw(const torch::Tensor& x, const torch::Tensor& aux) = 0;
  virtual torch::Tensor activate(const torch::Tensor& raw) const = 0;

  void set_trace(ShapeTrace* trace) { trace_ = trace; }

 protected:
  void record(const std::string& label, const torch::Tensor& t) const;
  ShapeTrace* trace() const { return trace_; }

 private:
  ShapeTrace* trace_ = nullptr;
};

struct NetworkHandle {
  NetworkKind kind = NetworkKind::kGBinary;
  NetworkOptions options;
  std::shared_ptr<NetworkModule> module;
  /// (channels, height, width) per input; -1 = any.
  std::vector<std::vector<std::int64_t>> input_spec;
  std::vector<std::int64_t> output_spec;
  /// Training epochs behind the current parameters (0 = freshly initialized).
  int epoch = 0;
  double validation_loss = std::numeric_limits<double>::quiet_NaN();

  /// Batched forward, inputs shaped [B, C, H, W]. Throws ShapeMismatch.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& aux = {}) const;
  torch::Tensor forward_raw(const torch::Tensor& x, const torch::Tensor& aux = {}) const;
  /// Output shape of every traced block for one forward pass.
  ShapeTrace trace(const torch::Tensor& x, const torch::Tensor& aux = {}) const;

  std::int64_t parameter_count() const;
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;
  void set_requires_grad(bool value) const;
  void to(torch::Dtype dtype) const;
  /// Deep copy with independent parameters.
  NetworkHandle clone() const;
  void copy_parameters_from(const NetworkHandle& other) const;

 private:
  void check_inputs(const torch::Tensor& x, const torch::Tensor& aux) const;
};

NetworkHandle build_g_binary(const NetworkOptions& options);
NetworkHandle build_g_grade(const NetworkOptions& options);
NetworkHandle build_g_inpaint(const NetworkOptions& options);
NetworkHandle build_d_inpaint(const NetworkOptions& options);
NetworkHandle build_unet_seg(const NetworkOptions& options);
NetworkHandle build_network(NetworkKind kind, const NetworkOptions& options);

enum class FeatureMode { kPretrained, kFixedRandom };
/// Which activation of the pretrained backbone is exposed.
enum class FeatureLayer { kSecondConv, kSecondBlock };

struct FeatureExtractorOptions {
  FeatureMode mode = FeatureMode::kFixedRandom;
  std::uint64_t seed = 0;
  FeatureLayer layer = FeatureLayer::kSecondConv;
  /// Tensor archive with VGG-19 `features.{0,2,5,7}.{weight,bias}` (pretrained mode).
  std::filesystem::path weights;
};
/// Frozen feature map Ψ. One-channel inputs are replicated and four-channel
/// inputs averaged to the three input channels of the backbone.
NetworkHandle build_feature_extractor(const FeatureExtractorOptions& options);

/// Named float32 tensors plus a JSON metadata object, in one binary file:
/// "TFTENSOR" magic, u64 LE header length, JSON header, raw LE float32 data.
struct TensorArchive {
  std::map<std::string, std::string> metadata;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor* find(std::string_view name) const;
};
void write_tensor_archive(const TensorArchive& archive, const std::filesystem::path& path);
TensorArchive read_tensor_archive(const std::filesystem::path& path);

/// Checkpoint = tensor archive with kind, size, width, seed, epoch and
/// validation loss in the metadata.
void save_checkpoint(const NetworkHandle& network, const std::filesystem::path& path);
NetworkHandle load_checkpoint(const std::filesystem::path& path);

}  // namespace tumorforge
