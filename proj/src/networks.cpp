#include "tumorforge/networks.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "tumorforge/errors.hpp"

namespace tumorforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(NetworkKind kind) {
  switch (kind) {
    case NetworkKind::kGBinary: return "g_binary";
    case NetworkKind::kGGrade: return "g_grade";
    case NetworkKind::kGInpaint: return "g_inpaint";
    case NetworkKind::kDInpaint: return "d_inpaint";
    case NetworkKind::kUNetSeg: return "unet_seg";
    case NetworkKind::kFeatureExtractor: return "feature_extractor";
  }
  return "unknown";
}

NetworkKind parse_network_kind(std::string_view text) {
  for (auto k : {NetworkKind::kGBinary, NetworkKind::kGGrade, NetworkKind::kGInpaint, NetworkKind::kDInpaint,
                 NetworkKind::kUNetSeg, NetworkKind::kFeatureExtractor}) {
    if (to_string(k) == text) return k;
  }
  throw CorruptRecord("unknown network kind '" + std::string(text) + "'");
}

std::string describe(const BlockSpec& block) {
  const std::string k = std::to_string(block.kernel);
  switch (block.op) {
    case BlockOp::kCIR: return "CIR(" + k + "," + std::to_string(block.stride) + ")";
    case BlockOp::kRES: return "RES(" + k + ")";
    case BlockOp::kUP: return "UP(" + k + ")";
    case BlockOp::kAVG: return "AVG";
    case BlockOp::kConv: return "Conv(" + k + "," + std::to_string(block.stride) + ")";
  }
  return "?";
}

double auto_width(int size) { return std::min(1.0, std::pow(size / 256.0, 1.5)); }

int scaled_channels(int reference, double width) {
  return std::max(1, static_cast<int>(std::lround(reference * width)));
}

int unet_depth(int size) {
  const int log2 = std::bit_width(static_cast<unsigned>(size)) - 1;
  return std::clamp(log2 - 3, 1, 4);
}

std::vector<BlockSpec> inpaint_image_encoder_blocks() {
  return {{BlockOp::kCIR, 3, 2, 32},
          {BlockOp::kCIR, 3, 2, 128},
          {BlockOp::kRES, 3, 1, 0},
          {BlockOp::kRES, 3, 1, 0},
          {BlockOp::kRES, 3, 1, 0}};
}

std::vector<BlockSpec> inpaint_mask_encoder_blocks() {
  return {{BlockOp::kCIR, 3, 2, 4}, {BlockOp::kCIR, 3, 2, 16}};
}

std::vector<BlockSpec> inpaint_decoder_blocks() {
  return {{BlockOp::kCIR, 3, 1, 256}, {BlockOp::kRES, 3, 1, 0},    {BlockOp::kRES, 3, 1, 0},
          {BlockOp::kRES, 3, 1, 0},   {BlockOp::kUP, 2, 1, 0},     {BlockOp::kCIR, 3, 1, 128},
          {BlockOp::kUP, 2, 1, 0},    {BlockOp::kCIR, 3, 1, 64},   {BlockOp::kConv, 7, 1, 1}};
}

std::vector<BlockSpec> discriminator_blocks() {
  return {{BlockOp::kCIR, 3, 2, 32}, {BlockOp::kCIR, 3, 2, 64}, {BlockOp::kCIR, 3, 1, 256},
          {BlockOp::kRES, 3, 1, 0},  {BlockOp::kRES, 3, 1, 0},  {BlockOp::kRES, 3, 1, 0},
          {BlockOp::kCIR, 3, 1, 64}, {BlockOp::kConv, 3, 1, 1}, {BlockOp::kAVG, 0, 1, 0}};
}

// ---------------------------------------------------------------------------
// Branch recording

namespace {
thread_local BranchRecorder* active_recorder = nullptr;
}  // namespace

BranchRecorder::BranchRecorder() : previous_(active_recorder) { active_recorder = this; }
BranchRecorder::~BranchRecorder() { active_recorder = previous_; }
bool BranchRecorder::active() { return active_recorder != nullptr; }
void BranchRecorder::note(const torch::Tensor& branch) {
  if (active_recorder) active_recorder->branches_.push_back(branch.detach().clone());
}

// ---------------------------------------------------------------------------
// Layers

namespace {

torch::Tensor recorded_relu(const torch::Tensor& x) {
  if (BranchRecorder::active()) BranchRecorder::note(x > 0);
  return torch::relu(x);
}

torch::Tensor max_pool(const torch::Tensor& x) {
  if (!BranchRecorder::active()) return torch::max_pool2d(x, 2);
  auto [values, indices] = torch::max_pool2d_with_indices(x, 2);
  BranchRecorder::note(indices);
  return values;
}

torch::nn::Conv2d make_conv(int in, int out, int kernel, int stride, bool bias) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(bias));
}

torch::nn::InstanceNorm2d make_norm(int channels) {
  return torch::nn::InstanceNorm2d(torch::nn::InstanceNorm2dOptions(channels).affine(true));
}

class CirImpl : public torch::nn::Module {
 public:
  CirImpl(int in, int out, int kernel, int stride)
      : conv_(register_module("conv", make_conv(in, out, kernel, stride, false))),
        norm_(register_module("norm", make_norm(out))) {}

  torch::Tensor forward(const torch::Tensor& x) { return recorded_relu(norm_(conv_(x))); }

 private:
  torch::nn::Conv2d conv_;
  torch::nn::InstanceNorm2d norm_;
};
TORCH_MODULE(Cir);

class BlockImpl : public torch::nn::Module {
 public:
  BlockImpl(const BlockSpec& spec, int in_channels, double width) : spec_(spec), out_channels_(in_channels) {
    switch (spec.op) {
      case BlockOp::kCIR:
        out_channels_ = scaled_channels(spec.out_channels, width);
        first_ = register_module("cir", Cir(in_channels, out_channels_, spec.kernel, spec.stride));
        break;
      case BlockOp::kRES:
        first_ = register_module("cir1", Cir(in_channels, in_channels, spec.kernel, 1));
        second_ = register_module("cir2", Cir(in_channels, in_channels, spec.kernel, 1));
        break;
      case BlockOp::kConv:
        // Heads emit the network output, so they are not width-scaled.
        out_channels_ = spec.out_channels;
        head_ = register_module("conv", make_conv(in_channels, out_channels_, spec.kernel, spec.stride, true));
        break;
      case BlockOp::kUP:
      case BlockOp::kAVG:
        break;
    }
  }

  torch::Tensor forward(const torch::Tensor& x) {
    switch (spec_.op) {
      case BlockOp::kCIR: return first_(x);
      case BlockOp::kRES: return x + second_(first_(x));
      case BlockOp::kConv: return head_(x);
      case BlockOp::kUP:
        return torch::nn::functional::interpolate(
            x, torch::nn::functional::InterpolateFuncOptions()
                   .scale_factor(std::vector<double>{double(spec_.kernel), double(spec_.kernel)})
                   .mode(torch::kNearest));
      case BlockOp::kAVG: return x.mean({2, 3}, /*keepdim=*/true);
    }
    return x;
  }

  int out_channels() const { return out_channels_; }
  const BlockSpec& spec() const { return spec_; }

 private:
  BlockSpec spec_;
  int out_channels_;
  Cir first_{nullptr};
  Cir second_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Block);

class StackImpl : public torch::nn::Module {
 public:
  StackImpl(const std::vector<BlockSpec>& specs, int in_channels, double width) {
    int channels = in_channels;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      blocks_.push_back(register_module("b" + std::to_string(i), Block(specs[i], channels, width)));
      channels = blocks_.back()->out_channels();
    }
    out_channels_ = channels;
  }

  torch::Tensor forward(torch::Tensor x, const std::string& prefix, ShapeTrace* trace) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      x = blocks_[i]->forward(x);
      if (trace) {
        trace->emplace_back(prefix + "." + std::to_string(i) + " " + describe(blocks_[i]->spec()),
                            x.sizes().vec());
      }
    }
    return x;
  }

  int out_channels() const { return out_channels_; }

 private:
  std::vector<Block> blocks_;
  int out_channels_ = 0;
};
TORCH_MODULE(Stack);

}  // namespace

void NetworkModule::record(const std::string& label, const torch::Tensor& t) const {
  if (trace_) trace_->emplace_back(label, t.sizes().vec());
}

// ---------------------------------------------------------------------------
// Network bodies

namespace {

class InpaintGenerator : public NetworkModule {
 public:
  explicit InpaintGenerator(double width)
      : image_encoder_(register_module("image_encoder", Stack(inpaint_image_encoder_blocks(), 5, width))),
        mask_encoder_(register_module("mask_encoder", Stack(inpaint_mask_encoder_blocks(), 1, width))) {
    const int fused = image_encoder_->out_channels() + mask_encoder_->out_channels();
    for (int c = 0; c < 4; ++c) {
      decoders_.push_back(
          register_module("decoder" + std::to_string(c), Stack(inpaint_decoder_blocks(), fused, width)));
    }
  }

  torch::Tensor forward_raw(const torch::Tensor& x, const torch::Tensor& mask) override {
    ShapeTrace* t = trace();
    const auto image_features = image_encoder_->forward(x, "image_encoder", t);
    const auto mask_features = mask_encoder_->forward(mask, "mask_encoder", t);
    const auto fused = torch::cat({image_features, mask_features}, 1);
    record("fused", fused);
    std::vector<torch::Tensor> outputs;
    for (std::size_t c = 0; c < decoders_.size(); ++c) {
      outputs.push_back(decoders_[c]->forward(fused, "decoder" + std::to_string(c), t));
    }
    return torch::cat(outputs, 1);
  }

  torch::Tensor activate(const torch::Tensor& raw) const override {
    if (BranchRecorder::active()) BranchRecorder::note((raw > 5.0).to(torch::kInt8) - (raw < -0.5).to(torch::kInt8));
    return raw.clamp(-0.5, 5.0);
  }

 private:
  Stack image_encoder_;
  Stack mask_encoder_;
  std::vector<Stack> decoders_;
};

class InpaintDiscriminator : public NetworkModule {
 public:
  explicit InpaintDiscriminator(double width)
      : body_(register_module("body", Stack(discriminator_blocks(), 5, width))) {}

  torch::Tensor forward_raw(const torch::Tensor& x, const torch::Tensor&) override {
    return body_->forward(x, "body", trace());
  }

  torch::Tensor activate(const torch::Tensor& raw) const override { return torch::sigmoid(raw); }

 private:
  Stack body_;
};

class DoubleConvImpl : public torch::nn::Module {
 public:
  DoubleConvImpl(int in, int out)
      : a_(register_module("a", Cir(in, out, 3, 1))), b_(register_module("b", Cir(out, out, 3, 1))) {}
  torch::Tensor forward(const torch::Tensor& x) { return b_(a_(x)); }

 private:
  Cir a_, b_;
};
TORCH_MODULE(DoubleConv);

enum class UNetHead { kSigmoid, kSoftmax };

class UNet : public NetworkModule {
 public:
  UNet(int in_channels, int out_channels, int depth, double width, UNetHead head) : head_kind_(head) {
    std::vector<int> ch(static_cast<std::size_t>(depth + 1));
    for (int i = 0; i <= depth; ++i) ch[static_cast<std::size_t>(i)] = scaled_channels(64 << i, width);
    int prev = in_channels;
    for (int i = 0; i <= depth; ++i) {
      encoders_.push_back(register_module("enc" + std::to_string(i), DoubleConv(prev, ch[std::size_t(i)])));
      prev = ch[std::size_t(i)];
    }
    for (int i = depth - 1; i >= 0; --i) {
      up_.push_back(register_module("up" + std::to_string(i), Cir(ch[std::size_t(i + 1)], ch[std::size_t(i)], 3, 1)));
      decoders_.push_back(
          register_module("dec" + std::to_string(i), DoubleConv(2 * ch[std::size_t(i)], ch[std::size_t(i)])));
    }
    head_ = register_module("head", make_conv(ch[0], out_channels, 1, 1, true));
  }

  torch::Tensor forward_raw(const torch::Tensor& x, const torch::Tensor&) override {
    std::vector<torch::Tensor> skips;
    torch::Tensor h = x;
    for (std::size_t i = 0; i < encoders_.size(); ++i) {
      if (i > 0) h = max_pool(h);
      h = encoders_[i](h);
      record("enc" + std::to_string(i), h);
      skips.push_back(h);
    }
    for (std::size_t j = 0; j < decoders_.size(); ++j) {
      h = torch::nn::functional::interpolate(
          h, torch::nn::functional::InterpolateFuncOptions()
                 .scale_factor(std::vector<double>{2.0, 2.0})
                 .mode(torch::kNearest));
      h = up_[j](h);
      h = decoders_[j](torch::cat({skips[skips.size() - 2 - j], h}, 1));
      record("dec" + std::to_string(j), h);
    }
    return head_(h);
  }

  torch::Tensor activate(const torch::Tensor& raw) const override {
    return head_kind_ == UNetHead::kSigmoid ? torch::sigmoid(raw) : torch::softmax(raw, 1);
  }

 private:
  UNetHead head_kind_;
  std::vector<DoubleConv> encoders_;
  std::vector<Cir> up_;
  std::vector<DoubleConv> decoders_;
  torch::nn::Conv2d head_{nullptr};
};

class FeatureExtractor : public NetworkModule {
 public:
  explicit FeatureExtractor(const FeatureExtractorOptions& options) {
    if (options.mode == FeatureMode::kFixedRandom) {
      convs_.push_back(register_module("conv0", make_conv(3, 32, 3, 2, true)));
      convs_.push_back(register_module("conv1", make_conv(32, 64, 3, 2, true)));
      return;
    }
    // VGG-19 `features` indices of the first two blocks.
    const std::vector<std::tuple<int, int, int>> layers =
        options.layer == FeatureLayer::kSecondConv
            ? std::vector<std::tuple<int, int, int>>{{0, 3, 64}, {2, 64, 64}}
            : std::vector<std::tuple<int, int, int>>{{0, 3, 64}, {2, 64, 64}, {5, 64, 128}, {7, 128, 128}};
    for (const auto& [index, in, out] : layers) {
      convs_.push_back(register_module("features_" + std::to_string(index), make_conv(in, out, 3, 1, true)));
      vgg_indices_.push_back(index);
    }
  }

  const std::vector<int>& vgg_indices() const { return vgg_indices_; }
  std::vector<torch::nn::Conv2d>& convs() { return convs_; }

  torch::Tensor forward_raw(const torch::Tensor& x, const torch::Tensor&) override {
    torch::Tensor h = adapt(x);
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      if (i == 2) h = max_pool(h);
      h = recorded_relu(convs_[i](h));
    }
    return h;
  }

  torch::Tensor activate(const torch::Tensor& raw) const override { return raw; }

 private:
  static torch::Tensor adapt(const torch::Tensor& x) {
    switch (x.size(1)) {
      case 3: return x;
      case 1: return x.expand({x.size(0), 3, x.size(2), x.size(3)});
      case 4: {
        auto mean = x.mean(1, /*keepdim=*/true);
        return mean.expand({x.size(0), 3, x.size(2), x.size(3)});
      }
      default:
        throw ShapeMismatch("feature extractor accepts 1, 3 or 4 channels, got " + std::to_string(x.size(1)));
    }
  }

  std::vector<torch::nn::Conv2d> convs_;
  std::vector<int> vgg_indices_;
};

void check_size(int size) {
  if (size < 16 || !std::has_single_bit(static_cast<unsigned>(size))) {
    throw InvalidConfig("network size must be a power of two >= 16, got " + std::to_string(size));
  }
}

NetworkOptions resolve(NetworkOptions options) {
  check_size(options.size);
  if (options.width <= 0.0) options.width = auto_width(options.size);
  torch::manual_seed(options.seed);
  return options;
}

NetworkHandle make_handle(NetworkKind kind, const NetworkOptions& options, std::shared_ptr<NetworkModule> module,
                          std::vector<std::vector<std::int64_t>> inputs, std::vector<std::int64_t> output) {
  NetworkHandle h;
  h.kind = kind;
  h.options = options;
  h.module = std::move(module);
  h.input_spec = std::move(inputs);
  h.output_spec = std::move(output);
  return h;
}

}  // namespace

NetworkHandle build_g_binary(const NetworkOptions& requested) {
  const NetworkOptions options = resolve(requested);
  const std::int64_t s = options.size;
  return make_handle(NetworkKind::kGBinary, options,
                     std::make_shared<UNet>(2, 1, unet_depth(options.size), options.width, UNetHead::kSigmoid),
                     {{2, s, s}}, {1, s, s});
}

NetworkHandle build_g_grade(const NetworkOptions& requested) {
  const NetworkOptions options = resolve(requested);
  const std::int64_t s = options.size;
  return make_handle(NetworkKind::kGGrade, options,
                     std::make_shared<UNet>(2, 1, unet_depth(options.size), options.width, UNetHead::kSigmoid),
                     {{2, s, s}}, {1, s, s});
}

NetworkHandle build_g_inpaint(const NetworkOptions& requested) {
  const NetworkOptions options = resolve(requested);
  const std::int64_t s = options.size;
  return make_handle(NetworkKind::kGInpaint, options, std::make_shared<InpaintGenerator>(options.width),
                     {{5, s, s}, {1, s, s}}, {4, s, s});
}

NetworkHandle build_d_inpaint(const NetworkOptions& requested) {
  const NetworkOptions options = resolve(requested);
  const std::int64_t s = options.size;
  return make_handle(NetworkKind::kDInpaint, options, std::make_shared<InpaintDiscriminator>(options.width),
                     {{5, s, s}}, {1, 1, 1});
}

NetworkHandle build_unet_seg(const NetworkOptions& requested) {
  const NetworkOptions options = resolve(requested);
  const std::int64_t s = options.size;
  return make_handle(NetworkKind::kUNetSeg, options,
                     std::make_shared<UNet>(4, 5, unet_depth(options.size), options.width, UNetHead::kSoftmax),
                     {{4, s, s}}, {5, s, s});
}

NetworkHandle build_network(NetworkKind kind, const NetworkOptions& options) {
  switch (kind) {
    case NetworkKind::kGBinary: return build_g_binary(options);
    case NetworkKind::kGGrade: return build_g_grade(options);
    case NetworkKind::kGInpaint: return build_g_inpaint(options);
    case NetworkKind::kDInpaint: return build_d_inpaint(options);
    case NetworkKind::kUNetSeg: return build_unet_seg(options);
    case NetworkKind::kFeatureExtractor: break;
  }
  throw InvalidConfig("feature extractors are built with build_feature_extractor");
}

NetworkHandle build_feature_extractor(const FeatureExtractorOptions& options) {
  torch::manual_seed(options.seed);
  auto module = std::make_shared<FeatureExtractor>(options);
  if (options.mode == FeatureMode::kPretrained) {
    if (options.weights.empty() || !fs::exists(options.weights)) {
      throw BackboneUnavailable("pretrained backbone weights not found at '" + options.weights.string() + "'");
    }
    const TensorArchive archive = read_tensor_archive(options.weights);
    torch::NoGradGuard no_grad;
    for (std::size_t i = 0; i < module->convs().size(); ++i) {
      auto& conv = module->convs()[i];
      const std::string stem = "features." + std::to_string(module->vgg_indices()[i]);
      const torch::Tensor* w = archive.find(stem + ".weight");
      const torch::Tensor* b = archive.find(stem + ".bias");
      if (!w || !b || w->sizes() != conv->weight.sizes() || b->sizes() != conv->bias.sizes()) {
        throw BackboneUnavailable("weight file lacks a compatible '" + stem + "' layer");
      }
      conv->weight.copy_(*w);
      conv->bias.copy_(*b);
    }
  }
  NetworkOptions net_options;
  net_options.size = -1;
  net_options.seed = options.seed;
  auto handle = make_handle(NetworkKind::kFeatureExtractor, net_options, module, {{-1, -1, -1}},
                            {options.mode == FeatureMode::kFixedRandom ? 64
                                                                       : (options.layer == FeatureLayer::kSecondConv ? 64 : 128),
                             -1, -1});
  handle.set_requires_grad(false);
  module->eval();
  return handle;
}

// ---------------------------------------------------------------------------
// NetworkHandle

void NetworkHandle::check_inputs(const torch::Tensor& x, const torch::Tensor& aux) const {
  if (!module) throw InvalidConfig("network handle has no module");
  auto check = [](const torch::Tensor& t, const std::vector<std::int64_t>& spec, const char* which) {
    if (t.dim() != 4) {
      throw ShapeMismatch(std::string(which) + " must be [B, C, H, W], got " + std::to_string(t.dim()) + " dims");
    }
    for (std::size_t d = 0; d < 3; ++d) {
      if (spec[d] >= 0 && t.size(static_cast<int64_t>(d + 1)) != spec[d]) {
        std::ostringstream msg;
        msg << which << " shape " << t.sizes() << " does not match (" << spec[0] << ", " << spec[1] << ", "
            << spec[2] << ")";
        throw ShapeMismatch(msg.str());
      }
    }
  };
  check(x, input_spec.at(0), "input");
  if (input_spec.size() > 1) {
    if (!aux.defined()) throw ShapeMismatch("network expects a second input");
    check(aux, input_spec[1], "second input");
    if (aux.size(0) != x.size(0)) throw ShapeMismatch("inputs disagree on batch size");
  }
}

torch::Tensor NetworkHandle::forward_raw(const torch::Tensor& x, const torch::Tensor& aux) const {
  check_inputs(x, aux);
  return module->forward_raw(x, aux);
}

torch::Tensor NetworkHandle::forward(const torch::Tensor& x, const torch::Tensor& aux) const {
  return module->activate(forward_raw(x, aux));
}

ShapeTrace NetworkHandle::trace(const torch::Tensor& x, const torch::Tensor& aux) const {
  ShapeTrace out;
  module->set_trace(&out);
  try {
    const auto y = forward(x, aux);
    out.emplace_back("output", y.sizes().vec());
  } catch (...) {
    module->set_trace(nullptr);
    throw;
  }
  module->set_trace(nullptr);
  return out;
}

std::int64_t NetworkHandle::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : module->parameters()) n += p.numel();
  return n;
}

std::vector<std::pair<std::string, torch::Tensor>> NetworkHandle::named_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module->named_parameters()) out.emplace_back(item.key(), item.value());
  return out;
}

void NetworkHandle::set_requires_grad(bool value) const {
  for (auto& p : module->parameters()) p.set_requires_grad(value);
}

void NetworkHandle::to(torch::Dtype dtype) const { module->to(dtype); }

NetworkHandle NetworkHandle::clone() const {
  if (kind == NetworkKind::kFeatureExtractor) return *this;  // frozen, safe to share
  NetworkHandle copy = build_network(kind, options);
  copy.epoch = epoch;
  copy.validation_loss = validation_loss;
  copy.module->to(module->parameters().front().scalar_type());
  copy.copy_parameters_from(*this);
  return copy;
}

void NetworkHandle::copy_parameters_from(const NetworkHandle& other) const {
  auto dst = module->named_parameters();
  auto src = other.module->named_parameters();
  if (dst.size() != src.size()) throw ShapeMismatch("parameter sets differ in size");
  torch::NoGradGuard no_grad;
  for (const auto& item : src) {
    auto* target = dst.find(item.key());
    if (!target || target->sizes() != item.value().sizes()) {
      throw ShapeMismatch("parameter '" + item.key() + "' missing or mis-shaped");
    }
    target->copy_(item.value());
  }
}

// ---------------------------------------------------------------------------
// Tensor archives and checkpoints

namespace {

constexpr char kArchiveMagic[8] = {'T', 'F', 'T', 'E', 'N', 'S', 'O', 'R'};

std::uint64_t le64(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    return __builtin_bswap64(v);
  }
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc()) throw CorruptRecord("bad number '" + s + "' in checkpoint metadata");
  return v;
}

const std::string& meta_at(const TensorArchive& a, const std::string& key) {
  auto it = a.metadata.find(key);
  if (it == a.metadata.end()) throw CorruptRecord("checkpoint metadata lacks '" + key + "'");
  return it->second;
}

}  // namespace

const torch::Tensor* TensorArchive::find(std::string_view name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void write_tensor_archive(const TensorArchive& archive, const fs::path& path) {
  json header;
  header["metadata"] = archive.metadata;
  json entries = json::array();
  std::uint64_t offset = 0;
  std::vector<torch::Tensor> contiguous;
  for (const auto& [name, tensor] : archive.tensors) {
    auto t = tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    entries.push_back({{"name", name}, {"shape", t.sizes().vec()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.numel());
    contiguous.push_back(std::move(t));
  }
  header["tensors"] = std::move(entries);
  const std::string text = header.dump();

  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOFailure("cannot write " + path.string());
  out.write(kArchiveMagic, sizeof(kArchiveMagic));
  const std::uint64_t len = le64(text.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  static_assert(std::endian::native == std::endian::little, "float payload is written in host order");
  for (const auto& t : contiguous) {
    out.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * 4));
  }
  if (!out) throw IOFailure("write failed for " + path.string());
}

TensorArchive read_tensor_archive(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOFailure("cannot open " + path.string());
  char magic[8];
  std::uint64_t len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || std::memcmp(magic, kArchiveMagic, sizeof(magic)) != 0) {
    throw CorruptRecord(path.string() + " is not a tensor archive");
  }
  len = le64(len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CorruptRecord("truncated header in " + path.string());

  TensorArchive archive;
  std::vector<char> payload{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    const json header = json::parse(text);
    archive.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
    for (const auto& e : header.at("tensors")) {
      const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      std::int64_t numel = 1;
      for (auto d : shape) numel *= d;
      if ((offset + static_cast<std::uint64_t>(numel)) * 4 > payload.size()) {
        throw CorruptRecord("tensor '" + e.at("name").get<std::string>() + "' overruns " + path.string());
      }
      auto t = torch::empty(shape, torch::kFloat32);
      std::memcpy(t.data_ptr<float>(), payload.data() + offset * 4, static_cast<std::size_t>(numel) * 4);
      archive.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const json::exception& e) {
    throw CorruptRecord(path.string() + ": " + e.what());
  }
  return archive;
}

void save_checkpoint(const NetworkHandle& network, const fs::path& path) {
  if (network.kind == NetworkKind::kFeatureExtractor) {
    throw InvalidConfig("feature extractors are frozen and not checkpointed");
  }
  TensorArchive archive;
  archive.metadata = {{"kind", std::string(to_string(network.kind))},
                      {"size", std::to_string(network.options.size)},
                      {"width", format_double(network.options.width)},
                      {"seed", std::to_string(network.options.seed)},
                      {"epoch", std::to_string(network.epoch)},
                      {"validation_loss", format_double(network.validation_loss)}};
  archive.tensors = network.named_parameters();
  write_tensor_archive(archive, path);
}

NetworkHandle load_checkpoint(const fs::path& path) {
  const TensorArchive archive = read_tensor_archive(path);
  NetworkOptions options;
  NetworkKind kind{};
  try {
    kind = parse_network_kind(meta_at(archive, "kind"));
    options.size = std::stoi(meta_at(archive, "size"));
    options.width = parse_double(meta_at(archive, "width"));
    options.seed = std::stoull(meta_at(archive, "seed"));
  } catch (const std::invalid_argument&) {
    throw CorruptRecord("malformed checkpoint metadata in " + path.string());
  } catch (const std::out_of_range&) {
    throw CorruptRecord("malformed checkpoint metadata in " + path.string());
  }
  NetworkHandle network = build_network(kind, options);
  network.epoch = std::stoi(meta_at(archive, "epoch"));
  network.validation_loss = parse_double(meta_at(archive, "validation_loss"));
  auto params = network.module->named_parameters();
  if (params.size() != archive.tensors.size()) {
    throw CorruptRecord(path.string() + " holds " + std::to_string(archive.tensors.size()) +
                        " tensors, network expects " + std::to_string(params.size()));
  }
  torch::NoGradGuard no_grad;
  for (const auto& [name, tensor] : archive.tensors) {
    auto* target = params.find(name);
    if (!target || target->sizes() != tensor.sizes()) {
      throw CorruptRecord("checkpoint tensor '" + name + "' does not fit the network");
    }
    target->copy_(tensor);
  }
  return network;
}

}  // namespace tumorforge
