#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest_torch.hpp"

#include <filesystem>
#include <fstream>
#include <map>

#include "gradcheck.hpp"
#include "tumorforge/errors.hpp"
#include "tumorforge/geometry.hpp"
#include "tumorforge/losses.hpp"
#include "tumorforge/networks.hpp"
#include "tumorforge/training.hpp"

using namespace tumorforge;
namespace fs = std::filesystem;

#ifndef TUMORFORGE_GOLDEN_DIR
#define TUMORFORGE_GOLDEN_DIR "tests/golden"
#endif

namespace {

NetworkOptions opts(int size, double width = 0.125, std::uint64_t seed = 0) {
  NetworkOptions o;
  o.size = size;
  o.width = width;
  o.seed = seed;
  return o;
}

// Closed-form parameter count of a block table at full width.
std::int64_t table_params(const std::vector<BlockSpec>& blocks, std::int64_t in) {
  std::int64_t n = 0;
  for (const auto& b : blocks) {
    const std::int64_t k2 = std::int64_t(b.kernel) * b.kernel;
    switch (b.op) {
      case BlockOp::kCIR:
        n += in * b.out_channels * k2 + 2 * b.out_channels;
        in = b.out_channels;
        break;
      case BlockOp::kRES: n += 2 * (in * in * k2 + 2 * in); break;
      case BlockOp::kConv:
        n += in * b.out_channels * k2 + b.out_channels;
        in = b.out_channels;
        break;
      default: break;
    }
  }
  return n;
}

std::int64_t unet_params(std::int64_t in, std::int64_t out, int depth) {
  auto cir = [](std::int64_t i, std::int64_t o) { return i * o * 9 + 2 * o; };
  std::int64_t n = 0, prev = in;
  for (int i = 0; i <= depth; ++i) {
    const std::int64_t c = 64 << i;
    n += cir(prev, c) + cir(c, c);
    prev = c;
  }
  for (int i = depth - 1; i >= 0; --i) {
    const std::int64_t c = 64 << i;
    n += cir(2 * c, c) + cir(2 * c, c) + cir(c, c);
  }
  return n + 64 * out + out;
}

std::map<std::string, std::int64_t> read_golden() {
  std::ifstream in(fs::path(TUMORFORGE_GOLDEN_DIR) / "param_counts_256.txt");
  REQUIRE(in);
  std::map<std::string, std::int64_t> out;
  std::string name;
  std::int64_t n = 0;
  while (in >> name >> n) out[name] = n;
  return out;
}

}  // namespace

TEST_CASE("output shapes and activation ranges") {
  torch::NoGradGuard no_grad;
  const int s = 32;
  const auto x2 = torch::randn({2, 2, s, s}) * 3;
  for (const auto& net : {build_g_binary(opts(s)), build_g_grade(opts(s))}) {
    const auto y = net.forward(x2);
    CHECK((y.sizes() == std::vector<std::int64_t>{2, 1, s, s}));
    CHECK(y.min().item<float>() > 0.0f);
    CHECK(y.max().item<float>() < 1.0f);
    CHECK((net.forward(torch::zeros({1, 2, s, s})).sizes() == std::vector<std::int64_t>{1, 1, s, s}));
  }
  const auto g = build_g_inpaint(opts(s));
  const auto img = g.forward(torch::randn({2, 5, s, s}) * 10, torch::ones({2, 1, s, s}));
  CHECK((img.sizes() == std::vector<std::int64_t>{2, 4, s, s}));
  CHECK(img.min().item<float>() >= -0.5f);
  CHECK(img.max().item<float>() <= 5.0f);

  const auto d = build_d_inpaint(opts(s)).forward(torch::randn({3, 5, s, s}));
  CHECK((d.sizes() == std::vector<std::int64_t>{3, 1, 1, 1}));
  CHECK(d.min().item<float>() > 0.0f);
  CHECK(d.max().item<float>() < 1.0f);

  const auto seg = build_unet_seg(opts(64)).forward(torch::randn({1, 4, 64, 64}));
  CHECK((seg.sizes() == std::vector<std::int64_t>{1, 5, 64, 64}));
  CHECK((seg.sum(1) - 1).abs().max().item<float>() <= 1e-5f);
  const auto labels = seg.argmax(1);
  CHECK(labels.min().item<std::int64_t>() >= 0);
  CHECK(labels.max().item<std::int64_t>() <= 4);

  CHECK_THROWS_AS(g.forward(torch::randn({1, 4, s, s}), torch::ones({1, 1, s, s})), ShapeMismatch);
  CHECK_THROWS_AS(g.forward(torch::randn({1, 5, s, s})), ShapeMismatch);
  CHECK_THROWS_AS(build_g_binary(opts(48)), InvalidConfig);
}

TEST_CASE("inpaint encoder keeps the divide-by-four factor at size 64") {
  torch::NoGradGuard no_grad;
  const auto g = build_g_inpaint(opts(64, 0));
  const ShapeTrace t = g.trace(torch::zeros({1, 5, 64, 64}), torch::zeros({1, 1, 64, 64}));
  bool found = false;
  for (const auto& [label, shape] : t) {
    if (label == "fused") {
      CHECK(shape[2] == 16);
      CHECK(shape[3] == 16);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("same seed, same network") {
  torch::NoGradGuard no_grad;
  const auto x = torch::rand({1, 2, 32, 32});
  CHECK(torch::equal(build_g_binary(opts(32, 0.125, 4)).forward(x), build_g_binary(opts(32, 0.125, 4)).forward(x)));
  CHECK(torch::equal(build_g_grade(opts(32, 0.125, 4)).forward(x), build_g_grade(opts(32, 0.125, 4)).forward(x)));
  CHECK_FALSE(
      torch::equal(build_g_binary(opts(32, 0.125, 4)).forward(x), build_g_binary(opts(32, 0.125, 5)).forward(x)));
  const auto y = torch::rand({1, 4, 32, 32});
  CHECK(torch::equal(build_unet_seg(opts(32, 0.125, 2)).forward(y), build_unet_seg(opts(32, 0.125, 2)).forward(y)));
}

TEST_CASE("discriminator responds to a constant input shift") {
  torch::NoGradGuard no_grad;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto d = build_d_inpaint(opts(32, 0.125, seed));
    torch::manual_seed(100 + seed);
    const auto x = torch::rand({1, 5, 32, 32});
    const double a = d.forward(x).item<double>(), b = d.forward(x + 1.0).item<double>();
    CHECK(std::abs(a - b) > 1e-6);
  }
}

TEST_CASE("parameter counts at size 256 match the golden file") {
  const auto golden = read_golden();
  const NetworkOptions o = opts(256, 0);
  const std::map<std::string, NetworkHandle> nets{{"g_binary", build_g_binary(o)},
                                                  {"g_grade", build_g_grade(o)},
                                                  {"g_inpaint", build_g_inpaint(o)},
                                                  {"d_inpaint", build_d_inpaint(o)},
                                                  {"unet_seg", build_unet_seg(o)}};
  CHECK(golden.size() == nets.size());
  for (const auto& [name, net] : nets) {
    REQUIRE(golden.count(name));
    CHECK_MESSAGE(net.parameter_count() == golden.at(name), name);
  }
  const std::int64_t g_inpaint = table_params(inpaint_image_encoder_blocks(), 5) +
                                 table_params(inpaint_mask_encoder_blocks(), 1) +
                                 4 * table_params(inpaint_decoder_blocks(), 144);
  CHECK(golden.at("g_inpaint") == g_inpaint);
  CHECK(golden.at("d_inpaint") == table_params(discriminator_blocks(), 5));
  CHECK(golden.at("g_binary") == unet_params(2, 1, 4));
  CHECK(golden.at("g_grade") == unet_params(2, 1, 4));
  CHECK(golden.at("unet_seg") == unet_params(4, 5, 4));
  CHECK(build_g_inpaint(o).parameter_count() == build_g_inpaint(opts(256, 0, 99)).parameter_count());
}

TEST_CASE("network parameter gradients match finite differences") {
  const std::map<std::string, NetworkHandle> nets{{"g_binary", build_g_binary(opts(16, 0.125, 1))},
                                                  {"g_grade", build_g_grade(opts(16, 0.125, 2))},
                                                  {"g_inpaint", build_g_inpaint(opts(16, 0.125, 3))},
                                                  {"d_inpaint", build_d_inpaint(opts(16, 0.125, 4))},
                                                  {"unet_seg", build_unet_seg(opts(16, 0.125, 5))}};
  for (const auto& [name, net] : nets) {
    const auto r = gradcheck::check_network(net, 16, 24, 7);
    MESSAGE(name << ": " << r.checked << " checked, " << r.skipped << " skipped at kinks");
    CHECK(r.checked >= 20);
    CHECK_MESSAGE(r.max_rel_error <= 1e-3, name << " worst " << r.worst << " " << r.max_rel_error);
  }
}

TEST_CASE("G_binary is translation equivariant away from the border") {
  torch::NoGradGuard no_grad;
  const int s = 128;
  const auto net = build_g_binary(opts(s, 0.0625, 11));
  const BinaryMask brain = BinaryMask::zeros(s, s);  // uniform and equal to the zero padding
  const auto a = net.forward_raw(binary_input({56, 56, 8, 0, 0}, brain).unsqueeze(0))[0][0];
  const auto b = net.forward_raw(binary_input({72, 72, 8, 0, 0}, brain).unsqueeze(0))[0][0];
  // the 16 px shift is a multiple of the pooling stride at depth 4
  const auto a_win = a.slice(0, 40, 72).slice(1, 40, 72);
  const auto b_win = b.slice(0, 56, 88).slice(1, 56, 88);
  const auto b_same = b.slice(0, 40, 72).slice(1, 40, 72);
  const double shifted = (a_win - b_win).norm().item<double>() / a_win.norm().item<double>();
  const double unshifted = (a_win - b_same).norm().item<double>() / a_win.norm().item<double>();
  MESSAGE("relative residual " << shifted << " shifted, " << unshifted << " unshifted");
  CHECK(shifted <= 0.1 * unshifted);
}

TEST_CASE("feature extractor") {
  torch::NoGradGuard no_grad;
  FeatureExtractorOptions fo;
  fo.seed = 3;
  const auto a = build_feature_extractor(fo), b = build_feature_extractor(fo);
  const auto pa = a.named_parameters(), pb = b.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(torch::equal(pa[i].second, pb[i].second));
    CHECK_FALSE(pa[i].second.requires_grad());
  }
  const auto x = torch::rand({2, 4, 32, 32});
  const auto f = a.forward(x);
  CHECK((f.sizes() == std::vector<std::int64_t>{2, 64, 8, 8}));
  CHECK(torch::equal(f, a.forward(x)));
  CHECK(a.forward(torch::rand({1, 1, 32, 32})).size(1) == 64);

  fo.mode = FeatureMode::kPretrained;
  fo.weights = "/nonexistent/vgg19.tft";
  CHECK_THROWS_AS(build_feature_extractor(fo), BackboneUnavailable);
}

TEST_CASE("pretrained backbone loads VGG-style weights") {
  const fs::path path = fs::temp_directory_path() / "tumorforge_test_vgg.tft";
  TensorArchive archive;
  torch::manual_seed(0);
  archive.tensors = {{"features.0.weight", torch::randn({64, 3, 3, 3})},
                     {"features.0.bias", torch::randn({64})},
                     {"features.2.weight", torch::randn({64, 64, 3, 3})},
                     {"features.2.bias", torch::randn({64})}};
  write_tensor_archive(archive, path);
  FeatureExtractorOptions fo;
  fo.mode = FeatureMode::kPretrained;
  fo.weights = path;
  const auto psi = build_feature_extractor(fo);
  torch::NoGradGuard no_grad;
  const auto x = torch::rand({1, 3, 16, 16});
  const auto expect = torch::relu(torch::conv2d(torch::relu(torch::conv2d(x, archive.tensors[0].second,
                                                                          archive.tensors[1].second, 1, 1)),
                                                archive.tensors[2].second, archive.tensors[3].second, 1, 1));
  CHECK(torch::allclose(psi.forward(x), expect, 1e-5, 1e-5));
  fo.layer = FeatureLayer::kSecondBlock;
  CHECK_THROWS_AS(build_feature_extractor(fo), BackboneUnavailable);
}

TEST_CASE("tensor archive and checkpoint round-trips") {
  const fs::path dir = fs::temp_directory_path() / "tumorforge_test_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  TensorArchive a;
  a.metadata = {{"k", "v"}};
  a.tensors = {{"x", torch::arange(6, torch::kFloat32).view({2, 3})}, {"empty", torch::zeros({0})}};
  write_tensor_archive(a, dir / "a.tft");
  const TensorArchive b = read_tensor_archive(dir / "a.tft");
  CHECK(b.metadata == a.metadata);
  REQUIRE(b.tensors.size() == 2);
  CHECK(torch::equal(b.tensors[0].second, a.tensors[0].second));
  CHECK(b.find("empty") != nullptr);
  CHECK(b.find("nope") == nullptr);

  NetworkHandle net = build_g_inpaint(opts(16, 0.125, 8));
  net.epoch = 12;
  net.validation_loss = 0.25;
  save_checkpoint(net, dir / "g.tfck");
  const NetworkHandle back = load_checkpoint(dir / "g.tfck");
  CHECK(back.kind == NetworkKind::kGInpaint);
  CHECK(back.epoch == 12);
  CHECK(back.validation_loss == 0.25);
  CHECK(back.options.width == 0.125);
  const auto pa = net.named_parameters(), pb = back.named_parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(torch::equal(pa[i].second, pb[i].second));

  std::ofstream(dir / "junk.tfck") << "not an archive";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.tfck"), CorruptRecord);
  fs::resize_file(dir / "g.tfck", fs::file_size(dir / "g.tfck") - 100);
  CHECK_THROWS_AS(load_checkpoint(dir / "g.tfck"), CorruptRecord);
}

TEST_CASE("clone is independent") {
  const auto net = build_g_binary(opts(16, 0.125, 1));
  const auto copy = net.clone();
  {
    torch::NoGradGuard no_grad;
    net.named_parameters()[0].second.add_(1.0);
  }
  CHECK_FALSE(torch::equal(net.named_parameters()[0].second, copy.named_parameters()[0].second));
}

// ---------------------------------------------------------------------------
// losses

TEST_CASE("l1 loss") {
  const auto a = torch::zeros({2, 2});
  CHECK(tumorforge::l1_loss(a, a).item<double>() == 0.0);
  CHECK(tumorforge::l1_loss(a, a + 1).item<double>() == 4.0);
  CHECK(tumorforge::l1_loss(a, a + 1, Reduction::kMean).item<double>() == 1.0);
  CHECK_THROWS_AS(tumorforge::l1_loss(a, torch::zeros({3})), ShapeMismatch);
}

TEST_CASE("adversarial loss") {
  const auto one = torch::ones({4}), zero = torch::zeros({4}), half = torch::full({4}, 0.5);
  CHECK(adversarial_loss(one, zero).item<double>() == doctest::Approx(2.0));
  CHECK(adversarial_loss(half, half).item<double>() == doctest::Approx(1.0));
  CHECK_THROWS_AS(adversarial_loss(one * 1.5, zero), OutOfRange);
  CHECK_THROWS_AS(adversarial_loss(torch::zeros({0}), zero), ShapeMismatch);
}

TEST_CASE("content loss") {
  const NetworkHandle psi = build_feature_extractor({});
  const auto x = torch::rand({2, 4, 16, 16});
  CHECK(content_loss(x, x, psi).item<double>() == 0.0);
  CHECK(content_loss(x, x + 0.3, psi).item<double>() > 0.0);
  CHECK_THROWS_AS(content_loss(x, torch::rand({2, 4, 8, 8}), psi), ShapeMismatch);
}

TEST_CASE("loss weights and presets") {
  CHECK_NOTHROW(LossWeights{}.validate());
  CHECK_THROWS_AS((LossWeights{0, 0, 0}.validate()), InvalidConfig);
  CHECK_THROWS_AS((LossWeights{1, -0.1, 0}.validate()), InvalidConfig);
  const LossWeights p = LossWeights::pix();
  CHECK(p.w_cont == 0.0);
  CHECK(p.w_adv == 0.0);
  CHECK(LossWeights::pix_adv().w_adv > 0.0);
  CHECK(LossWeights::pix_adv().w_cont == 0.0);
  CHECK(LossWeights::pix_cont().w_cont > 0.0);
  CHECK(LossWeights::pix_cont().w_adv == 0.0);
  CHECK(LossWeights::pix_adv_cont().w_cont > 0.0);
  CHECK(LossWeights::pix_adv_cont().w_adv > 0.0);

  const auto pred = torch::rand({1, 4, 16, 16}), target = torch::rand({1, 4, 16, 16});
  LossWeights only_pix{1, 0, 0, Reduction::kSum};
  const InpaintLoss l = total_inpaint_loss(pred, target, {}, nullptr, only_pix);
  CHECK(l.total.item<double>() == doctest::Approx(tumorforge::l1_loss(pred, target).item<double>()));

  // the total is linear in the weights
  const NetworkHandle psi = build_feature_extractor({});
  const auto d_fake = torch::full({1, 1, 1, 1}, 0.3);
  const LossWeights w1{1, 0.1, 0.01, Reduction::kSum}, w2{2, 0.2, 0.02, Reduction::kSum};
  const double t1 = total_inpaint_loss(pred, target, d_fake, &psi, w1).total.item<double>();
  const double t2 = total_inpaint_loss(pred, target, d_fake, &psi, w2).total.item<double>();
  CHECK(t2 == doctest::Approx(2 * t1));
  const InpaintLoss parts = total_inpaint_loss(pred, target, d_fake, &psi, w1);
  CHECK(parts.adv.item<double>() == doctest::Approx(0.01 * 0.7));
  CHECK(parts.total.item<double>() ==
        doctest::Approx(parts.pix.item<double>() + parts.cont.item<double>() + parts.adv.item<double>()));
}

TEST_CASE("losses are non-negative on random inputs") {
  torch::manual_seed(21);
  const NetworkHandle psi = build_feature_extractor({});
  for (int i = 0; i < 20; ++i) {
    const auto a = torch::randn({2, 4, 8, 8}), b = torch::randn({2, 4, 8, 8});
    const auto dr = torch::rand({2}), df = torch::rand({2});
    CHECK(tumorforge::l1_loss(a, b).item<double>() >= 0);
    CHECK(content_loss(a, b, psi).item<double>() >= 0);
    CHECK(adversarial_loss(dr, df).item<double>() >= 0);
    CHECK(total_inpaint_loss(a, b, df, &psi, {}).total.item<double>() >= 0);
  }
}

TEST_CASE("loss gradients match finite differences on 8x8 inputs") {
  torch::manual_seed(5);
  const auto opt = torch::TensorOptions().dtype(torch::kFloat64);
  const auto pred = torch::randn({1, 4, 8, 8}, opt).requires_grad_(true);
  const auto target = torch::randn({1, 4, 8, 8}, opt);
  const auto d_real = (torch::rand({3}, opt) * 0.8 + 0.1).requires_grad_(true);
  const auto d_fake = (torch::rand({3}, opt) * 0.8 + 0.1).requires_grad_(true);
  NetworkHandle psi = build_feature_extractor({});
  psi.to(torch::kFloat64);
  const auto d_out = (torch::rand({1, 1, 1, 1}, opt) * 0.8 + 0.1).requires_grad_(true);

  const std::map<std::string, std::pair<std::vector<std::pair<std::string, torch::Tensor>>,
                                        std::function<torch::Tensor()>>>
      cases{
          {"l1", {{{"pred", pred}}, [&] { return tumorforge::l1_loss(pred, target); }}},
          {"content", {{{"pred", pred}}, [&] { return content_loss(pred, target, psi); }}},
          {"adversarial",
           {{{"d_real", d_real}, {"d_fake", d_fake}}, [&] { return adversarial_loss(d_real, d_fake); }}},
          {"total",
           {{{"pred", pred}, {"d_fake", d_out}},
            [&] { return total_inpaint_loss(pred, target, d_out, &psi, {1, 0.1, 0.01, Reduction::kSum}).total; }}},
      };
  for (const auto& [name, c] : cases) {
    const auto r = gradcheck::check(c.first, c.second, 24, 3);
    CHECK_MESSAGE(r.max_rel_error <= 1e-3, name << " worst " << r.worst << " " << r.max_rel_error);
  }
}
