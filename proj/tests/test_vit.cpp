#include "geossl/vit.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "support/gradcheck.hpp"

using namespace geossl;
using namespace geossl::vit;

namespace {

ViTConfig micro_config() {
  ViTConfig cfg;
  cfg.layers = 2;
  cfg.embed_dim = 8;
  cfg.hidden_dim = 16;
  cfg.heads = 2;
  cfg.patch_size = 14;
  cfg.image_size = 28;
  return cfg;
}

Image random_image(int side, std::uint64_t seed) {
  Image img(side, side);
  Rng rng(seed);
  for (float& v : img.px) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST(ParamCount, TableRows) {
  EXPECT_NEAR(static_cast<double>(param_count(preset("small"))), 22e6, 0.05 * 22e6);
  EXPECT_NEAR(static_cast<double>(param_count(preset("base"))), 86e6, 0.05 * 86e6);
  EXPECT_NEAR(static_cast<double>(param_count(preset("large"))), 307e6, 0.05 * 307e6);
  EXPECT_NEAR(static_cast<double>(param_count(preset("huge"))), 632e6, 0.05 * 632e6);
  EXPECT_NEAR(static_cast<double>(param_count(preset("giant"))), 1100e6, 0.10 * 1100e6);
}

TEST(ParamCount, DegenerateZeroLayers) {
  ViTConfig cfg = micro_config();
  cfg.layers = 0;
  // patch projection + class/mask tokens + positional table + final norm.
  const std::int64_t hand = (3 * 14 * 14 * 8 + 8) + 2 * 8 + (1 + 4) * 8 + 2 * 8;
  EXPECT_EQ(param_count(cfg), hand);
}

TEST(ParamCount, MatchesAllocationExactly) {
  for (const ViTConfig& cfg : {micro_config(), preset("small")}) {
    Rng rng(1);
    auto params = ViTParams::init(cfg, rng, false);
    EXPECT_EQ(params.scalar_count(), param_count(cfg));
  }
}

TEST(PatchEmbed, TokenCounts) {
  ViTConfig cfg = micro_config();
  cfg.image_size = 70;
  Rng rng(2);
  auto params = ViTParams::init(cfg, rng, false);
  auto tokens = patch_embed(random_image(70, 3), params);
  EXPECT_EQ(tokens.dim(0), 26);  // 5x5 patches + class token
  EXPECT_EQ(tokens.dim(1), 8);
}

TEST(PatchEmbed, GridLawIncluding518) {
  for (int crop : {28, 56, 70, 98, 224, 518}) EXPECT_EQ(crop % 14, 0);
  EXPECT_EQ(518 / 14, 37);
}

TEST(PatchEmbed, EmptyMaskIsNoop) {
  ViTConfig cfg = micro_config();
  Rng rng(4);
  auto params = ViTParams::init(cfg, rng, false);
  const Image img = random_image(28, 5);
  const std::vector<int> empty;
  auto plain = patch_embed(img, params);
  auto masked = patch_embed(img, params, &empty);
  EXPECT_EQ(*plain.data, *masked.data);
}

TEST(PatchEmbed, MaskSubstitutesToken) {
  ViTConfig cfg = micro_config();
  Rng rng(6);
  auto params = ViTParams::init(cfg, rng, false);
  const Image img = random_image(28, 7);
  const std::vector<int> mask = {1, 2};
  auto tokens = patch_embed(img, params, &mask);
  for (int idx : mask)
    for (int j = 0; j < 8; ++j)
      EXPECT_FLOAT_EQ((*tokens.data)[static_cast<std::size_t>(1 + idx) * 8 + j],
                      (*params.mask_token.data)[static_cast<std::size_t>(j)] +
                          (*params.pos_embed.data)[static_cast<std::size_t>(1 + idx) * 8 + j]);
  const std::vector<int> bad = {4};
  EXPECT_THROW(patch_embed(img, params, &bad), std::invalid_argument);
}

TEST(PatchEmbed, NonSquareOrIndivisibleThrows) {
  ViTConfig cfg = micro_config();
  Rng rng(8);
  auto params = ViTParams::init(cfg, rng, false);
  Image rect(28, 42);
  EXPECT_THROW(patch_embed(rect, params), std::invalid_argument);
  Image offgrid(30, 30);
  EXPECT_THROW(patch_embed(offgrid, params), std::invalid_argument);
}

TEST(AttentionBlock, ZeroProjectionsAreIdentity) {
  ViTConfig cfg = micro_config();
  Rng rng(9);
  auto params = ViTParams::init(cfg, rng, false);
  for (auto& block : params.blocks) {
    std::fill(block.out_w.data->begin(), block.out_w.data->end(), 0.0f);
    std::fill(block.out_b.data->begin(), block.out_b.data->end(), 0.0f);
    std::fill(block.mlp2_w.data->begin(), block.mlp2_w.data->end(), 0.0f);
    std::fill(block.mlp2_b.data->begin(), block.mlp2_b.data->end(), 0.0f);
  }
  auto tokens = Tensor::randn({5, 8}, rng, 1.0f);
  auto out = tokens;
  for (const auto& block : params.blocks) out = attention_block(out, block, cfg.heads);
  EXPECT_EQ(*out.data, *tokens.data);
}

TEST(AttentionBlock, SingletonAttentionIsExactlyOne) {
  auto score = Tensor::from({1, 1}, {1.234f});
  auto att = softmax_temp(score, 1.0f);
  EXPECT_EQ((*att.data)[0], 1.0f);
}

TEST(VitForward, MicroShapeContract) {
  ViTConfig cfg = micro_config();
  Rng rng(10);
  auto params = ViTParams::init(cfg, rng, false);
  auto enc = vit_forward(random_image(28, 11), params);
  EXPECT_EQ(enc.class_token.dim(0), 1);
  EXPECT_EQ(enc.class_token.dim(1), 8);
  EXPECT_EQ(enc.patch_tokens.dim(0), 4);  // 2x2 grid
  EXPECT_EQ(enc.grid, 2);
}

TEST(VitForward, DeterministicRepeat) {
  ViTConfig cfg = micro_config();
  Rng rng(12);
  auto params = ViTParams::init(cfg, rng, false);
  const Image img = random_image(28, 13);
  auto a = vit_forward(img, params);
  auto b = vit_forward(img, params);
  EXPECT_EQ(*a.class_token.data, *b.class_token.data);
  EXPECT_EQ(*a.patch_tokens.data, *b.patch_tokens.data);
}

TEST(VitForward, PermutationEquivarianceWithZeroPos) {
  ViTConfig cfg = micro_config();
  Rng rng(14);
  auto params = ViTParams::init(cfg, rng, false);
  std::fill(params.pos_embed.data->begin(), params.pos_embed.data->end(), 0.0f);

  const Image img = random_image(28, 15);
  // Swap the two top patches (grid cells 0 and 1).
  Image swapped = img;
  for (int y = 0; y < 14; ++y)
    for (int x = 0; x < 14; ++x)
      for (int c = 0; c < 3; ++c) {
        swapped.at(y, x, c) = img.at(y, x + 14, c);
        swapped.at(y, x + 14, c) = img.at(y, x, c);
      }

  auto base = vit_forward(img, params);
  auto perm = vit_forward(swapped, params);
  for (int j = 0; j < 8; ++j)
    EXPECT_NEAR((*base.class_token.data)[static_cast<std::size_t>(j)],
                (*perm.class_token.data)[static_cast<std::size_t>(j)], 1e-5f);
  const int perm_map[4] = {1, 0, 2, 3};
  for (int row = 0; row < 4; ++row)
    for (int j = 0; j < 8; ++j)
      EXPECT_NEAR((*base.patch_tokens.data)[static_cast<std::size_t>(row) * 8 + j],
                  (*perm.patch_tokens.data)[static_cast<std::size_t>(perm_map[row]) * 8 + j],
                  1e-5f);
}

TEST(VitForward, PositionalInterpolationAcrossCrops) {
  ViTConfig cfg = micro_config();
  cfg.image_size = 28;  // positional table trained at a 2x2 grid
  Rng rng(16);
  auto params = ViTParams::init(cfg, rng, false);
  auto enc56 = vit_forward(random_image(56, 17), params);
  EXPECT_EQ(enc56.grid, 4);
  EXPECT_EQ(enc56.patch_tokens.dim(0), 16);
}

TEST(VitForward, ClassReadoutGradientMatchesFiniteDifferences) {
  using D = TensorT<double>;
  ViTConfig cfg = micro_config();
  Rng rng(18);
  auto params = ViTParamsT<double>::init(cfg, rng, true);
  const Image img = random_image(28, 19);
  const std::vector<int> mask = {2};
  auto readout = D::randn({8, 1}, rng, 1.0);

  auto make_loss = [&]() {
    auto enc = vit_forward(img, params, &mask);
    return reduce_mean(matmul(enc.class_token, readout));
  };
  std::vector<D*> leaves;
  params.for_each([&](const std::string&, D& t) { leaves.push_back(&t); });
  Rng picker(20);
  const double err =
      testsupport::sampled_rel_grad_error<double>(leaves, make_loss, 1e-6, 1e-3, 60, picker);
  EXPECT_LE(err, 1e-5);
}

TEST(VitForward, NonFiniteActivationsAbort) {
  ViTConfig cfg = micro_config();
  Rng rng(21);
  auto params = ViTParams::init(cfg, rng, false);
  (*params.patch_w.data)[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(vit_forward(random_image(28, 22), params), NumericalError);
}

TEST(ViTConfigValidation, RejectsBadShapes) {
  ViTConfig cfg = micro_config();
  cfg.heads = 3;  // 8 % 3 != 0
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  cfg = micro_config();
  cfg.image_size = 30;
  EXPECT_THROW(cfg.validate(), std::invalid_argument);
  EXPECT_THROW(preset("tiny"), ConfigError);
}
