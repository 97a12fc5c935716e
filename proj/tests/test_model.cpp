#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dcvit/error.hpp"
#include "dcvit/model.hpp"
#include "dcvit/train.hpp"
#include "oracles.hpp"

using namespace dcvit;

namespace {

Tensor random_batch(const ModelConfig& c, std::size_t b, std::uint64_t seed) {
  return oracle::random_tensor({b, 1, c.channels, c.timesteps}, seed, -2, 2);
}

ModelConfig grid_config() {
  ModelConfig c = tiny_config();
  c.channels = 16;
  c.timesteps = 76;
  return c;
}

}  // namespace

TEST(ModelConfig, DefaultsValidate) {
  EXPECT_NO_THROW(ModelConfig{}.validate());
  EXPECT_NO_THROW(tiny_config().validate());
}

TEST(ModelConfig, RejectsInconsistentValues) {
  ModelConfig c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.dropout_p = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.ds_depthwise_kernel = {2, 2};
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.head_mode = HeadMode::kClassification;
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.timesteps = 10;  // shorter than the temporal kernel
  EXPECT_ANY_THROW(c.validate());
}

TEST(ModelShape, DefaultTokenGridMatchesWindowCounts) {
  const ModelConfig c;
  EXPECT_EQ(oracle::window_count(500, 36, 36, 2), 14u);
  EXPECT_EQ(oracle::window_count(129, 8, 8, 1), 16u);
  EXPECT_EQ(token_grid(c), (Pair{16, 14}));
  EXPECT_EQ(temporal_conv_spec(c).output_size(129, 500), (Pair{129, 14}));
  EXPECT_EQ(channel_conv_spec(c).groups, 512u);
  EXPECT_EQ(ds_depthwise_spec(c).groups, 256u);
  EXPECT_EQ(ds_depthwise_spec(c).output_size(129, 14), (Pair{129, 14}));
}

TEST(ModelShape, GridFollowsInputGeometry) {
  for (std::size_t ch : {8u, 16u, 30u, 64u}) {
    for (std::size_t t : {36u, 76u, 120u, 250u}) {
      ModelConfig c = tiny_config();
      c.channels = ch;
      c.timesteps = t;
      EXPECT_EQ(token_grid(c), (Pair{oracle::window_count(ch, 8, 8, 1), oracle::window_count(t, 36, 36, 2)}));
    }
  }
}

TEST(ModelShape, PatchEmbedAndForward) {
  const ModelConfig c = grid_config();
  const Model m = build_model(c, 1);
  const Tensor x = random_batch(c, 3, 2);
  EXPECT_EQ(patch_embed(m, x, false).shape(), (Shape{3, 4, c.token_dim}));
  EXPECT_EQ(forward(m, x, false).shape(), (Shape{3, 2}));
  ModelConfig k = c;
  k.head_mode = HeadMode::kClassification;
  k.num_classes = 7;
  EXPECT_EQ(forward(build_model(k, 1), x, false).shape(), (Shape{3, 7}));
  EXPECT_THROW(forward(m, oracle::random_tensor({3, 1, c.channels, c.timesteps + 1}, 1), false),
               ShapeError);
}

TEST(ModelParameters, CountMatchesLayerFormula) {
  for (bool ds : {true, false}) {
    ModelConfig c = grid_config();
    c.ds_block = ds;
    EXPECT_EQ(count_parameters(build_model(c, 0)), oracle::expected_parameters(c));
  }
}

TEST(ModelParameters, NamesAndBuffers) {
  const Model m = build_model(tiny_config(), 0);
  for (const char* name :
       {"patch.temporal_conv.weight", "patch.temporal_bn.gamma", "patch.ds_depthwise.weight",
        "patch.ds_pointwise.weight", "patch.ds_bn.beta", "patch.channel_conv.weight",
        "embed.projection.weight", "embed.class_token", "embed.position",
        "encoder.block0.attn.query.weight", "encoder.block1.mlp.fc2.bias",
        "encoder.final_norm.gain", "head.fc1.weight", "head.fc2.bias"}) {
    EXPECT_TRUE(m.parameters.contains(name)) << name;
  }
  EXPECT_TRUE(m.buffers.contains("patch.temporal_bn.running_mean"));
  EXPECT_TRUE(m.buffers.contains("patch.ds_bn.running_var"));
  const Model plain = build_model(ds_block_toggle(tiny_config()), 0);
  EXPECT_FALSE(plain.parameters.contains("patch.ds_depthwise.weight"));
  EXPECT_EQ(m.parameters.at("embed.position").shape(), (Shape{1, 2, 32}));
}

TEST(ModelParameters, InitializationIsSeeded) {
  const Model a = build_model(tiny_config(), 5);
  const Model b = build_model(tiny_config(), 5);
  const Model c = build_model(tiny_config(), 6);
  const auto& wa = a.parameters.at("head.fc1.weight").data();
  const auto& wb = b.parameters.at("head.fc1.weight").data();
  const auto& wc = c.parameters.at("head.fc1.weight").data();
  EXPECT_TRUE(std::equal(wa.begin(), wa.end(), wb.begin()));
  EXPECT_FALSE(std::equal(wa.begin(), wa.end(), wc.begin()));
  for (double v : a.parameters.at("embed.position").data()) EXPECT_LE(std::abs(v), 0.04 + 1e-12);
  for (double v : a.parameters.at("patch.temporal_conv.bias").data()) EXPECT_EQ(v, 0.0);
}

TEST(ModelForward, EvalIsDeterministicAndTrainingUsesDropoutSeed) {
  const ModelConfig c = grid_config();
  const Model m = build_model(c, 3);
  const Tensor x = random_batch(c, 2, 4);
  const auto e1 = forward(m, x, false, 1);
  const auto e2 = forward(m, x, false, 2);
  EXPECT_TRUE(std::equal(e1.data().begin(), e1.data().end(), e2.data().begin()));
  Model t = m.clone();
  const auto t1 = forward(t, x, true, 1);
  const auto t2 = forward(t, x, true, 1);
  const auto t3 = forward(t, x, true, 2);
  EXPECT_TRUE(std::equal(t1.data().begin(), t1.data().end(), t2.data().begin()));
  EXPECT_FALSE(std::equal(t1.data().begin(), t1.data().end(), t3.data().begin()));
}

TEST(ModelForward, TrainingUpdatesBatchNormBuffersOnly) {
  const ModelConfig c = grid_config();
  Model m = build_model(c, 3);
  const Tensor x = random_batch(c, 2, 4);
  const std::vector<double> before(m.buffers.at("patch.temporal_bn.running_mean").data().begin(),
                                   m.buffers.at("patch.temporal_bn.running_mean").data().end());
  forward(m, x, false);
  EXPECT_TRUE(std::equal(before.begin(), before.end(),
                         m.buffers.at("patch.temporal_bn.running_mean").data().begin()));
  forward(m, x, true);
  EXPECT_FALSE(std::equal(before.begin(), before.end(),
                          m.buffers.at("patch.temporal_bn.running_mean").data().begin()));
}

TEST(ModelForward, NonFiniteInputIsReported) {
  const ModelConfig c = grid_config();
  const Model m = build_model(c, 3);
  Tensor x = random_batch(c, 1, 4);
  x.mutable_data()[5] = std::nan("");
  EXPECT_THROW(forward(m, x, false), NumericError);
}

TEST(ModelForward, EndToEndGradientsMatchFiniteDifferences) {
  for (HeadMode mode : {HeadMode::kRegression, HeadMode::kClassification}) {
    ModelConfig c = grid_config();
    c.head_mode = mode;
    c.num_classes = 3;
    Model m = build_model(c, 9);
    const Tensor x = random_batch(c, 2, 10);
    const Tensor y({2, 2}, {100, 200, 600, 450});
    const std::vector<std::size_t> cls{0, 2};
    auto loss_of = [&]() {
      const Tensor out = forward(m, x, true, 77);
      return mode == HeadMode::kRegression ? mse_loss(out, y) : cross_entropy(out, cls);
    };
    m.zero_grad();
    loss_of().backward();
    std::mt19937_64 rng(4);
    std::vector<double> analytic, numeric;
    for (auto& [name, p] : m.parameters) {
      auto data = p.mutable_data();
      for (int s = 0; s < 4; ++s) {
        const std::size_t i = rng() % data.size();
        analytic.push_back(p.has_grad() ? p.grad()[i] : 0.0);
        const double saved = data[i];
        const double h = 1e-5;
        NoGradGuard guard;
        data[i] = saved + h;
        const double up = loss_of().item();
        data[i] = saved - h;
        const double down = loss_of().item();
        data[i] = saved;
        numeric.push_back((up - down) / (2 * h));
      }
    }
    EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-3);
  }
}

TEST(ModelState, CloneSnapshotRestore) {
  Model m = build_model(tiny_config(), 1);
  const ModelState s = snapshot(m);
  Model copy = m.clone();
  m.parameters.at("head.fc2.bias").mutable_data()[0] = 42.0;
  EXPECT_NE(copy.parameters.at("head.fc2.bias").data()[0], 42.0);
  restore(m, s);
  EXPECT_EQ(m.parameters.at("head.fc2.bias").data()[0], copy.parameters.at("head.fc2.bias").data()[0]);
  Model other = build_model(ds_block_toggle(tiny_config()), 1);
  EXPECT_THROW(restore(other, s), ShapeError);
}

TEST(ModelState, QuantizeRoundsToFloat) {
  Model m = build_model(tiny_config(), 1);
  m.parameters.at("head.fc2.bias").mutable_data()[0] = 0.1;
  quantize_to_f32(m);
  EXPECT_EQ(m.parameters.at("head.fc2.bias").data()[0], static_cast<double>(0.1f));
  for (const auto& [name, p] : m.parameters)
    for (double v : p.data()) EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
}

TEST(ModelState, DsToggleFlipsOnlyTheBlock) {
  const ModelConfig c;
  const ModelConfig t = ds_block_toggle(c);
  EXPECT_FALSE(t.ds_block);
  EXPECT_EQ(ds_block_toggle(t), c);
  EXPECT_EQ(oracle::expected_parameters(c) - oracle::expected_parameters(t), 135168u);
}
