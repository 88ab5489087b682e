#include "pasfuse/models/checkpoint.hpp"
#include "support/shape_calc.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

using namespace pasfuse;

namespace {

FTensor random_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
  FTensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

ModelInput random_input(const ScaleProfile& p, Index batch, std::uint64_t seed) {
  Rng rng(seed);
  ModelInput in;
  in.volume = random_tensor({batch, 1, p.mri_input[0], p.mri_input[1], p.mri_input[2]}, rng);
  in.image = random_tensor({batch, p.us_channels, p.us_input[0], p.us_input[1]}, rng);
  return in;
}

bool bitwise_equal(const FTensor& a, const FTensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.ptr(), b.ptr(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("pasfuse_models_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("profiles carry the published and desk-scale dimensions") {
  const auto p = ScaleProfile::paper();
  CHECK(p.mri_input == std::array<Index, 3>{128, 128, 64});
  CHECK(p.us_input == std::array<Index, 2>{224, 224});
  CHECK(p.stem_channels == 64);
  CHECK(p.growth_rate == 32);
  CHECK(p.dense_block_layers == std::vector<int>{6, 12, 24, 16});
  CHECK(p.patch_size == 16);
  CHECK(p.embed_dim == 768);
  CHECK(p.heads == 12);
  CHECK(p.encoder_blocks == 12);
  CHECK(p.resnet_block_counts == std::vector<int>{3, 4, 6, 3});
  CHECK(p.fusion_hidden == 128);
  CHECK(p.dense_channels() == 1024);
  CHECK(p.vit_tokens() == 256);
  CHECK(p.mri_features() == 896);
  CHECK(p.us_features() == 2048);
  CHECK(p.fused_features() == 2944);

  const auto m = ScaleProfile::micro();
  CHECK(m.mri_input == std::array<Index, 3>{32, 32, 16});
  CHECK(m.us_input == std::array<Index, 2>{56, 56});
  CHECK(m.stem_channels == 8);
  CHECK(m.growth_rate == 8);
  CHECK(m.dense_block_layers == std::vector<int>{2, 2, 2, 2});
  CHECK(m.patch_size == 8);
  CHECK(m.embed_dim == 64);
  CHECK(m.heads == 4);
  CHECK(m.encoder_blocks == 2);
  CHECK(m.resnet_block_counts == std::vector<int>{1, 1, 1, 1});
  CHECK(m.fusion_hidden == 32);
  CHECK(m.vit_tokens() == 32);
  CHECK_NOTHROW(p.validate());
  CHECK_NOTHROW(m.validate());
}

TEST_CASE("profile validation and JSON overrides") {
  auto p = ScaleProfile::micro();
  p.mri_input = {30, 32, 16};
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  CHECK_THROWS_AS(ScaleProfile::named("huge"), std::invalid_argument);

  nlohmann::json j = ScaleProfile::micro();
  CHECK(j.get<ScaleProfile>().dense_block_layers == ScaleProfile::micro().dense_block_layers);
  auto custom = nlohmann::json{{"name", "micro"}, {"embed_dim", 32}}.get<ScaleProfile>();
  CHECK(custom.embed_dim == 32);
  CHECK(custom.heads == 4);
  CHECK_THROWS(nlohmann::json{{"name", "micro"}, {"patch_size", 5}}.get<ScaleProfile>());
}

TEST_CASE("dense block: channel growth and the empty block") {
  NoGradGuard ng;
  Rng rng(3);
  ForwardContext ctx;
  ParameterSet ps;
  DenseBlock empty(ps, "b0", 5, 0, 4, 4);
  auto x = random_tensor({1, 5, 2, 2, 2}, rng);
  CHECK(bitwise_equal(empty.forward(x, ctx), x));

  DenseBlock six(ps, "b6", 64, 6, 32, 4);
  ps.initialize(1);
  auto y = six.forward(random_tensor({1, 64, 2, 2, 2}, rng), ctx);
  CHECK(y.shape() == Shape{1, 256, 2, 2, 2});
}

TEST_CASE("transition: halves channels and extents") {
  NoGradGuard ng;
  Rng rng(4);
  ForwardContext ctx;
  ParameterSet ps;
  Transition t(ps, "t", 256);
  ps.initialize(2);
  auto y = t.forward(random_tensor({1, 256, 32, 32, 16}, rng), ctx);
  CHECK(y.shape() == Shape{1, 128, 16, 16, 8});

  CHECK_THROWS_AS(Transition(ps, "odd", 7), ShapeError);

  // A constant field stays constant through BN, 1x1x1 conv and mean pooling.
  ParameterSet ps2;
  Transition t2(ps2, "t", 4);
  ps2.initialize(5);
  auto c = t2.forward(FTensor::full({1, 4, 4, 4, 2}, 0.7f), ctx);
  for (Index ch = 0; ch < 2; ++ch) {
    const float first = c.at({0, ch, 0, 0, 0});
    for (Index i = 0; i < 2 * 2 * 1; ++i) CHECK(c.ptr()[ch * 4 + i] == doctest::Approx(first));
  }
}

TEST_CASE("micro shapes agree with the dimension calculator") {
  NoGradGuard ng;
  const auto p = ScaleProfile::micro();
  const auto expect = testing::dense_shapes(p);
  CHECK(expect.stem == std::array<Index, 3>{8, 8, 4});
  MriModel model(p);
  model.parameters().initialize(7);
  ForwardContext ctx;
  ctx.capture_layer = "dense.final";
  auto out = model.forward(random_input(p, 2, 1), ctx);
  CHECK(ctx.captured.shape() == Shape{2, expect.final_channels, expect.final_extent[0],
                                      expect.final_extent[1], expect.final_extent[2]});
  CHECK(out.features.shape() == Shape{2, p.dense_embed + p.embed_dim});
  CHECK(out.logits.shape() == Shape{2, 2});

  UsModel us(p);
  us.parameters().initialize(7);
  ForwardContext uctx;
  uctx.capture_layer = "resnet.final";
  auto uo = us.forward(random_input(p, 2, 2), uctx);
  const auto e = testing::resnet_final_extent(p);
  CHECK(uctx.captured.shape() == Shape{2, p.us_features(), e[0], e[1]});
  CHECK(uo.features.shape() == Shape{2, 256});
}

TEST_CASE("paper ResNet50 reaches a 2048x7x7 map and a 2048-dim feature") {
  NoGradGuard ng;
  const auto p = ScaleProfile::paper();
  UsModel us(p);
  us.parameters().initialize(11);
  ForwardContext ctx;
  ctx.capture_layer = "resnet.final";
  Rng rng(5);
  ModelInput in;
  in.image = random_tensor({1, 3, 224, 224}, rng);
  auto out = us.forward(in, ctx);
  CHECK(ctx.captured.shape() == Shape{1, 2048, 7, 7});
  CHECK(out.features.shape() == Shape{1, 2048});
  CHECK(out.logits.shape() == Shape{1, 2});
}

TEST_CASE("ViT patch counts") {
  NoGradGuard ng;
  ForwardContext ctx;
  Rng rng(8);
  {
    const auto p = ScaleProfile::micro();
    ParameterSet ps;
    ViT3D vit(ps, "v", p);
    ps.initialize(1);
    CHECK(vit.embed(random_tensor({1, 1, 32, 32, 16}, rng), ctx).shape() == Shape{1, 32, 64});
  }
  {
    auto p = ScaleProfile::micro();
    p.mri_input = {8, 8, 8};
    ParameterSet ps;
    ViT3D vit(ps, "v", p);
    ps.initialize(1);
    CHECK(vit.embed(random_tensor({2, 1, 8, 8, 8}, rng), ctx).shape() == Shape{2, 1, 64});
    CHECK(vit.forward(random_tensor({2, 1, 8, 8, 8}, rng), ctx).shape() == Shape{2, 64});
    CHECK_THROWS_AS(vit.embed(random_tensor({1, 1, 8, 8, 12}, rng), ctx), ShapeError);
  }
}

TEST_CASE("ViT mean pooling is invariant to a joint permutation of tokens and positions") {
  NoGradGuard ng;
  const auto p = ScaleProfile::micro();
  ParameterSet ps;
  ViT3D vit(ps, "v", p);
  ps.initialize(21);
  Rng rng(9);
  ForwardContext ctx;
  const auto tokens = vit.embed(random_tensor({2, 1, 32, 32, 16}, rng), ctx);
  const auto& pos = vit.positional();
  const Index n = tokens.dim(1), d = tokens.dim(2);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (Index i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);

  FTensor tp(tokens.shape()), pp(pos.shape());
  for (Index i = 0; i < n; ++i) {
    pp.data().segment(i * d, d) = pos.data().segment(perm[i] * d, d);
    for (Index b = 0; b < 2; ++b)
      tp.data().segment((b * n + i) * d, d) = tokens.data().segment((b * n + perm[i]) * d, d);
  }
  const auto a = vit.encode(add_trailing(tokens, pos));
  const auto b = vit.encode(add_trailing(tp, pp));
  CHECK((a.data() - b.data()).cwiseAbs().maxCoeff() < 1e-5f);
}

TEST_CASE("MRI model: probabilities, determinism and eval purity") {
  const auto p = ScaleProfile::micro();
  MriModel model(p);
  model.parameters().initialize(3);
  const auto in = random_input(p, 3, 4);
  ForwardContext ctx;
  auto a = model.forward(in, ctx);
  auto b = model.forward(in, ctx);
  CHECK(bitwise_equal(a.probability, b.probability));
  CHECK(bitwise_equal(a.features, b.features));
  for (Index i = 0; i < 3; ++i) {
    CHECK(std::abs(a.probability.at({i, 0}) + a.probability.at({i, 1}) - 1.0f) < 1e-6f);
  }

  // Train mode with the same dropout stream replays exactly.
  MriModel again(p);
  again.parameters().initialize(3);
  Rng r1(5), r2(5);
  ForwardContext t1{Mode::train, &r1, {}, {}}, t2{Mode::train, &r2, {}, {}};
  CHECK(bitwise_equal(model.forward(in, t1).logits, again.forward(in, t2).logits));
  Tape<float>::current().clear();

  ModelInput bad;
  bad.volume = FTensor::zeros({1, 1, 32, 32, 8});
  CHECK_THROWS_AS(model.forward(bad, ctx), ShapeError);
}

TEST_CASE("identity bottleneck with zero residual weights is ReLU of the input") {
  NoGradGuard ng;
  ParameterSet ps;
  Bottleneck block(ps, "b", 16, 4, 4, 1, false);
  ps.initialize(1);
  for (const auto& e : ps.entries())
    if (e.name.find("conv") != std::string::npos) ps.get(e.name).data().setZero();
  Rng rng(2);
  auto x = random_tensor({2, 16, 3, 3}, rng, -1.0, 1.0);
  ForwardContext ctx;
  auto y = block.forward(x, ctx);
  CHECK(y.data() == x.data().cwiseMax(0.0f));
  CHECK_THROWS_AS(Bottleneck(ps, "bad", 16, 8, 4, 1, false), ShapeError);
}

TEST_CASE("fusion model: fused length, output range and the zero-feature oracle") {
  const auto p = ScaleProfile::micro();
  FusionModel model(p);
  model.parameters().initialize(4);
  ForwardContext ctx;
  NoGradGuard ng;
  auto out = model.forward(random_input(p, 2, 6), ctx);
  CHECK(out.features.shape() == Shape{2, 336});
  CHECK(out.probability.shape() == Shape{2, 1});
  for (Index i = 0; i < 2; ++i) {
    CHECK(out.probability.at({i, 0}) > 0.0f);
    CHECK(out.probability.at({i, 0}) < 1.0f);
  }

  // With zero fused features the head reduces to sigmoid(b2 + W2 ReLU(b1)).
  Rng rng(12);
  auto& b1 = const_cast<FTensor&>(model.fc1().bias);
  auto& b2 = const_cast<FTensor&>(model.fc2().bias);
  for (Index i = 0; i < b1.size(); ++i) b1.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  b2.data()[0] = 0.3f;
  double z = 0.3;
  for (Index i = 0; i < b1.size(); ++i) {
    z += static_cast<double>(model.fc2().weight.ptr()[i]) * std::max(0.0f, b1.ptr()[i]);
  }
  const double expect = 1.0 / (1.0 + std::exp(-z));
  auto zeros = FTensor::zeros({1, 336});
  auto y = sigmoid(model.fc2()(relu(model.fc1()(zeros))));
  CHECK(y.item() == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("paper shape ledger is consistent with the dimension calculator") {
  const auto p = ScaleProfile::paper();
  const auto d = testing::dense_shapes(p);
  CHECK(d.stem == std::array<Index, 3>{32, 32, 16});
  CHECK(d.block_channels.front() == 256);
  CHECK(d.final_channels == 1024);
  CHECK(d.final_extent == std::array<Index, 3>{4, 4, 2});
  CHECK(testing::resnet_final_extent(p) == std::array<Index, 2>{7, 7});
}

TEST_CASE("parameter counts are pure functions of the profile") {
  for (const auto& p : {ScaleProfile::micro(), ScaleProfile::paper()}) {
    CAPTURE(p.name);
    MriModel mri(p);
    UsModel us(p);
    CHECK(mri.parameters().count("mri.dense.") == testing::densenet_params(p));
    CHECK(mri.parameters().count("mri.vit.") == testing::vit_params(p));
    CHECK(mri.parameters().count("mri.head.") ==
          testing::linear_params(p.mri_features(), p.mri_head_hidden) +
              testing::linear_params(p.mri_head_hidden, 2));
    CHECK(us.parameters().count("us.resnet.") == testing::resnet_params(p));
    FusionModel fusion(p);
    CHECK(fusion.parameters().count() == testing::densenet_params(p) + testing::vit_params(p) +
                                             testing::resnet_params(p) +
                                             testing::linear_params(p.fused_features(), p.fusion_hidden) +
                                             testing::linear_params(p.fusion_hidden, 1));
  }
  // Recorded totals; a change here means the architecture drifted.
  CHECK(MriModel(ScaleProfile::micro()).parameters().count() == 202490);
  CHECK(UsModel(ScaleProfile::micro()).parameters().count() == 128906);
  CHECK(FusionModel(ScaleProfile::micro()).parameters().count() == 339041);
  // ResNet50 without its 1000-way classifier has 23,508,032 weights.
  CHECK(UsModel(ScaleProfile::paper()).parameters().count() == 23508032 + 2048 * 2 + 2);
  CHECK(MriModel(ScaleProfile::paper()).parameters().count() == 100003074);
}

TEST_CASE("initialization") {
  const auto p = ScaleProfile::micro();
  MriModel a(p), b(p);
  a.parameters().initialize(99);
  b.parameters().initialize(99);
  for (const auto& [name, t] : a.parameters().state()) {
    CAPTURE(name);
    CHECK(bitwise_equal(t, b.parameters().get(name)));
  }
  b.parameters().initialize(100);
  CHECK_FALSE(bitwise_equal(a.parameters().get("mri.head.fc1.weight"),
                            b.parameters().get("mri.head.fc1.weight")));

  for (const auto& e : a.parameters().entries()) {
    if (e.name.find(".bn") != std::string::npos && e.name.ends_with(".weight")) {
      CHECK(e.value.data().isOnes());
    }
  }
  CHECK(a.parameters().get("mri.vit.final_ln.weight").data().isOnes());
  CHECK(a.parameters().get("mri.vit.final_ln.bias").data().isZero());
  CHECK(a.parameters().get("mri.dense.stem.bn.running_var").data().isOnes());

  // Empirical std of a Kaiming-uniform weight vs sqrt(2 / fan_in).
  const auto w = a.parameters().get("mri.vit.block1.mlp.fc1.weight");
  REQUIRE(w.size() >= 10000);
  const double mean = w.data().cast<double>().mean();
  const double sd = std::sqrt((w.data().cast<double>().array() - mean).square().mean());
  const double expect = std::sqrt(2.0 / 64.0);
  CHECK(std::abs(sd - expect) / expect < 0.2);

  const auto pos = a.parameters().get("mri.vit.pos_embed");
  const double psd = std::sqrt(pos.data().cast<double>().array().square().mean());
  CHECK(psd == doctest::Approx(0.02).epsilon(0.2));
}

TEST_CASE("checkpoint round trip reproduces evaluation bitwise") {
  const auto p = ScaleProfile::micro();
  const auto dir = temp_dir("ckpt");
  MriModel model(p);
  model.parameters().initialize(17);
  // Perturb running statistics so they are not the defaults.
  {
    Rng rng(1);
    ForwardContext train{Mode::train, &rng, {}, {}};
    model.forward(random_input(p, 2, 3), train);
    Tape<float>::current().clear();
  }
  CheckpointMeta meta;
  meta.profile = p;
  meta.seed = 17;
  meta.epoch = 3;
  meta.val_accuracy = {0.5, 0.75};
  TensorDict optim{{"m/mri.head.fc2.bias", FTensor::from({2}, {1.0f, 2.0f})}};
  save_checkpoint(dir / "best.ndc", model, meta, optim);
  CHECK(std::filesystem::exists(dir / "best.json"));

  auto restored = restore_model(dir / "best.ndc");
  CHECK(restored->kind() == ModelKind::mri);
  const auto in = random_input(p, 2, 8);
  ForwardContext ctx;
  NoGradGuard ng;
  CHECK(bitwise_equal(model.forward(in, ctx).probability, restored->forward(in, ctx).probability));

  auto ck = load_checkpoint(dir / "best.ndc");
  CHECK(ck.meta.epoch == 3);
  CHECK(ck.meta.val_accuracy == std::vector<double>{0.5, 0.75});
  CHECK(ck.meta.profile.name == "micro");
  CHECK(ck.optimizer.count("m/mri.head.fc2.bias") == 1);
  CHECK(ck.weights.count("mri.dense.stem.bn.running_mean") == 1);
}

TEST_CASE("fusion warm start loads both unimodal extractors by name") {
  const auto p = ScaleProfile::micro();
  MriModel mri(p);
  UsModel us(p);
  mri.parameters().initialize(1);
  us.parameters().initialize(2);
  FusionModel fusion(p);
  fusion.parameters().initialize(3);
  const auto n_mri = fusion.parameters().load_matching(mri.parameters().state());
  const auto n_us = fusion.parameters().load_matching(us.parameters().state());
  // Everything but the unimodal heads transfers.
  CHECK(n_mri == mri.parameters().entries().size() + mri.parameters().buffers().size() - 4);
  CHECK(n_us == us.parameters().entries().size() + us.parameters().buffers().size() - 2);
  CHECK(bitwise_equal(fusion.parameters().get("mri.vit.pos_embed"), mri.parameters().get("mri.vit.pos_embed")));
  CHECK(bitwise_equal(fusion.parameters().get("us.resnet.stem.conv.weight"),
                      us.parameters().get("us.resnet.stem.conv.weight")));
  CHECK(fusion.cam_layers().size() == 2);
}
