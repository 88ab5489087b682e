#include "pasfuse/gradcam/gradcam.hpp"
#include "support/toy_model.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace pasfuse;
using testing::ToyModel;

namespace {

ModelInput random_image(Index c, Index h, Index w, std::uint64_t seed) {
  Rng rng(seed);
  ModelInput in;
  in.image = FTensor({1, c, h, w});
  for (Index i = 0; i < in.image.size(); ++i) in.image.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  return in;
}

std::string bytes_of(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

}  // namespace

TEST_CASE("toy model map equals relu(w * A)") {
  for (float w : {0.7f, -1.3f}) {
    ToyModel model(6, 5, w);
    const ModelInput in = random_image(1, 6, 5, 3);
    const FTensor a = model.activation(in);
    const Heatmap h = gradcam(model, in, 1);
    REQUIRE(h.raw.shape() == Shape{6, 5});
    float peak = 0;
    for (Index i = 0; i < a.size(); ++i) {
      const float expect = std::max(0.0f, w * a.data()[i]);
      CHECK(h.raw.data()[i] == expect);
      peak = std::max(peak, expect);
    }
    REQUIRE(peak > 0);
    for (Index i = 0; i < a.size(); ++i) CHECK(h.values.data()[i] == h.raw.data()[i] / peak);
    CHECK(h.values.data().maxCoeff() == 1.0f);
    CHECK(h.layer == "toy.conv");
  }
}

TEST_CASE("zero gradient gives an all-zero map") {
  ToyModel model(4, 4, 0.0f);
  const Heatmap h = gradcam(model, random_image(1, 4, 4, 1), 1);
  CHECK(h.values.data().isZero(0));
  CHECK_THROWS(gradcam(model, random_image(1, 4, 4, 1), 2));
  CHECK_THROWS(gradcam(model, random_image(1, 4, 4, 1), 1, "nope"));
}

TEST_CASE("upsample") {
  FTensor m = FTensor::from({2, 2}, {0, 1, 2, 3});
  const FTensor same = upsample(m, {2, 2});
  CHECK(same.data() == m.data());
  const FTensor up = upsample(m, {4, 4});
  CHECK(up.at({0, 0}) == 0.0f);
  CHECK(up.at({3, 3}) == 3.0f);
  CHECK(up.at({1, 1}) == doctest::Approx(0.75));  // (0.25, 0.25) -> 0.25 * 1 + 0.25 * 2
  FTensor cube = FTensor::full({1, 1, 1}, 2.0f);
  CHECK(upsample(cube, {3, 2, 2}).data().isConstant(2.0f));
  CHECK_THROWS(upsample(m, {4, 4, 4}));
}

TEST_CASE("heatmaps on micro models are normalized and finite") {
  const ScaleProfile p = ScaleProfile::micro();
  Rng rng(8);
  ModelInput in;
  in.volume = FTensor({1, 1, p.mri_input[0], p.mri_input[1], p.mri_input[2]});
  in.image = FTensor({1, 3, p.us_input[0], p.us_input[1]});
  for (Index i = 0; i < in.volume.size(); ++i) in.volume.data()[i] = static_cast<float>(rng.uniform());
  for (Index i = 0; i < in.image.size(); ++i) in.image.data()[i] = static_cast<float>(rng.uniform());
  for (ModelKind kind : {ModelKind::mri, ModelKind::us, ModelKind::fusion}) {
    auto model = make_model(kind, p);
    model->parameters().initialize(2);
    for (const auto& layer : model->cam_layers())
      for (int cls : {0, 1}) {
        const Heatmap h = gradcam(*model, in, cls, layer);
        INFO(layer);
        CHECK(h.values.data().allFinite());
        CHECK(h.values.data().minCoeff() >= 0.0f);
        const float mx = h.values.data().maxCoeff();
        CHECK((mx == 1.0f || mx == 0.0f));
        const bool vol = layer.rfind("mri.", 0) == 0;
        CHECK(h.values.rank() == (vol ? 3 : 2));
        CHECK(h.values.dim(0) == (vol ? p.mri_input[0] : p.us_input[0]));
      }
    // gradients must not leak into the parameters
    for (const auto& e : model->parameters().entries()) CHECK_FALSE(e.value.has_grad());
  }
}

TEST_CASE("jet ramp control points") {
  CHECK(jet(0.0f) == Rgb{0, 0, 0.5f});
  CHECK(jet(0.125f) == Rgb{0, 0, 1});
  CHECK(jet(0.5f) == Rgb{0.5f, 1, 0.5f});
  CHECK(jet(1.0f) == Rgb{0.5f, 0, 0});
  CHECK(jet(2.0f) == jet(1.0f));
  CHECK(jet(-1.0f) == jet(0.0f));
}

TEST_CASE("2x2 blend arithmetic") {
  Image src(1, {2, 2});
  src.pixels << 1.0f, 0.0f, 0.25f, 0.75f;
  Heatmap h;
  h.values = FTensor::from({2, 2}, {1.0f, 0.5f, 0.25f, 0.0f});
  const auto dir = std::filesystem::temp_directory_path() / "pasfuse_gradcam_blend";
  std::filesystem::remove_all(dir);
  const auto index = render_overlay(h, src, dir, "x");
  // out = 0.6 src + 0.4 ramp(h):
  //   (1, h=1)     -> (0.8, 0.6, 0.6)
  //   (0, h=.5)    -> (0.2, 0.4, 0.2)
  //   (.25, h=.25) -> (0.15, 0.35, 0.55)
  //   (.75, h=0)   -> (0.45, 0.45, 0.65)
  const std::string expect_pixels{static_cast<char>(204), static_cast<char>(153), static_cast<char>(153),
                                  static_cast<char>(51),  static_cast<char>(102), static_cast<char>(51),
                                  static_cast<char>(38),  static_cast<char>(89),  static_cast<char>(140),
                                  static_cast<char>(115), static_cast<char>(115), static_cast<char>(166)};
  CHECK(bytes_of(dir / "x_overlay.ppm") == "P6\n2 2\n255\n" + expect_pixels);
  CHECK(bytes_of(dir / "x_source.pgm") ==
        std::string("P5\n2 2\n255\n") + static_cast<char>(255) + static_cast<char>(0) + static_cast<char>(64) +
            static_cast<char>(191));
  CHECK(bytes_of(dir / "x_side_by_side.ppm").substr(0, 11) == "P6\n4 2\n255\n");
  CHECK(index["side_by_side"] == "x_side_by_side.ppm");
}

TEST_CASE("zero heatmap tints the source by ramp(0)") {
  Volume v({4, 4, 4});
  for (Index i = 0; i < v.size(); ++i) v.voxels[i] = static_cast<float>(i % 7) / 6.0f;
  Heatmap h;
  h.values = FTensor({4, 4, 4});
  const auto dir = std::filesystem::temp_directory_path() / "pasfuse_gradcam_zero";
  std::filesystem::remove_all(dir);
  const auto index = render_overlay(h, v, dir, "m");
  REQUIRE(index["slices"].size() == 3);
  const std::string ppm = bytes_of(dir / index["slices"][0]["overlay"].get<std::string>());
  const std::string body = ppm.substr(std::string("P6\n4 4\n255\n").size());
  const Index d = index["slices"][0]["depth"];
  REQUIRE(body.size() == 48);
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 4; ++j) {
      const float s = v(i, j, d);
      const std::size_t o = 3 * static_cast<std::size_t>(i * 4 + j);
      CHECK(static_cast<std::uint8_t>(body[o]) == to_byte(0.6f * s));
      CHECK(static_cast<std::uint8_t>(body[o + 2]) == to_byte(0.6f * s + 0.4f * 0.5f));
    }
  Heatmap wrong;
  wrong.values = FTensor({2, 2, 2});
  CHECK_THROWS_AS(render_overlay(wrong, v, dir, "bad"), ShapeError);
}
