#include "pasfuse/gradcam/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace pasfuse {

namespace {

struct AxisSample {
  Index i0, i1;
  float w1;
};

std::vector<AxisSample> axis_samples(Index in, Index out) {
  std::vector<AxisSample> s(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double x = (o + 0.5) * scale - 0.5;
    x = std::clamp(x, 0.0, static_cast<double>(in - 1));
    const Index i0 = static_cast<Index>(std::floor(x));
    const Index i1 = std::min(i0 + 1, in - 1);
    s[o] = {i0, i1, static_cast<float>(x - i0)};
  }
  return s;
}

}  // namespace

FTensor upsample(const FTensor& map, const std::vector<Index>& out) {
  if (map.rank() != static_cast<int>(out.size()) || (out.size() != 2 && out.size() != 3))
    throw ShapeError("upsample: expected a 2D or 3D map and matching output extents");
  std::array<Index, 3> in{1, 1, 1}, ext{1, 1, 1};
  for (std::size_t a = 0; a < out.size(); ++a) {
    in[a] = map.dim(static_cast<int>(a));
    ext[a] = out[a];
  }
  const auto sa = axis_samples(in[0], ext[0]), sb = axis_samples(in[1], ext[1]), sc = axis_samples(in[2], ext[2]);
  const Buffer<float>& src = map.data();
  auto at = [&](Index i, Index j, Index k) { return src[(i * in[1] + j) * in[2] + k]; };
  FTensor result(Shape(out.begin(), out.end()));
  Buffer<float>& dst = result.data();
  Index n = 0;
  for (Index i = 0; i < ext[0]; ++i)
    for (Index j = 0; j < ext[1]; ++j)
      for (Index k = 0; k < ext[2]; ++k) {
        const auto &a = sa[i], &b = sb[j], &c = sc[k];
        auto lerp_k = [&](Index ii, Index jj) { return at(ii, jj, c.i0) * (1 - c.w1) + at(ii, jj, c.i1) * c.w1; };
        const float v0 = lerp_k(a.i0, b.i0) * (1 - b.w1) + lerp_k(a.i0, b.i1) * b.w1;
        const float v1 = lerp_k(a.i1, b.i0) * (1 - b.w1) + lerp_k(a.i1, b.i1) * b.w1;
        dst[n++] = v0 * (1 - a.w1) + v1 * a.w1;
      }
  return result;
}

Heatmap gradcam(Model& model, const ModelInput& input, int class_index, const std::string& layer,
                const std::string& sample_id) {
  if (class_index != 0 && class_index != 1)
    throw std::invalid_argument("gradcam: class index must be 0 or 1, got " + std::to_string(class_index));
  const auto layers = model.cam_layers();
  const std::string target = layer.empty() ? layers.front() : layer;
  if (std::find(layers.begin(), layers.end(), target) == layers.end() && target != "dense.final" &&
      target != "resnet.final")
    throw std::invalid_argument("gradcam: model has no capture layer '" + target + "'");

  ForwardContext ctx;
  ctx.mode = Mode::eval;
  ctx.capture_layer = target;
  const ModelOutput out = model.forward(input, ctx);
  if (out.logits.dim(0) != 1) {
    Tape<float>::current().clear();
    throw ShapeError("gradcam: expects a batch of one sample");
  }
  if (!ctx.captured.defined()) {
    Tape<float>::current().clear();
    throw std::invalid_argument("gradcam: layer '" + target + "' was not reached by forward");
  }
  FTensor activation = ctx.captured;
  activation.zero_grad();
  FTensor score;
  if (out.logits.dim(-1) == 1) {
    score = scale(sum(out.logits), class_index == 1 ? 1.0f : -1.0f);
  } else {
    score = sum(slice(out.logits, 1, class_index, class_index + 1));
  }
  for (const auto& e : model.parameters().entries()) FTensor(e.value).clear_grad();
  backward(score);

  // activation: [1, C, spatial...]
  const Index channels = activation.dim(1);
  const Index spatial = activation.size() / channels;
  Shape map_shape(activation.shape().begin() + 2, activation.shape().end());
  FTensor raw(map_shape);
  const Buffer<float>& a = activation.data();
  const Buffer<float>& g = activation.grad();
  for (Index c = 0; c < channels; ++c) {
    const float w = static_cast<float>(g.segment(c * spatial, spatial).cast<double>().mean());
    raw.data() += w * a.segment(c * spatial, spatial);
  }
  raw.data() = raw.data().cwiseMax(0.0f);
  for (const auto& e : model.parameters().entries()) FTensor(e.value).clear_grad();

  const FTensor& source = map_shape.size() == 3 ? input.volume : input.image;
  std::vector<Index> target_extent(source.shape().begin() + 2, source.shape().end());
  Heatmap h;
  h.raw = raw;
  h.values = upsample(raw, target_extent);
  h.values.data() = h.values.data().cwiseMax(0.0f);
  const float peak = h.values.data().maxCoeff();
  if (!std::isfinite(peak)) throw std::runtime_error("gradcam: non-finite activation map");
  if (peak > 0) h.values.data() /= peak;
  h.layer = target;
  h.class_index = class_index;
  h.sample_id = sample_id;
  return h;
}

Rgb jet(float t) {
  static constexpr std::array<float, 6> xs{0.0f, 0.125f, 0.375f, 0.625f, 0.875f, 1.0f};
  static constexpr std::array<Rgb, 6> cs{{{0, 0, 0.5f}, {0, 0, 1}, {0, 1, 1}, {1, 1, 0}, {1, 0, 0}, {0.5f, 0, 0}}};
  t = std::clamp(std::isfinite(t) ? t : 0.0f, 0.0f, 1.0f);
  std::size_t i = 0;
  while (i + 2 < xs.size() && t > xs[i + 1]) ++i;
  const float u = (t - xs[i]) / (xs[i + 1] - xs[i]);
  Rgb out;
  for (int c = 0; c < 3; ++c) out[c] = cs[i][c] + (cs[i + 1][c] - cs[i][c]) * u;
  return out;
}

Rgb blend(const Rgb& src, float heat) {
  const Rgb r = jet(heat);
  Rgb out;
  for (int c = 0; c < 3; ++c) out[c] = (1.0f - kOverlayAlpha) * src[c] + kOverlayAlpha * r[c];
  return out;
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v * 255.0f + 0.5f), 0.0f, 255.0f));
}

namespace {

void write_netpbm(const std::filesystem::path& path, const char* magic, Index h, Index w,
                  const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  f << magic << '\n' << w << ' ' << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError(DataError::Kind::io, "cannot write " + path.string());
}

}  // namespace

void write_pgm(const std::filesystem::path& path, Index height, Index width, const std::vector<std::uint8_t>& gray) {
  if (static_cast<Index>(gray.size()) != height * width) throw ShapeError("write_pgm: size mismatch");
  write_netpbm(path, "P5", height, width, gray);
}

void write_ppm(const std::filesystem::path& path, Index height, Index width, const std::vector<std::uint8_t>& rgb) {
  if (static_cast<Index>(rgb.size()) != 3 * height * width) throw ShapeError("write_ppm: size mismatch");
  write_netpbm(path, "P6", height, width, rgb);
}

Buffer<float> display_range(const Buffer<float>& v) {
  if (v.size() == 0) return v;
  const float lo = v.minCoeff(), hi = v.maxCoeff();
  if (!(hi > lo)) return Buffer<float>::Zero(v.size());
  return (v.array() - lo) / (hi - lo);
}

nlohmann::json render_overlay(const Heatmap& heatmap, const Volume& source, const std::filesystem::path& dir,
                              const std::string& stem, const OverlayOptions& options) {
  const auto& e = source.extents;
  if (heatmap.values.rank() != 3 || heatmap.values.dim(0) != e[0] || heatmap.values.dim(1) != e[1] ||
      heatmap.values.dim(2) != e[2])
    throw ShapeError("render_overlay: heatmap " + to_string(heatmap.values.shape()) + " does not match the volume");
  const Buffer<float> src = display_range(source.voxels);
  const Buffer<float>& heat = heatmap.values.data();
  nlohmann::json files = nlohmann::json::array();
  std::vector<Index> depths;
  for (double f : options.depth_fractions) {
    const Index d = std::clamp<Index>(static_cast<Index>(f * static_cast<double>(e[2])), 0, e[2] - 1);
    if (std::find(depths.begin(), depths.end(), d) == depths.end()) depths.push_back(d);
  }
  for (Index d : depths) {
    std::vector<std::uint8_t> gray, rgb;
    for (Index i = 0; i < e[0]; ++i)
      for (Index j = 0; j < e[1]; ++j) {
        const Index o = source.offset(i, j, d);
        gray.push_back(to_byte(src[o]));
        const Rgb px = blend({src[o], src[o], src[o]}, heat[o]);
        for (float c : px) rgb.push_back(to_byte(c));
      }
    const std::string base = stem + "_d" + std::to_string(d);
    write_pgm(dir / (base + "_source.pgm"), e[0], e[1], gray);
    write_ppm(dir / (base + "_overlay.ppm"), e[0], e[1], rgb);
    files.push_back({{"depth", d}, {"source", base + "_source.pgm"}, {"overlay", base + "_overlay.ppm"}});
  }
  return {{"sample", heatmap.sample_id}, {"layer", heatmap.layer}, {"class", heatmap.class_index},
          {"modality", "mri"}, {"slices", files}};
}

nlohmann::json render_overlay(const Heatmap& heatmap, const Image& source, const std::filesystem::path& dir,
                              const std::string& stem) {
  const Index H = source.extents[0], W = source.extents[1];
  if (heatmap.values.rank() != 2 || heatmap.values.dim(0) != H || heatmap.values.dim(1) != W)
    throw ShapeError("render_overlay: heatmap " + to_string(heatmap.values.shape()) + " does not match the image");
  const Buffer<float> src = display_range(source.pixels);
  const Buffer<float>& heat = heatmap.values.data();
  const Index plane = source.plane();
  auto channel = [&](Index c, Index p) { return src[std::min(c, source.channels - 1) * plane + p]; };
  std::vector<std::uint8_t> gray, overlay, side;
  for (Index p = 0; p < plane; ++p) {
    gray.push_back(to_byte(channel(0, p)));
    const Rgb px = blend({channel(0, p), channel(1, p), channel(2, p)}, heat[p]);
    for (float c : px) overlay.push_back(to_byte(c));
  }
  for (Index i = 0; i < H; ++i) {
    for (Index j = 0; j < W; ++j)
      for (Index c = 0; c < 3; ++c) side.push_back(to_byte(channel(c, i * W + j)));
    for (Index j = 0; j < W; ++j)
      for (Index c = 0; c < 3; ++c) side.push_back(overlay[3 * (i * W + j) + c]);
  }
  write_pgm(dir / (stem + "_source.pgm"), H, W, gray);
  write_ppm(dir / (stem + "_overlay.ppm"), H, W, overlay);
  write_ppm(dir / (stem + "_side_by_side.ppm"), H, 2 * W, side);
  return {{"sample", heatmap.sample_id}, {"layer", heatmap.layer}, {"class", heatmap.class_index},
          {"modality", "us"}, {"source", stem + "_source.pgm"}, {"overlay", stem + "_overlay.ppm"},
          {"side_by_side", stem + "_side_by_side.ppm"}};
}

}  // namespace pasfuse
