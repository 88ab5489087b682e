#include "pasfuse/models/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace pasfuse {

FTensor ParameterSet::create(const std::string& name, Shape shape, InitKind init, Index fan_in) {
  if (index_.count(name) || buffers_.count(name)) {
    throw std::logic_error("duplicate parameter name " + name);
  }
  FTensor t(std::move(shape));
  t.set_requires_grad(true);
  index_[name] = params_.size();
  params_.push_back({name, t, init, fan_in});
  return t;
}

FTensor ParameterSet::buffer(const std::string& name, Shape shape, float fill) {
  if (index_.count(name) || buffers_.count(name)) {
    throw std::logic_error("duplicate buffer name " + name);
  }
  FTensor t = FTensor::full(std::move(shape), fill);
  buffers_[name] = t;
  buffer_fill_[name] = fill;
  return t;
}

std::vector<FTensor> ParameterSet::tensors() const {
  std::vector<FTensor> out;
  out.reserve(params_.size());
  for (const auto& e : params_) out.push_back(e.value);
  return out;
}

bool ParameterSet::contains(const std::string& name) const {
  return index_.count(name) != 0 || buffers_.count(name) != 0;
}

FTensor ParameterSet::get(const std::string& name) const {
  if (auto it = index_.find(name); it != index_.end()) return params_[it->second].value;
  if (auto it = buffers_.find(name); it != buffers_.end()) return it->second;
  throw std::out_of_range("no parameter named " + name);
}

Index ParameterSet::count() const {
  Index n = 0;
  for (const auto& e : params_) n += e.value.size();
  return n;
}

Index ParameterSet::count(const std::string& prefix) const {
  Index n = 0;
  for (const auto& e : params_)
    if (e.name.rfind(prefix, 0) == 0) n += e.value.size();
  return n;
}

void ParameterSet::initialize(std::uint64_t seed) {
  for (auto& e : params_) {
    Rng rng(hash_combine(seed, hash_string(e.name)));
    auto& d = e.value.data();
    switch (e.init) {
      case InitKind::kaiming_uniform: {
        const double bound = std::sqrt(6.0 / static_cast<double>(e.fan_in));
        for (Index i = 0; i < d.size(); ++i) d[i] = static_cast<float>(rng.uniform(-bound, bound));
        break;
      }
      case InitKind::zeros:
        d.setZero();
        break;
      case InitKind::ones:
        d.setOnes();
        break;
      case InitKind::normal_002:
        for (Index i = 0; i < d.size(); ++i) d[i] = static_cast<float>(0.02 * rng.normal());
        break;
    }
  }
  for (auto& [name, t] : buffers_) t.data().setConstant(buffer_fill_.at(name));
}

TensorDict ParameterSet::state() const {
  TensorDict out;
  for (const auto& e : params_) out[e.name] = e.value.detach();
  for (const auto& [name, t] : buffers_) out[name] = t.detach();
  return out;
}

namespace {

bool copy_into(FTensor& dst, const FTensor& src) {
  if (dst.shape() != src.shape()) return false;
  dst.data() = src.data();
  return true;
}

}  // namespace

void ParameterSet::load_state(const TensorDict& state) {
  auto load = [&](const std::string& name, FTensor t) {
    auto it = state.find(name);
    if (it == state.end()) throw FormatError("checkpoint lacks " + name);
    if (!copy_into(t, it->second)) {
      throw FormatError("checkpoint shape mismatch for " + name + ": " +
                        to_string(it->second.shape()) + " vs " + to_string(t.shape()));
    }
  };
  for (auto& e : params_) load(e.name, e.value);
  for (auto& [name, t] : buffers_) load(name, t);
}

std::size_t ParameterSet::load_matching(const TensorDict& state) {
  std::size_t n = 0;
  auto load = [&](const std::string& name, FTensor t) {
    auto it = state.find(name);
    if (it != state.end() && copy_into(t, it->second)) ++n;
  };
  for (auto& e : params_) load(e.name, e.value);
  for (auto& [name, t] : buffers_) load(name, t);
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : params_) e.value.zero_grad();
}

Rng& ForwardContext::dropout_rng() {
  if (rng == nullptr) throw std::logic_error("train-mode forward needs an Rng for dropout");
  return *rng;
}

Conv Conv::create(ParameterSet& ps, const std::string& name, Index in, Index out, int kernel,
                  int stride, int padding, int dims, bool with_bias) {
  Shape shape{out, in};
  Index fan_in = in;
  for (int i = 0; i < dims; ++i) {
    shape.push_back(kernel);
    fan_in *= kernel;
  }
  Conv c;
  c.name = name;
  c.weight = ps.create(name + ".weight", shape, InitKind::kaiming_uniform, fan_in);
  if (with_bias) c.bias = ps.create(name + ".bias", {out}, InitKind::zeros);
  c.stride = stride;
  c.padding = padding;
  c.dims = dims;
  return c;
}

FTensor Conv::operator()(const FTensor& x, ForwardContext& ctx) const {
  FTensor y = conv(x, weight, bias, stride, padding, dims);
  ctx.tap(name, y);
  return y;
}

BatchNorm BatchNorm::create(ParameterSet& ps, const std::string& name, Index channels) {
  BatchNorm bn;
  bn.scale = ps.create(name + ".weight", {channels}, InitKind::ones);
  bn.shift = ps.create(name + ".bias", {channels}, InitKind::zeros);
  bn.stats.running_mean = ps.buffer(name + ".running_mean", {channels}, 0.0f);
  bn.stats.running_var = ps.buffer(name + ".running_var", {channels}, 1.0f);
  return bn;
}

FTensor BatchNorm::operator()(const FTensor& x, Mode mode) {
  return batchnorm(x, scale, shift, stats, mode);
}

Linear Linear::create(ParameterSet& ps, const std::string& name, Index in, Index out) {
  Linear l;
  l.weight = ps.create(name + ".weight", {out, in}, InitKind::kaiming_uniform, in);
  l.bias = ps.create(name + ".bias", {out}, InitKind::zeros);
  return l;
}

LayerNorm LayerNorm::create(ParameterSet& ps, const std::string& name, Index dim) {
  LayerNorm ln;
  ln.scale = ps.create(name + ".weight", {dim}, InitKind::ones);
  ln.shift = ps.create(name + ".bias", {dim}, InitKind::zeros);
  return ln;
}

Attention Attention::create(ParameterSet& ps, const std::string& name, Index dim, int heads) {
  Attention a;
  a.heads = heads;
  auto w = [&](const char* n) {
    return ps.create(name + "." + n + ".weight", {dim, dim}, InitKind::kaiming_uniform, dim);
  };
  auto b = [&](const char* n) { return ps.create(name + "." + n + ".bias", {dim}, InitKind::zeros); };
  a.params.wq = w("q");
  a.params.bq = b("q");
  a.params.wk = w("k");
  a.params.bk = b("k");
  a.params.wv = w("v");
  a.params.bv = b("v");
  a.params.wo = w("out");
  a.params.bo = b("out");
  return a;
}

}  // namespace pasfuse
