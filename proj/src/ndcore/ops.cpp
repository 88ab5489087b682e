#include "pasfuse/ndcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace pasfuse {

namespace {

template <typename S>
using Map = Eigen::Map<Buffer<S>>;
template <typename S>
using ConstMap = Eigen::Map<const Buffer<S>>;
template <typename S>
using MatMap = Eigen::Map<RowMatrix<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMatrix<S>>;

template <typename S>
Tensor<S> make_result(Shape shape, Buffer<S> data, bool grad) {
  Tensor<S> out(std::move(shape), std::move(data));
  out.set_requires_grad(grad);
  return out;
}

template <typename S>
void record(std::function<void()> fn) {
  Tape<S>::current().record(std::move(fn));
}

template <typename S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

int normalize_axis(int axis, int rank, const char* op) {
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range");
  }
  return a;
}

Index prod(const Shape& s, std::size_t begin, std::size_t end) {
  Index n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= s[i];
  return n;
}

// Sliding-window geometry shared by conv and pooling. 2D inputs use a unit
// third axis.
struct Window {
  Index batch = 0;
  Index channels = 0;
  std::array<Index, 3> in{1, 1, 1};
  std::array<Index, 3> kernel{1, 1, 1};
  std::array<Index, 3> stride{1, 1, 1};
  std::array<Index, 3> pad{0, 0, 0};
  std::array<Index, 3> out{1, 1, 1};

  Index in_size() const { return in[0] * in[1] * in[2]; }
  Index out_size() const { return out[0] * out[1] * out[2]; }
  Index kernel_size() const { return kernel[0] * kernel[1] * kernel[2]; }
  bool pointwise() const {
    return kernel_size() == 1 && stride == std::array<Index, 3>{1, 1, 1} &&
           pad == std::array<Index, 3>{0, 0, 0};
  }
};

const char* axis_name(int axis) {
  static const char* names[] = {"H", "W", "D"};
  return names[axis];
}

Window make_window(const Shape& input, int dims, const std::array<int, 3>& kernel,
                   const std::array<int, 3>& stride, const std::array<int, 3>& pad,
                   const char* op) {
  if (dims != 2 && dims != 3) throw ShapeError(std::string(op) + ": dims must be 2 or 3");
  if (static_cast<int>(input.size()) != dims + 2) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(dims + 2) +
                     " input [B,C,spatial], got " + to_string(input));
  }
  Window w;
  w.batch = input[0];
  w.channels = input[1];
  for (int a = 0; a < dims; ++a) {
    if (kernel[a] < 1) throw ShapeError(std::string(op) + ": kernel must be >= 1");
    if (stride[a] < 1) throw ShapeError(std::string(op) + ": stride must be >= 1");
    if (pad[a] < 0) throw ShapeError(std::string(op) + ": padding must be >= 0");
    w.in[a] = input[2 + a];
    w.kernel[a] = kernel[a];
    w.stride[a] = stride[a];
    w.pad[a] = pad[a];
    const Index span = w.in[a] + 2 * w.pad[a] - w.kernel[a];
    if (span < 0) {
      throw ShapeError(std::string(op) + ": window " + std::to_string(kernel[a]) +
                       " larger than padded extent " + std::to_string(w.in[a] + 2 * w.pad[a]) +
                       " on axis " + axis_name(a));
    }
    w.out[a] = span / w.stride[a] + 1;
  }
  return w;
}

Shape output_shape(const Window& w, Index channels, int dims) {
  Shape s{w.batch, channels};
  for (int a = 0; a < dims; ++a) s.push_back(w.out[a]);
  return s;
}

// Column matrix [C * K, P] (row-major) for one sample.
template <typename S>
void im2col(const S* x, const Window& w, S* col) {
  const Index P = w.out_size();
  Index row = 0;
  for (Index c = 0; c < w.channels; ++c) {
    const S* xc = x + c * w.in_size();
    for (Index k0 = 0; k0 < w.kernel[0]; ++k0) {
      for (Index k1 = 0; k1 < w.kernel[1]; ++k1) {
        for (Index k2 = 0; k2 < w.kernel[2]; ++k2, ++row) {
          S* dst = col + row * P;
          for (Index o0 = 0; o0 < w.out[0]; ++o0) {
            const Index i0 = o0 * w.stride[0] - w.pad[0] + k0;
            const bool in0 = i0 >= 0 && i0 < w.in[0];
            for (Index o1 = 0; o1 < w.out[1]; ++o1) {
              const Index i1 = o1 * w.stride[1] - w.pad[1] + k1;
              const bool in01 = in0 && i1 >= 0 && i1 < w.in[1];
              const S* src = xc + (i0 * w.in[1] + i1) * w.in[2];
              for (Index o2 = 0; o2 < w.out[2]; ++o2) {
                const Index i2 = o2 * w.stride[2] - w.pad[2] + k2;
                *dst++ = (in01 && i2 >= 0 && i2 < w.in[2]) ? src[i2] : S(0);
              }
            }
          }
        }
      }
    }
  }
}

template <typename S>
void col2im(const S* col, const Window& w, S* x) {
  const Index P = w.out_size();
  Index row = 0;
  for (Index c = 0; c < w.channels; ++c) {
    S* xc = x + c * w.in_size();
    for (Index k0 = 0; k0 < w.kernel[0]; ++k0) {
      for (Index k1 = 0; k1 < w.kernel[1]; ++k1) {
        for (Index k2 = 0; k2 < w.kernel[2]; ++k2, ++row) {
          const S* src = col + row * P;
          for (Index o0 = 0; o0 < w.out[0]; ++o0) {
            const Index i0 = o0 * w.stride[0] - w.pad[0] + k0;
            const bool in0 = i0 >= 0 && i0 < w.in[0];
            for (Index o1 = 0; o1 < w.out[1]; ++o1) {
              const Index i1 = o1 * w.stride[1] - w.pad[1] + k1;
              const bool in01 = in0 && i1 >= 0 && i1 < w.in[1];
              S* dst = xc + (i0 * w.in[1] + i1) * w.in[2];
              for (Index o2 = 0; o2 < w.out[2]; ++o2, ++src) {
                const Index i2 = o2 * w.stride[2] - w.pad[2] + k2;
                if (in01 && i2 >= 0 && i2 < w.in[2]) dst[i2] += *src;
              }
            }
          }
        }
      }
    }
  }
}

template <typename S>
S erf_cdf(S x) {
  return S(0.5) * (S(1) + std::erf(x / std::numbers::sqrt2_v<S>));
}

}  // namespace

// Elementwise ------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "add");
  const bool g = needs_grad(a, b);
  auto out = make_result<S>(a.shape(), a.data() + b.data(), g);
  if (g) {
    record<S>([ai = a.impl(), bi = b.impl(), oi = out.impl()] {
      if (oi->grad.size() == 0) return;
      if (ai->requires_grad) ai->accumulate_grad(oi->grad);
      if (bi->requires_grad) bi->accumulate_grad(oi->grad);
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "sub");
  const bool g = needs_grad(a, b);
  auto out = make_result<S>(a.shape(), a.data() - b.data(), g);
  if (g) {
    record<S>([ai = a.impl(), bi = b.impl(), oi = out.impl()] {
      if (oi->grad.size() == 0) return;
      if (ai->requires_grad) ai->accumulate_grad(oi->grad);
      if (bi->requires_grad) bi->accumulate_grad(-oi->grad);
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "mul");
  const bool g = needs_grad(a, b);
  auto out = make_result<S>(a.shape(), a.data().cwiseProduct(b.data()), g);
  if (g) {
    record<S>([ai = a.impl(), bi = b.impl(), oi = out.impl()] {
      if (oi->grad.size() == 0) return;
      if (ai->requires_grad) ai->accumulate_grad(oi->grad.cwiseProduct(bi->data));
      if (bi->requires_grad) bi->accumulate_grad(oi->grad.cwiseProduct(ai->data));
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S factor) {
  const bool g = needs_grad(a);
  auto out = make_result<S>(a.shape(), a.data() * factor, g);
  if (g) {
    record<S>([ai = a.impl(), oi = out.impl(), factor] {
      if (oi->grad.size() == 0) return;
      ai->accumulate_grad(oi->grad * factor);
    });
  }
  return out;
}

template <typename S>
Tensor<S> add_trailing(const Tensor<S>& a, const Tensor<S>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (bs.size() > as.size() || !std::equal(bs.begin(), bs.end(), as.end() - bs.size())) {
    throw ShapeError("add_trailing: " + to_string(bs) + " is not a suffix of " + to_string(as));
  }
  const Index inner = b.size();
  const Index outer = inner == 0 ? 0 : a.size() / inner;
  const bool g = needs_grad(a, b);
  Buffer<S> data = a.data();
  MatMap<S>(data.data(), outer, inner).rowwise() += b.data().transpose();
  auto out = make_result<S>(as, std::move(data), g);
  if (g) {
    record<S>([ai = a.impl(), bi = b.impl(), oi = out.impl(), outer, inner] {
      if (oi->grad.size() == 0) return;
      if (ai->requires_grad) ai->accumulate_grad(oi->grad);
      if (bi->requires_grad) {
        bi->accumulate_grad(
            ConstMatMap<S>(oi->grad.data(), outer, inner).colwise().sum().transpose());
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  const bool g = needs_grad(a);
  Buffer<S> v(1);
  v[0] = a.data().sum();
  auto out = make_result<S>({}, std::move(v), g);
  if (g) {
    record<S>([ai = a.impl(), oi = out.impl()] {
      if (oi->grad.size() == 0) return;
      ai->accumulate_grad(Buffer<S>::Constant(ai->data.size(), oi->grad[0]));
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  if (a.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(a), S(1) / static_cast<S>(a.size()));
}

template <typename S>
Tensor<S> mean_axis(const Tensor<S>& a, int axis) {
  const int ax = normalize_axis(axis, a.rank(), "mean_axis");
  const Shape& s = a.shape();
  const Index outer = prod(s, 0, ax);
  const Index n = s[ax];
  const Index inner = prod(s, ax + 1, s.size());
  if (n == 0) throw ShapeError("mean_axis: empty axis");
  Shape os = s;
  os.erase(os.begin() + ax);
  Buffer<S> data = Buffer<S>::Zero(outer * inner);
  for (Index o = 0; o < outer; ++o) {
    for (Index k = 0; k < n; ++k) {
      data.segment(o * inner, inner) += a.data().segment((o * n + k) * inner, inner);
    }
  }
  data /= static_cast<S>(n);
  const bool g = needs_grad(a);
  auto out = make_result<S>(std::move(os), std::move(data), g);
  if (g) {
    record<S>([ai = a.impl(), oi = out.impl(), outer, n, inner] {
      if (oi->grad.size() == 0) return;
      Buffer<S> da(outer * n * inner);
      for (Index o = 0; o < outer; ++o) {
        for (Index k = 0; k < n; ++k) {
          da.segment((o * n + k) * inner, inner) =
              oi->grad.segment(o * inner, inner) / static_cast<S>(n);
        }
      }
      ai->accumulate_grad(da);
    });
  }
  return out;
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  const bool g = needs_grad(a);
  auto out = make_result<S>(std::move(shape), a.data(), g);
  if (g) {
    record<S>([ai = a.impl(), oi = out.impl()] {
      if (oi->grad.size() == 0) return;
      ai->accumulate_grad(oi->grad);
    });
  }
  return out;
}

template <typename S>
Tensor<S> permute(const Tensor<S>& a, const std::vector<int>& axes) {
  const int r = a.rank();
  if (static_cast<int>(axes.size()) != r) throw ShapeError("permute: wrong axis count");
  std::vector<int> seen(r, 0);
  for (int ax : axes) {
    if (ax < 0 || ax >= r || seen[ax]++) throw ShapeError("permute: invalid axis list");
  }
  const Shape& s = a.shape();
  std::vector<Index> in_stride(r, 1);
  for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * s[i + 1];
  Shape os(r);
  for (int i = 0; i < r; ++i) os[i] = s[axes[i]];
  // src_index[j] = flat input offset feeding flat output position j
  const Index n = a.size();
  std::vector<Index> src_index(n);
  std::vector<Index> counter(r, 0);
  for (Index j = 0; j < n; ++j) {
    Index off = 0;
    for (int i = 0; i < r; ++i) off += counter[i] * in_stride[axes[i]];
    src_index[j] = off;
    for (int i = r - 1; i >= 0; --i) {
      if (++counter[i] < os[i]) break;
      counter[i] = 0;
    }
  }
  Buffer<S> data(n);
  for (Index j = 0; j < n; ++j) data[j] = a.data()[src_index[j]];
  const bool g = needs_grad(a);
  auto out = make_result<S>(std::move(os), std::move(data), g);
  if (g) {
    record<S>([ai = a.impl(), oi = out.impl(), idx = std::move(src_index)] {
      if (oi->grad.size() == 0) return;
      Buffer<S> da(static_cast<Index>(idx.size()));
      for (std::size_t j = 0; j < idx.size(); ++j) da[idx[j]] = oi->grad[j];
      ai->accumulate_grad(da);
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& ref = parts.front().shape();
  const int ax = normalize_axis(axis, static_cast<int>(ref.size()), "concat");
  Shape os = ref;
  os[ax] = 0;
  std::vector<Index> widths;
  bool g = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != ref.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (static_cast<int>(i) != ax && s[i] != ref[i]) {
        throw ShapeError("concat: extent mismatch on axis " + std::to_string(i) + ": " +
                         to_string(s) + " vs " + to_string(ref));
      }
    }
    os[ax] += s[ax];
    widths.push_back(s[ax] * prod(s, ax + 1, s.size()));
    g = g || needs_grad(p);
  }
  const Index outer = prod(ref, 0, ax);
  const Index row = prod(os, ax, os.size());
  Buffer<S> data(outer * row);
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (Index o = 0; o < outer; ++o) {
      data.segment(o * row + offset, widths[k]) = parts[k].data().segment(o * widths[k], widths[k]);
    }
    offset += widths[k];
  }
  auto out = make_result<S>(std::move(os), std::move(data), g);
  if (g) {
    std::vector<std::shared_ptr<TensorImpl<S>>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    record<S>([impls, oi = out.impl(), widths, outer, row] {
      if (oi->grad.size() == 0) return;
      Index offset = 0;
      for (std::size_t k = 0; k < impls.size(); ++k) {
        if (impls[k]->requires_grad) {
          Buffer<S> d(outer * widths[k]);
          for (Index o = 0; o < outer; ++o) {
            d.segment(o * widths[k], widths[k]) = oi->grad.segment(o * row + offset, widths[k]);
          }
          impls[k]->accumulate_grad(d);
        }
        offset += widths[k];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& a, int axis, Index begin, Index end) {
  const int ax = normalize_axis(axis, a.rank(), "slice");
  const Shape& s = a.shape();
  if (begin < 0 || end > s[ax] || begin > end) throw ShapeError("slice: bad range");
  const Index outer = prod(s, 0, ax);
  const Index inner = prod(s, ax + 1, s.size());
  const Index row = s[ax] * inner;
  const Index width = (end - begin) * inner;
  Shape os = s;
  os[ax] = end - begin;
  Buffer<S> data(outer * width);
  for (Index o = 0; o < outer; ++o) {
    data.segment(o * width, width) = a.data().segment(o * row + begin * inner, width);
  }
  const bool g = needs_grad(a);
  auto out = make_result<S>(std::move(os), std::move(data), g);
  if (g) {
    record<S>([ai = a.impl(), oi = out.impl(), outer, row, width, start = begin * inner] {
      if (oi->grad.size() == 0) return;
      Buffer<S> da = Buffer<S>::Zero(outer * row);
      for (Index o = 0; o < outer; ++o) {
        da.segment(o * row + start, width) = oi->grad.segment(o * width, width);
      }
      ai->accumulate_grad(da);
    });
  }
  return out;
}

template <typename S>
std::vector<Tensor<S>> split(const Tensor<S>& a, int axis, const std::vector<Index>& sizes) {
  const int ax = normalize_axis(axis, a.rank(), "split");
  if (std::accumulate(sizes.begin(), sizes.end(), Index{0}) != a.dim(ax)) {
    throw ShapeError("split: sizes do not sum to axis extent");
  }
  std::vector<Tensor<S>> out;
  Index begin = 0;
  for (Index n : sizes) {
    out.push_back(slice(a, ax, begin, begin + n));
    begin += n;
  }
  return out;
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, bool ta, bool tb) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw ShapeError("matmul: operands must both be rank 2 or rank 3");
  }
  const bool batched = a.rank() == 3;
  const Index batch = batched ? a.dim(0) : 1;
  if (batched && b.dim(0) != batch) throw ShapeError("matmul: batch mismatch");
  const Index ar = a.dim(-2), ac = a.dim(-1), br = b.dim(-2), bc = b.dim(-1);
  const Index m = ta ? ac : ar, k = ta ? ar : ac;
  const Index kb = tb ? bc : br, n = tb ? br : bc;
  if (k != kb) {
    throw ShapeError("matmul: inner extent mismatch " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  }
  Shape os = batched ? Shape{batch, m, n} : Shape{m, n};
  Buffer<S> data(batch * m * n);
  for (Index i = 0; i < batch; ++i) {
    ConstMatMap<S> A(a.ptr() + i * ar * ac, ar, ac);
    ConstMatMap<S> B(b.ptr() + i * br * bc, br, bc);
    MatMap<S> C(data.data() + i * m * n, m, n);
    if (ta && tb) C.noalias() = A.transpose() * B.transpose();
    else if (ta) C.noalias() = A.transpose() * B;
    else if (tb) C.noalias() = A * B.transpose();
    else C.noalias() = A * B;
  }
  const bool g = needs_grad(a, b);
  auto out = make_result<S>(std::move(os), std::move(data), g);
  if (g) {
    record<S>([ai = a.impl(), bi = b.impl(), oi = out.impl(), batch, ar, ac, br, bc, m, n, ta,
               tb] {
      if (oi->grad.size() == 0) return;
      Buffer<S> da, db;
      if (ai->requires_grad) da.resize(batch * ar * ac);
      if (bi->requires_grad) db.resize(batch * br * bc);
      for (Index i = 0; i < batch; ++i) {
        ConstMatMap<S> A(ai->data.data() + i * ar * ac, ar, ac);
        ConstMatMap<S> B(bi->data.data() + i * br * bc, br, bc);
        ConstMatMap<S> G(oi->grad.data() + i * m * n, m, n);
        if (ai->requires_grad) {
          MatMap<S> dA(da.data() + i * ar * ac, ar, ac);
          // dop(A) = G op(B)^T
          if (!ta) {
            if (tb) dA.noalias() = G * B;
            else dA.noalias() = G * B.transpose();
          } else {
            if (tb) dA.noalias() = B.transpose() * G.transpose();
            else dA.noalias() = B * G.transpose();
          }
        }
        if (bi->requires_grad) {
          MatMap<S> dB(db.data() + i * br * bc, br, bc);
          // dop(B) = op(A)^T G
          if (!tb) {
            if (ta) dB.noalias() = A * G;
            else dB.noalias() = A.transpose() * G;
          } else {
            if (ta) dB.noalias() = G.transpose() * A.transpose();
            else dB.noalias() = G.transpose() * A;
          }
        }
      }
      if (ai->requires_grad) ai->accumulate_grad(da);
      if (bi->requires_grad) bi->accumulate_grad(db);
    });
  }
  return out;
}

// Activations -----------------------------------------------------------------

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  const bool g = needs_grad(a);
  auto out = make_result<S>(a.shape(), a.data().cwiseMax(S(0)), g);
  if (g) {
    record<S>([ai = a.impl(), oi = out.impl()] {
      if (oi->grad.size() == 0) return;
      ai->accumulate_grad(
          (ai->data.array() > S(0)).select(oi->grad.array(), S(0)).matrix());
    });
  }
  return out;
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& a) {
  Buffer<S> data = a.data().unaryExpr([](S x) { return x * erf_cdf(x); });
  const bool g = needs_grad(a);
  auto out = make_result<S>(a.shape(), std::move(data), g);
  if (g) {
    record<S>([ai = a.impl(), oi = out.impl()] {
      if (oi->grad.size() == 0) return;
      const S inv_sqrt_2pi = S(1) / std::sqrt(S(2) * std::numbers::pi_v<S>);
      Buffer<S> d = ai->data.unaryExpr([inv_sqrt_2pi](S x) {
        return erf_cdf(x) + x * inv_sqrt_2pi * std::exp(S(-0.5) * x * x);
      });
      ai->accumulate_grad(d.cwiseProduct(oi->grad));
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Buffer<S> data = a.data().unaryExpr([](S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
  });
  const bool g = needs_grad(a);
  auto out = make_result<S>(a.shape(), std::move(data), g);
  if (g) {
    record<S>([ai = a.impl(), oi = out.impl()] {
      if (oi->grad.size() == 0) return;
      const auto& y = oi->data.array();
      ai->accumulate_grad((oi->grad.array() * y * (S(1) - y)).matrix());
    });
  }
  return out;
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& a) {
  if (a.rank() == 0) throw ShapeError("softmax: needs at least one axis");
  const Index cols = a.dim(-1);
  const Index rows = cols == 0 ? 0 : a.size() / cols;
  Buffer<S> data(a.size());
  ConstMatMap<S> X(a.ptr(), rows, cols);
  MatMap<S> Y(data.data(), rows, cols);
  for (Index r = 0; r < rows; ++r) {
    const S m = X.row(r).maxCoeff();
    Y.row(r) = (X.row(r).array() - m).exp().matrix();
    Y.row(r) /= Y.row(r).sum();
  }
  const bool g = needs_grad(a);
  auto out = make_result<S>(a.shape(), std::move(data), g);
  if (g) {
    record<S>([ai = a.impl(), oi = out.impl(), rows, cols] {
      if (oi->grad.size() == 0) return;
      ConstMatMap<S> Y(oi->data.data(), rows, cols);
      ConstMatMap<S> G(oi->grad.data(), rows, cols);
      Buffer<S> d(rows * cols);
      MatMap<S> D(d.data(), rows, cols);
      for (Index r = 0; r < rows; ++r) {
        const S dot = Y.row(r).dot(G.row(r));
        D.row(r) = (Y.row(r).array() * (G.row(r).array() - dot)).matrix();
      }
      ai->accumulate_grad(d);
    });
  }
  return out;
}

template <typename S>
Tensor<S> activation(ActivationKind kind, const Tensor<S>& a) {
  switch (kind) {
    case ActivationKind::relu: return relu(a);
    case ActivationKind::gelu: return gelu(a);
    case ActivationKind::sigmoid: return sigmoid(a);
    case ActivationKind::softmax: return softmax(a);
  }
  throw ShapeError("activation: unknown kind");
}

// Layers ------------------------------------------------------------------------

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  if (weight.rank() != 2) throw ShapeError("linear: weight must be [out, in]");
  const Index out_dim = weight.dim(0), in_dim = weight.dim(1);
  if (x.rank() < 1 || x.dim(-1) != in_dim) {
    throw ShapeError("linear: input last dim " + (x.rank() ? std::to_string(x.dim(-1)) : "?") +
                     " != weight input dim " + std::to_string(in_dim));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_dim)) {
    throw ShapeError("linear: bias must be [" + std::to_string(out_dim) + "]");
  }
  const Index rows = x.size() / in_dim;
  Shape os = x.shape();
  os.back() = out_dim;
  Buffer<S> data(rows * out_dim);
  MatMap<S> Y(data.data(), rows, out_dim);
  Y.noalias() = ConstMatMap<S>(x.ptr(), rows, in_dim) *
                ConstMatMap<S>(weight.ptr(), out_dim, in_dim).transpose();
  if (bias.defined()) Y.rowwise() += bias.data().transpose();
  const bool g = needs_grad(x, weight, bias);
  auto out = make_result<S>(std::move(os), std::move(data), g);
  if (g) {
    record<S>([xi = x.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl(), rows,
               in_dim, out_dim] {
      if (oi->grad.size() == 0) return;
      ConstMatMap<S> G(oi->grad.data(), rows, out_dim);
      if (xi->requires_grad) {
        Buffer<S> dx(rows * in_dim);
        MatMap<S>(dx.data(), rows, in_dim).noalias() =
            G * ConstMatMap<S>(wi->data.data(), out_dim, in_dim);
        xi->accumulate_grad(dx);
      }
      if (wi->requires_grad) {
        Buffer<S> dw(out_dim * in_dim);
        MatMap<S>(dw.data(), out_dim, in_dim).noalias() =
            G.transpose() * ConstMatMap<S>(xi->data.data(), rows, in_dim);
        wi->accumulate_grad(dw);
      }
      if (bi && bi->requires_grad) bi->accumulate_grad(G.colwise().sum().transpose());
    });
  }
  return out;
}

template <typename S>
Tensor<S> conv(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias, int stride,
               int padding, int dims) {
  if (weight.rank() != dims + 2) {
    throw ShapeError("conv: weight must be [out, in, K...] of rank " + std::to_string(dims + 2));
  }
  const int K = static_cast<int>(weight.dim(2));
  for (int a = 0; a < dims; ++a) {
    if (weight.dim(2 + a) != K) throw ShapeError("conv: kernel must be cubic/square");
  }
  std::array<int, 3> k{1, 1, 1}, s{1, 1, 1}, p{0, 0, 0};
  for (int a = 0; a < dims; ++a) {
    k[a] = K;
    s[a] = stride;
    p[a] = padding;
  }
  const Window w = make_window(input.shape(), dims, k, s, p, "conv");
  const Index out_ch = weight.dim(0);
  if (weight.dim(1) != w.channels) {
    throw ShapeError("conv: input channel axis has " + std::to_string(w.channels) +
                     " channels but weight expects " + std::to_string(weight.dim(1)));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_ch)) {
    throw ShapeError("conv: bias must have one entry per output channel");
  }
  const Index R = w.channels * w.kernel_size();
  const Index P = w.out_size();
  const Index in_size = w.channels * w.in_size();
  Buffer<S> data(w.batch * out_ch * P);
  ConstMatMap<S> W(weight.ptr(), out_ch, R);
  RowMatrix<S> col;
  if (!w.pointwise()) col.resize(R, P);
  for (Index b = 0; b < w.batch; ++b) {
    MatMap<S> Y(data.data() + b * out_ch * P, out_ch, P);
    if (w.pointwise()) {
      Y.noalias() = W * ConstMatMap<S>(input.ptr() + b * in_size, R, P);
    } else {
      im2col(input.ptr() + b * in_size, w, col.data());
      Y.noalias() = W * col;
    }
    if (bias.defined()) Y.colwise() += bias.data();
  }
  const bool g = needs_grad(input, weight, bias);
  auto out = make_result<S>(output_shape(w, out_ch, dims), std::move(data), g);
  if (g) {
    record<S>([xi = input.impl(), wi = weight.impl(), bi = bias.impl(), oi = out.impl(), w, R, P,
               out_ch, in_size] {
      if (oi->grad.size() == 0) return;
      ConstMatMap<S> W(wi->data.data(), out_ch, R);
      Buffer<S> dx, dw, db;
      if (xi->requires_grad) dx = Buffer<S>::Zero(w.batch * in_size);
      if (wi->requires_grad) dw = Buffer<S>::Zero(out_ch * R);
      if (bi && bi->requires_grad) db = Buffer<S>::Zero(out_ch);
      RowMatrix<S> col, dcol;
      for (Index b = 0; b < w.batch; ++b) {
        ConstMatMap<S> G(oi->grad.data() + b * out_ch * P, out_ch, P);
        if (wi->requires_grad) {
          MatMap<S> dW(dw.data(), out_ch, R);
          if (w.pointwise()) {
            dW.noalias() += G * ConstMatMap<S>(xi->data.data() + b * in_size, R, P).transpose();
          } else {
            col.resize(R, P);
            im2col(xi->data.data() + b * in_size, w, col.data());
            dW.noalias() += G * col.transpose();
          }
        }
        if (bi && bi->requires_grad) db += G.rowwise().sum();
        if (xi->requires_grad) {
          if (w.pointwise()) {
            MatMap<S>(dx.data() + b * in_size, R, P).noalias() = W.transpose() * G;
          } else {
            dcol.noalias() = W.transpose() * G;
            col2im(dcol.data(), w, dx.data() + b * in_size);
          }
        }
      }
      if (xi->requires_grad) xi->accumulate_grad(dx);
      if (wi->requires_grad) wi->accumulate_grad(dw);
      if (bi && bi->requires_grad) bi->accumulate_grad(db);
    });
  }
  return out;
}

template <typename S>
Tensor<S> maxpool(const Tensor<S>& input, int k, int stride, int padding, int dims) {
  if (2 * padding > k) throw ShapeError("maxpool: padding must be at most half the window");
  std::array<int, 3> kk{1, 1, 1}, ss{1, 1, 1}, pp{0, 0, 0};
  for (int a = 0; a < dims; ++a) {
    kk[a] = k;
    ss[a] = stride;
    pp[a] = padding;
  }
  const Window w = make_window(input.shape(), dims, kk, ss, pp, "maxpool");
  const Index planes = w.batch * w.channels;
  const Index P = w.out_size();
  Buffer<S> data(planes * P);
  std::vector<Index> argmax(planes * P);
  for (Index pl = 0; pl < planes; ++pl) {
    const S* x = input.ptr() + pl * w.in_size();
    Index o = pl * P;
    for (Index o0 = 0; o0 < w.out[0]; ++o0) {
      for (Index o1 = 0; o1 < w.out[1]; ++o1) {
        for (Index o2 = 0; o2 < w.out[2]; ++o2, ++o) {
          S best = -std::numeric_limits<S>::infinity();
          Index best_at = -1;
          for (Index k0 = 0; k0 < w.kernel[0]; ++k0) {
            const Index i0 = o0 * w.stride[0] - w.pad[0] + k0;
            if (i0 < 0 || i0 >= w.in[0]) continue;
            for (Index k1 = 0; k1 < w.kernel[1]; ++k1) {
              const Index i1 = o1 * w.stride[1] - w.pad[1] + k1;
              if (i1 < 0 || i1 >= w.in[1]) continue;
              for (Index k2 = 0; k2 < w.kernel[2]; ++k2) {
                const Index i2 = o2 * w.stride[2] - w.pad[2] + k2;
                if (i2 < 0 || i2 >= w.in[2]) continue;
                const Index at = (i0 * w.in[1] + i1) * w.in[2] + i2;
                if (best_at < 0 || x[at] > best) {
                  best = x[at];
                  best_at = at;
                }
              }
            }
          }
          data[o] = best;
          argmax[o] = pl * w.in_size() + best_at;
        }
      }
    }
  }
  const bool g = needs_grad(input);
  auto out = make_result<S>(output_shape(w, w.channels, dims), std::move(data), g);
  if (g) {
    record<S>([xi = input.impl(), oi = out.impl(), idx = std::move(argmax)] {
      if (oi->grad.size() == 0) return;
      Buffer<S> dx = Buffer<S>::Zero(xi->data.size());
      for (std::size_t o = 0; o < idx.size(); ++o) dx[idx[o]] += oi->grad[o];
      xi->accumulate_grad(dx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> avgpool(const Tensor<S>& input, const std::array<int, 3>& k,
                  const std::array<int, 3>& stride, int dims) {
  const Window w = make_window(input.shape(), dims, k, stride, {0, 0, 0}, "avgpool");
  const Index planes = w.batch * w.channels;
  const Index P = w.out_size();
  const S inv = S(1) / static_cast<S>(w.kernel_size());
  auto each_window = [w](Index o0, Index o1, Index o2, auto&& fn) {
    for (Index k0 = 0; k0 < w.kernel[0]; ++k0) {
      for (Index k1 = 0; k1 < w.kernel[1]; ++k1) {
        for (Index k2 = 0; k2 < w.kernel[2]; ++k2) {
          fn(((o0 * w.stride[0] + k0) * w.in[1] + o1 * w.stride[1] + k1) * w.in[2] +
             o2 * w.stride[2] + k2);
        }
      }
    }
  };
  Buffer<S> data(planes * P);
  for (Index pl = 0; pl < planes; ++pl) {
    const S* x = input.ptr() + pl * w.in_size();
    Index o = pl * P;
    for (Index o0 = 0; o0 < w.out[0]; ++o0) {
      for (Index o1 = 0; o1 < w.out[1]; ++o1) {
        for (Index o2 = 0; o2 < w.out[2]; ++o2, ++o) {
          S acc = 0;
          each_window(o0, o1, o2, [&](Index at) { acc += x[at]; });
          data[o] = acc * inv;
        }
      }
    }
  }
  const bool g = needs_grad(input);
  auto out = make_result<S>(output_shape(w, w.channels, dims), std::move(data), g);
  if (g) {
    record<S>([xi = input.impl(), oi = out.impl(), w, planes, P, inv, each_window] {
      if (oi->grad.size() == 0) return;
      Buffer<S> dx = Buffer<S>::Zero(xi->data.size());
      for (Index pl = 0; pl < planes; ++pl) {
        S* d = dx.data() + pl * w.in_size();
        Index o = pl * P;
        for (Index o0 = 0; o0 < w.out[0]; ++o0) {
          for (Index o1 = 0; o1 < w.out[1]; ++o1) {
            for (Index o2 = 0; o2 < w.out[2]; ++o2, ++o) {
              const S gv = oi->grad[o] * inv;
              each_window(o0, o1, o2, [&](Index at) { d[at] += gv; });
            }
          }
        }
      }
      xi->accumulate_grad(dx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> avgpool(const Tensor<S>& input, int k, int stride, int dims) {
  return avgpool(input, std::array<int, 3>{k, dims >= 2 ? k : 1, dims >= 3 ? k : 1},
                 std::array<int, 3>{stride, dims >= 2 ? stride : 1, dims >= 3 ? stride : 1},
                 dims);
}

template <typename S>
Tensor<S> global_avgpool(const Tensor<S>& input) {
  if (input.rank() < 3) throw ShapeError("global_avgpool: input needs a spatial axis");
  const Index B = input.dim(0), C = input.dim(1);
  const Index spatial = input.size() / std::max<Index>(B * C, 1);
  if (spatial == 0) throw ShapeError("global_avgpool: empty spatial extent");
  return mean_axis(reshape(input, {B, C, spatial}), 2);
}

template <typename S>
Tensor<S> batchnorm(const Tensor<S>& input, const Tensor<S>& scale_p, const Tensor<S>& shift,
                    BatchNormStats<S>& stats, Mode mode) {
  if (input.rank() < 2) throw ShapeError("batchnorm: input must be [B, C, ...]");
  const Index B = input.dim(0), C = input.dim(1);
  if (B == 0) throw ShapeError("batchnorm: batch size 0");
  if (scale_p.size() != C || shift.size() != C) {
    throw ShapeError("batchnorm: scale/shift length must equal channel count " +
                     std::to_string(C));
  }
  const Index spatial = input.size() / (B * C);
  const Index count = B * spatial;
  const S eps = static_cast<S>(kNormEpsilon);
  Buffer<S> mu(C), inv_std(C);
  if (mode == Mode::train) {
    for (Index c = 0; c < C; ++c) {
      double acc = 0;
      for (Index b = 0; b < B; ++b) {
        acc += input.data().segment((b * C + c) * spatial, spatial).template cast<double>().sum();
      }
      const double m = acc / static_cast<double>(count);
      double sq = 0;
      for (Index b = 0; b < B; ++b) {
        sq += (input.data().segment((b * C + c) * spatial, spatial).template cast<double>().array() -
               m)
                  .square()
                  .sum();
      }
      const double var = sq / static_cast<double>(count);
      mu[c] = static_cast<S>(m);
      inv_std[c] = static_cast<S>(1.0 / std::sqrt(var + kNormEpsilon));
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      auto& rm = stats.running_mean.data()[c];
      auto& rv = stats.running_var.data()[c];
      rm = static_cast<S>((1.0 - kBatchNormMomentum) * rm + kBatchNormMomentum * m);
      rv = static_cast<S>((1.0 - kBatchNormMomentum) * rv + kBatchNormMomentum * unbiased);
    }
  } else {
    mu = stats.running_mean.data();
    inv_std = (stats.running_var.data().array() + eps).rsqrt().matrix();
  }
  Buffer<S> xhat(input.size());
  Buffer<S> data(input.size());
  for (Index b = 0; b < B; ++b) {
    for (Index c = 0; c < C; ++c) {
      const Index off = (b * C + c) * spatial;
      xhat.segment(off, spatial) =
          ((input.data().segment(off, spatial).array() - mu[c]) * inv_std[c]).matrix();
      data.segment(off, spatial) =
          (xhat.segment(off, spatial).array() * scale_p.data()[c] + shift.data()[c]).matrix();
    }
  }
  const bool g = needs_grad(input, scale_p, shift);
  auto out = make_result<S>(input.shape(), std::move(data), g);
  if (g) {
    record<S>([xi = input.impl(), gi = scale_p.impl(), bi = shift.impl(), oi = out.impl(),
               xhat = std::move(xhat), inv_std, B, C, spatial, count, train = mode == Mode::train] {
      if (oi->grad.size() == 0) return;
      const Buffer<S>& G = oi->grad;
      Buffer<S> dgamma = Buffer<S>::Zero(C), dbeta = Buffer<S>::Zero(C);
      for (Index b = 0; b < B; ++b) {
        for (Index c = 0; c < C; ++c) {
          const Index off = (b * C + c) * spatial;
          dbeta[c] += G.segment(off, spatial).sum();
          dgamma[c] += G.segment(off, spatial).dot(xhat.segment(off, spatial));
        }
      }
      if (xi->requires_grad) {
        Buffer<S> dx(xi->data.size());
        const S n = static_cast<S>(count);
        for (Index c = 0; c < C; ++c) {
          const S gamma = gi->data[c];
          for (Index b = 0; b < B; ++b) {
            const Index off = (b * C + c) * spatial;
            if (train) {
              // dxhat = G * gamma; sums over the batch are dbeta*gamma, dgamma*gamma.
              dx.segment(off, spatial) =
                  ((G.segment(off, spatial).array() * gamma * n - dbeta[c] * gamma -
                    xhat.segment(off, spatial).array() * dgamma[c] * gamma) *
                   (inv_std[c] / n))
                      .matrix();
            } else {
              dx.segment(off, spatial) = G.segment(off, spatial) * (gamma * inv_std[c]);
            }
          }
        }
        xi->accumulate_grad(dx);
      }
      if (gi->requires_grad) gi->accumulate_grad(dgamma);
      if (bi->requires_grad) bi->accumulate_grad(dbeta);
    });
  }
  return out;
}

template <typename S>
Tensor<S> layernorm(const Tensor<S>& input, const Tensor<S>& scale_p, const Tensor<S>& shift) {
  if (input.rank() < 1) throw ShapeError("layernorm: input needs a feature axis");
  const Index D = input.dim(-1);
  if (scale_p.size() != D || shift.size() != D) {
    throw ShapeError("layernorm: scale/shift length must equal feature dim");
  }
  const Index rows = D == 0 ? 0 : input.size() / D;
  Buffer<S> xhat(input.size()), inv_std(rows), data(input.size());
  ConstMatMap<S> X(input.ptr(), rows, D);
  MatMap<S> XH(xhat.data(), rows, D);
  MatMap<S> Y(data.data(), rows, D);
  for (Index r = 0; r < rows; ++r) {
    const S m = X.row(r).mean();
    const S var = (X.row(r).array() - m).square().mean();
    inv_std[r] = S(1) / std::sqrt(var + static_cast<S>(kNormEpsilon));
    XH.row(r) = ((X.row(r).array() - m) * inv_std[r]).matrix();
    Y.row(r) = (XH.row(r).array() * scale_p.data().transpose().array() +
                shift.data().transpose().array())
                   .matrix();
  }
  const bool g = needs_grad(input, scale_p, shift);
  auto out = make_result<S>(input.shape(), std::move(data), g);
  if (g) {
    record<S>([xi = input.impl(), gi = scale_p.impl(), bi = shift.impl(), oi = out.impl(),
               xhat = std::move(xhat), inv_std = std::move(inv_std), rows, D] {
      if (oi->grad.size() == 0) return;
      ConstMatMap<S> G(oi->grad.data(), rows, D);
      ConstMatMap<S> XH(xhat.data(), rows, D);
      if (gi->requires_grad) {
        gi->accumulate_grad(G.cwiseProduct(XH).colwise().sum().transpose());
      }
      if (bi->requires_grad) bi->accumulate_grad(G.colwise().sum().transpose());
      if (xi->requires_grad) {
        Buffer<S> dx(rows * D);
        MatMap<S> DX(dx.data(), rows, D);
        for (Index r = 0; r < rows; ++r) {
          const auto dxhat = (G.row(r).array() * gi->data.transpose().array()).eval();
          const S mean_d = dxhat.mean();
          const S mean_dx = (dxhat * XH.row(r).array()).mean();
          DX.row(r) = ((dxhat - mean_d - XH.row(r).array() * mean_dx) * inv_std[r]).matrix();
        }
        xi->accumulate_grad(dx);
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mhsa(const Tensor<S>& tokens, int heads, const AttentionParams<S>& p) {
  if (tokens.rank() != 3) throw ShapeError("mhsa: tokens must be [B, N, d]");
  const Index B = tokens.dim(0), N = tokens.dim(1), d = tokens.dim(2);
  if (heads < 1 || d % heads != 0) {
    throw ShapeError("mhsa: embedding dim " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const Index dh = d / heads;
  auto split_heads = [&](const Tensor<S>& t) {
    return reshape(permute(reshape(t, {B, N, heads, dh}), {0, 2, 1, 3}), {B * heads, N, dh});
  };
  const auto q = split_heads(linear(tokens, p.wq, p.bq));
  const auto k = split_heads(linear(tokens, p.wk, p.bk));
  const auto v = split_heads(linear(tokens, p.wv, p.bv));
  const auto scores = scale(matmul(q, k, false, true), S(1) / std::sqrt(static_cast<S>(dh)));
  const auto context = matmul(softmax(scores), v);
  const auto merged =
      reshape(permute(reshape(context, {B, heads, N, dh}), {0, 2, 1, 3}), {B, N, d});
  return linear(merged, p.wo, p.bo);
}

template <typename S>
Tensor<S> dropout(const Tensor<S>& input, double p, Mode mode, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ShapeError("dropout: p must be in [0, 1)");
  if (mode == Mode::eval || p == 0.0) return input;
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  Buffer<S> mask(input.size());
  for (Index i = 0; i < mask.size(); ++i) mask[i] = rng.uniform() < p ? S(0) : keep_scale;
  const bool g = needs_grad(input);
  auto out = make_result<S>(input.shape(), input.data().cwiseProduct(mask), g);
  if (g) {
    record<S>([xi = input.impl(), oi = out.impl(), mask = std::move(mask)] {
      if (oi->grad.size() == 0) return;
      xi->accumulate_grad(oi->grad.cwiseProduct(mask));
    });
  }
  return out;
}

// Losses --------------------------------------------------------------------------

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> targets,
                        const LossOptions& options) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [B, K]");
  const Index B = logits.dim(0), K = logits.dim(1);
  if (static_cast<Index>(targets.size()) != B || B == 0) {
    throw ShapeError("cross_entropy: need one target per row");
  }
  if (!options.class_weights.empty() && static_cast<Index>(options.class_weights.size()) != K) {
    throw ShapeError("cross_entropy: one class weight per class required");
  }
  const double eps = options.label_smoothing;
  ConstMatMap<S> X(logits.ptr(), B, K);
  RowMatrix<S> prob(B, K);
  Buffer<S> w(B);
  double total = 0, weight_sum = 0;
  for (Index b = 0; b < B; ++b) {
    const int t = targets[b];
    if (t < 0 || t >= K) {
      throw ShapeError("cross_entropy: invalid target index " + std::to_string(t));
    }
    const S m = X.row(b).maxCoeff();
    const auto shifted = (X.row(b).array() - m).eval();
    const S lse = std::log(shifted.exp().sum());
    prob.row(b) = (shifted - lse).exp().matrix();
    double sample = 0;
    for (Index c = 0; c < K; ++c) {
      const double q = (c == t ? 1.0 - eps : 0.0) + eps / static_cast<double>(K);
      sample -= q * static_cast<double>(shifted[c] - lse);
    }
    w[b] = options.class_weights.empty() ? S(1) : static_cast<S>(options.class_weights[t]);
    total += static_cast<double>(w[b]) * sample;
    weight_sum += static_cast<double>(w[b]);
  }
  Buffer<S> v(1);
  v[0] = static_cast<S>(total / weight_sum);
  const bool g = needs_grad(logits);
  auto out = make_result<S>({}, std::move(v), g);
  if (g) {
    std::vector<int> tg(targets.begin(), targets.end());
    record<S>([xi = logits.impl(), oi = out.impl(), prob = std::move(prob), w = std::move(w),
               tg = std::move(tg), weight_sum, eps, B, K] {
      if (oi->grad.size() == 0) return;
      Buffer<S> dx(B * K);
      MatMap<S> D(dx.data(), B, K);
      for (Index b = 0; b < B; ++b) {
        const S f = oi->grad[0] * w[b] / static_cast<S>(weight_sum);
        for (Index c = 0; c < K; ++c) {
          const S q = static_cast<S>((c == tg[b] ? 1.0 - eps : 0.0) + eps / static_cast<double>(K));
          D(b, c) = f * (prob(b, c) - q);
        }
      }
      xi->accumulate_grad(dx);
    });
  }
  return out;
}

template <typename S>
Tensor<S> bce(const Tensor<S>& probabilities, std::span<const int> targets) {
  const Index B = probabilities.size();
  if (static_cast<Index>(targets.size()) != B || B == 0) {
    throw ShapeError("bce: need one target per prediction");
  }
  const S lo = static_cast<S>(kBceClamp), hi = static_cast<S>(1.0 - kBceClamp);
  double total = 0;
  for (Index b = 0; b < B; ++b) {
    if (targets[b] != 0 && targets[b] != 1) {
      throw ShapeError("bce: invalid target " + std::to_string(targets[b]));
    }
    const double p = std::clamp(probabilities.data()[b], lo, hi);
    total -= targets[b] ? std::log(p) : std::log(1.0 - p);
  }
  Buffer<S> v(1);
  v[0] = static_cast<S>(total / static_cast<double>(B));
  const bool g = needs_grad(probabilities);
  auto out = make_result<S>({}, std::move(v), g);
  if (g) {
    std::vector<int> tg(targets.begin(), targets.end());
    record<S>([pi = probabilities.impl(), oi = out.impl(), tg = std::move(tg), lo, hi, B] {
      if (oi->grad.size() == 0) return;
      Buffer<S> dp(B);
      for (Index b = 0; b < B; ++b) {
        const S p = pi->data[b];
        if (p < lo || p > hi) {
          dp[b] = 0;
        } else {
          dp[b] = (tg[b] ? -S(1) / p : S(1) / (S(1) - p)) * oi->grad[0] / static_cast<S>(B);
        }
      }
      pi->accumulate_grad(dp);
    });
  }
  return out;
}

template <typename S>
Tensor<S> loss(LossKind kind, const Tensor<S>& prediction, std::span<const int> targets,
               const LossOptions& options) {
  if (kind == LossKind::cross_entropy) return cross_entropy(prediction, targets, options);
  return bce(prediction, targets);
}

#define PASFUSE_INSTANTIATE_OPS(S)                                                            \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                 \
  template Tensor<S> scale(const Tensor<S>&, S);                                              \
  template Tensor<S> add_trailing(const Tensor<S>&, const Tensor<S>&);                        \
  template Tensor<S> sum(const Tensor<S>&);                                                   \
  template Tensor<S> mean(const Tensor<S>&);                                                  \
  template Tensor<S> mean_axis(const Tensor<S>&, int);                                        \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                        \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<int>&);                      \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, int);                              \
  template std::vector<Tensor<S>> split(const Tensor<S>&, int, const std::vector<Index>&);    \
  template Tensor<S> slice(const Tensor<S>&, int, Index, Index);                              \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&, bool, bool);                  \
  template Tensor<S> relu(const Tensor<S>&);                                                  \
  template Tensor<S> gelu(const Tensor<S>&);                                                  \
  template Tensor<S> sigmoid(const Tensor<S>&);                                               \
  template Tensor<S> softmax(const Tensor<S>&);                                               \
  template Tensor<S> activation(ActivationKind, const Tensor<S>&);                            \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);            \
  template Tensor<S> conv(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int,     \
                          int);                                                               \
  template Tensor<S> maxpool(const Tensor<S>&, int, int, int, int);                           \
  template Tensor<S> avgpool(const Tensor<S>&, int, int, int);                                \
  template Tensor<S> avgpool(const Tensor<S>&, const std::array<int, 3>&,                     \
                             const std::array<int, 3>&, int);                                 \
  template Tensor<S> global_avgpool(const Tensor<S>&);                                        \
  template Tensor<S> batchnorm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,          \
                               BatchNormStats<S>&, Mode);                                     \
  template Tensor<S> layernorm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);         \
  template Tensor<S> mhsa(const Tensor<S>&, int, const AttentionParams<S>&);                  \
  template Tensor<S> dropout(const Tensor<S>&, double, Mode, Rng&);                           \
  template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>, const LossOptions&); \
  template Tensor<S> bce(const Tensor<S>&, std::span<const int>);                             \
  template Tensor<S> loss(LossKind, const Tensor<S>&, std::span<const int>, const LossOptions&);

PASFUSE_INSTANTIATE_OPS(float)
PASFUSE_INSTANTIATE_OPS(double)

#undef PASFUSE_INSTANTIATE_OPS

}  // namespace pasfuse
