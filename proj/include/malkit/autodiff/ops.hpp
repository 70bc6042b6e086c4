#pragma once

// Define-by-run reverse-mode differentiation. Every op below computes its
// result eagerly; when any input lives on a Tape, the op appends a node
// holding the input values it needs for the backward pass.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "malkit/autodiff/tensor.hpp"
#include "malkit/dsp/stft_kernels.hpp"
#include "malkit/error.hpp"

namespace malkit::ad {

inline constexpr double kLogFloor = 1e-8;

enum class OpKind {
  leaf,
  add,
  sub,
  mul,
  matmul,
  conv1d,
  sigmoid,
  tanh,
  relu,
  abs,
  mean,
  sum,
  l1_distance,
  log,
  scale,
  offset,
  transpose,
  frame_shift,
  stft,
  istft,
  complex_abs,
  complex_mask,
};

inline std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::conv1d: return "conv1d";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::tanh: return "tanh";
    case OpKind::relu: return "relu";
    case OpKind::abs: return "abs";
    case OpKind::mean: return "mean";
    case OpKind::sum: return "sum";
    case OpKind::l1_distance: return "l1_distance";
    case OpKind::log: return "log";
    case OpKind::scale: return "scale";
    case OpKind::offset: return "offset";
    case OpKind::transpose: return "transpose";
    case OpKind::frame_shift: return "frame_shift";
    case OpKind::stft: return "stft";
    case OpKind::istft: return "istft";
    case OpKind::complex_abs: return "complex_abs";
    case OpKind::complex_mask: return "complex_mask";
  }
  return "unknown";
}

struct OpAttrs {
  double scalar = 0.0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t shift = 0;
  dsp::StftConfig stft{};
  std::shared_ptr<const std::vector<double>> window;
};

struct Node {
  OpKind kind = OpKind::leaf;
  Shape shape;
  std::vector<Tensor> inputs;                  // detached values
  std::vector<std::optional<NodeId>> parents;  // parallel to inputs
  Tensor output;                               // detached
  OpAttrs attrs;
};

class GradientMap {
 public:
  void set(NodeId id, Tensor g) { grads_.insert_or_assign(id, std::move(g)); }

  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  bool contains(const Tensor& t) const {
    return t.requires_grad() && contains(t.node());
  }

  /// Gradient with respect to t, or zeros when t received none.
  Tensor of(const Tensor& t) const {
    if (t.requires_grad()) {
      auto it = grads_.find(t.node());
      if (it != grads_.end()) return it->second;
    }
    return Tensor::zeros(t.shape());
  }

  const Tensor& at(NodeId id) const { return grads_.at(id); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<NodeId, Tensor> grads_;
};

/// Records operations for one forward pass. Confined to a single thread;
/// tensors referencing it must not outlive it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Registers a differentiable leaf holding a copy of value's data.
  Tensor variable(const Tensor& value) {
    Node node;
    node.kind = OpKind::leaf;
    node.shape = value.shape();
    node.output = value.detach();
    nodes_.push_back(std::move(node));
    return attach(value.detach(), nodes_.size() - 1);
  }

  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }

  /// Appends a node when any input is on this tape; returns output attached
  /// to the new node, or output unchanged when nothing requires grad.
  Tensor record(OpKind kind, const std::vector<Tensor>& inputs, Tensor output,
                OpAttrs attrs = {}) {
    Node node;
    node.kind = kind;
    node.shape = output.shape();
    node.attrs = std::move(attrs);
    node.inputs.reserve(inputs.size());
    node.parents.reserve(inputs.size());
    for (const auto& in : inputs) {
      node.inputs.push_back(in.detach());
      if (in.requires_grad()) {
        node.parents.emplace_back(in.node());
      } else {
        node.parents.emplace_back(std::nullopt);
      }
    }
    node.output = output.detach();
    nodes_.push_back(std::move(node));
    return attach(std::move(output), nodes_.size() - 1);
  }

  GradientMap backward(const Tensor& root) const;

  /// Hash of the branch taken at every non-smooth point on the tape
  /// (abs/relu/l1 signs, active log floors, zero complex moduli). Two passes
  /// with equal signatures lie on the same smooth piece of the graph.
  std::uint64_t kink_signature() const;

 private:
  Tensor attach(Tensor t, NodeId id) {
    t.tape_ = this;
    t.node_ = id;
    return t;
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline Tape* common_tape(std::string_view op, const std::vector<Tensor>& inputs) {
  Tape* tape = nullptr;
  for (const auto& in : inputs) {
    if (!in.requires_grad()) continue;
    if (tape == nullptr) {
      tape = in.tape();
    } else if (tape != in.tape()) {
      fail(ErrorKind::precondition,
           std::string(op) + ": inputs recorded on different tapes");
    }
  }
  return tape;
}

inline Tensor finish(OpKind kind, const std::vector<Tensor>& inputs, Tensor out,
                     OpAttrs attrs = {}) {
  Tape* tape = common_tape(to_string(kind), inputs);
  if (tape == nullptr) return out;
  return tape->record(kind, inputs, std::move(out), std::move(attrs));
}

inline void check_same_shape(OpKind kind, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::shape, std::string(to_string(kind)) + ": shape mismatch " +
                               shape_str(a.shape()) + " vs " +
                               shape_str(b.shape()));
  }
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

template <typename F>
Tensor map_unary(OpKind kind, const Tensor& x, F f, OpAttrs attrs = {}) {
  std::vector<double> out(x.size());
  const auto v = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(v[i]);
  return finish(kind, {x}, Tensor(x.shape(), std::move(out)), std::move(attrs));
}

template <typename F>
Tensor map_binary(OpKind kind, const Tensor& a, const Tensor& b, F f) {
  check_same_shape(kind, a, b);
  std::vector<double> out(a.size());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  return finish(kind, {a, b}, Tensor(a.shape(), std::move(out)));
}

// out[o, t] = bias[o] + sum_{i,k} w[o, i, k] * x[i, t*stride + k - pad]
inline std::vector<double> conv1d_forward(const Tensor& x, const Tensor& w,
                                          const Tensor* bias, std::size_t stride,
                                          std::size_t pad, std::size_t t_out) {
  const std::size_t cin = x.dim(0), t_in = x.dim(1);
  const std::size_t cout = w.dim(0), kw = w.dim(2);
  std::vector<double> out(cout * t_out, 0.0);
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  for (std::size_t o = 0; o < cout; ++o) {
    double* orow = out.data() + o * t_out;
    if (bias) std::fill(orow, orow + t_out, (*bias)[o]);
    for (std::size_t i = 0; i < cin; ++i) {
      const double* xrow = xv + i * t_in;
      for (std::size_t k = 0; k < kw; ++k) {
        const double wk = wv[(o * cin + i) * kw + k];
        // valid t: 0 <= t*stride + k - pad < t_in
        std::size_t t0 = 0;
        while (t0 < t_out && t0 * stride + k < pad) ++t0;
        std::size_t t1 = t_out;
        while (t1 > t0 && (t1 - 1) * stride + k - pad >= t_in) --t1;
        if (stride == 1) {
          for (std::size_t t = t0; t < t1; ++t) orow[t] += wk * xrow[t + k - pad];
        } else {
          for (std::size_t t = t0; t < t1; ++t) {
            orow[t] += wk * xrow[t * stride + k - pad];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Forward ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::map_binary(OpKind::add, a, b, [](double x, double y) { return x + y; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::map_binary(OpKind::sub, a, b, [](double x, double y) { return x - y; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::map_binary(OpKind::mul, a, b, [](double x, double y) { return x * y; });
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail(ErrorKind::shape, "matmul: shape mismatch " + shape_str(a.shape()) +
                               " vs " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
    }
  }
  return detail::finish(OpKind::matmul, {a, b}, Tensor({m, n}, std::move(out)));
}

/// Correlation-style 1-D convolution over time: x is [in_ch, time], kernel is
/// [out_ch, in_ch, width]. Zero padding of `padding` samples on both sides.
inline Tensor conv1d(const Tensor& x, const Tensor& kernel,
                     const std::optional<Tensor>& bias, std::size_t stride,
                     std::size_t padding) {
  const bool ok = x.rank() == 2 && kernel.rank() == 3 &&
                  kernel.dim(1) == x.dim(0) &&
                  (!bias || (bias->rank() == 1 && bias->dim(0) == kernel.dim(0)));
  if (!ok) {
    fail(ErrorKind::shape, "conv1d: shape mismatch " + shape_str(x.shape()) +
                               " vs " + shape_str(kernel.shape()) +
                               (bias ? " bias " + shape_str(bias->shape()) : ""));
  }
  require(stride >= 1, ErrorKind::precondition, "conv1d: stride must be >= 1");
  const std::size_t padded = x.dim(1) + 2 * padding;
  require(padded >= kernel.dim(2), ErrorKind::shape,
          "conv1d: kernel " + shape_str(kernel.shape()) +
              " wider than padded input " + shape_str(x.shape()));
  const std::size_t t_out = (padded - kernel.dim(2)) / stride + 1;
  auto out = detail::conv1d_forward(x, kernel, bias ? &*bias : nullptr, stride,
                                    padding, t_out);
  OpAttrs attrs;
  attrs.stride = stride;
  attrs.padding = padding;
  std::vector<Tensor> inputs{x, kernel};
  if (bias) inputs.push_back(*bias);
  return detail::finish(OpKind::conv1d, inputs,
                        Tensor({kernel.dim(0), t_out}, std::move(out)),
                        std::move(attrs));
}

/// "same" padding for odd kernel widths at stride 1.
inline Tensor conv1d_same(const Tensor& x, const Tensor& kernel,
                          const std::optional<Tensor>& bias) {
  return conv1d(x, kernel, bias, 1, kernel.dim(2) / 2);
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::map_unary(OpKind::sigmoid, x, [](double v) {
    return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  });
}

inline Tensor tanh(const Tensor& x) {
  return detail::map_unary(OpKind::tanh, x, [](double v) { return std::tanh(v); });
}

inline Tensor relu(const Tensor& x) {
  return detail::map_unary(OpKind::relu, x, [](double v) { return v > 0.0 ? v : 0.0; });
}

inline Tensor abs(const Tensor& x) {
  return detail::map_unary(OpKind::abs, x, [](double v) { return std::fabs(v); });
}

/// Natural log of max(x, 1e-8).
inline Tensor log(const Tensor& x) {
  return detail::map_unary(OpKind::log, x,
                           [](double v) { return std::log(std::max(v, kLogFloor)); });
}

inline Tensor scale(const Tensor& x, double c) {
  OpAttrs attrs;
  attrs.scalar = c;
  return detail::map_unary(OpKind::scale, x, [c](double v) { return c * v; }, attrs);
}

inline Tensor offset(const Tensor& x, double c) {
  OpAttrs attrs;
  attrs.scalar = c;
  return detail::map_unary(OpKind::offset, x, [c](double v) { return v + c; }, attrs);
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::finish(OpKind::sum, {x}, Tensor::scalar(s));
}

inline Tensor mean(const Tensor& x) {
  require(x.size() > 0, ErrorKind::shape, "mean: empty tensor");
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::finish(OpKind::mean, {x},
                        Tensor::scalar(s / static_cast<double>(x.size())));
}

/// sum |a - b|
inline Tensor l1_distance(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(OpKind::l1_distance, a, b);
  double s = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) s += std::fabs(av[i] - bv[i]);
  return detail::finish(OpKind::l1_distance, {a, b}, Tensor::scalar(s));
}

/// mean |a - b|
inline Tensor mean_l1(const Tensor& a, const Tensor& b) {
  require(a.size() > 0, ErrorKind::shape, "mean_l1: empty tensors");
  return scale(l1_distance(a, b), 1.0 / static_cast<double>(a.size()));
}

inline Tensor transpose(const Tensor& x) {
  require(x.rank() == 2, ErrorKind::shape,
          "transpose: expected rank 2, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  const auto v = x.values();
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = v[i * c + j];
  }
  return detail::finish(OpKind::transpose, {x}, Tensor({c, r}, std::move(out)));
}

/// y[c, t] = x[c, min(t + shift, T - 1)] for x of shape [channels, time].
inline Tensor frame_shift(const Tensor& x, std::size_t shift) {
  require(x.rank() == 2, ErrorKind::shape,
          "frame_shift: expected rank 2, got " + shape_str(x.shape()));
  if (shift == 0) return x;
  const std::size_t ch = x.dim(0), t_len = x.dim(1);
  std::vector<double> out(ch * t_len);
  const auto v = x.values();
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t t = 0; t < t_len; ++t) {
      out[c * t_len + t] = v[c * t_len + std::min(t + shift, t_len - 1)];
    }
  }
  OpAttrs attrs;
  attrs.shift = shift;
  return detail::finish(OpKind::frame_shift, {x}, Tensor(x.shape(), std::move(out)),
                        std::move(attrs));
}

/// Windowed STFT of a 1-D signal: [length] -> [frames, bins, 2].
inline Tensor stft(const Tensor& x, const dsp::StftConfig& cfg,
                   std::shared_ptr<const std::vector<double>> window) {
  cfg.validate();
  require(x.rank() == 1, ErrorKind::shape,
          "stft: expected a 1-D signal, got " + shape_str(x.shape()));
  require(window && window->size() == cfg.fft_size, ErrorKind::shape,
          "stft: window length does not match fft_size");
  const std::size_t frames = dsp::frame_count(x.size(), cfg);
  auto out = dsp::stft_forward(x.values(), cfg, *window);
  OpAttrs attrs;
  attrs.stft = cfg;
  attrs.window = std::move(window);
  return detail::finish(OpKind::stft, {x},
                        Tensor({frames, cfg.bins(), 2}, std::move(out)),
                        std::move(attrs));
}

/// Weighted overlap-add inverse: [frames, bins, 2] -> [length].
inline Tensor istft(const Tensor& spec, const dsp::StftConfig& cfg,
                    std::shared_ptr<const std::vector<double>> window,
                    std::size_t length) {
  require(spec.rank() == 3 && spec.dim(1) == cfg.bins() && spec.dim(2) == 2,
          ErrorKind::shape,
          "istft: expected [frames," + std::to_string(cfg.bins()) + ",2], got " +
              shape_str(spec.shape()));
  require(window && window->size() == cfg.fft_size, ErrorKind::shape,
          "istft: window length does not match fft_size");
  require(length > 0, ErrorKind::precondition, "istft: zero output length");
  auto out = dsp::istft_forward(spec.values(), spec.dim(0), length, cfg, *window);
  OpAttrs attrs;
  attrs.stft = cfg;
  attrs.window = std::move(window);
  return detail::finish(OpKind::istft, {spec}, Tensor({length}, std::move(out)),
                        std::move(attrs));
}

/// Modulus of complex pairs: [..., 2] -> [...].
inline Tensor complex_abs(const Tensor& z) {
  require(z.rank() >= 2 && z.shape().back() == 2, ErrorKind::shape,
          "complex_abs: expected trailing dimension 2, got " + shape_str(z.shape()));
  Shape shape(z.shape().begin(), z.shape().end() - 1);
  std::vector<double> out(z.size() / 2);
  const auto v = z.values();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::hypot(v[2 * i], v[2 * i + 1]);
  }
  return detail::finish(OpKind::complex_abs, {z}, Tensor(std::move(shape), std::move(out)));
}

/// Scales each complex entry of z [..., 2] by the real gain m [...].
inline Tensor complex_mask(const Tensor& z, const Tensor& m) {
  Shape expect(z.shape().begin(), z.shape().end() - (z.rank() > 0 ? 1 : 0));
  if (z.rank() < 2 || z.shape().back() != 2 || m.shape() != expect) {
    fail(ErrorKind::shape, "complex_mask: shape mismatch " + shape_str(z.shape()) +
                               " vs " + shape_str(m.shape()));
  }
  std::vector<double> out(z.size());
  const auto zv = z.values();
  const auto mv = m.values();
  for (std::size_t i = 0; i < mv.size(); ++i) {
    out[2 * i] = zv[2 * i] * mv[i];
    out[2 * i + 1] = zv[2 * i + 1] * mv[i];
  }
  return detail::finish(OpKind::complex_mask, {z, m}, Tensor(z.shape(), std::move(out)));
}

// ---------------------------------------------------------------------------
// Backward

namespace detail {

using Buffer = std::vector<double>;

inline void accumulate(Buffer& dst, const Buffer& src) {
  if (dst.empty()) {
    dst = src;
    return;
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline void conv1d_backward(const Node& node, const Buffer& g,
                            std::vector<std::optional<Buffer>>& in_grads) {
  const Tensor& x = node.inputs[0];
  const Tensor& w = node.inputs[1];
  const std::size_t cin = x.dim(0), t_in = x.dim(1);
  const std::size_t cout = w.dim(0), kw = w.dim(2);
  const std::size_t t_out = node.shape[1];
  const std::size_t stride = node.attrs.stride, pad = node.attrs.padding;
  const double* xv = x.values().data();
  const double* wv = w.values().data();
  const bool want_x = node.parents[0].has_value();
  const bool want_w = node.parents[1].has_value();
  Buffer gx(want_x ? cin * t_in : 0, 0.0);
  Buffer gw(want_w ? w.size() : 0, 0.0);
  for (std::size_t o = 0; o < cout; ++o) {
    const double* grow = g.data() + o * t_out;
    for (std::size_t i = 0; i < cin; ++i) {
      const double* xrow = xv + i * t_in;
      for (std::size_t k = 0; k < kw; ++k) {
        std::size_t t0 = 0;
        while (t0 < t_out && t0 * stride + k < pad) ++t0;
        std::size_t t1 = t_out;
        while (t1 > t0 && (t1 - 1) * stride + k - pad >= t_in) --t1;
        const std::size_t widx = (o * cin + i) * kw + k;
        if (want_w) {
          double acc = 0.0;
          for (std::size_t t = t0; t < t1; ++t) acc += grow[t] * xrow[t * stride + k - pad];
          gw[widx] += acc;
        }
        if (want_x) {
          const double wk = wv[widx];
          double* gxrow = gx.data() + i * t_in;
          for (std::size_t t = t0; t < t1; ++t) gxrow[t * stride + k - pad] += wk * grow[t];
        }
      }
    }
  }
  if (want_x) in_grads[0] = std::move(gx);
  if (want_w) in_grads[1] = std::move(gw);
  if (node.inputs.size() > 2 && node.parents[2]) {
    Buffer gb(cout, 0.0);
    for (std::size_t o = 0; o < cout; ++o) {
      double acc = 0.0;
      for (std::size_t t = 0; t < t_out; ++t) acc += g[o * t_out + t];
      gb[o] = acc;
    }
    in_grads[2] = std::move(gb);
  }
}

// Gradients with respect to each input of node, given the output gradient g.
inline std::vector<std::optional<Buffer>> vjp(const Node& node, const Buffer& g) {
  std::vector<std::optional<Buffer>> in(node.inputs.size());
  auto want = [&](std::size_t i) { return node.parents[i].has_value(); };
  auto elementwise = [&](std::size_t i, auto f) {
    if (!want(i)) return;
    Buffer out(g.size());
    for (std::size_t j = 0; j < g.size(); ++j) out[j] = f(j) * g[j];
    in[i] = std::move(out);
  };
  const auto iv = [&](std::size_t i) { return node.inputs[i].values(); };
  const auto yv = node.output.values();

  switch (node.kind) {
    case OpKind::leaf:
      break;
    case OpKind::add:
      if (want(0)) in[0] = g;
      if (want(1)) in[1] = g;
      break;
    case OpKind::sub:
      if (want(0)) in[0] = g;
      elementwise(1, [](std::size_t) { return -1.0; });
      break;
    case OpKind::mul: {
      const auto a = iv(0), b = iv(1);
      elementwise(0, [&](std::size_t j) { return b[j]; });
      elementwise(1, [&](std::size_t j) { return a[j]; });
      break;
    }
    case OpKind::matmul: {
      const auto a = iv(0), b = iv(1);
      const std::size_t m = node.inputs[0].dim(0), k = node.inputs[0].dim(1),
                        n = node.inputs[1].dim(1);
      if (want(0)) {
        Buffer ga(m * k, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * b[p * n + j];
            ga[i * k + p] = acc;
          }
        in[0] = std::move(ga);
      }
      if (want(1)) {
        Buffer gb(k * n, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
          }
        in[1] = std::move(gb);
      }
      break;
    }
    case OpKind::conv1d:
      conv1d_backward(node, g, in);
      break;
    case OpKind::sigmoid:
      elementwise(0, [&](std::size_t j) { return yv[j] * (1.0 - yv[j]); });
      break;
    case OpKind::tanh:
      elementwise(0, [&](std::size_t j) { return 1.0 - yv[j] * yv[j]; });
      break;
    case OpKind::relu: {
      const auto x = iv(0);
      elementwise(0, [&](std::size_t j) { return x[j] > 0.0 ? 1.0 : 0.0; });
      break;
    }
    case OpKind::abs: {
      const auto x = iv(0);
      elementwise(0, [&](std::size_t j) { return sign(x[j]); });
      break;
    }
    case OpKind::log: {
      const auto x = iv(0);
      elementwise(0, [&](std::size_t j) { return x[j] > kLogFloor ? 1.0 / x[j] : 0.0; });
      break;
    }
    case OpKind::scale:
      elementwise(0, [&](std::size_t) { return node.attrs.scalar; });
      break;
    case OpKind::offset:
      if (want(0)) in[0] = g;
      break;
    case OpKind::sum:
      if (want(0)) in[0] = Buffer(node.inputs[0].size(), g[0]);
      break;
    case OpKind::mean:
      if (want(0)) {
        const double n = static_cast<double>(node.inputs[0].size());
        in[0] = Buffer(node.inputs[0].size(), g[0] / n);
      }
      break;
    case OpKind::l1_distance: {
      const auto a = iv(0), b = iv(1);
      Buffer ga(a.size());
      for (std::size_t j = 0; j < a.size(); ++j) ga[j] = g[0] * sign(a[j] - b[j]);
      if (want(1)) {
        Buffer gb(ga.size());
        for (std::size_t j = 0; j < ga.size(); ++j) gb[j] = -ga[j];
        in[1] = std::move(gb);
      }
      if (want(0)) in[0] = std::move(ga);
      break;
    }
    case OpKind::transpose:
      if (want(0)) {
        const std::size_t r = node.inputs[0].dim(0), c = node.inputs[0].dim(1);
        Buffer out(r * c);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) out[i * c + j] = g[j * r + i];
        in[0] = std::move(out);
      }
      break;
    case OpKind::frame_shift:
      if (want(0)) {
        const std::size_t ch = node.inputs[0].dim(0), t_len = node.inputs[0].dim(1);
        Buffer out(ch * t_len, 0.0);
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t t = 0; t < t_len; ++t)
            out[c * t_len + std::min(t + node.attrs.shift, t_len - 1)] += g[c * t_len + t];
        in[0] = std::move(out);
      }
      break;
    case OpKind::stft:
      if (want(0)) {
        in[0] = dsp::stft_adjoint(g, node.inputs[0].size(), node.attrs.stft,
                                  *node.attrs.window);
      }
      break;
    case OpKind::istft:
      if (want(0)) {
        in[0] = dsp::istft_adjoint(g, node.inputs[0].dim(0), node.attrs.stft,
                                   *node.attrs.window);
      }
      break;
    case OpKind::complex_abs:
      if (want(0)) {
        const auto z = iv(0);
        Buffer out(z.size());
        for (std::size_t j = 0; j < g.size(); ++j) {
          const double r = yv[j];
          const double s = r > 0.0 ? g[j] / r : 0.0;
          out[2 * j] = s * z[2 * j];
          out[2 * j + 1] = s * z[2 * j + 1];
        }
        in[0] = std::move(out);
      }
      break;
    case OpKind::complex_mask: {
      const auto z = iv(0), m = iv(1);
      if (want(0)) {
        Buffer out(z.size());
        for (std::size_t j = 0; j < m.size(); ++j) {
          out[2 * j] = g[2 * j] * m[j];
          out[2 * j + 1] = g[2 * j + 1] * m[j];
        }
        in[0] = std::move(out);
      }
      if (want(1)) {
        Buffer out(m.size());
        for (std::size_t j = 0; j < m.size(); ++j) {
          out[j] = g[2 * j] * z[2 * j] + g[2 * j + 1] * z[2 * j + 1];
        }
        in[1] = std::move(out);
      }
      break;
    }
  }
  return in;
}

}  // namespace detail

inline GradientMap Tape::backward(const Tensor& root) const {
  require(root.size() == 1, ErrorKind::shape,
          "backward: root must be scalar, got " + shape_str(root.shape()));
  require(root.requires_grad() && root.tape() == this && root.node() < nodes_.size(),
          ErrorKind::precondition, "backward: root is not recorded on this tape");
  std::vector<detail::Buffer> grads(root.node() + 1);
  grads[root.node()] = {1.0};
  GradientMap result;
  for (std::size_t idx = root.node() + 1; idx-- > 0;) {
    if (grads[idx].empty()) continue;
    const Node& node = nodes_[idx];
    if (node.kind == OpKind::leaf || idx == root.node()) {
      result.set(idx, Tensor(node.shape, grads[idx]));
    }
    if (node.kind == OpKind::leaf) continue;
    auto in = detail::vjp(node, grads[idx]);
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (!in[i] || !node.parents[i]) continue;
      detail::accumulate(grads[*node.parents[i]], *in[i]);
    }
    if (idx != root.node()) detail::Buffer().swap(grads[idx]);
  }
  return result;
}

inline std::uint64_t Tape::kink_signature() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  for (const Node& node : nodes_) {
    switch (node.kind) {
      case OpKind::abs:
      case OpKind::relu:
        for (double v : node.inputs[0].values()) mix(v > 0.0 ? 1 : (v < 0.0 ? 2 : 3));
        break;
      case OpKind::l1_distance: {
        const auto a = node.inputs[0].values(), b = node.inputs[1].values();
        for (std::size_t i = 0; i < a.size(); ++i) {
          const double d = a[i] - b[i];
          mix(d > 0.0 ? 1 : (d < 0.0 ? 2 : 3));
        }
        break;
      }
      case OpKind::log:
        for (double v : node.inputs[0].values()) mix(v > kLogFloor ? 4 : 5);
        break;
      case OpKind::complex_abs:
        for (double v : node.output.values()) mix(v > 0.0 ? 6 : 7);
        break;
      default:
        break;
    }
  }
  return h;
}

}  // namespace malkit::ad
