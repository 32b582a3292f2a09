#include "advsim/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "advsim/error.hpp"

namespace advsim::ops {

namespace {

struct ConvGeometry {
  std::size_t in_h, in_w, in_c, k, out_c, stride, out_h, out_w;
};

ConvGeometry conv_geometry(const Shape& input, const Shape& kernel, std::size_t stride) {
  if (input.size() != 3) throw DimensionError("conv2d: input must be [H,W,C], got " + shape_string(input));
  if (kernel.size() != 4 || kernel[0] != kernel[1]) {
    throw DimensionError("conv2d: kernel must be [k,k,Cin,Cout], got " + shape_string(kernel));
  }
  if (kernel[2] != input[2]) {
    throw DimensionError("conv2d: kernel input channels " + std::to_string(kernel[2]) + " != input channels " +
                         std::to_string(input[2]));
  }
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t k = kernel[0];
  if (k > input[0] || k > input[1]) throw DimensionError("conv2d: kernel larger than input");
  return {input[0], input[1], input[2], k, kernel[3], stride, (input[0] - k) / stride + 1,
          (input[1] - k) / stride + 1};
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel.shape(), stride);
  Tensor out({g.out_h, g.out_w, g.out_c});
  const double* in = input.data().data();
  const double* ker = kernel.data().data();
  double* o = out.data().data();
  for (std::size_t oh = 0; oh < g.out_h; ++oh) {
    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
      double* orow = o + (oh * g.out_w + ow) * g.out_c;
      for (std::size_t kh = 0; kh < g.k; ++kh) {
        for (std::size_t kw = 0; kw < g.k; ++kw) {
          const double* irow = in + ((oh * g.stride + kh) * g.in_w + ow * g.stride + kw) * g.in_c;
          const double* krow = ker + (kh * g.k + kw) * g.in_c * g.out_c;
          for (std::size_t ci = 0; ci < g.in_c; ++ci) {
            const double v = irow[ci];
            const double* kc = krow + ci * g.out_c;
            for (std::size_t co = 0; co < g.out_c; ++co) orow[co] += v * kc[co];
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& kernel, std::size_t stride,
                             const Shape& input_shape) {
  const ConvGeometry g = conv_geometry(input_shape, kernel.shape(), stride);
  Tensor din(input_shape);
  const double* go = grad_out.data().data();
  const double* ker = kernel.data().data();
  double* d = din.data().data();
  for (std::size_t oh = 0; oh < g.out_h; ++oh) {
    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
      const double* grow = go + (oh * g.out_w + ow) * g.out_c;
      for (std::size_t kh = 0; kh < g.k; ++kh) {
        for (std::size_t kw = 0; kw < g.k; ++kw) {
          double* drow = d + ((oh * g.stride + kh) * g.in_w + ow * g.stride + kw) * g.in_c;
          const double* krow = ker + (kh * g.k + kw) * g.in_c * g.out_c;
          for (std::size_t ci = 0; ci < g.in_c; ++ci) {
            const double* kc = krow + ci * g.out_c;
            double acc = 0.0;
            for (std::size_t co = 0; co < g.out_c; ++co) acc += grow[co] * kc[co];
            drow[ci] += acc;
          }
        }
      }
    }
  }
  return din;
}

Tensor conv2d_backward_kernel(const Tensor& input, const Tensor& grad_out, std::size_t stride,
                              const Shape& kernel_shape) {
  const ConvGeometry g = conv_geometry(input.shape(), kernel_shape, stride);
  Tensor dk(kernel_shape);
  const double* in = input.data().data();
  const double* go = grad_out.data().data();
  double* d = dk.data().data();
  for (std::size_t oh = 0; oh < g.out_h; ++oh) {
    for (std::size_t ow = 0; ow < g.out_w; ++ow) {
      const double* grow = go + (oh * g.out_w + ow) * g.out_c;
      for (std::size_t kh = 0; kh < g.k; ++kh) {
        for (std::size_t kw = 0; kw < g.k; ++kw) {
          const double* irow = in + ((oh * g.stride + kh) * g.in_w + ow * g.stride + kw) * g.in_c;
          double* drow = d + (kh * g.k + kw) * g.in_c * g.out_c;
          for (std::size_t ci = 0; ci < g.in_c; ++ci) {
            const double v = irow[ci];
            double* dc = drow + ci * g.out_c;
            for (std::size_t co = 0; co < g.out_c; ++co) dc[co] += v * grow[co];
          }
        }
      }
    }
  }
  return dk;
}

Tensor add_bias(const Tensor& input, const Tensor& bias) {
  if (input.rank() == 0 || bias.rank() != 1 || bias.size() != input.shape().back()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match input " +
                         shape_string(input.shape()));
  }
  Tensor out = input;
  const std::size_t c = bias.size();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % c];
  return out;
}

Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (double& v : out.data()) v = std::max(0.0, v);
  return out;
}

Tensor scale(const Tensor& input, double factor) {
  Tensor out = input;
  for (double& v : out.data()) v *= factor;
  return out;
}

Tensor maxpool2(const Tensor& input, std::vector<std::size_t>* argmax) {
  if (input.rank() != 3) throw DimensionError("maxpool2: input must be [H,W,C]");
  const std::size_t h = input.dim(0), w = input.dim(1), c = input.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("maxpool2: extents must be even, got " + shape_string(input.shape()));
  }
  Tensor out({h / 2, w / 2, c});
  if (argmax) argmax->assign(out.size(), 0);
  for (std::size_t oh = 0; oh < h / 2; ++oh) {
    for (std::size_t ow = 0; ow < w / 2; ++ow) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = (2 * oh * w + 2 * ow) * c + ch;
        for (std::size_t dh = 0; dh < 2; ++dh) {
          for (std::size_t dw = 0; dw < 2; ++dw) {
            const std::size_t idx = ((2 * oh + dh) * w + 2 * ow + dw) * c + ch;
            if (input[idx] > input[best]) best = idx;
          }
        }
        const std::size_t o = (oh * (w / 2) + ow) * c + ch;
        out[o] = input[best];
        if (argmax) (*argmax)[o] = best;
      }
    }
  }
  return out;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2 || weights.dim(0) != input.size()) {
    throw DimensionError("dense: weights " + shape_string(weights.shape()) + " do not accept input of size " +
                         std::to_string(input.size()));
  }
  const std::size_t n = weights.dim(0), m = weights.dim(1);
  if (bias.rank() != 1 || bias.size() != m) throw DimensionError("dense: bias does not match output width");
  Tensor out = bias;
  const double* wv = weights.data().data();
  double* o = out.data().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = input[i];
    if (x == 0.0) continue;
    const double* row = wv + i * m;
    for (std::size_t j = 0; j < m; ++j) o[j] += x * row[j];
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.empty()) throw ContractError("softmax: empty input");
  Tensor out = logits;
  const double top = *std::max_element(out.data().begin(), out.data().end());
  double total = 0.0;
  for (double& v : out.data()) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : out.data()) v /= total;
  return out;
}

Tensor sigmoid(const Tensor& input) {
  constexpr double lo = std::numeric_limits<double>::min();
  const double hi = std::nextafter(1.0, 0.0);
  Tensor out = input;
  for (double& v : out.data()) {
    const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
    v = std::clamp(s, lo, hi);
  }
  return out;
}

namespace {
double clamped_log(double p) { return std::log(std::max(p, kLogFloor)); }

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}
}  // namespace

double ce_loss(const Tensor& probs, const Tensor& target) {
  require_same_shape(probs, target, "ce_loss");
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (target[i] < 0.0) throw DomainError("ce_loss: negative target entry");
    if (target[i] != 0.0) loss -= target[i] * clamped_log(probs[i]);
  }
  return loss;
}

Tensor ce_loss_grad(const Tensor& probs, const Tensor& target) {
  require_same_shape(probs, target, "ce_loss");
  Tensor g(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] > kLogFloor) g[i] = -target[i] / probs[i];
  }
  return g;
}

double bce_loss(const Tensor& probs, const Tensor& target) {
  require_same_shape(probs, target, "bce_loss");
  double loss = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i], t = target[i];
    loss -= t * clamped_log(p) + (1.0 - t) * clamped_log(1.0 - p);
  }
  return loss;
}

Tensor bce_loss_grad(const Tensor& probs, const Tensor& target) {
  require_same_shape(probs, target, "bce_loss");
  Tensor g(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = probs[i], t = target[i];
    double d = 0.0;
    if (p > kLogFloor) d -= t / p;
    if (1.0 - p > kLogFloor) d += (1.0 - t) / (1.0 - p);
    g[i] = d;
  }
  return g;
}

}  // namespace advsim::ops
