#include "affsam/ops.hpp"

#include <cmath>
#include <numbers>

#include "affsam/errors.hpp"
#include "affsam/resample.hpp"

namespace affsam::ops {

namespace {

using detail::record_op;
using detail::should_record;

// Handles alias storage, so accumulating through a by-value copy is intended.
void accumulate(Tensor t, std::span<const double> delta) {
  if (t.requires_grad()) t.accumulate_grad(delta);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(x.shape()));
  }
}

Tensor elementwise_binary(const char* op, const Tensor& a, const Tensor& b, int kind) {
  require_same_shape(op, a, b);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = kind == 0 ? x[i] + y[i] : kind == 1 ? x[i] - y[i] : x[i] * y[i];
  }
  Tensor result = Tensor::from(a.shape(), std::move(out));
  if (should_record({&a, &b})) {
    record_op(op, result, [a, b, kind](std::span<const double> g) {
      if (kind == 0) {
        accumulate(a, g);
        accumulate(b, g);
      } else if (kind == 1) {
        accumulate(a, g);
        if (b.requires_grad()) {
          std::vector<double> neg(g.begin(), g.end());
          for (auto& v : neg) v = -v;
          accumulate(b, neg);
        }
      } else {
        const auto av = a.data();
        const auto bv = b.data();
        std::vector<double> d(g.size());
        if (a.requires_grad()) {
          for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * bv[i];
          accumulate(a, d);
        }
        if (b.requires_grad()) {
          for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * av[i];
          accumulate(b, d);
        }
      }
    });
  }
  return result;
}

// C[m,n] (+)= A[m,k] B[k,n], fixed i-p-j order.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
          std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// dA[m,k] += dC[m,n] B^T
void gemm_grad_a(const double* dc, const double* b, double* da, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += dc[i * n + j] * b[p * n + j];
      da[i * k + p] += s;
    }
  }
}

// dB[k,n] += A^T dC
void gemm_grad_b(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      double* drow = db + p * n;
      for (std::size_t j = 0; j < n; ++j) drow[j] += av * dc[i * n + j];
    }
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return elementwise_binary("add", a, b, 0); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise_binary("sub", a, b, 1); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise_binary("mul", a, b, 2); }

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  Tensor result = Tensor::from(x.shape(), std::move(out));
  if (should_record({&x})) {
    record_op("scale", result, [x, factor](std::span<const double> g) {
      std::vector<double> d(g.begin(), g.end());
      for (auto& v : d) v *= factor;
      accumulate(x, d);
    });
  }
  return result;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match last axis of " +
                         shape_str(x.shape()));
  }
  const std::size_t n = bias.dim(0);
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto bv = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i % n];
  Tensor result = Tensor::from(x.shape(), std::move(out));
  if (should_record({&x, &bias})) {
    record_op("add_bias", result, [x, bias, n](std::span<const double> g) {
      accumulate(x, g);
      if (bias.requires_grad()) {
        std::vector<double> db(n, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) db[i % n] += g[i];
        accumulate(bias, db);
      }
    });
  }
  return result;
}

Tensor add_batch(const Tensor& x, const Tensor& y) {
  if (x.rank() != y.rank() + 1 || !std::equal(y.shape().begin(), y.shape().end(), x.shape().begin() + 1)) {
    throw DimensionError("add_batch: " + shape_str(y.shape()) + " is not a per-sample slice of " +
                         shape_str(x.shape()));
  }
  const std::size_t n = y.numel();
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto yv = y.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i % n];
  Tensor result = Tensor::from(x.shape(), std::move(out));
  if (should_record({&x, &y})) {
    record_op("add_batch", result, [x, y, n](std::span<const double> g) {
      accumulate(x, g);
      if (y.requires_grad()) {
        std::vector<double> dy(n, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) dy[i % n] += g[i];
        accumulate(y, dy);
      }
    });
  }
  return result;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_channel_bias", x, 4);
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  const std::size_t channels = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  std::vector<double> out(x.data().begin(), x.data().end());
  const auto bv = bias.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[(i / plane) % channels];
  Tensor result = Tensor::from(x.shape(), std::move(out));
  if (should_record({&x, &bias})) {
    record_op("add_channel_bias", result, [x, bias, channels, plane](std::span<const double> g) {
      accumulate(x, g);
      if (bias.requires_grad()) {
        std::vector<double> db(channels, 0.0);
        for (std::size_t i = 0; i < g.size(); ++i) db[(i / plane) % channels] += g[i];
        accumulate(bias, db);
      }
    });
  }
  return result;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool shapes_ok = (a.rank() == 2 || a.rank() == 3) && (b.rank() == 2 || b.rank() == 3) &&
                         !(b.rank() == 3 && a.rank() != 3) &&
                         a.shape()[a.rank() - 1] == b.shape()[b.rank() - 2] &&
                         !(b.rank() == 3 && a.dim(0) != b.dim(0));
  if (!shapes_ok) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape()[a.rank() - 1];
  const std::size_t n = b.shape()[b.rank() - 1];
  const bool b_batched = b.rank() == 3;
  std::vector<double> out(batch * m * n, 0.0);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (std::size_t s = 0; s < batch; ++s) {
    gemm(ap + s * m * k, bp + (b_batched ? s * k * n : 0), out.data() + s * m * n, m, k, n);
  }
  Shape shape = a.rank() == 3 ? Shape{batch, m, n} : Shape{m, n};
  Tensor result = Tensor::from(std::move(shape), std::move(out));
  if (should_record({&a, &b})) {
    record_op("matmul", result, [a, b, batch, m, k, n, b_batched](std::span<const double> g) {
      const double* ap = a.data().data();
      const double* bp = b.data().data();
      if (a.requires_grad()) {
        std::vector<double> da(a.numel(), 0.0);
        for (std::size_t s = 0; s < batch; ++s) {
          gemm_grad_a(g.data() + s * m * n, bp + (b_batched ? s * k * n : 0), da.data() + s * m * k, m, k, n);
        }
        accumulate(a, da);
      }
      if (b.requires_grad()) {
        std::vector<double> db(b.numel(), 0.0);
        for (std::size_t s = 0; s < batch; ++s) {
          gemm_grad_b(ap + s * m * k, g.data() + s * m * n, db.data() + (b_batched ? s * k * n : 0), m, k, n);
        }
        accumulate(b, db);
      }
    });
  }
  return result;
}

Tensor transpose_last(const Tensor& x) {
  if (x.rank() < 2) throw DimensionError("transpose_last: rank < 2 in " + shape_str(x.shape()));
  Shape shape = x.shape();
  const std::size_t r = shape[shape.size() - 2];
  const std::size_t c = shape[shape.size() - 1];
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  const std::size_t mats = x.numel() / (r * c);
  const auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t s = 0; s < mats; ++s) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[s * r * c + j * r + i] = src[s * r * c + i * c + j];
    }
  }
  Tensor result = Tensor::from(std::move(shape), std::move(out));
  if (should_record({&x})) {
    record_op("transpose_last", result, [x, mats, r, c](std::span<const double> g) {
      std::vector<double> d(g.size());
      for (std::size_t s = 0; s < mats; ++s) {
        for (std::size_t i = 0; i < r; ++i) {
          for (std::size_t j = 0; j < c; ++j) d[s * r * c + i * c + j] = g[s * r * c + j * r + i];
        }
      }
      accumulate(x, d);
    });
  }
  return result;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_str(x.shape()));
  }
  const auto sp = split_at(x.shape(), axis);
  const auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.len * sp.inner + i;
      double mx = src[base];
      for (std::size_t l = 1; l < sp.len; ++l) mx = std::max(mx, src[base + l * sp.inner]);
      double total = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) {
        const double e = std::exp(src[base + l * sp.inner] - mx);
        out[base + l * sp.inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= total;
    }
  }
  Tensor result = Tensor::from(x.shape(), std::move(out));
  if (should_record({&x})) {
    record_op("softmax", result, [x, result_data = result, sp](std::span<const double> g) {
      const auto y = result_data.data();
      std::vector<double> d(g.size());
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const std::size_t base = o * sp.len * sp.inner + i;
          double dot = 0.0;
          for (std::size_t l = 0; l < sp.len; ++l) dot += g[base + l * sp.inner] * y[base + l * sp.inner];
          for (std::size_t l = 0; l < sp.len; ++l) {
            const std::size_t idx = base + l * sp.inner;
            d[idx] = y[idx] * (g[idx] - dot);
          }
        }
      }
      accumulate(x, d);
    });
  }
  return result;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() == 0 || gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != x.shape().back() ||
      bias.dim(0) != x.shape().back()) {
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " +
                         shape_str(bias.shape()) + " do not match feature axis of " + shape_str(x.shape()));
  }
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  const auto src = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  std::vector<double> out(src.size());
  std::vector<double> xhat(src.size());
  std::vector<double> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = src.data() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(d);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < d; ++i) {
      xhat[r * d + i] = (row[i] - mu) * rstd[r];
      out[r * d + i] = xhat[r * d + i] * gv[i] + bv[i];
    }
  }
  Tensor result = Tensor::from(x.shape(), std::move(out));
  if (should_record({&x, &gain, &bias})) {
    record_op("layer_norm", result,
              [x, gain, bias, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](std::span<const double> g) {
                const auto gv = gain.data();
                if (x.requires_grad()) {
                  std::vector<double> dx(g.size());
                  for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dxh = 0.0;
                    double mean_dxh_xh = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                      const double dxh = g[r * d + i] * gv[i];
                      mean_dxh += dxh;
                      mean_dxh_xh += dxh * xhat[r * d + i];
                    }
                    mean_dxh /= static_cast<double>(d);
                    mean_dxh_xh /= static_cast<double>(d);
                    for (std::size_t i = 0; i < d; ++i) {
                      const double dxh = g[r * d + i] * gv[i];
                      dx[r * d + i] = rstd[r] * (dxh - mean_dxh - xhat[r * d + i] * mean_dxh_xh);
                    }
                  }
                  accumulate(x, dx);
                }
                if (gain.requires_grad() || bias.requires_grad()) {
                  std::vector<double> dg(d, 0.0);
                  std::vector<double> db(d, 0.0);
                  for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t i = 0; i < d; ++i) {
                      dg[i] += g[r * d + i] * xhat[r * d + i];
                      db[i] += g[r * d + i];
                    }
                  }
                  accumulate(gain, dg);
                  accumulate(bias, db);
                }
              });
  }
  return result;
}

Tensor gelu(const Tensor& x) {
  const auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = src[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  Tensor result = Tensor::from(x.shape(), std::move(out));
  if (should_record({&x})) {
    record_op("gelu", result, [x](std::span<const double> g) {
      const auto src = x.data();
      std::vector<double> d(g.size());
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double v = src[i];
        const double t = std::tanh(kGeluC * (v + kGeluA * v * v * v));
        const double dt = (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * v * v);
        d[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
      }
      accumulate(x, d);
    });
  }
  return result;
}

Tensor sigmoid(const Tensor& x) {
  const auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    const double v = src[i];
    if (v >= 0) {
      out[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      out[i] = e / (1.0 + e);
    }
  }
  Tensor result = Tensor::from(x.shape(), std::move(out));
  if (should_record({&x})) {
    record_op("sigmoid", result, [x, y = result](std::span<const double> g) {
      const auto yv = y.data();
      std::vector<double> d(g.size());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * yv[i] * (1.0 - yv[i]);
      accumulate(x, d);
    });
  }
  return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor result = Tensor::from(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (should_record({&x})) {
    record_op("reshape", result, [x](std::span<const double> g) { accumulate(x, g); });
  }
  return result;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || start + length > x.dim(axis) || length == 0) {
    throw DimensionError("slice: [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                         std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const auto sp = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape[axis] = length;
  const auto src = x.data();
  std::vector<double> out(sp.outer * length * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src.data() + (o * sp.len + start) * sp.inner, length * sp.inner,
                out.data() + o * length * sp.inner);
  }
  Tensor result = Tensor::from(std::move(shape), std::move(out));
  if (should_record({&x})) {
    record_op("slice", result, [x, sp, start, length](std::span<const double> g) {
      std::vector<double> d(x.numel(), 0.0);
      for (std::size_t o = 0; o < sp.outer; ++o) {
        std::copy_n(g.data() + o * length * sp.inner, length * sp.inner,
                    d.data() + (o * sp.len + start) * sp.inner);
      }
      accumulate(x, d);
    });
  }
  return result;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Tensor& first = parts.front();
  if (axis >= first.rank()) throw DimensionError("concat: axis out of range for " + shape_str(first.shape()));
  Shape shape = first.shape();
  shape[axis] = 0;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    if (probe.size() != shape.size()) throw DimensionError("concat: rank mismatch " + shape_str(probe));
    shape[axis] += probe[axis];
    probe[axis] = first.dim(axis);
    Shape expect = first.shape();
    if (probe != expect) {
      throw DimensionError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(first.shape()));
    }
  }
  const auto sp = split_at(shape, axis);
  std::vector<double> out(shape_numel(shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.dim(axis);
    const auto src = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src.data() + o * len * sp.inner, len * sp.inner, out.data() + (o * sp.len + offset) * sp.inner);
    }
    offset += len;
  }
  Tensor result = Tensor::from(std::move(shape), std::move(out));
  if (should_record(parts)) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    record_op("concat", result, [inputs, offsets, sp, axis](std::span<const double> g) {
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const Tensor& p = inputs[k];
        if (!p.requires_grad()) continue;
        const std::size_t len = p.dim(axis);
        std::vector<double> d(p.numel());
        for (std::size_t o = 0; o < sp.outer; ++o) {
          std::copy_n(g.data() + (o * sp.len + offsets[k]) * sp.inner, len * sp.inner, d.data() + o * len * sp.inner);
        }
        accumulate(p, d);
      }
    });
  }
  return result;
}

Tensor repeat_batch(const Tensor& x, std::size_t batch) {
  if (batch == 0) throw DimensionError("repeat_batch: batch must be positive");
  Shape shape{batch};
  shape.insert(shape.end(), x.shape().begin(), x.shape().end());
  const auto src = x.data();
  std::vector<double> out;
  out.reserve(batch * src.size());
  for (std::size_t b = 0; b < batch; ++b) out.insert(out.end(), src.begin(), src.end());
  Tensor result = Tensor::from(std::move(shape), std::move(out));
  if (should_record({&x})) {
    record_op("repeat_batch", result, [x, batch](std::span<const double> g) {
      const std::size_t n = x.numel();
      std::vector<double> d(n, 0.0);
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < n; ++i) d[i] += g[b * n + i];
      }
      accumulate(x, d);
    });
  }
  return result;
}

Tensor split_heads(const Tensor& x, std::size_t heads) {
  require_rank("split_heads", x, 3);
  const std::size_t b = x.dim(0), n = x.dim(1), dm = x.dim(2);
  if (heads == 0 || dm % heads != 0) {
    throw DimensionError("split_heads: feature dim " + std::to_string(dm) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t dh = dm / heads;
  const auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t c = 0; c < dh; ++c)
          out[((s * heads + h) * n + t) * dh + c] = src[(s * n + t) * dm + h * dh + c];
  Tensor result = Tensor::from({b * heads, n, dh}, std::move(out));
  if (should_record({&x})) {
    record_op("split_heads", result, [x, b, n, dm, dh, heads](std::span<const double> g) {
      std::vector<double> d(g.size());
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t t = 0; t < n; ++t)
            for (std::size_t c = 0; c < dh; ++c)
              d[(s * n + t) * dm + h * dh + c] = g[((s * heads + h) * n + t) * dh + c];
      accumulate(x, d);
    });
  }
  return result;
}

Tensor merge_heads(const Tensor& x, std::size_t heads) {
  require_rank("merge_heads", x, 3);
  if (heads == 0 || x.dim(0) % heads != 0) {
    throw DimensionError("merge_heads: leading axis " + std::to_string(x.dim(0)) + " not divisible by " +
                         std::to_string(heads));
  }
  const std::size_t b = x.dim(0) / heads, n = x.dim(1), dh = x.dim(2), dm = dh * heads;
  const auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t c = 0; c < dh; ++c)
          out[(s * n + t) * dm + h * dh + c] = src[((s * heads + h) * n + t) * dh + c];
  Tensor result = Tensor::from({b, n, dm}, std::move(out));
  if (should_record({&x})) {
    record_op("merge_heads", result, [x, b, n, dm, dh, heads](std::span<const double> g) {
      std::vector<double> d(g.size());
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t t = 0; t < n; ++t)
            for (std::size_t c = 0; c < dh; ++c)
              d[((s * heads + h) * n + t) * dh + c] = g[(s * n + t) * dm + h * dh + c];
      accumulate(x, d);
    });
  }
  return result;
}

Tensor tokens_to_grid(const Tensor& x) {
  require_rank("tokens_to_grid", x, 3);
  const std::size_t b = x.dim(0), n = x.dim(1), c = x.dim(2);
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (side * side != n) {
    throw DimensionError("tokens_to_grid: token count " + std::to_string(n) + " is not a perfect square");
  }
  const auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t t = 0; t < n; ++t)
      for (std::size_t ch = 0; ch < c; ++ch) out[(s * c + ch) * n + t] = src[(s * n + t) * c + ch];
  Tensor result = Tensor::from({b, c, side, side}, std::move(out));
  if (should_record({&x})) {
    record_op("tokens_to_grid", result, [x, b, n, c](std::span<const double> g) {
      std::vector<double> d(g.size());
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t t = 0; t < n; ++t)
          for (std::size_t ch = 0; ch < c; ++ch) d[(s * n + t) * c + ch] = g[(s * c + ch) * n + t];
      accumulate(x, d);
    });
  }
  return result;
}

Tensor grid_to_tokens(const Tensor& x) {
  require_rank("grid_to_tokens", x, 4);
  const std::size_t b = x.dim(0), c = x.dim(1), n = x.dim(2) * x.dim(3);
  const auto src = x.data();
  std::vector<double> out(src.size());
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t t = 0; t < n; ++t) out[(s * n + t) * c + ch] = src[(s * c + ch) * n + t];
  Tensor result = Tensor::from({b, n, c}, std::move(out));
  if (should_record({&x})) {
    record_op("grid_to_tokens", result, [x, b, n, c](std::span<const double> g) {
      std::vector<double> d(g.size());
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t t = 0; t < n; ++t) d[(s * c + ch) * n + t] = g[(s * n + t) * c + ch];
      accumulate(x, d);
    });
  }
  return result;
}

Tensor transposed_conv2x2(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 3 && x.rank() != 4) {
    throw DimensionError("transposed_conv2x2: input must be [C,H,W] or [B,C,H,W], got " + shape_str(x.shape()));
  }
  if (kernel.rank() != 4 || kernel.dim(2) != 2 || kernel.dim(3) != 2) {
    throw DimensionError("transposed_conv2x2: kernel must be [C,C',2,2], got " + shape_str(kernel.shape()));
  }
  const bool batched = x.rank() == 4;
  const std::size_t b = batched ? x.dim(0) : 1;
  const std::size_t off = batched ? 1 : 0;
  const std::size_t cin = x.dim(off), h = x.dim(off + 1), w = x.dim(off + 2);
  if (kernel.dim(0) != cin) {
    throw DimensionError("transposed_conv2x2: input has " + std::to_string(cin) + " channels, kernel " +
                         shape_str(kernel.shape()) + " expects " + std::to_string(kernel.dim(0)));
  }
  const std::size_t cout = kernel.dim(1), oh = 2 * h, ow = 2 * w;
  const auto xv = x.data();
  const auto kv = kernel.data();
  std::vector<double> out(b * cout * oh * ow, 0.0);
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t ci = 0; ci < cin; ++ci)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx) {
          const double v = xv[((s * cin + ci) * h + y) * w + xx];
          for (std::size_t co = 0; co < cout; ++co)
            for (std::size_t ky = 0; ky < 2; ++ky)
              for (std::size_t kx = 0; kx < 2; ++kx)
                out[((s * cout + co) * oh + 2 * y + ky) * ow + 2 * xx + kx] +=
                    v * kv[((ci * cout + co) * 2 + ky) * 2 + kx];
        }
  Shape shape = batched ? Shape{b, cout, oh, ow} : Shape{cout, oh, ow};
  Tensor result = Tensor::from(std::move(shape), std::move(out));
  if (should_record({&x, &kernel})) {
    record_op("transposed_conv2x2", result, [x, kernel, b, cin, cout, h, w, oh, ow](std::span<const double> g) {
      const auto xv = x.data();
      const auto kv = kernel.data();
      std::vector<double> dx(x.requires_grad() ? x.numel() : 0, 0.0);
      std::vector<double> dk(kernel.requires_grad() ? kernel.numel() : 0, 0.0);
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t ci = 0; ci < cin; ++ci)
          for (std::size_t y = 0; y < h; ++y)
            for (std::size_t xx = 0; xx < w; ++xx) {
              const std::size_t xi = ((s * cin + ci) * h + y) * w + xx;
              double acc = 0.0;
              for (std::size_t co = 0; co < cout; ++co)
                for (std::size_t ky = 0; ky < 2; ++ky)
                  for (std::size_t kx = 0; kx < 2; ++kx) {
                    const double go = g[((s * cout + co) * oh + 2 * y + ky) * ow + 2 * xx + kx];
                    const std::size_t ki = ((ci * cout + co) * 2 + ky) * 2 + kx;
                    acc += go * kv[ki];
                    if (!dk.empty()) dk[ki] += go * xv[xi];
                  }
              if (!dx.empty()) dx[xi] = acc;
            }
      if (!dx.empty()) accumulate(x, dx);
      if (!dk.empty()) accumulate(kernel, dk);
    });
  }
  return result;
}

Tensor upsample_bilinear(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() < 2) throw DimensionError("upsample_bilinear: rank < 2 in " + shape_str(x.shape()));
  const std::size_t h = x.shape()[x.rank() - 2];
  const std::size_t w = x.shape()[x.rank() - 1];
  const std::size_t planes = x.numel() / (h * w);
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_h;
  shape[shape.size() - 1] = out_w;
  std::vector<double> out;
  out.reserve(planes * out_h * out_w);
  const auto src = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const auto plane = resize_bilinear(src.subspan(p * h * w, h * w), h, w, out_h, out_w);
    out.insert(out.end(), plane.begin(), plane.end());
  }
  Tensor result = Tensor::from(std::move(shape), std::move(out));
  if (should_record({&x})) {
    record_op("upsample_bilinear", result, [x, planes, h, w, out_h, out_w, ty, tx](std::span<const double> g) {
      std::vector<double> d(x.numel(), 0.0);
      for (std::size_t p = 0; p < planes; ++p) {
        double* dp = d.data() + p * h * w;
        const double* gp = g.data() + p * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto& y = ty[oy];
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto& xt = tx[ox];
            const double go = gp[oy * out_w + ox];
            dp[y.i0 * w + xt.i0] += go * y.w0 * xt.w0;
            dp[y.i0 * w + xt.i1] += go * y.w0 * xt.w1;
            dp[y.i1 * w + xt.i0] += go * y.w1 * xt.w0;
            dp[y.i1 * w + xt.i1] += go * y.w1 * xt.w1;
          }
        }
      }
      accumulate(x, d);
    });
  }
  return result;
}

Tensor embedding(const Tensor& table, const std::vector<std::vector<int>>& ids) {
  require_rank("embedding", table, 2);
  if (ids.empty()) throw DimensionError("embedding: empty batch");
  const std::size_t vocab = table.dim(0), d = table.dim(1), n = ids.front().size();
  for (const auto& row : ids) {
    if (row.size() != n) throw DimensionError("embedding: ragged id batch");
    for (int id : row) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
        throw DimensionError("embedding: id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(vocab));
      }
    }
  }
  const auto tv = table.data();
  std::vector<double> out;
  out.reserve(ids.size() * n * d);
  for (const auto& row : ids) {
    for (int id : row) out.insert(out.end(), tv.begin() + id * d, tv.begin() + (id + 1) * d);
  }
  Tensor result = Tensor::from({ids.size(), n, d}, std::move(out));
  if (should_record({&table})) {
    record_op("embedding", result, [table, ids, d](std::span<const double> g) {
      std::vector<double> dt(table.numel(), 0.0);
      std::size_t k = 0;
      for (const auto& row : ids) {
        for (int id : row) {
          for (std::size_t c = 0; c < d; ++c) dt[id * d + c] += g[k * d + c];
          ++k;
        }
      }
      accumulate(table, dt);
    });
  }
  return result;
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  require_rank("patchify", image, 4);
  const std::size_t b = image.dim(0), c = image.dim(1), h = image.dim(2), w = image.dim(3);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("patchify: image " + shape_str(image.shape()) + " not divisible into " +
                         std::to_string(patch) + "-pixel patches");
  }
  const std::size_t gh = h / patch, gw = w / patch, pd = c * patch * patch;
  const auto src = image.data();
  std::vector<double> out(src.size());
  auto index = [=](std::size_t s, std::size_t py, std::size_t px, std::size_t ch, std::size_t ky, std::size_t kx) {
    const std::size_t o = ((s * gh * gw + py * gw + px) * pd) + (ch * patch + ky) * patch + kx;
    const std::size_t i = ((s * c + ch) * h + py * patch + ky) * w + px * patch + kx;
    return std::pair{o, i};
  };
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t ky = 0; ky < patch; ++ky)
            for (std::size_t kx = 0; kx < patch; ++kx) {
              const auto [o, i] = index(s, py, px, ch, ky, kx);
              out[o] = src[i];
            }
  Tensor result = Tensor::from({b, gh * gw, pd}, std::move(out));
  if (should_record({&image})) {
    record_op("patchify", result, [image, index, b, gh, gw, c, patch](std::span<const double> g) {
      std::vector<double> d(image.numel());
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t py = 0; py < gh; ++py)
          for (std::size_t px = 0; px < gw; ++px)
            for (std::size_t ch = 0; ch < c; ++ch)
              for (std::size_t ky = 0; ky < patch; ++ky)
                for (std::size_t kx = 0; kx < patch; ++kx) {
                  const auto [o, i] = index(s, py, px, ch, ky, kx);
                  d[i] = g[o];
                }
      accumulate(image, d);
    });
  }
  return result;
}

Tensor weighted_sum(std::span<const Tensor> parts, const Tensor& weights) {
  if (parts.empty()) throw DimensionError("weighted_sum: no inputs");
  if (weights.rank() != 1 || weights.dim(0) != parts.size()) {
    throw DimensionError("weighted_sum: weights " + shape_str(weights.shape()) + " for " +
                         std::to_string(parts.size()) + " parts");
  }
  for (const auto& p : parts) require_same_shape("weighted_sum", parts.front(), p);
  const auto wv = weights.data();
  std::vector<double> out(parts.front().numel(), 0.0);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += wv[k] * pv[i];
  }
  Tensor result = Tensor::from(parts.front().shape(), std::move(out));
  std::vector<Tensor> all(parts.begin(), parts.end());
  all.push_back(weights);
  if (should_record(std::span<const Tensor>(all))) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    record_op("weighted_sum", result, [inputs, weights](std::span<const double> g) {
      const auto wv = weights.data();
      std::vector<double> dw(inputs.size(), 0.0);
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto pv = inputs[k].data();
        if (inputs[k].requires_grad()) {
          std::vector<double> d(g.size());
          for (std::size_t i = 0; i < d.size(); ++i) d[i] = wv[k] * g[i];
          accumulate(inputs[k], d);
        }
        for (std::size_t i = 0; i < g.size(); ++i) dw[k] += g[i] * pv[i];
      }
      accumulate(weights, dw);
    });
  }
  return result;
}

Tensor scale_per_sample(const Tensor& x, std::span<const double> factors) {
  if (x.rank() == 0 || x.dim(0) != factors.size()) {
    throw DimensionError("scale_per_sample: " + std::to_string(factors.size()) + " factors for " +
                         shape_str(x.shape()));
  }
  const std::size_t per = x.numel() / factors.size();
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factors[i / per];
  Tensor result = Tensor::from(x.shape(), std::move(out));
  if (should_record({&x})) {
    std::vector<double> f(factors.begin(), factors.end());
    record_op("scale_per_sample", result, [x, f, per](std::span<const double> g) {
      std::vector<double> d(g.size());
      for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * f[i / per];
      accumulate(x, d);
    });
  }
  return result;
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  Tensor result = Tensor::scalar(total);
  if (should_record({&x})) {
    record_op("sum", result, [x](std::span<const double> g) {
      accumulate(x, std::vector<double>(x.numel(), g[0]));
    });
  }
  return result;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

}  // namespace affsam::ops
