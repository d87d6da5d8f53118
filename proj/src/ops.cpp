#include "dram/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "dram/kernels.hpp"

namespace dram::ops {

namespace {

using kernels::Trans;

void same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::logic_error("op inputs recorded on different tapes");
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

std::size_t rows_of(const Tensor& t) { return t.rank() >= 2 ? t.dim(0) : 1; }

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

Scalar sigmoid_scalar(Scalar v) {
  return v >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-v)) : std::exp(v) / (Scalar(1) + std::exp(v));
}

}  // namespace

Var matmul(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw DimensionError("matmul: " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  kernels::parallel::gemm(Trans::no, Trans::no, m, n, k, 1, av.ptr(), k, bv.ptr(), n, 0, out.ptr(), n);
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {a, b}, [ia, ib, m, n, k](Tape& t, const Tensor& g) {
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      kernels::parallel::gemm(Trans::no, Trans::yes, m, k, n, 1, g.ptr(), n, t.value(ib).ptr(), n, 1,
                              ga.ptr(), k);
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      kernels::parallel::gemm(Trans::yes, Trans::no, k, n, m, 1, t.value(ia).ptr(), k, g.ptr(), n, 1,
                              gb.ptr(), n);
    }
  });
}

Var add(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

Var sub(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    t.accumulate(ia, g);
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  same_tape(a, b);
  same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {a, b}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, Scalar s) {
  Tensor out = map(a.value(), [s](Scalar v) { return v * s; });
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), {a}, [ia, s](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var mul_const(Var a, const Tensor& c) {
  same_shape(a.value(), c, "mul_const");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c[i];
  const std::size_t ia = a.id;
  return a.tape->push(std::move(out), {a}, [ia, c](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c[i];
  });
}

Var add_bias(Var x, Var bias) {
  same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  std::size_t inner = 0;
  if (xv.rank() == 2 && bv.size() == xv.dim(1)) {
    inner = 1;
  } else if (xv.rank() == 4 && bv.size() == xv.dim(1)) {
    inner = xv.dim(2) * xv.dim(3);
  } else {
    throw DimensionError("add_bias: " + shape_str(xv.shape()) + " + " + shape_str(bv.shape()));
  }
  const std::size_t batch = xv.dim(0), channels = bv.size();
  Tensor out = xv;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      Scalar* p = out.ptr() + (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += bv[c];
    }
  const std::size_t ix = x.id, ibias = bias.id;
  return x.tape->push(std::move(out), {x, bias}, [=](Tape& t, const Tensor& g) {
    t.accumulate(ix, g);
    if (t.needs_grad(ibias)) {
      Tensor& gb = t.grad_buffer(ibias);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c) {
          const Scalar* p = g.ptr() + (b * channels + c) * inner;
          Scalar acc = 0;
          for (std::size_t i = 0; i < inner; ++i) acc += p[i];
          gb[c] += acc;
        }
    }
  });
}

Var relu(Var x) {
  Tensor out = map(x.value(), [](Scalar v) { return v > 0 ? v : Scalar(0); });
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [ix](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    const Tensor& xv = t.value(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0) gx[i] += g[i];
  });
}

Var sigmoid(Var x) {
  Tensor out = map(x.value(), sigmoid_scalar);
  const std::size_t ix = x.id, iy = x.tape->next_id();
  return x.tape->push(std::move(out), {x}, [iy, ix](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    const Tensor& yv = t.value(iy);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i] * (1 - yv[i]);
  });
}

Var tanh(Var x) {
  Tensor out = map(x.value(), [](Scalar v) { return std::tanh(v); });
  const std::size_t ix = x.id, iy = x.tape->next_id();
  return x.tape->push(std::move(out), {x}, [iy, ix](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    const Tensor& yv = t.value(iy);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1 - yv[i] * yv[i]);
  });
}

Var square(Var x) {
  Tensor out = map(x.value(), [](Scalar v) { return v * v; });
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [ix](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    const Tensor& xv = t.value(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2 * xv[i] * g[i];
  });
}

Var slice_cols(Var x, std::size_t start, std::size_t len) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || len == 0 || start + len > xv.dim(1))
    throw DimensionError("slice_cols out of range for " + shape_str(xv.shape()));
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out({rows, len});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.ptr() + r * cols + start, len, out.ptr() + r * len);
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < len; ++j) gx[r * cols + start + j] += g[r * len + j];
  });
}

Var concat_cols(Var a, Var b) {
  same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(0) != bv.dim(0))
    throw DimensionError("concat_cols: " + shape_str(av.shape()) + " | " + shape_str(bv.shape()));
  const std::size_t rows = av.dim(0), na = av.dim(1), nb = bv.dim(1);
  Tensor out({rows, na + nb});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.ptr() + r * na, na, out.ptr() + r * (na + nb));
    std::copy_n(bv.ptr() + r * nb, nb, out.ptr() + r * (na + nb) + na);
  }
  const std::size_t ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), {a, b}, [=](Tape& t, const Tensor& g) {
    if (t.needs_grad(ia)) {
      Tensor& ga = t.grad_buffer(ia);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < na; ++j) ga[r * na + j] += g[r * (na + nb) + j];
    }
    if (t.needs_grad(ib)) {
      Tensor& gb = t.grad_buffer(ib);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < nb; ++j) gb[r * nb + j] += g[r * (na + nb) + na + j];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [ix](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var detach(Var x) { return x.tape->constant(x.value()); }

Var conv2d(Var input, Var kernels, std::size_t stride, std::size_t padding) {
  same_tape(input, kernels);
  const Tensor& xv = input.value();
  const Tensor& kv = kernels.value();
  const bool batched = xv.rank() == 4;
  if (!(batched || xv.rank() == 3) || kv.rank() != 4)
    throw DimensionError("conv2d: input " + shape_str(xv.shape()) + ", kernels " + shape_str(kv.shape()));
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? xv.dim(0) : 1;
  kernels::ConvGeometry geo{xv.dim(off), xv.dim(off + 1), xv.dim(off + 2), kv.dim(2), kv.dim(3),
                            stride, padding};
  if (kv.dim(1) != geo.channels)
    throw DimensionError("conv2d: kernel expects " + std::to_string(kv.dim(1)) + " channels, input has " +
                         std::to_string(geo.channels));
  if (geo.kernel_h > geo.height + 2 * padding || geo.kernel_w > geo.width + 2 * padding)
    throw DimensionError("conv2d: kernel larger than padded input");

  const std::size_t c_out = kv.dim(0);
  const std::size_t ckk = geo.col_rows();
  const std::size_t per = geo.out_h() * geo.out_w();
  const std::size_t ncol = batch * per;
  auto col = std::make_shared<std::vector<Scalar>>(ckk * ncol);
  kernels::parallel::im2col_batch(geo, batch, xv.ptr(), col->data());

  std::vector<Scalar> mat(c_out * ncol);
  kernels::parallel::gemm(Trans::no, Trans::no, c_out, ncol, ckk, 1, kv.ptr(), ckk, col->data(), ncol,
                          0, mat.data(), ncol);
  Shape out_shape = batched ? Shape{batch, c_out, geo.out_h(), geo.out_w()}
                            : Shape{c_out, geo.out_h(), geo.out_w()};
  Tensor out(out_shape);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < c_out; ++c)
      std::copy_n(mat.data() + c * ncol + b * per, per, out.ptr() + (b * c_out + c) * per);

  const std::size_t ii = input.id, ik = kernels.id;
  return input.tape->push(std::move(out), {input, kernels}, [=](Tape& t, const Tensor& g) {
    std::vector<Scalar> gmat(c_out * ncol);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t c = 0; c < c_out; ++c)
        std::copy_n(g.ptr() + (b * c_out + c) * per, per, gmat.data() + c * ncol + b * per);
    if (t.needs_grad(ik)) {
      Tensor& gk = t.grad_buffer(ik);
      kernels::parallel::gemm(Trans::no, Trans::yes, c_out, ckk, ncol, 1, gmat.data(), ncol,
                              col->data(), ncol, 1, gk.ptr(), ckk);
    }
    if (t.needs_grad(ii)) {
      std::vector<Scalar> gcol(ckk * ncol);
      kernels::parallel::gemm(Trans::yes, Trans::no, ckk, ncol, c_out, 1, t.value(ik).ptr(), ckk,
                              gmat.data(), ncol, 0, gcol.data(), ncol);
      kernels::parallel::col2im_batch(geo, batch, gcol.data(), t.grad_buffer(ii).ptr());
    }
  });
}

Var log_softmax(Var logits) {
  const Tensor& xv = logits.value();
  const std::size_t rows = rows_of(xv), k = xv.shape().back();
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* in = xv.ptr() + r * k;
    Scalar* o = out.ptr() + r * k;
    const Scalar mx = *std::max_element(in, in + k);
    Scalar z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(in[j] - mx);
    const Scalar lz = mx + std::log(z);
    for (std::size_t j = 0; j < k; ++j) o[j] = in[j] - lz;
  }
  const std::size_t ix = logits.id, iy = logits.tape->next_id();
  return logits.tape->push(std::move(out), {logits}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    const Tensor& yv = t.value(iy);
    for (std::size_t r = 0; r < rows; ++r) {
      Scalar gs = 0;
      for (std::size_t j = 0; j < k; ++j) gs += g[r * k + j];
      for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += g[r * k + j] - std::exp(yv[r * k + j]) * gs;
    }
  });
}

Var pick(Var x, std::span<const std::size_t> index) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2 || index.size() != xv.dim(0))
    throw DimensionError("pick: " + shape_str(xv.shape()) + " with " + std::to_string(index.size()) +
                         " indices");
  const std::size_t rows = xv.dim(0), k = xv.dim(1);
  std::vector<std::size_t> idx(index.begin(), index.end());
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= k) throw DimensionError("pick: index " + std::to_string(idx[r]) + " out of range");
    out[r] = xv[r * k + idx[r]];
  }
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [ix, idx, k](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t r = 0; r < idx.size(); ++r) gx[r * k + idx[r]] += g[r];
  });
}

Var sum_cols(Var x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 2) throw DimensionError("sum_cols expects rank 2");
  const std::size_t rows = xv.dim(0), cols = xv.dim(1);
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    Scalar acc = 0;
    for (std::size_t j = 0; j < cols; ++j) acc += xv[r * cols + j];
    out[r] = acc;
  }
  const std::size_t ix = x.id;
  return x.tape->push(std::move(out), {x}, [=](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < cols; ++j) gx[r * cols + j] += g[r];
  });
}

Var sum(Var x) {
  const std::size_t ix = x.id;
  return x.tape->push(Tensor::scalar(x.value().sum()), {x}, [ix](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
  });
}

Var dropout(Var x, Scalar rate, bool training, Rng& rng) {
  if (!(rate >= 0 && rate < 1)) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (!training || rate == 0) return x;
  Tensor mask(x.value().shape());
  const Scalar keep = 1 - rate;
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform01() < keep ? 1 / keep : 0;
  return mul_const(x, mask);
}

LstmState lstm_cell(Var x, Var h_prev, Var c_prev, const LstmWeights& w) {
  const std::size_t hidden = h_prev.value().shape().back();
  const Tensor& wx = w.input.value();
  const Tensor& wh = w.recurrent.value();
  if (wx.rank() != 2 || wx.dim(1) != 4 * hidden || wh.rank() != 2 || wh.dim(0) != hidden ||
      wh.dim(1) != 4 * hidden || w.bias.value().size() != 4 * hidden ||
      c_prev.value().shape() != h_prev.value().shape())
    throw DimensionError("lstm_cell: weights do not match hidden size " + std::to_string(hidden));
  Var z = add_bias(add(matmul(x, w.input), matmul(h_prev, w.recurrent)), w.bias);
  Var in_gate = sigmoid(slice_cols(z, 0, hidden));
  Var forget = sigmoid(slice_cols(z, hidden, hidden));
  Var cand = tanh(slice_cols(z, 2 * hidden, hidden));
  Var out_gate = sigmoid(slice_cols(z, 3 * hidden, hidden));
  Var c = add(mul(forget, c_prev), mul(in_gate, cand));
  Var h = mul(out_gate, tanh(c));
  return {h, c};
}

CrossEntropy softmax_cross_entropy(Var logits, std::size_t target) {
  const Tensor& lv = logits.value();
  const std::size_t k = lv.shape().back();
  if (lv.size() != k) throw DimensionError("softmax_cross_entropy expects a single logit row");
  if (target >= k) throw DimensionError("target class " + std::to_string(target) + " out of range");
  Var row = lv.rank() == 2 ? logits : reshape(logits, {1, k});
  Var log_probs = log_softmax(row);
  const std::size_t idx[1] = {target};
  Var loss = scale(pick(log_probs, idx), -1);
  return {loss, log_probs};
}

}  // namespace dram::ops
