#pragma once

#include <cstddef>
#include <span>

#include "dram/rng.hpp"
#include "dram/tape.hpp"

// Differentiable primitives. Vectors are carried as rank-2 [batch x n] tensors
// so a whole mini-batch of episodes moves through one GEMM; per-row scalars are
// rank-1 [batch]. All inputs of one op must live on the same tape.
namespace dram::ops {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, Scalar s);
/// Elementwise product with a constant tensor of the same shape.
Var mul_const(Var a, const Tensor& c);
/// Adds bias[n] to every row of x[B x n], or bias[C] to every channel of x[B x C x H x W].
Var add_bias(Var x, Var bias);

Var relu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var square(Var x);

Var slice_cols(Var x, std::size_t start, std::size_t len);
Var concat_cols(Var a, Var b);
Var reshape(Var x, Shape shape);
/// Identity in the forward pass, blocks the gradient.
Var detach(Var x);

/// Cross-correlation with zero padding. input is [c x h x w] or [B x c x h x w];
/// kernels are [c_out x c_in x kh x kw].
Var conv2d(Var input, Var kernels, std::size_t stride, std::size_t padding);

/// Row-wise log-softmax with max subtraction.
Var log_softmax(Var logits);
/// out[b] = x[b, index[b]].
Var pick(Var x, std::span<const std::size_t> index);
/// Row sums of [B x n] -> [B].
Var sum_cols(Var x);
/// Sum of all elements -> [1].
Var sum(Var x);

/// Inverted dropout. Identity when !training or rate == 0.
Var dropout(Var x, Scalar rate, bool training, Rng& rng);

struct LstmWeights {
  Var input;      ///< [d_in x 4H], gate blocks ordered input, forget, candidate, output
  Var recurrent;  ///< [H x 4H]
  Var bias;       ///< [4H]
};

struct LstmState {
  Var h;
  Var c;
};

/// One LSTM step: c' = f*c + i*g, h' = o*tanh(c').
LstmState lstm_cell(Var x, Var h_prev, Var c_prev, const LstmWeights& w);

struct CrossEntropy {
  Var loss;       ///< [1]
  Var log_probs;  ///< [1 x K]
};

/// Cross entropy of a single logit row against `target`.
CrossEntropy softmax_cross_entropy(Var logits, std::size_t target);

}  // namespace dram::ops
