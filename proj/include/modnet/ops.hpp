#pragma once

#include <utility>
#include <vector>

#include "modnet/tensor.hpp"

namespace modnet {

// Differentiable operations. Inputs follow the (batch, channels, height,
// width) layout unless stated otherwise. Each op validates shapes up front
// and records a pull-back only when some input requires gradients.

// 2-D cross-correlation. input (B,Cin,H,W), weight (Cout,Cin,kH,kW),
// optional bias (Cout). Output spatial dims floor((H+2p-k)/s)+1.
template <class T>
TensorPtr<T> conv2d(const TensorPtr<T>& input, const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    int stride, int padding);

template <class T>
TensorPtr<T> relu(const TensorPtr<T>& input);

// Window max with gradient routed to the argmax (first occurrence in
// row-major scan on ties).
template <class T>
TensorPtr<T> maxpool2d(const TensorPtr<T>& input, int kernel, int stride);

// Max over the whole spatial extent; (B,C,H,W) -> (B,C).
template <class T>
TensorPtr<T> global_maxpool2d(const TensorPtr<T>& input);

// Per-channel batch normalization for (B,C,H,W) or (B,C) tensors.
// Train mode normalizes with biased batch statistics and, when update_stats
// is set, folds them into running_mean/running_var (unbiased, momentum EMA).
// Eval mode normalizes with the running statistics.
template <class T>
TensorPtr<T> batchnorm(const TensorPtr<T>& input, const TensorPtr<T>& gamma, const TensorPtr<T>& beta,
                       const TensorPtr<T>& running_mean, const TensorPtr<T>& running_var, bool train,
                       T eps = T(1e-5), T momentum = T(0.1), bool update_stats = true);

// x (B,F) * weight (O,F)^T + bias (O) -> (B,O)
template <class T>
TensorPtr<T> linear(const TensorPtr<T>& input, const TensorPtr<T>& weight, const TensorPtr<T>& bias);

// Concatenate along the channel/feature axis (dim 1) of 4-D or 2-D tensors.
template <class T>
TensorPtr<T> concat_channels(const TensorPtr<T>& a, const TensorPtr<T>& b);

// Inverse of concat_channels: first c_a channels and the rest.
template <class T>
std::pair<TensorPtr<T>, TensorPtr<T>> split_channels(const TensorPtr<T>& x, int c_a);

// Elementwise product with a per-channel vector, broadcast over batch and
// spatial dims. gamma is (C) or (B,C); features (B,C,H,W) or (B,C).
template <class T>
TensorPtr<T> modulate(const TensorPtr<T>& features, const TensorPtr<T>& gamma);

template <class T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b);  // same shape

// x (B,C,H,W) or (B,C) plus a per-channel bias (C) or (B,C).
template <class T>
TensorPtr<T> add_channel(const TensorPtr<T>& x, const TensorPtr<T>& bias);

// Row of an embedding table (R,C) -> (C). Gradient accumulates into the
// selected row only.
template <class T>
TensorPtr<T> embedding_lookup(const TensorPtr<T>& table, int index);

// 2*tanh(x) + 1, elementwise; range (-1, 3).
template <class T>
TensorPtr<T> tanh_affine_gamma(const TensorPtr<T>& raw);

// Mean negative log-likelihood over the batch. logits (B,K); gradient is
// (softmax - onehot)/B.
template <class T>
TensorPtr<T> softmax_cross_entropy(const TensorPtr<T>& logits, const std::vector<int>& labels);

// Repeat a (1,...) tensor along dim 0, or a (C) vector to (B,C). Gradient
// sums over the broadcast copies.
template <class T>
TensorPtr<T> broadcast_batch(const TensorPtr<T>& x, int batch);

// out[i] = x[indices[i]] along dim 0; backward scatter-adds.
template <class T>
TensorPtr<T> gather_batch(const TensorPtr<T>& x, const std::vector<int>& indices);

// Concatenate along dim 0; all parts share trailing dims.
template <class T>
TensorPtr<T> concat_batch(const std::vector<TensorPtr<T>>& parts);

// Same data, new shape (numel preserved).
template <class T>
TensorPtr<T> reshape(const TensorPtr<T>& x, std::vector<int> shape);

template <class T>
TensorPtr<T> sum(const TensorPtr<T>& x);  // -> scalar

// Row-wise softmax of (B,K) values; plain numbers, not part of the graph.
template <class T>
std::vector<T> softmax_rows(const TensorPtr<T>& logits);

// argmax per row of (B,K)
template <class T>
std::vector<int> argmax_rows(const TensorPtr<T>& logits);

}  // namespace modnet
