#include "modnet/ops.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace modnet {

namespace {

// Worker threads carry the parallelism as independent per-sample GEMMs;
// threading inside one BLAS call only adds contention at these shapes.
void blas_single_thread_once() {
  static const bool done = [] {
    set_blas_threads(1);
    return true;
  }();
  (void)done;
}

void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* A, int lda, const float* B,
          int ldb, float beta, float* C, int ldc) {
  blas_single_thread_once();
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, A, lda, B, ldb, beta, C, ldc);
}
void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* A, int lda, const double* B,
          int ldb, double beta, double* C, int ldc) {
  blas_single_thread_once();
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k,
              alpha, A, lda, B, ldb, beta, C, ldc);
}

template <class T>
bool wants_grad(std::initializer_list<const TensorPtr<T>*> ins) {
  if (!grad_enabled()) return false;
  for (auto* p : ins)
    if (*p && (*p)->requires_grad) return true;
  return false;
}

template <class T>
TensorPtr<T> make_out(std::vector<int> shape, bool needs_grad) {
  auto t = std::make_shared<Tensor<T>>();
  t->shape = std::move(shape);
  t->value.assign(static_cast<size_t>(shape_numel<T>(t->shape)), T(0));
  t->requires_grad = needs_grad;
  return t;
}

struct ConvDims {
  int B, Cin, H, W, Cout, kH, kW, stride, pad, OH, OW, K, OHW;
};

template <class T>
ConvDims conv_dims(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, int stride, int padding) {
  if (x.ndim() != 4) throw ShapeError("conv2d: input must be 4-D, got " + shape_str(x.shape));
  if (w.ndim() != 4) throw ShapeError("conv2d: weight must be 4-D, got " + shape_str(w.shape));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0, got " + std::to_string(padding));
  ConvDims d;
  d.B = x.dim(0), d.Cin = x.dim(1), d.H = x.dim(2), d.W = x.dim(3);
  d.Cout = w.dim(0), d.kH = w.dim(2), d.kW = w.dim(3);
  d.stride = stride, d.pad = padding;
  if (w.dim(1) != d.Cin)
    throw ShapeError("conv2d: input channels " + std::to_string(d.Cin) + " do not match weight channels " +
                     std::to_string(w.dim(1)));
  if (b && (b->ndim() != 1 || b->dim(0) != d.Cout))
    throw ShapeError("conv2d: bias shape " + shape_str(b->shape) + " does not match Cout " +
                     std::to_string(d.Cout));
  d.OH = (d.H + 2 * padding - d.kH) / stride + 1;
  d.OW = (d.W + 2 * padding - d.kW) / stride + 1;
  if (d.H + 2 * padding < d.kH || d.W + 2 * padding < d.kW || d.OH <= 0 || d.OW <= 0)
    throw ShapeError("conv2d: kernel " + std::to_string(d.kH) + "x" + std::to_string(d.kW) +
                     " does not fit input " + shape_str(x.shape) + " with padding " + std::to_string(padding));
  d.K = d.Cin * d.kH * d.kW;
  d.OHW = d.OH * d.OW;
  return d;
}

// cols layout: row (ci*kH+ky)*kW+kx, column oy*OW+ox
template <class T>
void im2col(const T* src, const ConvDims& d, T* cols) {
  for (int ci = 0; ci < d.Cin; ++ci) {
    const T* plane = src + static_cast<int64_t>(ci) * d.H * d.W;
    for (int ky = 0; ky < d.kH; ++ky) {
      for (int kx = 0; kx < d.kW; ++kx) {
        T* row = cols + static_cast<int64_t>((ci * d.kH + ky) * d.kW + kx) * d.OHW;
        for (int oy = 0; oy < d.OH; ++oy) {
          int iy = oy * d.stride - d.pad + ky;
          T* out = row + static_cast<int64_t>(oy) * d.OW;
          if (iy < 0 || iy >= d.H) {
            std::fill(out, out + d.OW, T(0));
            continue;
          }
          const T* in_row = plane + static_cast<int64_t>(iy) * d.W;
          if (d.stride == 1) {
            int ix0 = -d.pad + kx;
            int lead = std::max(0, -ix0);
            int last = std::min(d.OW, d.W - ix0);
            if (lead > 0) std::fill(out, out + std::min(lead, d.OW), T(0));
            if (last > lead) std::memcpy(out + lead, in_row + ix0 + lead, sizeof(T) * (last - lead));
            if (last < d.OW) std::fill(out + std::max(last, 0), out + d.OW, T(0));
          } else {
            for (int ox = 0; ox < d.OW; ++ox) {
              int ix = ox * d.stride - d.pad + kx;
              out[ox] = (ix >= 0 && ix < d.W) ? in_row[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* cols, const ConvDims& d, T* dst) {
  for (int ci = 0; ci < d.Cin; ++ci) {
    T* plane = dst + static_cast<int64_t>(ci) * d.H * d.W;
    for (int ky = 0; ky < d.kH; ++ky) {
      for (int kx = 0; kx < d.kW; ++kx) {
        const T* row = cols + static_cast<int64_t>((ci * d.kH + ky) * d.kW + kx) * d.OHW;
        for (int oy = 0; oy < d.OH; ++oy) {
          int iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.H) continue;
          const T* in_row = row + static_cast<int64_t>(oy) * d.OW;
          T* out_row = plane + static_cast<int64_t>(iy) * d.W;
          for (int ox = 0; ox < d.OW; ++ox) {
            int ix = ox * d.stride - d.pad + kx;
            if (ix >= 0 && ix < d.W) out_row[ix] += in_row[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
TensorPtr<T> conv2d(const TensorPtr<T>& input, const TensorPtr<T>& weight, const TensorPtr<T>& bias,
                    int stride, int padding) {
  ConvDims d = conv_dims(*input, *weight, bias.get(), stride, padding);
  bool needs = wants_grad<T>({&input, &weight, &bias});
  auto out = make_out<T>({d.B, d.Cout, d.OH, d.OW}, needs);

  bool one_by_one = d.kH == 1 && d.kW == 1 && d.stride == 1 && d.pad == 0;
  // im2col scratch, fully overwritten; saved for the dW pull-back
  std::shared_ptr<T[]> cols;
  if (!one_by_one) cols = std::shared_ptr<T[]>(new T[static_cast<size_t>(d.B) * d.K * d.OHW]);

  parallel_for(d.B, [&](int64_t b0, int64_t b1) {
    for (int64_t b = b0; b < b1; ++b) {
      const T* xb = input->value.data() + b * d.Cin * d.H * d.W;
      const T* cb = xb;
      if (!one_by_one) {
        T* dst = cols.get() + b * d.K * d.OHW;
        im2col(xb, d, dst);
        cb = dst;
      }
      gemm(false, false, d.Cout, d.OHW, d.K, T(1), weight->value.data(), d.K, cb, d.OHW, T(0),
           out->value.data() + b * d.Cout * d.OHW, d.OHW);
      if (bias) {
        for (int co = 0; co < d.Cout; ++co) {
          T* row = out->value.data() + (b * d.Cout + co) * d.OHW;
          T bv = bias->value[co];
          for (int i = 0; i < d.OHW; ++i) row[i] += bv;
        }
      }
    }
  });

  if (needs) {
    out->inputs = bias ? std::vector<TensorPtr<T>>{input, weight, bias}
                       : std::vector<TensorPtr<T>>{input, weight};
    out->backprop = [d, cols, one_by_one](Tensor<T>& t) {
      auto& x = *t.inputs[0];
      auto& w = *t.inputs[1];
      Tensor<T>* bi = t.inputs.size() > 2 ? t.inputs[2].get() : nullptr;
      const T* dY = t.grad.data();

      // chunks work on disjoint samples; dW/db partials are reduced in chunk
      // order afterwards so a fixed thread count gives fixed bits
      int chunks = static_cast<int>(std::min<int64_t>(worker_threads(), d.B));
      int64_t per = (d.B + chunks - 1) / chunks;
      size_t wsz = w.value.size();
      std::vector<std::vector<T>> dw_parts, db_parts;
      if (w.requires_grad) dw_parts.assign(static_cast<size_t>(chunks), std::vector<T>(wsz, T(0)));
      if (bi && bi->requires_grad)
        db_parts.assign(static_cast<size_t>(chunks), std::vector<T>(static_cast<size_t>(d.Cout), T(0)));

      parallel_for(d.B, [&](int64_t b0, int64_t b1) {
        int chunk = static_cast<int>(b0 / per);
        std::vector<T> dcols;
        if (x.requires_grad && !one_by_one) dcols.resize(static_cast<size_t>(d.K) * d.OHW);
        for (int64_t b = b0; b < b1; ++b) {
          const T* dyb = dY + b * d.Cout * d.OHW;
          const T* cb = one_by_one ? x.value.data() + b * d.K * d.OHW : cols.get() + b * d.K * d.OHW;
          if (w.requires_grad)
            gemm(false, true, d.Cout, d.K, d.OHW, T(1), dyb, d.OHW, cb, d.OHW, T(1),
                 dw_parts[static_cast<size_t>(chunk)].data(), d.K);
          if (x.requires_grad) {
            T* xg = x.grad.data() + b * d.Cin * d.H * d.W;
            if (one_by_one) {
              gemm(true, false, d.K, d.OHW, d.Cout, T(1), w.value.data(), d.K, dyb, d.OHW, T(1), xg, d.OHW);
            } else {
              gemm(true, false, d.K, d.OHW, d.Cout, T(1), w.value.data(), d.K, dyb, d.OHW, T(0),
                   dcols.data(), d.OHW);
              col2im_add(dcols.data(), d, xg);
            }
          }
          if (bi && bi->requires_grad) {
            for (int co = 0; co < d.Cout; ++co) {
              const T* row = dyb + static_cast<int64_t>(co) * d.OHW;
              T s = T(0);
              for (int i = 0; i < d.OHW; ++i) s += row[i];
              db_parts[static_cast<size_t>(chunk)][static_cast<size_t>(co)] += s;
            }
          }
        }
      });
      for (auto& part : dw_parts)
        for (size_t i = 0; i < wsz; ++i) w.grad[i] += part[i];
      for (auto& part : db_parts)
        for (int co = 0; co < d.Cout; ++co) bi->grad[static_cast<size_t>(co)] += part[static_cast<size_t>(co)];
    };
  }
  return out;
}

template <class T>
TensorPtr<T> relu(const TensorPtr<T>& input) {
  bool needs = wants_grad<T>({&input});
  auto out = make_out<T>(input->shape, needs);
  const int64_t n = static_cast<int64_t>(input->value.size());
  parallel_for(n, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) out->value[i] = input->value[i] > T(0) ? input->value[i] : T(0);
  });
  if (needs) {
    out->inputs = {input};
    out->backprop = [](Tensor<T>& t) {
      auto& x = *t.inputs[0];
      parallel_for(static_cast<int64_t>(t.grad.size()), [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i)
          if (x.value[i] > T(0)) x.grad[i] += t.grad[i];
      });
    };
  }
  return out;
}

template <class T>
TensorPtr<T> maxpool2d(const TensorPtr<T>& input, int kernel, int stride) {
  if (input->ndim() != 4) throw ShapeError("maxpool2d: input must be 4-D, got " + shape_str(input->shape));
  if (kernel < 1 || stride < 1) throw ShapeError("maxpool2d: kernel and stride must be >= 1");
  int B = input->dim(0), C = input->dim(1), H = input->dim(2), W = input->dim(3);
  if (kernel > H || kernel > W)
    throw ShapeError("maxpool2d: kernel " + std::to_string(kernel) + " exceeds spatial extent " +
                     shape_str(input->shape));
  int OH = (H - kernel) / stride + 1, OW = (W - kernel) / stride + 1;
  bool needs = wants_grad<T>({&input});
  auto out = make_out<T>({B, C, OH, OW}, needs);
  auto argmax = needs ? std::make_shared<std::vector<int>>(out->value.size()) : nullptr;

  int64_t oi = 0;
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      const T* plane = input->value.data() + (static_cast<int64_t>(b) * C + c) * H * W;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox, ++oi) {
          int iy0 = oy * stride, ix0 = ox * stride;
          T best = plane[iy0 * W + ix0];
          int best_at = iy0 * W + ix0;
          for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
              int at = (iy0 + ky) * W + ix0 + kx;
              if (plane[at] > best) {  // strict: first occurrence wins ties
                best = plane[at];
                best_at = at;
              }
            }
          out->value[oi] = best;
          if (argmax) (*argmax)[oi] = best_at;
        }
    }

  if (needs) {
    out->inputs = {input};
    out->backprop = [argmax, B, C, H, W, OH, OW](Tensor<T>& t) {
      auto& x = *t.inputs[0];
      int64_t oi = 0;
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          T* gplane = x.grad.data() + (static_cast<int64_t>(b) * C + c) * H * W;
          for (int i = 0; i < OH * OW; ++i, ++oi) gplane[(*argmax)[oi]] += t.grad[oi];
        }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> global_maxpool2d(const TensorPtr<T>& input) {
  if (input->ndim() != 4)
    throw ShapeError("global_maxpool2d: input must be 4-D, got " + shape_str(input->shape));
  int B = input->dim(0), C = input->dim(1), HW = input->dim(2) * input->dim(3);
  if (HW < 1) throw ShapeError("global_maxpool2d: empty spatial extent");
  bool needs = wants_grad<T>({&input});
  auto out = make_out<T>({B, C}, needs);
  auto argmax = needs ? std::make_shared<std::vector<int>>(static_cast<size_t>(B) * C) : nullptr;
  for (int64_t bc = 0; bc < static_cast<int64_t>(B) * C; ++bc) {
    const T* plane = input->value.data() + bc * HW;
    T best = plane[0];
    int at = 0;
    for (int i = 1; i < HW; ++i)
      if (plane[i] > best) best = plane[i], at = i;
    out->value[bc] = best;
    if (argmax) (*argmax)[bc] = at;
  }
  if (needs) {
    out->inputs = {input};
    out->backprop = [argmax, HW](Tensor<T>& t) {
      auto& x = *t.inputs[0];
      for (int64_t bc = 0; bc < static_cast<int64_t>(t.grad.size()); ++bc)
        x.grad[bc * HW + (*argmax)[bc]] += t.grad[bc];
    };
  }
  return out;
}

template <class T>
TensorPtr<T> batchnorm(const TensorPtr<T>& input, const TensorPtr<T>& gamma, const TensorPtr<T>& beta,
                       const TensorPtr<T>& running_mean, const TensorPtr<T>& running_var, bool train,
                       T eps, T momentum, bool update_stats) {
  if (input->ndim() != 4 && input->ndim() != 2)
    throw ShapeError("batchnorm: input must be 2-D or 4-D, got " + shape_str(input->shape));
  int B = input->dim(0), C = input->dim(1);
  int S = input->ndim() == 4 ? input->dim(2) * input->dim(3) : 1;
  for (auto* p : {&gamma, &beta, &running_mean, &running_var})
    if ((*p)->numel() != C)
      throw ShapeError("batchnorm: parameter shape " + shape_str((*p)->shape) + " does not match channels " +
                       std::to_string(C));
  if (train && B < 2)
    throw ConfigError("batchnorm: train mode needs batch size >= 2, got " + std::to_string(B));

  int64_t N = static_cast<int64_t>(B) * S;
  bool needs = wants_grad<T>({&input, &gamma, &beta});
  auto out = make_out<T>(input->shape, needs);

  auto stat_mean = std::make_shared<std::vector<T>>(C);
  auto stat_istd = std::make_shared<std::vector<T>>(C);
  parallel_for(C, [&](int64_t c0, int64_t c1) {
    for (int64_t c = c0; c < c1; ++c) {
      T mean, var;
      if (train) {
        T s = T(0);
        for (int b = 0; b < B; ++b) {
          const T* p = input->value.data() + (static_cast<int64_t>(b) * C + c) * S;
          for (int i = 0; i < S; ++i) s += p[i];
        }
        mean = s / static_cast<T>(N);
        T v = T(0);
        for (int b = 0; b < B; ++b) {
          const T* p = input->value.data() + (static_cast<int64_t>(b) * C + c) * S;
          for (int i = 0; i < S; ++i) {
            T dlt = p[i] - mean;
            v += dlt * dlt;
          }
        }
        var = v / static_cast<T>(N);  // biased, used for normalization
        if (update_stats) {
          T unbiased = N > 1 ? v / static_cast<T>(N - 1) : var;
          running_mean->value[c] = (T(1) - momentum) * running_mean->value[c] + momentum * mean;
          running_var->value[c] = (T(1) - momentum) * running_var->value[c] + momentum * unbiased;
        }
      } else {
        mean = running_mean->value[c];
        var = running_var->value[c];
      }
      (*stat_mean)[c] = mean;
      (*stat_istd)[c] = T(1) / std::sqrt(var + eps);
      for (int b = 0; b < B; ++b) {
        const T* p = input->value.data() + (static_cast<int64_t>(b) * C + c) * S;
        T* q = out->value.data() + (static_cast<int64_t>(b) * C + c) * S;
        T g = gamma->value[c], bt = beta->value[c], is = (*stat_istd)[c];
        for (int i = 0; i < S; ++i) q[i] = (p[i] - mean) * is * g + bt;
      }
    }
  });

  if (needs) {
    out->inputs = {input, gamma, beta};
    out->backprop = [stat_mean, stat_istd, train, B, C, S, N](Tensor<T>& t) {
      auto& x = *t.inputs[0];
      auto& g = *t.inputs[1];
      auto& bt = *t.inputs[2];
      parallel_for(C, [&](int64_t cc0, int64_t cc1) {
      for (int c = static_cast<int>(cc0); c < static_cast<int>(cc1); ++c) {
        T m = (*stat_mean)[c], is = (*stat_istd)[c];
        T sum_dy = T(0), sum_dy_xhat = T(0);
        for (int b = 0; b < B; ++b) {
          const T* xv = x.value.data() + (static_cast<int64_t>(b) * C + c) * S;
          const T* dy = t.grad.data() + (static_cast<int64_t>(b) * C + c) * S;
          for (int i = 0; i < S; ++i) {
            sum_dy += dy[i];
            sum_dy_xhat += dy[i] * (xv[i] - m) * is;
          }
        }
        if (g.requires_grad) g.grad[c] += sum_dy_xhat;
        if (bt.requires_grad) bt.grad[c] += sum_dy;
        if (x.requires_grad) {
          T gv = g.value[c];
          for (int b = 0; b < B; ++b) {
            const T* xv = x.value.data() + (static_cast<int64_t>(b) * C + c) * S;
            const T* dy = t.grad.data() + (static_cast<int64_t>(b) * C + c) * S;
            T* dx = x.grad.data() + (static_cast<int64_t>(b) * C + c) * S;
            if (train) {
              for (int i = 0; i < S; ++i) {
                T xhat = (xv[i] - m) * is;
                dx[i] += gv * is *
                         (dy[i] - sum_dy / static_cast<T>(N) - xhat * sum_dy_xhat / static_cast<T>(N));
              }
            } else {
              for (int i = 0; i < S; ++i) dx[i] += dy[i] * gv * is;
            }
          }
        }
      }
      });
    };
  }
  return out;
}

template <class T>
TensorPtr<T> linear(const TensorPtr<T>& input, const TensorPtr<T>& weight, const TensorPtr<T>& bias) {
  if (input->ndim() != 2) throw ShapeError("linear: input must be 2-D, got " + shape_str(input->shape));
  if (weight->ndim() != 2) throw ShapeError("linear: weight must be 2-D, got " + shape_str(weight->shape));
  int B = input->dim(0), F = input->dim(1), O = weight->dim(0);
  if (weight->dim(1) != F)
    throw ShapeError("linear: input features " + std::to_string(F) + " do not match weight " +
                     shape_str(weight->shape));
  if (bias && (bias->ndim() != 1 || bias->dim(0) != O))
    throw ShapeError("linear: bias shape " + shape_str(bias->shape) + " does not match out features " +
                     std::to_string(O));
  bool needs = wants_grad<T>({&input, &weight, &bias});
  auto out = make_out<T>({B, O}, needs);
  gemm(false, true, B, O, F, T(1), input->value.data(), F, weight->value.data(), F, T(0),
       out->value.data(), O);
  if (bias) {
    for (int b = 0; b < B; ++b)
      for (int o = 0; o < O; ++o) out->value[static_cast<int64_t>(b) * O + o] += bias->value[o];
  }
  if (needs) {
    out->inputs = bias ? std::vector<TensorPtr<T>>{input, weight, bias}
                       : std::vector<TensorPtr<T>>{input, weight};
    out->backprop = [B, F, O](Tensor<T>& t) {
      auto& x = *t.inputs[0];
      auto& w = *t.inputs[1];
      Tensor<T>* bi = t.inputs.size() > 2 ? t.inputs[2].get() : nullptr;
      if (x.requires_grad)
        gemm(false, false, B, F, O, T(1), t.grad.data(), O, w.value.data(), F, T(1), x.grad.data(), F);
      if (w.requires_grad)
        gemm(true, false, O, F, B, T(1), t.grad.data(), O, x.value.data(), F, T(1), w.grad.data(), F);
      if (bi && bi->requires_grad) {
        for (int b = 0; b < B; ++b)
          for (int o = 0; o < O; ++o) bi->grad[o] += t.grad[static_cast<int64_t>(b) * O + o];
      }
    };
  }
  return out;
}

namespace {

template <class T>
void check_concat_pair(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != b.ndim() || (a.ndim() != 2 && a.ndim() != 4))
    throw ShapeError("concat_channels: ranks must match and be 2 or 4, got " + shape_str(a.shape) + " and " +
                     shape_str(b.shape));
  if (a.dim(0) != b.dim(0))
    throw ShapeError("concat_channels: batch mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  if (a.ndim() == 4 && (a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)))
    throw ShapeError("concat_channels: spatial mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace

template <class T>
TensorPtr<T> concat_channels(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  check_concat_pair(*a, *b);
  int B = a->dim(0), Ca = a->dim(1), Cb = b->dim(1);
  int S = a->ndim() == 4 ? a->dim(2) * a->dim(3) : 1;
  std::vector<int> shape = a->shape;
  shape[1] = Ca + Cb;
  bool needs = wants_grad<T>({&a, &b});
  auto out = make_out<T>(shape, needs);
  for (int i = 0; i < B; ++i) {
    std::memcpy(out->value.data() + static_cast<int64_t>(i) * (Ca + Cb) * S,
                a->value.data() + static_cast<int64_t>(i) * Ca * S, sizeof(T) * Ca * S);
    std::memcpy(out->value.data() + (static_cast<int64_t>(i) * (Ca + Cb) + Ca) * S,
                b->value.data() + static_cast<int64_t>(i) * Cb * S, sizeof(T) * Cb * S);
  }
  if (needs) {
    out->inputs = {a, b};
    out->backprop = [B, Ca, Cb, S](Tensor<T>& t) {
      auto& x = *t.inputs[0];
      auto& y = *t.inputs[1];
      for (int i = 0; i < B; ++i) {
        const T* g = t.grad.data() + static_cast<int64_t>(i) * (Ca + Cb) * S;
        if (x.requires_grad) {
          T* xg = x.grad.data() + static_cast<int64_t>(i) * Ca * S;
          for (int64_t j = 0; j < static_cast<int64_t>(Ca) * S; ++j) xg[j] += g[j];
        }
        if (y.requires_grad) {
          T* yg = y.grad.data() + static_cast<int64_t>(i) * Cb * S;
          for (int64_t j = 0; j < static_cast<int64_t>(Cb) * S; ++j) yg[j] += g[static_cast<int64_t>(Ca) * S + j];
        }
      }
    };
  }
  return out;
}

template <class T>
std::pair<TensorPtr<T>, TensorPtr<T>> split_channels(const TensorPtr<T>& x, int c_a) {
  if (x->ndim() != 2 && x->ndim() != 4)
    throw ShapeError("split_channels: rank must be 2 or 4, got " + shape_str(x->shape));
  int B = x->dim(0), C = x->dim(1);
  if (c_a < 0 || c_a > C)
    throw ShapeError("split_channels: split point " + std::to_string(c_a) + " out of range for " +
                     shape_str(x->shape));
  int S = x->ndim() == 4 ? x->dim(2) * x->dim(3) : 1;
  bool needs = wants_grad<T>({&x});

  auto slice = [&](int c0, int cn) {
    std::vector<int> shape = x->shape;
    shape[1] = cn;
    auto out = make_out<T>(shape, needs);
    for (int i = 0; i < B; ++i)
      std::memcpy(out->value.data() + static_cast<int64_t>(i) * cn * S,
                  x->value.data() + (static_cast<int64_t>(i) * C + c0) * S, sizeof(T) * cn * S);
    if (needs) {
      out->inputs = {x};
      out->backprop = [B, C, S, c0, cn](Tensor<T>& t) {
        auto& src = *t.inputs[0];
        for (int i = 0; i < B; ++i) {
          T* g = src.grad.data() + (static_cast<int64_t>(i) * C + c0) * S;
          const T* dy = t.grad.data() + static_cast<int64_t>(i) * cn * S;
          for (int64_t j = 0; j < static_cast<int64_t>(cn) * S; ++j) g[j] += dy[j];
        }
      };
    }
    return out;
  };
  return {slice(0, c_a), slice(c_a, C - c_a)};
}

namespace {

// gamma/bias vectors attached per channel come as (C) shared across the batch
// or (B,C) per example.
template <class T>
int per_channel_mode(const Tensor<T>& x, const Tensor<T>& v, const char* op) {
  int B = x.dim(0), C = x.dim(1);
  if (v.ndim() == 1 && v.dim(0) == C) return 0;
  if (v.ndim() == 2 && v.dim(0) == B && v.dim(1) == C) return 1;
  throw ShapeError(std::string(op) + ": vector shape " + shape_str(v.shape) + " does not match input " +
                   shape_str(x.shape));
}

}  // namespace

template <class T>
TensorPtr<T> modulate(const TensorPtr<T>& features, const TensorPtr<T>& gamma) {
  if (features->ndim() != 4 && features->ndim() != 2)
    throw ShapeError("modulate: features must be 2-D or 4-D, got " + shape_str(features->shape));
  int B = features->dim(0), C = features->dim(1);
  int S = features->ndim() == 4 ? features->dim(2) * features->dim(3) : 1;
  int mode = per_channel_mode(*features, *gamma, "modulate");
  bool needs = wants_grad<T>({&features, &gamma});
  auto out = make_out<T>(features->shape, needs);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      T g = gamma->value[mode ? static_cast<int64_t>(b) * C + c : c];
      const T* p = features->value.data() + (static_cast<int64_t>(b) * C + c) * S;
      T* q = out->value.data() + (static_cast<int64_t>(b) * C + c) * S;
      for (int i = 0; i < S; ++i) q[i] = p[i] * g;
    }
  if (needs) {
    out->inputs = {features, gamma};
    out->backprop = [B, C, S, mode](Tensor<T>& t) {
      auto& f = *t.inputs[0];
      auto& g = *t.inputs[1];
      for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
          int64_t base = (static_cast<int64_t>(b) * C + c) * S;
          T gv = g.value[mode ? static_cast<int64_t>(b) * C + c : c];
          if (f.requires_grad) {
            for (int i = 0; i < S; ++i) f.grad[base + i] += t.grad[base + i] * gv;
          }
          if (g.requires_grad) {
            T s = T(0);
            for (int i = 0; i < S; ++i) s += t.grad[base + i] * f.value[base + i];
            g.grad[mode ? static_cast<int64_t>(b) * C + c : c] += s;
          }
        }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> add(const TensorPtr<T>& a, const TensorPtr<T>& b) {
  if (a->shape != b->shape)
    throw ShapeError("add: shape mismatch " + shape_str(a->shape) + " vs " + shape_str(b->shape));
  bool needs = wants_grad<T>({&a, &b});
  auto out = make_out<T>(a->shape, needs);
  for (size_t i = 0; i < a->value.size(); ++i) out->value[i] = a->value[i] + b->value[i];
  if (needs) {
    out->inputs = {a, b};
    out->backprop = [](Tensor<T>& t) {
      for (auto& in : t.inputs)
        if (in->requires_grad)
          for (size_t i = 0; i < t.grad.size(); ++i) in->grad[i] += t.grad[i];
    };
  }
  return out;
}

template <class T>
TensorPtr<T> add_channel(const TensorPtr<T>& x, const TensorPtr<T>& bias) {
  if (x->ndim() != 4 && x->ndim() != 2)
    throw ShapeError("add_channel: input must be 2-D or 4-D, got " + shape_str(x->shape));
  int B = x->dim(0), C = x->dim(1);
  int S = x->ndim() == 4 ? x->dim(2) * x->dim(3) : 1;
  int mode = per_channel_mode(*x, *bias, "add_channel");
  bool needs = wants_grad<T>({&x, &bias});
  auto out = make_out<T>(x->shape, needs);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c) {
      T bv = bias->value[mode ? static_cast<int64_t>(b) * C + c : c];
      int64_t base = (static_cast<int64_t>(b) * C + c) * S;
      for (int i = 0; i < S; ++i) out->value[base + i] = x->value[base + i] + bv;
    }
  if (needs) {
    out->inputs = {x, bias};
    out->backprop = [B, C, S, mode](Tensor<T>& t) {
      auto& xin = *t.inputs[0];
      auto& bv = *t.inputs[1];
      if (xin.requires_grad)
        for (size_t i = 0; i < t.grad.size(); ++i) xin.grad[i] += t.grad[i];
      if (bv.requires_grad) {
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < C; ++c) {
            int64_t base = (static_cast<int64_t>(b) * C + c) * S;
            T s = T(0);
            for (int i = 0; i < S; ++i) s += t.grad[base + i];
            bv.grad[mode ? static_cast<int64_t>(b) * C + c : c] += s;
          }
      }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> embedding_lookup(const TensorPtr<T>& table, int index) {
  if (table->ndim() != 2) throw ShapeError("embedding_lookup: table must be 2-D, got " + shape_str(table->shape));
  int R = table->dim(0), C = table->dim(1);
  if (index < 0 || index >= R)
    throw IndexError("embedding_lookup: index " + std::to_string(index) + " out of range [0, " +
                     std::to_string(R) + ")");
  bool needs = wants_grad<T>({&table});
  auto out = make_out<T>({C}, needs);
  std::memcpy(out->value.data(), table->value.data() + static_cast<int64_t>(index) * C, sizeof(T) * C);
  if (needs) {
    out->inputs = {table};
    out->backprop = [index, C](Tensor<T>& t) {
      auto& tab = *t.inputs[0];
      T* row = tab.grad.data() + static_cast<int64_t>(index) * C;
      for (int i = 0; i < C; ++i) row[i] += t.grad[i];
    };
  }
  return out;
}

template <class T>
TensorPtr<T> tanh_affine_gamma(const TensorPtr<T>& raw) {
  bool needs = wants_grad<T>({&raw});
  auto out = make_out<T>(raw->shape, needs);
  for (size_t i = 0; i < raw->value.size(); ++i)
    out->value[i] = T(2) * std::tanh(raw->value[i]) + T(1);
  if (needs) {
    out->inputs = {raw};
    out->backprop = [](Tensor<T>& t) {
      auto& x = *t.inputs[0];
      for (size_t i = 0; i < t.grad.size(); ++i) {
        T th = (t.value[i] - T(1)) / T(2);
        x.grad[i] += t.grad[i] * T(2) * (T(1) - th * th);
      }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> softmax_cross_entropy(const TensorPtr<T>& logits, const std::vector<int>& labels) {
  if (logits->ndim() != 2)
    throw ShapeError("softmax_cross_entropy: logits must be 2-D, got " + shape_str(logits->shape));
  int B = logits->dim(0), K = logits->dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
                     std::to_string(B));
  for (int b = 0; b < B; ++b)
    if (labels[b] < 0 || labels[b] >= K)
      throw IndexError("softmax_cross_entropy: label " + std::to_string(labels[b]) + " out of range [0, " +
                       std::to_string(K) + ")");

  bool needs = wants_grad<T>({&logits});
  auto out = make_out<T>({1}, needs);
  auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(B) * K);
  T loss = T(0);
  for (int b = 0; b < B; ++b) {
    const T* row = logits->value.data() + static_cast<int64_t>(b) * K;
    T m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    T z = T(0);
    for (int k = 0; k < K; ++k) z += std::exp(row[k] - m);
    T lse = m + std::log(z);
    loss += lse - row[labels[b]];
    T* p = probs->data() + static_cast<int64_t>(b) * K;
    for (int k = 0; k < K; ++k) p[k] = std::exp(row[k] - lse);
  }
  out->value[0] = loss / static_cast<T>(B);

  if (needs) {
    out->inputs = {logits};
    auto lab = std::make_shared<std::vector<int>>(labels);
    out->backprop = [probs, lab, B, K](Tensor<T>& t) {
      auto& x = *t.inputs[0];
      T scale = t.grad[0] / static_cast<T>(B);
      for (int b = 0; b < B; ++b) {
        const T* p = probs->data() + static_cast<int64_t>(b) * K;
        T* g = x.grad.data() + static_cast<int64_t>(b) * K;
        for (int k = 0; k < K; ++k) g[k] += scale * (p[k] - (k == (*lab)[b] ? T(1) : T(0)));
      }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> broadcast_batch(const TensorPtr<T>& x, int batch) {
  if (batch < 1) throw ShapeError("broadcast_batch: batch must be >= 1, got " + std::to_string(batch));
  std::vector<int> shape;
  int64_t inner;
  if (x->ndim() == 1) {
    shape = {batch, x->dim(0)};
    inner = x->dim(0);
  } else if (x->dim(0) == 1) {
    shape = x->shape;
    shape[0] = batch;
    inner = x->numel();
  } else {
    throw ShapeError("broadcast_batch: input must be rank-1 or have leading dim 1, got " +
                     shape_str(x->shape));
  }
  bool needs = wants_grad<T>({&x});
  auto out = make_out<T>(shape, needs);
  for (int b = 0; b < batch; ++b)
    std::memcpy(out->value.data() + b * inner, x->value.data(), sizeof(T) * inner);
  if (needs) {
    out->inputs = {x};
    out->backprop = [batch, inner](Tensor<T>& t) {
      auto& src = *t.inputs[0];
      for (int b = 0; b < batch; ++b) {
        const T* g = t.grad.data() + b * inner;
        for (int64_t i = 0; i < inner; ++i) src.grad[i] += g[i];
      }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> gather_batch(const TensorPtr<T>& x, const std::vector<int>& indices) {
  if (x->ndim() < 1) throw ShapeError("gather_batch: input must have a batch dim");
  int N = x->dim(0);
  int64_t inner = x->numel() / std::max(N, 1);
  for (int i : indices)
    if (i < 0 || i >= N)
      throw IndexError("gather_batch: index " + std::to_string(i) + " out of range [0, " + std::to_string(N) +
                       ")");
  std::vector<int> shape = x->shape;
  shape[0] = static_cast<int>(indices.size());
  bool needs = wants_grad<T>({&x});
  auto out = make_out<T>(shape, needs);
  for (size_t r = 0; r < indices.size(); ++r)
    std::memcpy(out->value.data() + r * inner, x->value.data() + indices[r] * inner, sizeof(T) * inner);
  if (needs) {
    out->inputs = {x};
    auto idx = std::make_shared<std::vector<int>>(indices);
    out->backprop = [idx, inner](Tensor<T>& t) {
      auto& src = *t.inputs[0];
      for (size_t r = 0; r < idx->size(); ++r) {
        const T* g = t.grad.data() + r * inner;
        T* d = src.grad.data() + (*idx)[r] * inner;
        for (int64_t i = 0; i < inner; ++i) d[i] += g[i];
      }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> concat_batch(const std::vector<TensorPtr<T>>& parts) {
  if (parts.empty()) throw UsageError("concat_batch: no parts");
  std::vector<int> shape = parts[0]->shape;
  int total = 0;
  for (auto& p : parts) {
    if (p->ndim() != parts[0]->ndim()) throw ShapeError("concat_batch: rank mismatch");
    for (int i = 1; i < p->ndim(); ++i)
      if (p->dim(i) != parts[0]->dim(i))
        throw ShapeError("concat_batch: trailing dims mismatch " + shape_str(p->shape) + " vs " +
                         shape_str(parts[0]->shape));
    total += p->dim(0);
  }
  shape[0] = total;
  bool needs = false;
  if (grad_enabled())
    for (auto& p : parts) needs = needs || p->requires_grad;
  auto out = make_out<T>(shape, needs);
  int64_t off = 0;
  for (auto& p : parts) {
    std::memcpy(out->value.data() + off, p->value.data(), sizeof(T) * p->value.size());
    off += static_cast<int64_t>(p->value.size());
  }
  if (needs) {
    out->inputs = parts;
    out->backprop = [](Tensor<T>& t) {
      int64_t off = 0;
      for (auto& p : t.inputs) {
        if (p->requires_grad)
          for (size_t i = 0; i < p->value.size(); ++i) p->grad[i] += t.grad[off + i];
        off += static_cast<int64_t>(p->value.size());
      }
    };
  }
  return out;
}

template <class T>
TensorPtr<T> reshape(const TensorPtr<T>& x, std::vector<int> shape) {
  if (shape_numel<T>(shape) != x->numel())
    throw ShapeError("reshape: cannot view " + shape_str(x->shape) + " as " + shape_str(shape));
  bool needs = wants_grad<T>({&x});
  auto out = make_out<T>(shape, needs);
  out->value = x->value;
  if (needs) {
    out->inputs = {x};
    out->backprop = [](Tensor<T>& t) {
      auto& src = *t.inputs[0];
      for (size_t i = 0; i < t.grad.size(); ++i) src.grad[i] += t.grad[i];
    };
  }
  return out;
}

template <class T>
TensorPtr<T> sum(const TensorPtr<T>& x) {
  bool needs = wants_grad<T>({&x});
  auto out = make_out<T>({1}, needs);
  T s = T(0);
  for (T v : x->value) s += v;
  out->value[0] = s;
  if (needs) {
    out->inputs = {x};
    out->backprop = [](Tensor<T>& t) {
      auto& src = *t.inputs[0];
      for (size_t i = 0; i < src.grad.size(); ++i) src.grad[i] += t.grad[0];
    };
  }
  return out;
}

template <class T>
std::vector<T> softmax_rows(const TensorPtr<T>& logits) {
  if (logits->ndim() != 2) throw ShapeError("softmax_rows: logits must be 2-D");
  int B = logits->dim(0), K = logits->dim(1);
  std::vector<T> out(static_cast<size_t>(B) * K);
  for (int b = 0; b < B; ++b) {
    const T* row = logits->value.data() + static_cast<int64_t>(b) * K;
    T m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    T z = T(0);
    for (int k = 0; k < K; ++k) z += std::exp(row[k] - m);
    for (int k = 0; k < K; ++k) out[static_cast<int64_t>(b) * K + k] = std::exp(row[k] - m) / z;
  }
  return out;
}

template <class T>
std::vector<int> argmax_rows(const TensorPtr<T>& logits) {
  if (logits->ndim() != 2) throw ShapeError("argmax_rows: logits must be 2-D");
  int B = logits->dim(0), K = logits->dim(1);
  std::vector<int> out(B);
  for (int b = 0; b < B; ++b) {
    const T* row = logits->value.data() + static_cast<int64_t>(b) * K;
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;
    out[b] = best;
  }
  return out;
}

#define MODNET_INSTANTIATE_OPS(T)                                                                        \
  template TensorPtr<T> conv2d<T>(const TensorPtr<T>&, const TensorPtr<T>&, const TensorPtr<T>&, int,   \
                                  int);                                                                  \
  template TensorPtr<T> relu<T>(const TensorPtr<T>&);                                                    \
  template TensorPtr<T> maxpool2d<T>(const TensorPtr<T>&, int, int);                                     \
  template TensorPtr<T> global_maxpool2d<T>(const TensorPtr<T>&);                                        \
  template TensorPtr<T> batchnorm<T>(const TensorPtr<T>&, const TensorPtr<T>&, const TensorPtr<T>&,      \
                                     const TensorPtr<T>&, const TensorPtr<T>&, bool, T, T, bool);        \
  template TensorPtr<T> linear<T>(const TensorPtr<T>&, const TensorPtr<T>&, const TensorPtr<T>&);        \
  template TensorPtr<T> concat_channels<T>(const TensorPtr<T>&, const TensorPtr<T>&);                    \
  template std::pair<TensorPtr<T>, TensorPtr<T>> split_channels<T>(const TensorPtr<T>&, int);            \
  template TensorPtr<T> modulate<T>(const TensorPtr<T>&, const TensorPtr<T>&);                           \
  template TensorPtr<T> add<T>(const TensorPtr<T>&, const TensorPtr<T>&);                                \
  template TensorPtr<T> add_channel<T>(const TensorPtr<T>&, const TensorPtr<T>&);                        \
  template TensorPtr<T> embedding_lookup<T>(const TensorPtr<T>&, int);                                   \
  template TensorPtr<T> tanh_affine_gamma<T>(const TensorPtr<T>&);                                       \
  template TensorPtr<T> softmax_cross_entropy<T>(const TensorPtr<T>&, const std::vector<int>&);          \
  template TensorPtr<T> broadcast_batch<T>(const TensorPtr<T>&, int);                                    \
  template TensorPtr<T> gather_batch<T>(const TensorPtr<T>&, const std::vector<int>&);                   \
  template TensorPtr<T> concat_batch<T>(const std::vector<TensorPtr<T>>&);                               \
  template TensorPtr<T> reshape<T>(const TensorPtr<T>&, std::vector<int>);                               \
  template TensorPtr<T> sum<T>(const TensorPtr<T>&);                                                     \
  template std::vector<T> softmax_rows<T>(const TensorPtr<T>&);                                          \
  template std::vector<int> argmax_rows<T>(const TensorPtr<T>&);

MODNET_INSTANTIATE_OPS(float)
MODNET_INSTANTIATE_OPS(double)

}  // namespace modnet
