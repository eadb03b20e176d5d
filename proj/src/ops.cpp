#define EIGEN_DONT_PARALLELIZE
#include "hse/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace hse {
namespace ops {

namespace {

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapM = Eigen::Map<const MatRM<T>>;

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  require(a.dtype() == b.dtype(), std::string(op) + ": dtype mismatch (" +
                                      dtype_name(a.dtype()) + " vs " + dtype_name(b.dtype()) + ")");
}

struct ConvDims {
  int n, cin, h, w, cout, k, ho, wo;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
                   int pad) {
  require(input.rank() == 4, "conv2d: input must be [N,Cin,H,W], got " + input.shape_str());
  require(weight.rank() == 4, "conv2d: weight must be [Cout,Cin,k,k], got " + weight.shape_str());
  require(weight.dim(2) == weight.dim(3), "conv2d: kernel must be square, got " + weight.shape_str());
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0),
          "conv2d: bias " + bias.shape_str() + " does not match Cout=" + std::to_string(weight.dim(0)));
  require(input.dim(1) == weight.dim(1),
          "conv2d: input channels " + std::to_string(input.dim(1)) + " != weight channels " +
              std::to_string(weight.dim(1)));
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(pad >= 0, "conv2d: pad must be >= 0");
  ConvDims d;
  d.n = input.dim(0);
  d.cin = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.cout = weight.dim(0);
  d.k = weight.dim(2);
  require(d.k <= d.h + 2 * pad && d.k <= d.w + 2 * pad,
          "conv2d: kernel " + std::to_string(d.k) + " exceeds padded input " + input.shape_str());
  d.ho = (d.h + 2 * pad - d.k) / stride + 1;
  d.wo = (d.w + 2 * pad - d.k) / stride + 1;
  return d;
}

// col is [Cin*k*k, Ho*Wo] for one sample; zero-padded taps contribute zeros.
template <class T>
void im2col(const T* x, const ConvDims& d, int stride, int pad, T* col) {
  const int hw = d.ho * d.wo;
  for (int c = 0; c < d.cin; ++c) {
    for (int ki = 0; ki < d.k; ++ki) {
      for (int kj = 0; kj < d.k; ++kj) {
        T* dst = col + (static_cast<int64_t>(c) * d.k * d.k + ki * d.k + kj) * hw;
        for (int oh = 0; oh < d.ho; ++oh) {
          const int ih = oh * stride + ki - pad;
          for (int ow = 0; ow < d.wo; ++ow) {
            const int iw = ow * stride + kj - pad;
            dst[oh * d.wo + ow] = (ih >= 0 && ih < d.h && iw >= 0 && iw < d.w)
                                      ? x[(static_cast<int64_t>(c) * d.h + ih) * d.w + iw]
                                      : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_acc(const T* col, const ConvDims& d, int stride, int pad, T* x) {
  const int hw = d.ho * d.wo;
  for (int c = 0; c < d.cin; ++c) {
    for (int ki = 0; ki < d.k; ++ki) {
      for (int kj = 0; kj < d.k; ++kj) {
        const T* src = col + (static_cast<int64_t>(c) * d.k * d.k + ki * d.k + kj) * hw;
        for (int oh = 0; oh < d.ho; ++oh) {
          const int ih = oh * stride + ki - pad;
          if (ih < 0 || ih >= d.h) continue;
          for (int ow = 0; ow < d.wo; ++ow) {
            const int iw = ow * stride + kj - pad;
            if (iw < 0 || iw >= d.w) continue;
            x[(static_cast<int64_t>(c) * d.h + ih) * d.w + iw] += src[oh * d.wo + ow];
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_kernel(const Tensor& input, const Tensor& weight, const Tensor& bias,
                   const ConvDims& d, int stride, int pad, Tensor& out) {
  const int hw = d.ho * d.wo;
  const int kk = d.cin * d.k * d.k;
  std::vector<T> col(static_cast<size_t>(kk) * hw);
  CMapM<T> wmat(weight.data<T>(), d.cout, kk);
  const T* b = bias.data<T>();
  for (int n = 0; n < d.n; ++n) {
    const T* x = input.data<T>() + static_cast<int64_t>(n) * d.cin * d.h * d.w;
    im2col<T>(x, d, stride, pad, col.data());
    CMapM<T> cmat(col.data(), kk, hw);
    MapM<T> omat(out.data<T>() + static_cast<int64_t>(n) * d.cout * hw, d.cout, hw);
    omat.noalias() = wmat * cmat;
    for (int co = 0; co < d.cout; ++co) omat.row(co).array() += b[co];
  }
}

template <class T>
void conv2d_backward_kernel(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                            const ConvDims& d, int stride, int pad, Tensor* d_input,
                            Tensor* d_weight, Tensor* d_bias) {
  const int hw = d.ho * d.wo;
  const int kk = d.cin * d.k * d.k;
  std::vector<T> col(static_cast<size_t>(kk) * hw);
  std::vector<T> dcol(static_cast<size_t>(kk) * hw);
  CMapM<T> wmat(weight.data<T>(), d.cout, kk);
  for (int n = 0; n < d.n; ++n) {
    const T* x = input.data<T>() + static_cast<int64_t>(n) * d.cin * d.h * d.w;
    CMapM<T> gmat(grad_out.data<T>() + static_cast<int64_t>(n) * d.cout * hw, d.cout, hw);
    if (d_weight || d_input) im2col<T>(x, d, stride, pad, col.data());
    if (d_weight) {
      CMapM<T> cmat(col.data(), kk, hw);
      MapM<T> dw(d_weight->data<T>(), d.cout, kk);
      dw.noalias() += gmat * cmat.transpose();
    }
    if (d_bias) {
      T* db = d_bias->data<T>();
      for (int co = 0; co < d.cout; ++co) db[co] += gmat.row(co).sum();
    }
    if (d_input) {
      MapM<T> dc(dcol.data(), kk, hw);
      dc.noalias() = wmat.transpose() * gmat;
      col2im_acc<T>(dcol.data(), d, stride, pad,
                    d_input->data<T>() + static_cast<int64_t>(n) * d.cin * d.h * d.w);
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad) {
  require_same_dtype(input, weight, "conv2d");
  require_same_dtype(input, bias, "conv2d");
  ConvDims d = conv_dims(input, weight, bias, stride, pad);
  Tensor out({d.n, d.cout, d.ho, d.wo}, input.dtype());
  if (input.dtype() == DType::Float32)
    conv2d_kernel<float>(input, weight, bias, d, stride, pad, out);
  else
    conv2d_kernel<double>(input, weight, bias, d, stride, pad, out);
  return out;
}

void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     int stride, int pad, Tensor* d_input, Tensor* d_weight, Tensor* d_bias) {
  Tensor bias_dummy({weight.dim(0)}, input.dtype());
  ConvDims d = conv_dims(input, weight, bias_dummy, stride, pad);
  require(grad_out.shape() == std::vector<int>({d.n, d.cout, d.ho, d.wo}),
          "conv2d_backward: grad shape " + grad_out.shape_str());
  if (input.dtype() == DType::Float32)
    conv2d_backward_kernel<float>(input, weight, grad_out, d, stride, pad, d_input, d_weight,
                                  d_bias);
  else
    conv2d_backward_kernel<double>(input, weight, grad_out, d, stride, pad, d_input, d_weight,
                                   d_bias);
}

namespace {

template <class T>
void linear_kernel(const Tensor& input, const Tensor& weight, const Tensor& bias, Tensor& out) {
  const int n = input.dim(0), din = input.dim(1), dout = weight.dim(0);
  CMapM<T> x(input.data<T>(), n, din);
  CMapM<T> w(weight.data<T>(), dout, din);
  MapM<T> o(out.data<T>(), n, dout);
  o.noalias() = x * w.transpose();
  const T* b = bias.data<T>();
  for (int j = 0; j < dout; ++j) o.col(j).array() += b[j];
}

template <class T>
void linear_backward_kernel(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                            Tensor* d_input, Tensor* d_weight, Tensor* d_bias) {
  const int n = input.dim(0), din = input.dim(1), dout = weight.dim(0);
  CMapM<T> x(input.data<T>(), n, din);
  CMapM<T> w(weight.data<T>(), dout, din);
  CMapM<T> g(grad_out.data<T>(), n, dout);
  if (d_input) {
    MapM<T> dx(d_input->data<T>(), n, din);
    dx.noalias() += g * w;
  }
  if (d_weight) {
    MapM<T> dw(d_weight->data<T>(), dout, din);
    dw.noalias() += g.transpose() * x;
  }
  if (d_bias) {
    T* db = d_bias->data<T>();
    for (int j = 0; j < dout; ++j) db[j] += g.col(j).sum();
  }
}

}  // namespace

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_same_dtype(input, weight, "linear");
  require_same_dtype(input, bias, "linear");
  require(input.rank() == 2, "linear: input must be [N,Din], got " + input.shape_str());
  require(weight.rank() == 2, "linear: weight must be [Dout,Din], got " + weight.shape_str());
  require(input.dim(1) == weight.dim(1),
          "linear: inner dimensions disagree, input " + input.shape_str() + " weight " +
              weight.shape_str());
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0),
          "linear: bias " + bias.shape_str() + " does not match Dout");
  Tensor out({input.dim(0), weight.dim(0)}, input.dtype());
  if (input.dtype() == DType::Float32)
    linear_kernel<float>(input, weight, bias, out);
  else
    linear_kernel<double>(input, weight, bias, out);
  return out;
}

void linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     Tensor* d_input, Tensor* d_weight, Tensor* d_bias) {
  require(grad_out.shape() == std::vector<int>({input.dim(0), weight.dim(0)}),
          "linear_backward: grad shape " + grad_out.shape_str());
  if (input.dtype() == DType::Float32)
    linear_backward_kernel<float>(input, weight, grad_out, d_input, d_weight, d_bias);
  else
    linear_backward_kernel<double>(input, weight, grad_out, d_input, d_weight, d_bias);
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape(), x.dtype());
  for (int64_t i = 0; i < x.numel(); ++i) {
    double v = x.get(i);
    out.set(i, v > 0.0 ? v : 0.0);
  }
  return out;
}

void relu_backward(const Tensor& x, const Tensor& grad_out, Tensor* d_x) {
  if (!d_x) return;
  // Subgradient 0 at exactly 0.
  for (int64_t i = 0; i < x.numel(); ++i)
    if (x.get(i) > 0.0) d_x->set(i, d_x->get(i) + grad_out.get(i));
}

Tensor tanh_op(const Tensor& x) {
  Tensor out(x.shape(), x.dtype());
  for (int64_t i = 0; i < x.numel(); ++i) out.set(i, std::tanh(x.get(i)));
  return out;
}

void tanh_backward(const Tensor& y, const Tensor& grad_out, Tensor* d_x) {
  if (!d_x) return;
  for (int64_t i = 0; i < y.numel(); ++i) {
    double t = y.get(i);
    d_x->set(i, d_x->get(i) + grad_out.get(i) * (1.0 - t * t));
  }
}

Tensor avg_pool2(const Tensor& x) {
  require(x.rank() == 4, "avg_pool2: input must be [N,C,H,W], got " + x.shape_str());
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  require(h >= 2 && w >= 2, "avg_pool2: spatial extents must be >= 2, got " + x.shape_str());
  const int ho = h / 2, wo = w / 2;
  Tensor out({n, c, ho, wo}, x.dtype());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          double s = x.at4(i, j, 2 * oh, 2 * ow) + x.at4(i, j, 2 * oh, 2 * ow + 1) +
                     x.at4(i, j, 2 * oh + 1, 2 * ow) + x.at4(i, j, 2 * oh + 1, 2 * ow + 1);
          out.set(((static_cast<int64_t>(i) * c + j) * ho + oh) * wo + ow, s * 0.25);
        }
  return out;
}

void avg_pool2_backward(const Tensor& x, const Tensor& grad_out, Tensor* d_x) {
  if (!d_x) return;
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = h / 2, wo = w / 2;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      for (int oh = 0; oh < ho; ++oh)
        for (int ow = 0; ow < wo; ++ow) {
          double g = grad_out.get(((static_cast<int64_t>(i) * c + j) * ho + oh) * wo + ow) * 0.25;
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw) {
              int64_t idx =
                  ((static_cast<int64_t>(i) * c + j) * h + 2 * oh + dh) * w + 2 * ow + dw;
              d_x->set(idx, d_x->get(idx) + g);
            }
        }
}

Tensor global_avg_pool(const Tensor& x) {
  Tensor out = sum_spatial(x);
  const double inv = 1.0 / (x.dim(2) * x.dim(3));
  for (int64_t i = 0; i < out.numel(); ++i) out.set(i, out.get(i) * inv);
  return out;
}

void global_avg_pool_backward(const Tensor& x, const Tensor& grad_out, Tensor* d_x) {
  if (!d_x) return;
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const double inv = 1.0 / hw;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double g = grad_out.get(static_cast<int64_t>(i) * c + j) * inv;
      int64_t base = (static_cast<int64_t>(i) * c + j) * hw;
      for (int p = 0; p < hw; ++p) d_x->set(base + p, d_x->get(base + p) + g);
    }
}

Tensor sum_spatial(const Tensor& x) {
  require(x.rank() == 4, "sum_spatial: input must be [N,C,H,W], got " + x.shape_str());
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out({n, c}, x.dtype());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double s = 0.0;
      int64_t base = (static_cast<int64_t>(i) * c + j) * hw;
      for (int p = 0; p < hw; ++p) s += x.get(base + p);
      out.set(static_cast<int64_t>(i) * c + j, s);
    }
  return out;
}

void sum_spatial_backward(const Tensor& x, const Tensor& grad_out, Tensor* d_x) {
  if (!d_x) return;
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      double g = grad_out.get(static_cast<int64_t>(i) * c + j);
      int64_t base = (static_cast<int64_t>(i) * c + j) * hw;
      for (int p = 0; p < hw; ++p) d_x->set(base + p, d_x->get(base + p) + g);
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "add");
  require(a.same_shape(b), "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.shape(), a.dtype());
  for (int64_t i = 0; i < a.numel(); ++i) out.set(i, a.get(i) + b.get(i));
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "mul");
  require(a.same_shape(b), "mul: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor out(a.shape(), a.dtype());
  for (int64_t i = 0; i < a.numel(); ++i) out.set(i, a.get(i) * b.get(i));
  return out;
}

Tensor scale(const Tensor& a, double alpha) {
  Tensor out(a.shape(), a.dtype());
  for (int64_t i = 0; i < a.numel(); ++i) out.set(i, a.get(i) * alpha);
  return out;
}

Tensor softmax_spatial(const Tensor& x) {
  require(x.rank() == 4, "softmax_spatial: input must be [N,C,H,W], got " + x.shape_str());
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out(x.shape(), x.dtype());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      int64_t base = (static_cast<int64_t>(i) * c + j) * hw;
      double mx = -std::numeric_limits<double>::infinity();
      for (int p = 0; p < hw; ++p) mx = std::max(mx, x.get(base + p));
      double sum = 0.0;
      for (int p = 0; p < hw; ++p) {
        double e = std::exp(x.get(base + p) - mx);
        out.set(base + p, e);
        sum += e;
      }
      double inv = 1.0 / sum;
      for (int p = 0; p < hw; ++p) out.set(base + p, out.get(base + p) * inv);
    }
  return out;
}

void softmax_spatial_backward(const Tensor& y, const Tensor& grad_out, Tensor* d_x) {
  if (!d_x) return;
  const int n = y.dim(0), c = y.dim(1), hw = y.dim(2) * y.dim(3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j) {
      int64_t base = (static_cast<int64_t>(i) * c + j) * hw;
      double dot = 0.0;
      for (int p = 0; p < hw; ++p) dot += grad_out.get(base + p) * y.get(base + p);
      for (int p = 0; p < hw; ++p)
        d_x->set(base + p, d_x->get(base + p) + y.get(base + p) * (grad_out.get(base + p) - dot));
    }
}

Tensor attend_aggregate(const Tensor& fmap, const Tensor& e) {
  require(fmap.same_shape(e),
          "attend_aggregate: shape mismatch " + fmap.shape_str() + " vs " + e.shape_str());
  return sum_spatial(mul(e, fmap));
}

Tensor spatial_to_rows(const Tensor& x) {
  require(x.rank() == 4, "spatial_to_rows: input must be [N,C,H,W], got " + x.shape_str());
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n * h * w, c}, x.dtype());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      for (int p = 0; p < h * w; ++p)
        out.set((static_cast<int64_t>(i) * h * w + p) * c + j,
                x.get((static_cast<int64_t>(i) * c + j) * h * w + p));
  return out;
}

void spatial_to_rows_backward(const Tensor& x, const Tensor& grad_out, Tensor* d_x) {
  if (!d_x) return;
  const int n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      for (int p = 0; p < hw; ++p) {
        int64_t idx = (static_cast<int64_t>(i) * c + j) * hw + p;
        d_x->set(idx, d_x->get(idx) + grad_out.get((static_cast<int64_t>(i) * hw + p) * c + j));
      }
}

Tensor rows_to_spatial(const Tensor& rows, int n, int c, int h, int w) {
  require(rows.rank() == 2 && rows.dim(0) == n * h * w && rows.dim(1) == c,
          "rows_to_spatial: rows " + rows.shape_str() + " do not match target " +
              shape_to_string({n, c, h, w}));
  Tensor out({n, c, h, w}, rows.dtype());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      for (int p = 0; p < h * w; ++p)
        out.set((static_cast<int64_t>(i) * c + j) * h * w + p,
                rows.get((static_cast<int64_t>(i) * h * w + p) * c + j));
  return out;
}

void rows_to_spatial_backward(const Tensor& grad_out, Tensor* d_rows) {
  if (!d_rows) return;
  const int n = grad_out.dim(0), c = grad_out.dim(1), hw = grad_out.dim(2) * grad_out.dim(3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      for (int p = 0; p < hw; ++p) {
        int64_t idx = (static_cast<int64_t>(i) * hw + p) * c + j;
        d_rows->set(idx,
                    d_rows->get(idx) + grad_out.get((static_cast<int64_t>(i) * c + j) * hw + p));
      }
}

Tensor repeat_rows(const Tensor& x, int times) {
  require(x.rank() == 2, "repeat_rows: input must be [N,S], got " + x.shape_str());
  require(times >= 1, "repeat_rows: times must be >= 1");
  const int n = x.dim(0), s = x.dim(1);
  Tensor out({n * times, s}, x.dtype());
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < times; ++r)
      for (int j = 0; j < s; ++j)
        out.set((static_cast<int64_t>(i) * times + r) * s + j, x.get(static_cast<int64_t>(i) * s + j));
  return out;
}

void repeat_rows_backward(const Tensor& x, int times, const Tensor& grad_out, Tensor* d_x) {
  if (!d_x) return;
  const int n = x.dim(0), s = x.dim(1);
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < times; ++r)
      for (int j = 0; j < s; ++j) {
        int64_t idx = static_cast<int64_t>(i) * s + j;
        d_x->set(idx, d_x->get(idx) + grad_out.get((static_cast<int64_t>(i) * times + r) * s + j));
      }
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "concat_cols");
  require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0),
          "concat_cols: row counts disagree, " + a.shape_str() + " vs " + b.shape_str());
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  Tensor out({n, ca + cb}, a.dtype());
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < ca; ++j)
      out.set(static_cast<int64_t>(i) * (ca + cb) + j, a.get(static_cast<int64_t>(i) * ca + j));
    for (int j = 0; j < cb; ++j)
      out.set(static_cast<int64_t>(i) * (ca + cb) + ca + j, b.get(static_cast<int64_t>(i) * cb + j));
  }
  return out;
}

void concat_cols_backward(int cols_a, const Tensor& grad_out, Tensor* d_a, Tensor* d_b) {
  const int n = grad_out.dim(0), ct = grad_out.dim(1), cb = ct - cols_a;
  if (d_a)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < cols_a; ++j) {
        int64_t idx = static_cast<int64_t>(i) * cols_a + j;
        d_a->set(idx, d_a->get(idx) + grad_out.get(static_cast<int64_t>(i) * ct + j));
      }
  if (d_b)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < cb; ++j) {
        int64_t idx = static_cast<int64_t>(i) * cb + j;
        d_b->set(idx, d_b->get(idx) + grad_out.get(static_cast<int64_t>(i) * ct + cols_a + j));
      }
}

Tensor extend_rows(const Tensor& x, const std::vector<int>& parent) {
  require(x.rank() == 2, "extend_rows: input must be [N,K], got " + x.shape_str());
  const int n = x.dim(0), kp = x.dim(1), k = static_cast<int>(parent.size());
  for (int c = 0; c < k; ++c)
    require(parent[static_cast<size_t>(c)] >= 0 && parent[static_cast<size_t>(c)] < kp,
            "extend_rows: parent index out of range at " + std::to_string(c));
  Tensor out({n, k}, x.dtype());
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c)
      out.set(static_cast<int64_t>(i) * k + c,
              x.get(static_cast<int64_t>(i) * kp + parent[static_cast<size_t>(c)]));
  return out;
}

void extend_rows_backward(const Tensor& x, const std::vector<int>& parent, const Tensor& grad_out,
                          Tensor* d_x) {
  if (!d_x) return;
  const int n = x.dim(0), kp = x.dim(1), k = static_cast<int>(parent.size());
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < k; ++c) {
      int64_t idx = static_cast<int64_t>(i) * kp + parent[static_cast<size_t>(c)];
      d_x->set(idx, d_x->get(idx) + grad_out.get(static_cast<int64_t>(i) * k + c));
    }
}

void softmax_row(const double* scores, int n, double temperature, double* probs) {
  if (!(temperature > 0.0)) throw NumericError("softmax temperature must be > 0");
  double mx = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) mx = std::max(mx, scores[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    probs[i] = std::exp((scores[i] - mx) / temperature);
    sum += probs[i];
  }
  double inv = 1.0 / sum;
  for (int i = 0; i < n; ++i) probs[i] *= inv;
}

namespace {

void row_as_double(const Tensor& t, int row, std::vector<double>& out) {
  const int k = t.dim(1);
  out.resize(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j) out[static_cast<size_t>(j)] = t.get(static_cast<int64_t>(row) * k + j);
}

}  // namespace

Tensor cross_entropy_sum(const Tensor& scores, const std::vector<int>& targets) {
  require(scores.rank() == 2, "cross_entropy: scores must be [N,K], got " + scores.shape_str());
  const int n = scores.dim(0), k = scores.dim(1);
  require(static_cast<int>(targets.size()) == n, "cross_entropy: target count mismatch");
  std::vector<double> row, p(static_cast<size_t>(k));
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    int t = targets[static_cast<size_t>(i)];
    require(t >= 0 && t < k, "cross_entropy: class index " + std::to_string(t) + " out of range");
    row_as_double(scores, i, row);
    softmax_row(row.data(), k, 1.0, p.data());
    total += -std::log(p[static_cast<size_t>(t)]);
  }
  return Tensor::scalar(total, scores.dtype());
}

void cross_entropy_sum_backward(const Tensor& scores, const std::vector<int>& targets,
                                const Tensor& grad_out, Tensor* d_scores) {
  if (!d_scores) return;
  const int n = scores.dim(0), k = scores.dim(1);
  const double seed = grad_out.get(0);
  std::vector<double> row, p(static_cast<size_t>(k));
  for (int i = 0; i < n; ++i) {
    row_as_double(scores, i, row);
    softmax_row(row.data(), k, 1.0, p.data());
    for (int j = 0; j < k; ++j) {
      double g = p[static_cast<size_t>(j)] - (j == targets[static_cast<size_t>(i)] ? 1.0 : 0.0);
      int64_t idx = static_cast<int64_t>(i) * k + j;
      d_scores->set(idx, d_scores->get(idx) + seed * g);
    }
  }
}

Tensor kl_tempered_sum(const Tensor& student, const Tensor& teacher, double temperature) {
  require(student.rank() == 2 && teacher.rank() == 2, "kl: inputs must be [N,K]");
  require(student.same_shape(teacher),
          "kl: length mismatch " + student.shape_str() + " vs " + teacher.shape_str());
  const int n = student.dim(0), k = student.dim(1);
  std::vector<double> srow, trow, p(static_cast<size_t>(k)), q(static_cast<size_t>(k));
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    row_as_double(student, i, srow);
    row_as_double(teacher, i, trow);
    softmax_row(srow.data(), k, temperature, p.data());
    softmax_row(trow.data(), k, temperature, q.data());
    for (int j = 0; j < k; ++j)
      total += q[static_cast<size_t>(j)] *
               (std::log(q[static_cast<size_t>(j)]) - std::log(p[static_cast<size_t>(j)]));
  }
  return Tensor::scalar(total, student.dtype());
}

void kl_tempered_sum_backward(const Tensor& student, const Tensor& teacher, double temperature,
                              bool backprop_teacher, const Tensor& grad_out, Tensor* d_student,
                              Tensor* d_teacher) {
  const int n = student.dim(0), k = student.dim(1);
  const double seed = grad_out.get(0);
  std::vector<double> srow, trow, p(static_cast<size_t>(k)), q(static_cast<size_t>(k));
  for (int i = 0; i < n; ++i) {
    row_as_double(student, i, srow);
    row_as_double(teacher, i, trow);
    softmax_row(srow.data(), k, temperature, p.data());
    softmax_row(trow.data(), k, temperature, q.data());
    if (d_student) {
      for (int j = 0; j < k; ++j) {
        int64_t idx = static_cast<int64_t>(i) * k + j;
        d_student->set(idx, d_student->get(idx) +
                                seed * (p[static_cast<size_t>(j)] - q[static_cast<size_t>(j)]) /
                                    temperature);
      }
    }
    if (d_teacher && backprop_teacher) {
      double kl = 0.0;
      for (int j = 0; j < k; ++j)
        kl += q[static_cast<size_t>(j)] *
              (std::log(q[static_cast<size_t>(j)]) - std::log(p[static_cast<size_t>(j)]));
      for (int j = 0; j < k; ++j) {
        double lr = std::log(q[static_cast<size_t>(j)]) - std::log(p[static_cast<size_t>(j)]);
        int64_t idx = static_cast<int64_t>(i) * k + j;
        d_teacher->set(idx, d_teacher->get(idx) +
                                seed * q[static_cast<size_t>(j)] * (lr - kl) / temperature);
      }
    }
  }
}

}  // namespace ops
}  // namespace hse
