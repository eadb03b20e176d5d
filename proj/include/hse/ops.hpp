#pragma once

#include <vector>

#include "hse/tensor.hpp"

namespace hse {
namespace ops {

// Forward kernels. Inputs must share a dtype; outputs keep it.
// Backward kernels accumulate (+=) into the destination buffers, which lets
// the graph sum gradients across fan-out. Null destinations are skipped.

// Cross-correlation, H' = (H + 2*pad - k)/stride + 1.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int pad);
void conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     int stride, int pad, Tensor* d_input, Tensor* d_weight, Tensor* d_bias);

// out = input * weight^T + bias, input [N,Din], weight [Dout,Din].
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
void linear_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out,
                     Tensor* d_input, Tensor* d_weight, Tensor* d_bias);

Tensor relu(const Tensor& x);
void relu_backward(const Tensor& x, const Tensor& grad_out, Tensor* d_x);

Tensor tanh_op(const Tensor& x);
// y is the forward output (1 - y^2 rule).
void tanh_backward(const Tensor& y, const Tensor& grad_out, Tensor* d_x);

// 2x2 window, stride 2, floor extents; trailing odd row/col is dropped.
Tensor avg_pool2(const Tensor& x);
void avg_pool2_backward(const Tensor& x, const Tensor& grad_out, Tensor* d_x);

// [N,C,H,W] -> [N,C], mean over locations.
Tensor global_avg_pool(const Tensor& x);
void global_avg_pool_backward(const Tensor& x, const Tensor& grad_out, Tensor* d_x);

// [N,C,H,W] -> [N,C], plain sum over locations.
Tensor sum_spatial(const Tensor& x);
void sum_spatial_backward(const Tensor& x, const Tensor& grad_out, Tensor* d_x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double alpha);

// Per (sample, channel) softmax across all locations, max-subtracted.
Tensor softmax_spatial(const Tensor& x);
void softmax_spatial_backward(const Tensor& y, const Tensor& grad_out, Tensor* d_x);

// f[n,c] = sum_{h,w} e[n,c,h,w] * fmap[n,c,h,w].
Tensor attend_aggregate(const Tensor& fmap, const Tensor& e);

// [N,C,H,W] -> [N*H*W, C]; row r = (n*H + h)*W + w.
Tensor spatial_to_rows(const Tensor& x);
void spatial_to_rows_backward(const Tensor& x, const Tensor& grad_out, Tensor* d_x);

Tensor rows_to_spatial(const Tensor& rows, int n, int c, int h, int w);
void rows_to_spatial_backward(const Tensor& grad_out, Tensor* d_rows);

// [N,S] -> [N*times, S], each row repeated consecutively.
Tensor repeat_rows(const Tensor& x, int times);
void repeat_rows_backward(const Tensor& x, int times, const Tensor& grad_out, Tensor* d_x);

Tensor concat_cols(const Tensor& a, const Tensor& b);
void concat_cols_backward(int cols_a, const Tensor& grad_out, Tensor* d_a, Tensor* d_b);

// Score extension along rows: out[n,c] = x[n, parent[c]].
Tensor extend_rows(const Tensor& x, const std::vector<int>& parent);
void extend_rows_backward(const Tensor& x, const std::vector<int>& parent,
                          const Tensor& grad_out, Tensor* d_x);

// Batch-summed cross entropy at temperature 1; scalar output.
Tensor cross_entropy_sum(const Tensor& scores, const std::vector<int>& targets);
void cross_entropy_sum_backward(const Tensor& scores, const std::vector<int>& targets,
                                const Tensor& grad_out, Tensor* d_scores);

// Batch-summed KL(p_teacher^T || p_student^T) with tempered softmaxes.
// d/d(student) = (p - p')/T; the teacher receives gradient only when
// backprop_teacher is set (guidance detachment is the default contract).
Tensor kl_tempered_sum(const Tensor& student, const Tensor& teacher, double temperature);
void kl_tempered_sum_backward(const Tensor& student, const Tensor& teacher, double temperature,
                              bool backprop_teacher, const Tensor& grad_out,
                              Tensor* d_student, Tensor* d_teacher);

// Stable softmax of one row at the given temperature, computed in double.
void softmax_row(const double* scores, int n, double temperature, double* probs);

}  // namespace ops
}  // namespace hse
