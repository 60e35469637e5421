#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "calprio/common.hpp"

namespace calprio {

// Dense row-major tensor of doubles. Shapes are small (rank <= 4), values are
// owned. Immutable by convention once handed to the tape.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<double> d);

    static Tensor zeros(std::vector<int> s);
    static Tensor full(std::vector<int> s, double v);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    double item() const;
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
};

std::int64_t shape_product(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// -------- forward kernels (shared by the tape and the eval path) --------

// out[i,j] = sum_d x[i,d]*W[d,j] + b[j]
Tensor affine_forward(const Tensor& x, const Tensor& W, const Tensor& b);

// Cross-correlation of x[B,C,H,W] with kernels[F,C,k,k].
// Output spatial size = floor((H + 2*pad - k)/stride) + 1.
Tensor conv2d_forward(const Tensor& x, const Tensor& kernels, int stride, int pad);

// Per-channel bias add on a [B,C,H,W] tensor.
Tensor channel_bias_forward(const Tensor& x, const Tensor& b);

Tensor relu_forward(const Tensor& x);
Tensor add_forward(const Tensor& x, const Tensor& y);

// Row-wise softmax of logits[B,K], computed with max-subtraction.
Tensor softmax_forward(const Tensor& logits);

// [B,C,H,W] -> [B,C] spatial mean.
Tensor global_avg_pool_forward(const Tensor& x);

Tensor reshape_forward(const Tensor& x, const std::vector<int>& new_shape);

// -------- low-level matrix helpers --------

// C[m x n] = A[m x k] * B[k x n], all row-major flat buffers.
void matmul(const double* A, const double* B, double* C, int m, int k, int n);
// C[m x n] += A[m x k] * B[k x n]
void matmul_acc(const double* A, const double* B, double* C, int m, int k, int n);
// C[m x n] += A[m x k] * B[n x k]^T
void matmul_abt_acc(const double* A, const double* B, double* C, int m, int k, int n);
// C[m x n] += A[k x m]^T * B[k x n]
void matmul_atb_acc(const double* A, const double* B, double* C, int m, int k, int n);

// im2col for one sample: x[C,H,W] -> cols[(C*k*k) x (OH*OW)].
void im2col(const double* x, int C, int H, int W, int k, int stride, int pad,
            double* cols, int OH, int OW);
// Transpose of im2col: scatter-adds cols back into dx[C,H,W].
void col2im_acc(const double* cols, int C, int H, int W, int k, int stride, int pad,
                double* dx, int OH, int OW);

}  // namespace calprio
