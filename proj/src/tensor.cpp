#include "calprio/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace calprio {

std::int64_t shape_product(const std::vector<int>& shape) {
    std::int64_t p = 1;
    for (int d : shape) p *= d;
    return p;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    for (int dd : shape) {
        if (dd <= 0) throw DimensionError("tensor dimension must be positive, got shape " + shape_str(shape));
    }
    if (shape_product(shape) != static_cast<std::int64_t>(data.size())) {
        throw DimensionError("tensor value count " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(std::vector<int> s) {
    std::int64_t n = shape_product(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Tensor Tensor::full(std::vector<int> s, double v) {
    std::int64_t n = shape_product(s);
    return Tensor(std::move(s), std::vector<double>(static_cast<std::size_t>(n), v));
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape));
    return data[0];
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

// -------- matrix helpers --------

void matmul(const double* A, const double* B, double* C, int m, int k, int n) {
    std::memset(C, 0, sizeof(double) * static_cast<std::size_t>(m) * static_cast<std::size_t>(n));
    matmul_acc(A, B, C, m, k, n);
}

void matmul_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<std::int64_t>(i) * k;
        double* c = C + static_cast<std::int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void matmul_abt_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* a = A + static_cast<std::int64_t>(i) * k;
        double* c = C + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* b = B + static_cast<std::int64_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += a[p] * b[p];
            c[j] += s;
        }
    }
}

void matmul_atb_acc(const double* A, const double* B, double* C, int m, int k, int n) {
    for (int p = 0; p < k; ++p) {
        const double* a = A + static_cast<std::int64_t>(p) * m;
        const double* b = B + static_cast<std::int64_t>(p) * n;
        for (int i = 0; i < m; ++i) {
            const double av = a[i];
            double* c = C + static_cast<std::int64_t>(i) * n;
            for (int j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

void im2col(const double* x, int C, int H, int W, int k, int stride, int pad,
            double* cols, int OH, int OW) {
    const int span = OH * OW;
    for (int c = 0; c < C; ++c) {
        const double* xc = x + static_cast<std::int64_t>(c) * H * W;
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                double* row = cols + static_cast<std::int64_t>((c * k + kh) * k + kw) * span;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    double* r = row + oh * OW;
                    if (ih < 0 || ih >= H) {
                        std::fill(r, r + OW, 0.0);
                        continue;
                    }
                    const double* xr = xc + static_cast<std::int64_t>(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        r[ow] = (iw >= 0 && iw < W) ? xr[iw] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_acc(const double* cols, int C, int H, int W, int k, int stride, int pad,
                double* dx, int OH, int OW) {
    const int span = OH * OW;
    for (int c = 0; c < C; ++c) {
        double* xc = dx + static_cast<std::int64_t>(c) * H * W;
        for (int kh = 0; kh < k; ++kh) {
            for (int kw = 0; kw < k; ++kw) {
                const double* row = cols + static_cast<std::int64_t>((c * k + kh) * k + kw) * span;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride - pad + kh;
                    if (ih < 0 || ih >= H) continue;
                    const double* r = row + oh * OW;
                    double* xr = xc + static_cast<std::int64_t>(ih) * W;
                    for (int ow = 0; ow < OW; ++ow) {
                        const int iw = ow * stride - pad + kw;
                        if (iw >= 0 && iw < W) xr[iw] += r[ow];
                    }
                }
            }
        }
    }
}

// -------- forward kernels --------

Tensor affine_forward(const Tensor& x, const Tensor& W, const Tensor& b) {
    if (x.rank() != 2 || W.rank() != 2 || b.rank() != 1)
        throw DimensionError("affine expects x[BxD], W[DxH], b[H]; got x " + shape_str(x.shape) +
                             ", W " + shape_str(W.shape) + ", b " + shape_str(b.shape));
    const int B = x.dim(0), D = x.dim(1);
    const int H = W.dim(1);
    if (W.dim(0) != D)
        throw DimensionError("affine inner dimensions differ: x has D=" + std::to_string(D) +
                             ", W has D=" + std::to_string(W.dim(0)));
    if (b.dim(0) != H)
        throw DimensionError("affine bias length " + std::to_string(b.dim(0)) +
                             " does not match output width " + std::to_string(H));
    Tensor out = Tensor::zeros({B, H});
    matmul(x.data.data(), W.data.data(), out.data.data(), B, D, H);
    for (int i = 0; i < B; ++i) {
        double* row = out.data.data() + static_cast<std::int64_t>(i) * H;
        for (int j = 0; j < H; ++j) row[j] += b.data[static_cast<std::size_t>(j)];
    }
    return out;
}

static void conv_out_dims(const Tensor& x, const Tensor& k, int stride, int pad, int& OH, int& OW) {
    const int H = x.dim(2), W = x.dim(3), kk = k.dim(2);
    if (stride < 1) throw DimensionError("conv2d stride must be >= 1, got " + std::to_string(stride));
    if (pad < 0) throw DimensionError("conv2d pad must be >= 0, got " + std::to_string(pad));
    if (kk > H + 2 * pad || kk > W + 2 * pad)
        throw DimensionError("conv2d kernel " + std::to_string(kk) + "x" + std::to_string(kk) +
                             " larger than padded input " + std::to_string(H + 2 * pad) + "x" +
                             std::to_string(W + 2 * pad));
    OH = (H + 2 * pad - kk) / stride + 1;
    OW = (W + 2 * pad - kk) / stride + 1;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& kernels, int stride, int pad) {
    if (x.rank() != 4 || kernels.rank() != 4)
        throw DimensionError("conv2d expects x[BxCxHxW], kernels[FxCxkxk]; got x " +
                             shape_str(x.shape) + ", kernels " + shape_str(kernels.shape));
    if (kernels.dim(2) != kernels.dim(3))
        throw DimensionError("conv2d kernels must be square, got " + shape_str(kernels.shape));
    if (kernels.dim(1) != x.dim(1))
        throw DimensionError("conv2d channel mismatch: input has C=" + std::to_string(x.dim(1)) +
                             ", kernels expect C=" + std::to_string(kernels.dim(1)));
    int OH, OW;
    conv_out_dims(x, kernels, stride, pad, OH, OW);
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int F = kernels.dim(0), k = kernels.dim(2);
    const int ckk = C * k * k, span = OH * OW;

    Tensor out = Tensor::zeros({B, F, OH, OW});
    std::vector<double> cols(static_cast<std::size_t>(ckk) * span);
    for (int bi = 0; bi < B; ++bi) {
        im2col(x.data.data() + static_cast<std::int64_t>(bi) * C * H * W, C, H, W, k, stride, pad,
               cols.data(), OH, OW);
        matmul(kernels.data.data(), cols.data(),
               out.data.data() + static_cast<std::int64_t>(bi) * F * span, F, ckk, span);
    }
    return out;
}

Tensor channel_bias_forward(const Tensor& x, const Tensor& b) {
    if (x.rank() != 4 || b.rank() != 1 || b.dim(0) != x.dim(1))
        throw DimensionError("channel_bias expects x[BxCxHxW] and b[C]; got x " + shape_str(x.shape) +
                             ", b " + shape_str(b.shape));
    Tensor out = x;
    const int B = x.dim(0), C = x.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < C; ++c) {
            double* p = out.data.data() + (static_cast<std::int64_t>(bi) * C + c) * hw;
            const double bv = b.data[static_cast<std::size_t>(c)];
            for (std::int64_t i = 0; i < hw; ++i) p[i] += bv;
        }
    return out;
}

Tensor relu_forward(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor add_forward(const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y))
        throw DimensionError("add requires matching shapes, got " + shape_str(x.shape) + " and " +
                             shape_str(y.shape));
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += y.data[i];
    return out;
}

Tensor softmax_forward(const Tensor& logits) {
    if (logits.rank() != 2 || logits.dim(1) < 2)
        throw DimensionError("softmax expects logits[BxK] with K >= 2, got " + shape_str(logits.shape));
    const int B = logits.dim(0), K = logits.dim(1);
    Tensor out = Tensor::zeros({B, K});
    for (int i = 0; i < B; ++i) {
        const double* row = logits.data.data() + static_cast<std::int64_t>(i) * K;
        double* o = out.data.data() + static_cast<std::int64_t>(i) * K;
        double mx = row[0];
        for (int j = 1; j < K; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < K; ++j) {
            o[j] = std::exp(row[j] - mx);
            sum += o[j];
        }
        for (int j = 0; j < K; ++j) o[j] /= sum;
    }
    return out;
}

Tensor global_avg_pool_forward(const Tensor& x) {
    if (x.rank() != 4)
        throw DimensionError("global_avg_pool expects x[BxCxHxW], got " + shape_str(x.shape));
    const int B = x.dim(0), C = x.dim(1);
    const std::int64_t hw = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    Tensor out = Tensor::zeros({B, C});
    for (int bi = 0; bi < B; ++bi)
        for (int c = 0; c < C; ++c) {
            const double* p = x.data.data() + (static_cast<std::int64_t>(bi) * C + c) * hw;
            double s = 0.0;
            for (std::int64_t i = 0; i < hw; ++i) s += p[i];
            out.data[static_cast<std::size_t>(bi) * C + c] = s / static_cast<double>(hw);
        }
    return out;
}

Tensor reshape_forward(const Tensor& x, const std::vector<int>& new_shape) {
    if (shape_product(new_shape) != x.size())
        throw DimensionError("reshape from " + shape_str(x.shape) + " to " + shape_str(new_shape) +
                             " changes element count");
    return Tensor(new_shape, x.data);
}

}  // namespace calprio
