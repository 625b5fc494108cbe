#pragma once

// Differentiable primitive operations. All ops are total on finite
// inputs and produce finite outputs (stabilized softmax/log-sum-exp,
// epsilon inside normalization square roots, subgradient 0 for
// sqrt at 0 and atan2 at the origin).

#include <cstdint>
#include <vector>

#include "emmix/tensor.hpp"

namespace emmix {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
// atan2(y, x) per element; gradient at (0,0) defined as 0.
Tensor atan2(const Tensor& y, const Tensor& x);

// b's shape must equal the trailing shape of a; b is tiled over the
// leading axes (bias/positional-table addition).
Tensor add_broadcast(const Tensor& a, const Tensor& b);

// ---- linear algebra ----
// 2-D product op(a)[m×k] · op(b)[k×n]; trans flags reinterpret the
// stored operand as its transpose.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);
// Batched 3-D product over the leading axis.
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false,
           bool trans_b = false);

// ---- shape ----
Tensor reshape(const Tensor& a, Shape new_shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes);
Tensor transpose(const Tensor& a);  // 2-D
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// Contiguous range [start, start+len) along one axis.
Tensor slice_axis(const Tensor& a, std::size_t axis, std::size_t start,
                  std::size_t len);

// ---- reductions ----
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
// Mean over one axis; that axis is dropped from the output shape.
Tensor mean_axis(const Tensor& a, std::size_t axis);

// ---- normalization / attention pieces ----
// Row-stabilized softmax over the last axis.
Tensor softmax_rows(const Tensor& a);
// Normalize over the last axis (mean 0, variance 1, epsilon inside the
// square root), then scale by gain and shift by bias (both length d).
Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// ---- convolution stack ----
// x [N×C_in×W], w [C_out×C_in×K] (K odd), b [C_out]; stride 1,
// "same" zero padding, cross-correlation indexing (no kernel flip).
Tensor conv1d_same(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor avgpool1d(const Tensor& x, std::size_t kernel = 2,
                 std::size_t stride = 2);

// Running statistics owned by a batch-norm layer (not graph nodes).
struct BnStats {
  std::vector<double> mean;
  std::vector<double> var;
};
// x [N×C×W]; training mode normalizes with batch statistics over the
// N and W axes and folds them into `running` with the given momentum;
// eval mode normalizes with `running`.
Tensor batch_norm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                    BnStats& running, bool training, double momentum = 0.1,
                    double eps = 1e-5);

// ---- classification loss ----
// Mean cross-entropy of row-softmax(logits [N×K]) against integer labels.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
std::vector<int> argmax_rows(const Tensor& logits);

// ---- discrete Fourier transform ----
// Unitary convention: 1/sqrt(T) on both directions. Implemented as a
// dense linear operator so gradients flow through both transforms.
ComplexTensor dft(const Tensor& x);
Tensor idft(const ComplexTensor& f);
// Constant T×T operators: first = cos(2πkt/T)/√T, second = sin(2πkt/T)/√T.
std::pair<Tensor, Tensor> dft_matrices(std::size_t T);

}  // namespace emmix
