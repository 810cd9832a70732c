// Copyright (c) the mce authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Tape-based reverse-mode differentiation over real tensors and complex
// matrices.
//
// Gradient convention: a real node stores dJ/dx. A complex node stores the
// conjugate Wirtinger derivative dJ/dZ* = (dJ/dRe Z + i dJ/dIm Z) / 2, so
// that -grad is the steepest-descent direction and J = ||Z||_F^2 has
// gradient Z.

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mce/numerics.hpp"

namespace mce::ad {

struct NonScalarOutput : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense real tensor, row-major (last index fastest).
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape_, double fill = 0.0);
    static Tensor scalar(double v) { return Tensor({1}, v); }

    std::size_t size() const { return data.size(); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
    double item() const;

    bool operator==(const Tensor& o) const = default;
};

std::size_t shape_size(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

struct Value {
    bool is_complex = false;
    Tensor real;
    ComplexMatrix cplx;

    static Value of(Tensor t) { return {false, std::move(t), {}}; }
    static Value of(ComplexMatrix m) { return {true, {}, std::move(m)}; }
};

/// Named trainable real tensor with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

class Tape;

/// Handle to a node on a tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& real() const;
    const ComplexMatrix& cplx() const;
    bool is_complex() const;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    struct Node {
        Value value;
        Value grad;
        bool needs_grad = false;
        bool has_grad = false;
        Backward backward;
        Parameter* param = nullptr;
    };

    Var constant(Tensor t);
    Var constant(ComplexMatrix m);
    /// Differentiable input whose gradient is read back with grad().
    Var leaf(Tensor t);
    Var leaf(ComplexMatrix m);
    /// Parameter leaf; backward() adds its gradient into p.grad.
    Var param(Parameter& p);

    /// Record a computed node. `parents` decide whether it needs a gradient.
    Var record(Value v, std::initializer_list<Var> parents, Backward bw);
    Var record(Value v, std::span<const Var> parents, Backward bw);

    /// Reverse sweep from a real scalar node.
    void backward(Var loss);

    Node& node(std::size_t id) { return nodes_[id]; }
    const Node& node(std::size_t id) const { return nodes_[id]; }
    bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient slot of node `id`, zero-allocated on first use.
    Tensor& real_grad(std::size_t id);
    ComplexMatrix& cplx_grad(std::size_t id);

    /// Gradient after backward(); zeros if nothing flowed into it.
    Value grad(Var v) const;

    void clear() { nodes_.clear(); }

private:
    Var push(Node n);
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Real-tensor operators

/// y = x W + b with x [B, n_in], W [n_in, n_out], b [n_out]. The memory of W is
/// the column-major n_out x n_in matrix, as the dense kernels expect.
Var dense(Var x, Var w, Var b);
/// 3x3, stride 1, zero padding. x [B, H, W, Cin], k [3, 3, Cin, Cout], b [Cout].
Var conv3x3(Var x, Var k, Var b);
Var relu(Var x);
/// Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate).
Var dropout(Var x, double rate, RngStream& rng);
/// Element-wise product of equal-shaped tensors.
Var hadamard(Var a, Var b);
Var mul_const(Var a, const Tensor& c);
/// Element-wise quotient; b must be nonzero everywhere.
Var divide(Var a, Var b);
/// Element-wise natural log of a positive tensor.
Var log(Var a);
/// x [B, H, W, C]: RMS of x[b, :, w, :] (of all of x[b] when pooled) broadcast to
/// the shape of x, floored at 1e-150.
Var column_rms(Var x, bool pooled = false);
Var sum(Var a);
Var sum_sq(Var a);
/// Channels [first, first + count) of the last dimension.
Var slice_channels(Var x, int first, int count);
Var concat_channels(std::span<const Var> parts);

// ---------------------------------------------------------------------------
// Operators on either kind

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var stop_gradient(Var a);

// ---------------------------------------------------------------------------
// Complex-matrix operators

Var matmul(Var a, Var b);
Var adjoint(Var a);
/// Inverse of a Hermitian positive-definite matrix through its Cholesky factor.
Var hpd_inverse(Var a);
/// Re Tr(A) as a real scalar.
Var trace_real(Var a);
Var frobenius_sq(Var a);
Var scale_columns_const(Var a, std::span<const double> s);
/// Column-wise power cap ||x_k||^2 <= cap, piecewise: identity below, projection above.
Var normalize_power(Var a, double cap);
/// s * A for a real scalar node s.
Var scalar_times(Var s, Var a);
/// sum_k w[k] ||a_k||^2 over the columns of A, as a real scalar.
Var weighted_column_energy(Var a, std::span<const double> w);

// ---------------------------------------------------------------------------
// Real <-> complex

/// Row `row` of x [B, 2 rows cols] (or x [2 rows cols]) as a rows x cols complex
/// matrix: first half real parts, second half imaginary parts, column-major.
Var pack_complex(Var x, int row, int rows, int cols);
/// Stack N x K complex matrices into [B, N, K, 2] (Re, Im channels).
Var complex_planes(std::span<const Var> mats);
/// Sample b of x [B, N, K, 2] back to an N x K complex matrix.
Var planes_to_complex(Var x, int b);

// ---------------------------------------------------------------------------
// Fused RHWI operators (reparameterised distortion)

/// Column k of the result is delta[k] * ||xbar_k|| * draws_k.
Var ue_distortion(Var xbar, const ComplexMatrix& draws, std::span<const double> delta);
/// Entry (n, t) is delta * sqrt(sum_j sum_k |H_j[n, k]|^2 ||xbar_{j,k}||^2) * draws(n, t).
Var bs_distortion(std::span<const ComplexMatrix> channels, std::span<const Var> xbars, const ComplexMatrix& draws,
                  double delta);

// ---------------------------------------------------------------------------
// Optimiser and gradient checker

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
    /// One bias-corrected update; `params` must be the same list on every call.
    void step(std::span<Parameter* const> params);
    void set_lr(double lr) { cfg_.lr = lr; }
    const AdamConfig& config() const { return cfg_; }
    long steps() const { return t_; }

private:
    AdamConfig cfg_;
    long t_ = 0;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

void zero_grad(std::span<Parameter* const> params);

/// Glorot-uniform fill in +-sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, int fan_in, int fan_out, RngStream& rng);

using LossBuilder = std::function<Var(Tape&, const std::vector<Var>&)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t components = 0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
};

/// Central differences on every real and imaginary component of `point`
/// against backward(). Errors are |a - f| / max(|a|, |f|, floor) with floor =
/// max(1e-8, 1e-3 * largest |a| of the same input); the step is h * max(1, |x|),
/// and a component that misses by more than 1e-6 is retried once at a tenth of it.
GradCheckReport grad_check(const LossBuilder& build, const std::vector<Value>& point, double h = 1e-5);

/// Same comparison for parameters: `build` must enter them through Tape::param so
/// backward() fills their gradients. At most `max_components` entries per
/// parameter are probed, chosen with `rng`.
GradCheckReport param_grad_check(const std::function<Var(Tape&)>& build, std::span<Parameter* const> params,
                                 std::size_t max_components, RngStream& rng, double h = 1e-5);

}  // namespace mce::ad
