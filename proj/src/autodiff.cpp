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

#include "mce/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "mce/kernels.hpp"

namespace mce::ad {

namespace {

void require(bool ok, const std::string& what) {
    if (!ok) throw DimensionMismatch(what);
}

void require_real(Var v, const char* op) {
    if (v.is_complex()) throw DimensionMismatch(std::string(op) + ": expects a real tensor");
}

void require_complex(Var v, const char* op) {
    if (!v.is_complex()) throw DimensionMismatch(std::string(op) + ": expects a complex matrix");
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(std::vector<int> shape_, double fill) : shape(std::move(shape_)), data(shape_size(shape), fill) {}

double Tensor::item() const {
    if (data.size() != 1) throw NonScalarOutput("Tensor::item on a tensor of shape " + shape_string(shape));
    return data[0];
}

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw DimensionMismatch("negative tensor dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

// ---------------------------------------------------------------------------
// Tape

const Tensor& Var::real() const { return tape->node(id).value.real; }
const ComplexMatrix& Var::cplx() const { return tape->node(id).value.cplx; }
bool Var::is_complex() const { return tape->node(id).value.is_complex; }

Var Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor t) { return push({Value::of(std::move(t)), {}, false, false, {}, nullptr}); }
Var Tape::constant(ComplexMatrix m) { return push({Value::of(std::move(m)), {}, false, false, {}, nullptr}); }
Var Tape::leaf(Tensor t) { return push({Value::of(std::move(t)), {}, true, false, {}, nullptr}); }
Var Tape::leaf(ComplexMatrix m) { return push({Value::of(std::move(m)), {}, true, false, {}, nullptr}); }
Var Tape::param(Parameter& p) { return push({Value::of(p.value), {}, true, false, {}, &p}); }

Var Tape::record(Value v, std::initializer_list<Var> parents, Backward bw) {
    return record(std::move(v), std::span<const Var>(parents.begin(), parents.size()), std::move(bw));
}

Var Tape::record(Value v, std::span<const Var> parents, Backward bw) {
    bool needs = false;
    for (const auto& p : parents) {
        if (p.tape != this) throw std::logic_error("Tape::record: parent from another tape");
        needs = needs || nodes_[p.id].needs_grad;
    }
    Node n{std::move(v), {}, needs, false, {}, nullptr};
    if (needs) n.backward = std::move(bw);
    return push(std::move(n));
}

Tensor& Tape::real_grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Value::of(Tensor(n.value.real.shape));
        n.has_grad = true;
    }
    return n.grad.real;
}

ComplexMatrix& Tape::cplx_grad(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Value::of(ComplexMatrix(n.value.cplx.rows(), n.value.cplx.cols()));
        n.has_grad = true;
    }
    return n.grad.cplx;
}

Value Tape::grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.has_grad) return n.grad;
    if (n.value.is_complex) return Value::of(ComplexMatrix(n.value.cplx.rows(), n.value.cplx.cols()));
    return Value::of(Tensor(n.value.real.shape));
}

void Tape::backward(Var loss) {
    Node& out = nodes_[loss.id];
    if (out.value.is_complex || out.value.real.size() != 1)
        throw NonScalarOutput("backward: output must be a real scalar");
    real_grad(loss.id).data[0] = 1.0;
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad || !n.has_grad) continue;
        if (n.backward) n.backward(*this, id);
        if (n.param) {
            auto& dst = n.param->grad.data;
            const auto& src = n.grad.real.data;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
        }
    }
}

// ---------------------------------------------------------------------------
// Real operators

Var dense(Var x, Var w, Var b) {
    require_real(x, "dense");
    const Tensor& xv = x.real();
    const Tensor& wv = w.real();
    require(wv.rank() == 2 && b.real().rank() == 1 && b.real().dim(0) == wv.dim(1), "dense: bad weight/bias shapes");
    const int n_in = wv.dim(0), n_out = wv.dim(1);
    const int batch = xv.rank() == 1 ? 1 : xv.dim(0);
    require(static_cast<int>(xv.size()) == batch * n_in, "dense: input " + shape_string(xv.shape) + " vs n_in " +
                                                             std::to_string(n_in));
    Tensor y(xv.rank() == 1 ? std::vector<int>{n_out} : std::vector<int>{batch, n_out});
    kernels::parallel::dense_forward(batch, n_in, n_out, xv.data.data(), wv.data.data(), b.real().data.data(),
                                     y.data.data());
    const std::size_t xi = x.id, wi = w.id, bi = b.id;
    return x.tape->record(Value::of(std::move(y)), {x, w, b}, [=](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad.real;
        double* gx = t.node(xi).needs_grad ? t.real_grad(xi).data.data() : nullptr;
        double* gw = t.node(wi).needs_grad ? t.real_grad(wi).data.data() : nullptr;
        double* gb = t.node(bi).needs_grad ? t.real_grad(bi).data.data() : nullptr;
        kernels::parallel::dense_backward(batch, n_in, n_out, t.node(xi).value.real.data.data(),
                                          t.node(wi).value.real.data.data(), g.data.data(), gx, gw, gb);
    });
}

Var conv3x3(Var x, Var k, Var b) {
    require_real(x, "conv3x3");
    const Tensor& xv = x.real();
    const Tensor& kv = k.real();
    require(xv.rank() == 4, "conv3x3: input must be [B,H,W,C], got " + shape_string(xv.shape));
    require(kv.rank() == 4 && kv.dim(0) == 3 && kv.dim(1) == 3 && kv.dim(2) == xv.dim(3),
            "conv3x3: kernel " + shape_string(kv.shape) + " does not match input " + shape_string(xv.shape));
    require(b.real().rank() == 1 && b.real().dim(0) == kv.dim(3), "conv3x3: bias shape");
    const kernels::ConvShape s{xv.dim(0), xv.dim(1), xv.dim(2), kv.dim(2), kv.dim(3)};
    Tensor y({s.batch, s.height, s.width, s.out_channels});
    kernels::parallel::conv3x3_forward(s, xv.data.data(), kv.data.data(), b.real().data.data(), y.data.data());
    const std::size_t xi = x.id, ki = k.id, bi = b.id;
    return x.tape->record(Value::of(std::move(y)), {x, k, b}, [=](Tape& t, std::size_t self) {
        const double* g = t.node(self).grad.real.data.data();
        if (t.node(xi).needs_grad)
            kernels::parallel::conv3x3_backward_input(s, g, t.node(ki).value.real.data.data(),
                                                      t.real_grad(xi).data.data());
        if (t.node(ki).needs_grad || t.node(bi).needs_grad) {
            double* gk = t.node(ki).needs_grad ? t.real_grad(ki).data.data() : nullptr;
            double* gb = t.node(bi).needs_grad ? t.real_grad(bi).data.data() : nullptr;
            if (gk) {
                kernels::parallel::conv3x3_backward_weights(s, t.node(xi).value.real.data.data(), g, gk, gb);
            } else {
                const std::size_t n_pix = static_cast<std::size_t>(s.batch) * s.height * s.width;
                for (std::size_t p = 0; p < n_pix; ++p)
                    for (int co = 0; co < s.out_channels; ++co) gb[co] += g[p * s.out_channels + co];
            }
        }
    });
}

Var relu(Var x) {
    require_real(x, "relu");
    Tensor y = x.real();
    for (auto& v : y.data) v = v > 0.0 ? v : 0.0;
    const std::size_t xi = x.id;
    return x.tape->record(Value::of(std::move(y)), {x}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.real.data;
        const auto& xv = t.node(xi).value.real.data;
        auto& gx = t.real_grad(xi).data;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) gx[i] += g[i];
    });
}

Var dropout(Var x, double rate, RngStream& rng) {
    require_real(x, "dropout");
    if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (rate == 0.0) return x;
    Tensor mask(x.real().shape);
    for (auto& m : mask.data) m = rng.uniform() < rate ? 0.0 : 1.0 / (1.0 - rate);
    return mul_const(x, mask);
}

Var hadamard(Var a, Var b) {
    require_real(a, "hadamard");
    require_real(b, "hadamard");
    require(a.real().shape == b.real().shape, "hadamard: shape mismatch " + shape_string(a.real().shape) + " vs " +
                                                  shape_string(b.real().shape));
    Tensor y = a.real();
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= b.real().data[i];
    const std::size_t ai = a.id, bi = b.id;
    return a.tape->record(Value::of(std::move(y)), {a, b}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.real.data;
        if (t.node(ai).needs_grad) {
            auto& ga = t.real_grad(ai).data;
            const auto& bv = t.node(bi).value.real.data;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
        }
        if (t.node(bi).needs_grad) {
            auto& gb = t.real_grad(bi).data;
            const auto& av = t.node(ai).value.real.data;
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
        }
    });
}

Var mul_const(Var a, const Tensor& c) {
    require_real(a, "mul_const");
    require(a.real().shape == c.shape, "mul_const: shape mismatch");
    Tensor y = a.real();
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= c.data[i];
    const std::size_t ai = a.id;
    return a.tape->record(Value::of(std::move(y)), {a}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.real.data;
        auto& ga = t.real_grad(ai).data;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c.data[i];
    });
}

Var divide(Var a, Var b) {
    require_real(a, "divide");
    require_real(b, "divide");
    require(a.real().shape == b.real().shape, "divide: shape mismatch " + shape_string(a.real().shape) + " vs " +
                                                  shape_string(b.real().shape));
    Tensor y = a.real();
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] /= b.real().data[i];
    const std::size_t ai = a.id, bi = b.id;
    return a.tape->record(Value::of(std::move(y)), {a, b}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.real.data;
        const auto& bv = t.node(bi).value.real.data;
        if (t.node(ai).needs_grad) {
            auto& ga = t.real_grad(ai).data;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / bv[i];
        }
        if (t.node(bi).needs_grad) {
            const auto& yv = t.node(self).value.real.data;
            auto& gb = t.real_grad(bi).data;
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * yv[i] / bv[i];
        }
    });
}

Var log(Var a) {
    require_real(a, "log");
    Tensor y = a.real();
    for (auto& v : y.data) {
        if (!(v > 0.0)) throw std::domain_error("log: non-positive input");
        v = std::log(v);
    }
    const std::size_t ai = a.id;
    return a.tape->record(Value::of(std::move(y)), {a}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.real.data;
        const auto& av = t.node(ai).value.real.data;
        auto& ga = t.real_grad(ai).data;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / av[i];
    });
}

Var column_rms(Var x, bool pooled) {
    require_real(x, "column_rms");
    const Tensor& xv = x.real();
    require(xv.rank() == 4, "column_rms: expected [B, H, W, C]");
    constexpr double kFloor = 1e-150;
    const int b = xv.dim(0), h = xv.dim(1), w = xv.dim(2), c = xv.dim(3);
    const int groups = pooled ? 1 : w, span = pooled ? w : 1;
    auto at = [=](int s, int r, int q, int ch) {
        return ((static_cast<std::size_t>(s) * h + r) * w + q) * c + ch;
    };
    auto group = [=](int s, int q) { return static_cast<std::size_t>(s * groups + (pooled ? 0 : q)); };
    Tensor rms({b, groups});
    for (int s = 0; s < b; ++s)
        for (int q = 0; q < w; ++q)
            for (int r = 0; r < h; ++r)
                for (int ch = 0; ch < c; ++ch) rms.data[group(s, q)] += xv.data[at(s, r, q, ch)] * xv.data[at(s, r, q, ch)];
    for (auto& e : rms.data) e = std::max(std::sqrt(e / (h * c * span)), kFloor);
    Tensor y(xv.shape);
    for (int s = 0; s < b; ++s)
        for (int r = 0; r < h; ++r)
            for (int q = 0; q < w; ++q)
                for (int ch = 0; ch < c; ++ch) y.data[at(s, r, q, ch)] = rms.data[group(s, q)];
    const std::size_t xi = x.id;
    return x.tape->record(Value::of(std::move(y)), {x}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.real.data;
        const auto& v = t.node(xi).value.real.data;
        auto& gx = t.real_grad(xi).data;
        std::vector<double> gs(rms.size(), 0.0);
        for (int s = 0; s < b; ++s)
            for (int r = 0; r < h; ++r)
                for (int q = 0; q < w; ++q)
                    for (int ch = 0; ch < c; ++ch) gs[group(s, q)] += g[at(s, r, q, ch)];
        // d rms / d v = v / (count * rms)
        for (int s = 0; s < b; ++s)
            for (int q = 0; q < w; ++q) {
                const double r0 = rms.data[group(s, q)];
                if (r0 <= kFloor) continue;
                const double k = gs[group(s, q)] / (h * c * span * r0);
                for (int r = 0; r < h; ++r)
                    for (int ch = 0; ch < c; ++ch) gx[at(s, r, q, ch)] += k * v[at(s, r, q, ch)];
            }
    });
}

Var sum(Var a) {
    require_real(a, "sum");
    double s = 0.0;
    for (double v : a.real().data) s += v;
    const std::size_t ai = a.id;
    return a.tape->record(Value::of(Tensor::scalar(s)), {a}, [=](Tape& t, std::size_t self) {
        const double g = t.node(self).grad.real.data[0];
        for (auto& v : t.real_grad(ai).data) v += g;
    });
}

Var sum_sq(Var a) {
    require_real(a, "sum_sq");
    double s = 0.0;
    for (double v : a.real().data) s += v * v;
    const std::size_t ai = a.id;
    return a.tape->record(Value::of(Tensor::scalar(s)), {a}, [=](Tape& t, std::size_t self) {
        const double g = t.node(self).grad.real.data[0];
        const auto& av = t.node(ai).value.real.data;
        auto& ga = t.real_grad(ai).data;
        for (std::size_t i = 0; i < av.size(); ++i) ga[i] += 2.0 * g * av[i];
    });
}

Var slice_channels(Var x, int first, int count) {
    require_real(x, "slice_channels");
    const Tensor& xv = x.real();
    const int c = xv.shape.back();
    require(first >= 0 && count >= 1 && first + count <= c, "slice_channels: range out of bounds");
    std::vector<int> shape = xv.shape;
    shape.back() = count;
    Tensor y(shape);
    const std::size_t outer = xv.size() / static_cast<std::size_t>(c);
    for (std::size_t p = 0; p < outer; ++p)
        for (int k = 0; k < count; ++k) y.data[p * count + k] = xv.data[p * c + first + k];
    const std::size_t xi = x.id;
    return x.tape->record(Value::of(std::move(y)), {x}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.real.data;
        auto& gx = t.real_grad(xi).data;
        for (std::size_t p = 0; p < outer; ++p)
            for (int k = 0; k < count; ++k) gx[p * c + first + k] += g[p * count + k];
    });
}

Var concat_channels(std::span<const Var> parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    std::vector<int> shape = parts[0].real().shape;
    std::vector<int> widths;
    int total = 0;
    for (const auto& p : parts) {
        require_real(p, "concat_channels");
        std::vector<int> s = p.real().shape;
        require(s.size() == shape.size() && std::equal(s.begin(), s.end() - 1, shape.begin()),
                "concat_channels: leading dimensions differ");
        widths.push_back(s.back());
        total += s.back();
    }
    shape.back() = total;
    Tensor y(shape);
    const std::size_t outer = y.size() / static_cast<std::size_t>(total);
    int off = 0;
    for (std::size_t q = 0; q < parts.size(); ++q) {
        const auto& src = parts[q].real().data;
        const int w = widths[q];
        for (std::size_t p = 0; p < outer; ++p)
            for (int k = 0; k < w; ++k) y.data[p * total + off + k] = src[p * w + k];
        off += w;
    }
    std::vector<std::size_t> ids;
    for (const auto& p : parts) ids.push_back(p.id);
    return parts[0].tape->record(Value::of(std::move(y)), parts, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.real.data;
        int o = 0;
        for (std::size_t q = 0; q < ids.size(); ++q) {
            const int w = widths[q];
            if (t.node(ids[q]).needs_grad) {
                auto& gq = t.real_grad(ids[q]).data;
                for (std::size_t p = 0; p < outer; ++p)
                    for (int k = 0; k < w; ++k) gq[p * w + k] += g[p * total + o + k];
            }
            o += w;
        }
    });
}

// ---------------------------------------------------------------------------
// Either kind

namespace {

Var add_scaled(Var a, Var b, double sb) {
    require(a.is_complex() == b.is_complex(), "add/sub: mixing real and complex operands");
    const std::size_t ai = a.id, bi = b.id;
    if (a.is_complex()) {
        require(a.cplx().rows() == b.cplx().rows() && a.cplx().cols() == b.cplx().cols(), "add/sub: shape mismatch");
        ComplexMatrix y = a.cplx() + b.cplx() * cplx(sb);
        return a.tape->record(Value::of(std::move(y)), {a, b}, [=](Tape& t, std::size_t self) {
            const ComplexMatrix g = t.node(self).grad.cplx;
            if (t.node(ai).needs_grad) t.cplx_grad(ai) += g;
            if (t.node(bi).needs_grad) t.cplx_grad(bi) += g * cplx(sb);
        });
    }
    require(a.real().shape == b.real().shape, "add/sub: shape mismatch " + shape_string(a.real().shape) + " vs " +
                                                  shape_string(b.real().shape));
    Tensor y = a.real();
    for (std::size_t i = 0; i < y.size(); ++i) y.data[i] += sb * b.real().data[i];
    return a.tape->record(Value::of(std::move(y)), {a, b}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.real.data;
        if (t.node(ai).needs_grad) {
            auto& ga = t.real_grad(ai).data;
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.node(bi).needs_grad) {
            auto& gb = t.real_grad(bi).data;
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += sb * g[i];
        }
    });
}

}  // namespace

Var add(Var a, Var b) { return add_scaled(a, b, 1.0); }
Var sub(Var a, Var b) { return add_scaled(a, b, -1.0); }

Var scale(Var a, double s) {
    const std::size_t ai = a.id;
    if (a.is_complex()) {
        return a.tape->record(Value::of(a.cplx() * cplx(s)), {a}, [=](Tape& t, std::size_t self) {
            t.cplx_grad(ai) += t.node(self).grad.cplx * cplx(s);
        });
    }
    Tensor y = a.real();
    for (auto& v : y.data) v *= s;
    return a.tape->record(Value::of(std::move(y)), {a}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.real.data;
        auto& ga = t.real_grad(ai).data;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
    });
}

Var stop_gradient(Var a) {
    const Tape::Node& n = a.tape->node(a.id);
    return n.value.is_complex ? a.tape->constant(n.value.cplx) : a.tape->constant(n.value.real);
}

// ---------------------------------------------------------------------------
// Complex operators

Var matmul(Var a, Var b) {
    require_complex(a, "matmul");
    require_complex(b, "matmul");
    ComplexMatrix y = a.cplx() * b.cplx();
    const std::size_t ai = a.id, bi = b.id;
    return a.tape->record(Value::of(std::move(y)), {a, b}, [=](Tape& t, std::size_t self) {
        const ComplexMatrix& g = t.node(self).grad.cplx;
        if (t.node(ai).needs_grad) {
            ComplexMatrix ga = g * t.node(bi).value.cplx.adjoint();
            t.cplx_grad(ai) += ga;
        }
        if (t.node(bi).needs_grad) {
            ComplexMatrix gb = t.node(ai).value.cplx.adjoint() * g;
            t.cplx_grad(bi) += gb;
        }
    });
}

Var adjoint(Var a) {
    require_complex(a, "adjoint");
    const std::size_t ai = a.id;
    return a.tape->record(Value::of(a.cplx().adjoint()), {a}, [=](Tape& t, std::size_t self) {
        ComplexMatrix ga = t.node(self).grad.cplx.adjoint();
        t.cplx_grad(ai) += ga;
    });
}

Var hpd_inverse(Var a) {
    require_complex(a, "hpd_inverse");
    ComplexMatrix h = a.cplx();
    const std::size_t n = h.rows();
    require(h.cols() == n, "hpd_inverse: matrix not square");
    // symmetrise so rounding in upstream products does not trip the Hermitian check
    for (std::size_t c = 0; c < n; ++c) {
        h(c, c) = h(c, c).real();
        for (std::size_t r = c + 1; r < n; ++r) {
            const cplx m = 0.5 * (h(r, c) + std::conj(h(c, r)));
            h(r, c) = m;
            h(c, r) = std::conj(m);
        }
    }
    if (!is_hermitian(a.cplx(), 1e-8)) throw NotPositiveDefinite("hpd_inverse: operand is not Hermitian");
    ComplexMatrix inv = hpd_inverse_from_factor(cholesky_with_jitter(h).lower);
    const std::size_t ai = a.id;
    return a.tape->record(Value::of(std::move(inv)), {a}, [=](Tape& t, std::size_t self) {
        const ComplexMatrix& c = t.node(self).value.cplx;
        ComplexMatrix ga = c * t.node(self).grad.cplx * c;
        t.cplx_grad(ai) -= ga;
    });
}

Var trace_real(Var a) {
    require_complex(a, "trace_real");
    require(a.cplx().rows() == a.cplx().cols(), "trace_real: matrix not square");
    const std::size_t ai = a.id;
    return a.tape->record(Value::of(Tensor::scalar(trace(a.cplx()).real())), {a}, [=](Tape& t, std::size_t self) {
        const double g = t.node(self).grad.real.data[0];
        ComplexMatrix& ga = t.cplx_grad(ai);
        for (std::size_t i = 0; i < ga.rows(); ++i) ga(i, i) += 0.5 * g;
    });
}

Var frobenius_sq(Var a) {
    require_complex(a, "frobenius_sq");
    const std::size_t ai = a.id;
    return a.tape->record(Value::of(Tensor::scalar(mce::frobenius_norm_sq(a.cplx()))), {a},
                          [=](Tape& t, std::size_t self) {
                              const double g = t.node(self).grad.real.data[0];
                              t.cplx_grad(ai) += t.node(ai).value.cplx * cplx(g);
                          });
}

Var scale_columns_const(Var a, std::span<const double> s) {
    require_complex(a, "scale_columns_const");
    std::vector<double> sv(s.begin(), s.end());
    ComplexMatrix y = mce::scale_columns(a.cplx(), sv);
    const std::size_t ai = a.id;
    return a.tape->record(Value::of(std::move(y)), {a}, [=](Tape& t, std::size_t self) {
        t.cplx_grad(ai) += mce::scale_columns(t.node(self).grad.cplx, sv);
    });
}

Var normalize_power(Var a, double cap) {
    require_complex(a, "normalize_power");
    const ComplexMatrix& u = a.cplx();
    const std::size_t cols = u.cols();
    std::vector<double> norm(cols);
    std::vector<char> scaled(cols);
    ComplexMatrix y = u;
    for (std::size_t k = 0; k < cols; ++k) {
        double e = 0.0;
        for (const auto& v : u.col(k)) e += std::norm(v);
        if (e == 0.0) throw std::domain_error("normalize_power: pilot column " + std::to_string(k) + " is zero");
        norm[k] = std::sqrt(e);
        scaled[k] = e > cap;
        if (scaled[k]) {
            const double f = std::sqrt(cap) / norm[k];
            for (auto& v : y.col(k)) v *= f;
        }
    }
    const std::size_t ai = a.id;
    return a.tape->record(Value::of(std::move(y)), {a}, [=](Tape& t, std::size_t self) {
        const ComplexMatrix& g = t.node(self).grad.cplx;
        const ComplexMatrix& uv = t.node(ai).value.cplx;
        ComplexMatrix& gu = t.cplx_grad(ai);
        const double c = std::sqrt(cap);
        for (std::size_t k = 0; k < cols; ++k) {
            if (!scaled[k]) {
                for (std::size_t r = 0; r < g.rows(); ++r) gu(r, k) += g(r, k);
                continue;
            }
            const double nk = norm[k];
            double proj = 0.0;  // Re(u^H g)
            for (std::size_t r = 0; r < g.rows(); ++r) proj += (std::conj(uv(r, k)) * g(r, k)).real();
            for (std::size_t r = 0; r < g.rows(); ++r)
                gu(r, k) += (c / nk) * (g(r, k) - uv(r, k) * (proj / (nk * nk)));
        }
    });
}

Var scalar_times(Var s, Var a) {
    require_real(s, "scalar_times");
    require_complex(a, "scalar_times");
    require(s.real().size() == 1, "scalar_times: first operand must be a scalar");
    const double sv = s.real().data[0];
    const std::size_t si = s.id, ai = a.id;
    return a.tape->record(Value::of(a.cplx() * cplx(sv)), {s, a}, [=](Tape& t, std::size_t self) {
        const ComplexMatrix& g = t.node(self).grad.cplx;
        if (t.node(si).needs_grad) {
            double acc = 0.0;
            const auto& av = t.node(ai).value.cplx.storage();
            for (std::size_t i = 0; i < av.size(); ++i) acc += (std::conj(g.storage()[i]) * av[i]).real();
            t.real_grad(si).data[0] += 2.0 * acc;
        }
        if (t.node(ai).needs_grad) t.cplx_grad(ai) += g * cplx(t.node(si).value.real.data[0]);
    });
}

Var weighted_column_energy(Var a, std::span<const double> w) {
    require_complex(a, "weighted_column_energy");
    require(w.size() == a.cplx().cols(), "weighted_column_energy: weight count mismatch");
    std::vector<double> wv(w.begin(), w.end());
    double e = 0.0;
    for (std::size_t k = 0; k < wv.size(); ++k)
        for (const auto& v : a.cplx().col(k)) e += wv[k] * std::norm(v);
    const std::size_t ai = a.id;
    return a.tape->record(Value::of(Tensor::scalar(e)), {a}, [=](Tape& t, std::size_t self) {
        const double g = t.node(self).grad.real.data[0];
        t.cplx_grad(ai) += mce::scale_columns(t.node(ai).value.cplx, wv) * cplx(g);
    });
}

// ---------------------------------------------------------------------------
// Real <-> complex

Var pack_complex(Var x, int row, int rows, int cols) {
    require_real(x, "pack_complex");
    const Tensor& xv = x.real();
    const std::size_t width = 2 * static_cast<std::size_t>(rows) * cols;
    const std::size_t n_rows = xv.size() / width;
    require(xv.size() == n_rows * width && row >= 0 && static_cast<std::size_t>(row) < n_rows,
            "pack_complex: tensor " + shape_string(xv.shape) + " cannot hold row " + std::to_string(row) + " of " +
                std::to_string(rows) + "x" + std::to_string(cols));
    const std::size_t half = width / 2;
    const std::size_t off = static_cast<std::size_t>(row) * width;
    ComplexMatrix y(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
    for (std::size_t i = 0; i < half; ++i) y.storage()[i] = {xv.data[off + i], xv.data[off + half + i]};
    const std::size_t xi = x.id;
    return x.tape->record(Value::of(std::move(y)), {x}, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.cplx.storage();
        auto& gx = t.real_grad(xi).data;
        for (std::size_t i = 0; i < half; ++i) {
            gx[off + i] += 2.0 * g[i].real();
            gx[off + half + i] += 2.0 * g[i].imag();
        }
    });
}

Var complex_planes(std::span<const Var> mats) {
    require(!mats.empty(), "complex_planes: no inputs");
    const std::size_t n = mats[0].cplx().rows(), k = mats[0].cplx().cols();
    for (const auto& m : mats) {
        require_complex(m, "complex_planes");
        require(m.cplx().rows() == n && m.cplx().cols() == k, "complex_planes: shape mismatch");
    }
    const int b = static_cast<int>(mats.size());
    Tensor y({b, static_cast<int>(n), static_cast<int>(k), 2});
    for (int s = 0; s < b; ++s) {
        const ComplexMatrix& m = mats[static_cast<std::size_t>(s)].cplx();
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < k; ++c) {
                const std::size_t p = ((static_cast<std::size_t>(s) * n + r) * k + c) * 2;
                y.data[p] = m(r, c).real();
                y.data[p + 1] = m(r, c).imag();
            }
    }
    std::vector<std::size_t> ids;
    for (const auto& m : mats) ids.push_back(m.id);
    return mats[0].tape->record(Value::of(std::move(y)), mats, [=](Tape& t, std::size_t self) {
        const auto& g = t.node(self).grad.real.data;
        for (std::size_t s = 0; s < ids.size(); ++s) {
            if (!t.node(ids[s]).needs_grad) continue;
            ComplexMatrix& gm = t.cplx_grad(ids[s]);
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < k; ++c) {
                    const std::size_t p = ((s * n + r) * k + c) * 2;
                    gm(r, c) += 0.5 * cplx(g[p], g[p + 1]);
                }
        }
    });
}

Var planes_to_complex(Var x, int b) {
    require_real(x, "planes_to_complex");
    const Tensor& xv = x.real();
    require(xv.rank() == 4 && xv.dim(3) == 2 && b >= 0 && b < xv.dim(0), "planes_to_complex: bad shape or index");
    const std::size_t n = static_cast<std::size_t>(xv.dim(1)), k = static_cast<std::size_t>(xv.dim(2));
    ComplexMatrix y(n, k);
    const std::size_t base = static_cast<std::size_t>(b) * n * k * 2;
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < k; ++c) {
            const std::size_t p = base + (r * k + c) * 2;
            y(r, c) = {xv.data[p], xv.data[p + 1]};
        }
    const std::size_t xi = x.id;
    return x.tape->record(Value::of(std::move(y)), {x}, [=](Tape& t, std::size_t self) {
        const ComplexMatrix& g = t.node(self).grad.cplx;
        auto& gx = t.real_grad(xi).data;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < k; ++c) {
                const std::size_t p = base + (r * k + c) * 2;
                gx[p] += 2.0 * g(r, c).real();
                gx[p + 1] += 2.0 * g(r, c).imag();
            }
    });
}

// ---------------------------------------------------------------------------
// Fused RHWI operators

Var ue_distortion(Var xbar, const ComplexMatrix& draws, std::span<const double> delta) {
    require_complex(xbar, "ue_distortion");
    const ComplexMatrix& x = xbar.cplx();
    require(draws.rows() == x.rows() && draws.cols() == x.cols() && delta.size() == x.cols(),
            "ue_distortion: shape mismatch");
    std::vector<double> norm(x.cols()), dl(delta.begin(), delta.end());
    ComplexMatrix y = draws;
    for (std::size_t k = 0; k < x.cols(); ++k) {
        double e = 0.0;
        for (const auto& v : x.col(k)) e += std::norm(v);
        norm[k] = std::sqrt(e);
        for (auto& v : y.col(k)) v *= dl[k] * norm[k];
    }
    const std::size_t xi = xbar.id;
    return xbar.tape->record(Value::of(std::move(y)), {xbar}, [=](Tape& t, std::size_t self) {
        const ComplexMatrix& g = t.node(self).grad.cplx;
        const ComplexMatrix& xv = t.node(xi).value.cplx;
        ComplexMatrix& gx = t.cplx_grad(xi);
        for (std::size_t k = 0; k < xv.cols(); ++k) {
            if (norm[k] == 0.0) continue;
            double a = 0.0;  // Re(d_k^H g_k)
            for (std::size_t r = 0; r < g.rows(); ++r) a += (std::conj(draws(r, k)) * g(r, k)).real();
            const double c = dl[k] * a / norm[k];
            for (std::size_t r = 0; r < xv.rows(); ++r) gx(r, k) += c * xv(r, k);
        }
    });
}

Var bs_distortion(std::span<const ComplexMatrix> channels, std::span<const Var> xbars, const ComplexMatrix& draws,
                  double delta) {
    require(!xbars.empty() && channels.size() == xbars.size(), "bs_distortion: cell count mismatch");
    const std::size_t n = draws.rows();
    std::vector<double> pw(n, 0.0);
    for (std::size_t j = 0; j < xbars.size(); ++j) {
        require_complex(xbars[j], "bs_distortion");
        const ComplexMatrix& x = xbars[j].cplx();
        const ComplexMatrix& h = channels[j];
        require(h.rows() == n && h.cols() == x.cols(), "bs_distortion: channel shape mismatch");
        for (std::size_t k = 0; k < x.cols(); ++k) {
            double e = 0.0;
            for (const auto& v : x.col(k)) e += std::norm(v);
            for (std::size_t r = 0; r < n; ++r) pw[r] += std::norm(h(r, k)) * e;
        }
    }
    ComplexMatrix y = draws;
    for (std::size_t c = 0; c < y.cols(); ++c)
        for (std::size_t r = 0; r < n; ++r) y(r, c) *= delta * std::sqrt(pw[r]);
    std::vector<ComplexMatrix> hs(channels.begin(), channels.end());
    std::vector<std::size_t> ids;
    for (const auto& x : xbars) ids.push_back(x.id);
    return xbars[0].tape->record(Value::of(std::move(y)), xbars, [=](Tape& t, std::size_t self) {
        const ComplexMatrix& g = t.node(self).grad.cplx;
        std::vector<double> gpw(n, 0.0);  // dJ/dpw_r
        for (std::size_t r = 0; r < n; ++r) {
            if (pw[r] == 0.0) continue;
            double a = 0.0;
            for (std::size_t c = 0; c < g.cols(); ++c) a += (std::conj(g(r, c)) * draws(r, c)).real();
            gpw[r] = delta * a / std::sqrt(pw[r]);
        }
        for (std::size_t j = 0; j < ids.size(); ++j) {
            if (!t.node(ids[j]).needs_grad) continue;
            const ComplexMatrix& xv = t.node(ids[j]).value.cplx;
            ComplexMatrix& gx = t.cplx_grad(ids[j]);
            for (std::size_t k = 0; k < xv.cols(); ++k) {
                double c = 0.0;
                for (std::size_t r = 0; r < n; ++r) c += gpw[r] * std::norm(hs[j](r, k));
                for (std::size_t r = 0; r < xv.rows(); ++r) gx(r, k) += c * xv(r, k);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Optimiser, init, gradient check

void Adam::step(std::span<Parameter* const> params) {
    if (m_.empty()) {
        for (const Parameter* p : params) {
            m_.emplace_back(p->value.size(), 0.0);
            v_.emplace_back(p->value.size(), 0.0);
        }
    }
    if (m_.size() != params.size()) throw DimensionMismatch("Adam::step: parameter list changed");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t q = 0; q < params.size(); ++q) {
        Parameter& p = *params[q];
        if (p.value.size() != m_[q].size()) throw DimensionMismatch("Adam::step: parameter shape changed");
        auto& m = m_[q];
        auto& v = v_[q];
        for (std::size_t i = 0; i < m.size(); ++i) {
            const double g = p.grad.data[i];
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
            p.value.data[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
        }
    }
}

void zero_grad(std::span<Parameter* const> params) {
    for (Parameter* p : params) p->zero_grad();
}

void glorot_uniform(Tensor& t, int fan_in, int fan_out, RngStream& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.data) v = rng.uniform(-a, a);
}

namespace {

double eval_loss(const LossBuilder& build, const std::vector<Value>& point) {
    Tape tape;
    std::vector<Var> in;
    for (const auto& v : point) in.push_back(v.is_complex ? tape.constant(v.cplx) : tape.constant(v.real));
    return build(tape, in).real().item();
}

}  // namespace

namespace {

// Components far below the input's largest gradient are below the resolution of
// the central difference; they are measured against 1e-3 of that largest entry.
double relative_error(double analytic, double numeric, double largest) {
    const double floor = std::max(1e-8, 1e-3 * largest);
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference of loss_at around x0. A ReLU kink inside [x0 - step, x0 + step]
// spoils one step size but rarely two, so a miss is retried at step / 10.
template <class LossAt>
double component_error(double analytic, double largest, double x0, double h, LossAt loss_at) {
    double err = std::numeric_limits<double>::infinity();
    for (double scale : {1.0, 0.1}) {
        const double step = scale * h * std::max(1.0, std::abs(x0));
        const double numeric = (loss_at(x0 + step) - loss_at(x0 - step)) / (2.0 * step);
        err = std::min(err, relative_error(analytic, numeric, largest));
        if (err <= 1e-6) break;
    }
    return err;
}

void record(GradCheckReport& rep, double err, std::size_t input, std::size_t index) {
    ++rep.components;
    if (err > rep.max_rel_error) {
        rep.max_rel_error = err;
        rep.worst_input = input;
        rep.worst_index = index;
    }
}

}  // namespace

GradCheckReport grad_check(const LossBuilder& build, const std::vector<Value>& point, double h) {
    Tape tape;
    std::vector<Var> in;
    for (const auto& v : point) in.push_back(v.is_complex ? tape.leaf(v.cplx) : tape.leaf(v.real));
    Var loss = build(tape, in);
    tape.backward(loss);

    GradCheckReport rep;
    std::vector<Value> work = point;
    for (std::size_t q = 0; q < point.size(); ++q) {
        const Value g = tape.grad(in[q]);
        double largest = 0.0;
        if (point[q].is_complex)
            for (const cplx& z : g.cplx.storage()) largest = std::max(largest, 2.0 * std::abs(z));
        else
            for (double v : g.real.data) largest = std::max(largest, std::abs(v));
        if (!point[q].is_complex) {
            for (std::size_t i = 0; i < point[q].real.size(); ++i) {
                double& slot = work[q].real.data[i];
                const double x0 = slot;
                const double err = component_error(g.real.data[i], largest, x0, h, [&](double x) {
                    slot = x;
                    return eval_loss(build, work);
                });
                slot = x0;
                record(rep, err, q, i);
            }
            continue;
        }
        for (std::size_t i = 0; i < point[q].cplx.size(); ++i) {
            cplx& slot = work[q].cplx.storage()[i];
            const cplx z0 = slot;
            const cplx gz = g.cplx.storage()[i];
            for (int part = 0; part < 2; ++part) {
                // d J / d Re z = 2 Re(dJ/dz*), d J / d Im z = 2 Im(dJ/dz*)
                const double analytic = 2.0 * (part == 0 ? gz.real() : gz.imag());
                const double x0 = part == 0 ? z0.real() : z0.imag();
                const double err = component_error(analytic, largest, x0, h, [&](double x) {
                    slot = part == 0 ? cplx(x, z0.imag()) : cplx(z0.real(), x);
                    return eval_loss(build, work);
                });
                slot = z0;
                record(rep, err, q, 2 * i + static_cast<std::size_t>(part));
            }
        }
    }
    return rep;
}

GradCheckReport param_grad_check(const std::function<Var(Tape&)>& build, std::span<Parameter* const> params,
                                 std::size_t max_components, RngStream& rng, double h) {
    zero_grad(params);
    {
        Tape tape;
        Var loss = build(tape);
        tape.backward(loss);
    }
    auto eval = [&] {
        Tape tape;
        return build(tape).real().item();
    };
    GradCheckReport rep;
    for (std::size_t q = 0; q < params.size(); ++q) {
        Parameter& p = *params[q];
        double largest = 0.0;
        for (double v : p.grad.data) largest = std::max(largest, std::abs(v));
        std::vector<std::size_t> idx(p.value.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (idx.size() > max_components) {
            std::shuffle(idx.begin(), idx.end(), rng.engine());
            idx.resize(max_components);
        }
        for (std::size_t i : idx) {
            const double x0 = p.value.data[i];
            const double err = component_error(p.grad.data[i], largest, x0, h, [&](double x) {
                p.value.data[i] = x;
                return eval();
            });
            p.value.data[i] = x0;
            record(rep, err, q, i);
        }
    }
    return rep;
}

}  // namespace mce::ad
