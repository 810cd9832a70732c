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

#include "mce/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mce::kernels {

namespace {
int g_threads = 1;

inline std::size_t pix(const ConvShape& s, int b, int y, int x) {
    return (static_cast<std::size_t>(b) * s.height + y) * s.width + x;
}
}  // namespace

void set_threads(int n) {
    g_threads = n < 1 ? 1 : n;
#ifdef _OPENMP
    omp_set_num_threads(g_threads);
#endif
}

int threads() { return g_threads; }

// ---------------------------------------------------------------------------
// Serial references: direct index arithmetic, one output element at a time.

namespace serial {

void conv3x3_forward(const ConvShape& s, const double* in, const double* kernel, const double* bias, double* out) {
    const int ci_n = s.in_channels, co_n = s.out_channels;
    for (int b = 0; b < s.batch; ++b)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x)
                for (int co = 0; co < co_n; ++co) {
                    double acc = bias ? bias[co] : 0.0;
                    for (int dy = -1; dy <= 1; ++dy)
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int yy = y + dy, xx = x + dx;
                            if (yy < 0 || yy >= s.height || xx < 0 || xx >= s.width) continue;
                            const int tap = (dy + 1) * 3 + (dx + 1);
                            for (int ci = 0; ci < ci_n; ++ci)
                                acc += in[pix(s, b, yy, xx) * ci_n + ci] *
                                       kernel[(static_cast<std::size_t>(tap) * ci_n + ci) * co_n + co];
                        }
                    out[pix(s, b, y, x) * co_n + co] = acc;
                }
}

void conv3x3_backward_input(const ConvShape& s, const double* grad_out, const double* kernel, double* grad_in) {
    const int ci_n = s.in_channels, co_n = s.out_channels;
    for (int b = 0; b < s.batch; ++b)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= s.height || xx < 0 || xx >= s.width) continue;
                        const int tap = (dy + 1) * 3 + (dx + 1);
                        for (int ci = 0; ci < ci_n; ++ci)
                            for (int co = 0; co < co_n; ++co)
                                grad_in[pix(s, b, yy, xx) * ci_n + ci] +=
                                    grad_out[pix(s, b, y, x) * co_n + co] *
                                    kernel[(static_cast<std::size_t>(tap) * ci_n + ci) * co_n + co];
                    }
}

void conv3x3_backward_weights(const ConvShape& s, const double* in, const double* grad_out, double* grad_kernel,
                              double* grad_bias) {
    const int ci_n = s.in_channels, co_n = s.out_channels;
    for (int b = 0; b < s.batch; ++b)
        for (int y = 0; y < s.height; ++y)
            for (int x = 0; x < s.width; ++x) {
                const double* g = grad_out + pix(s, b, y, x) * co_n;
                if (grad_bias)
                    for (int co = 0; co < co_n; ++co) grad_bias[co] += g[co];
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= s.height || xx < 0 || xx >= s.width) continue;
                        const int tap = (dy + 1) * 3 + (dx + 1);
                        for (int ci = 0; ci < ci_n; ++ci)
                            for (int co = 0; co < co_n; ++co)
                                grad_kernel[(static_cast<std::size_t>(tap) * ci_n + ci) * co_n + co] +=
                                    in[pix(s, b, yy, xx) * ci_n + ci] * g[co];
                    }
            }
}

void dense_forward(int batch, int n_in, int n_out, const double* x, const double* w, const double* bias, double* y) {
    for (int b = 0; b < batch; ++b)
        for (int o = 0; o < n_out; ++o) {
            double acc = bias ? bias[o] : 0.0;
            for (int i = 0; i < n_in; ++i)
                acc += w[o + static_cast<std::size_t>(i) * n_out] * x[static_cast<std::size_t>(b) * n_in + i];
            y[static_cast<std::size_t>(b) * n_out + o] = acc;
        }
}

void dense_backward(int batch, int n_in, int n_out, const double* x, const double* w, const double* grad_y,
                    double* grad_x, double* grad_w, double* grad_bias) {
    for (int b = 0; b < batch; ++b)
        for (int o = 0; o < n_out; ++o) {
            const double g = grad_y[static_cast<std::size_t>(b) * n_out + o];
            if (grad_bias) grad_bias[o] += g;
            for (int i = 0; i < n_in; ++i) {
                if (grad_x) grad_x[static_cast<std::size_t>(b) * n_in + i] += w[o + static_cast<std::size_t>(i) * n_out] * g;
                if (grad_w) grad_w[o + static_cast<std::size_t>(i) * n_out] += x[static_cast<std::size_t>(b) * n_in + i] * g;
            }
        }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP versions: register-blocked tiles (pixels x channels) that keep the
// accumulators in vector registers; work split over image rows or kernel rows.

namespace parallel {

namespace {

// Pixel tile and channel block of the register-blocked micro-kernels.
constexpr int kTile = 4;

// dst[q, :] += sum_taps sum_c src[neighbour(q, tap), c] * w[tap, c, :] for a tile of
// kTile consecutive pixels of one image row and output channels [d0, d0 + CB).
// Padded neighbours read from `zeros`.
template <int CB>
void gather_tile(const ConvShape& s, int b, int y, int x0, int npx, const double* src, int src_ch, const double* w,
                 int dst_ch, int d0, bool flip, const double* zeros, double* dst) {
    double acc[kTile][CB];
    for (int p = 0; p < kTile; ++p)
        for (int j = 0; j < CB; ++j) acc[p][j] = 0.0;
    for (int tap = 0; tap < 9; ++tap) {
        const int dy = tap / 3 - 1, dx = tap % 3 - 1;
        const int sy = flip ? y - dy : y + dy;
        const double* rows[kTile];
        for (int p = 0; p < kTile; ++p) {
            const int sx = flip ? x0 + p - dx : x0 + p + dx;
            const bool ok = p < npx && sy >= 0 && sy < s.height && sx >= 0 && sx < s.width;
            rows[p] = ok ? src + pix(s, b, sy, sx) * src_ch : zeros;
        }
        const double* wt = w + static_cast<std::size_t>(tap) * src_ch * dst_ch + d0;
        for (int c = 0; c < src_ch; ++c) {
            const double* wr = wt + static_cast<std::size_t>(c) * dst_ch;
            for (int p = 0; p < kTile; ++p) {
                const double v = rows[p][c];
#pragma omp simd
                for (int j = 0; j < CB; ++j) acc[p][j] += v * wr[j];
            }
        }
    }
    for (int p = 0; p < npx; ++p) {
        double* o = dst + pix(s, b, y, x0 + p) * dst_ch + d0;
        for (int j = 0; j < CB; ++j) o[j] += acc[p][j];
    }
}

template <int CB>
void gather_block(const ConvShape& s, int b, int y, int x0, int npx, const double* src, int src_ch, const double* w,
                  int dst_ch, int& d0, bool flip, const double* zeros, double* dst) {
    for (; d0 + CB <= dst_ch; d0 += CB) gather_tile<CB>(s, b, y, x0, npx, src, src_ch, w, dst_ch, d0, flip, zeros, dst);
}

// Shared driver of the forward pass (flip = false) and the input gradient (flip = true,
// weights transposed to [tap, Cout, Cin]).
void conv_gather(const ConvShape& s, const double* src, int src_ch, const double* w, int dst_ch, bool flip,
                 double* dst) {
    const std::vector<double> zeros(static_cast<std::size_t>(src_ch), 0.0);
    const int rows = s.batch * s.height;
#pragma omp parallel for schedule(static)
    for (int row = 0; row < rows; ++row) {
        const int b = row / s.height, y = row % s.height;
        for (int x0 = 0; x0 < s.width; x0 += kTile) {
            const int npx = std::min(kTile, s.width - x0);
            int d0 = 0;
            gather_block<16>(s, b, y, x0, npx, src, src_ch, w, dst_ch, d0, flip, zeros.data(), dst);
            gather_block<4>(s, b, y, x0, npx, src, src_ch, w, dst_ch, d0, flip, zeros.data(), dst);
            gather_block<1>(s, b, y, x0, npx, src, src_ch, w, dst_ch, d0, flip, zeros.data(), dst);
        }
    }
}

// grad_kernel[tap, c0 .. c0+RB, d0 .. d0+CB] += sum_pixels in[shifted, c] * g[pixel, d].
template <int RB, int CB>
void weight_tile(const ConvShape& s, int tap, int c0, int d0, const double* in, const double* g, double* gk) {
    const int ci_n = s.in_channels, co_n = s.out_channels;
    const int dy = tap / 3 - 1, dx = tap % 3 - 1;
    double acc[RB][CB];
    for (int r = 0; r < RB; ++r)
        for (int j = 0; j < CB; ++j) acc[r][j] = 0.0;
    for (int b = 0; b < s.batch; ++b)
        for (int y = 0; y < s.height; ++y) {
            const int yy = y + dy;
            if (yy < 0 || yy >= s.height) continue;
            for (int x = 0; x < s.width; ++x) {
                const int xx = x + dx;
                if (xx < 0 || xx >= s.width) continue;
                const double* iv = in + pix(s, b, yy, xx) * ci_n + c0;
                const double* gv = g + pix(s, b, y, x) * co_n + d0;
                for (int r = 0; r < RB; ++r) {
                    const double v = iv[r];
#pragma omp simd
                    for (int j = 0; j < CB; ++j) acc[r][j] += v * gv[j];
                }
            }
        }
    for (int r = 0; r < RB; ++r) {
        double* o = gk + (static_cast<std::size_t>(tap) * ci_n + c0 + r) * co_n + d0;
        for (int j = 0; j < CB; ++j) o[j] += acc[r][j];
    }
}

template <int RB>
void weight_row(const ConvShape& s, int tap, int c0, const double* in, const double* g, double* gk) {
    int d0 = 0;
    for (; d0 + 16 <= s.out_channels; d0 += 16) weight_tile<RB, 16>(s, tap, c0, d0, in, g, gk);
    for (; d0 + 4 <= s.out_channels; d0 += 4) weight_tile<RB, 4>(s, tap, c0, d0, in, g, gk);
    for (; d0 < s.out_channels; ++d0) weight_tile<RB, 1>(s, tap, c0, d0, in, g, gk);
}

}  // namespace

void conv3x3_forward(const ConvShape& s, const double* in, const double* kernel, const double* bias, double* out) {
    const std::size_t n_pix = static_cast<std::size_t>(s.batch) * s.height * s.width;
    for (std::size_t p = 0; p < n_pix; ++p)
        for (int co = 0; co < s.out_channels; ++co) out[p * s.out_channels + co] = bias ? bias[co] : 0.0;
    conv_gather(s, in, s.in_channels, kernel, s.out_channels, false, out);
}

void conv3x3_backward_input(const ConvShape& s, const double* grad_out, const double* kernel, double* grad_in) {
    const int ci_n = s.in_channels, co_n = s.out_channels;
    std::vector<double> kt(static_cast<std::size_t>(9) * ci_n * co_n);
    for (int tap = 0; tap < 9; ++tap)
        for (int ci = 0; ci < ci_n; ++ci)
            for (int co = 0; co < co_n; ++co)
                kt[(static_cast<std::size_t>(tap) * co_n + co) * ci_n + ci] =
                    kernel[(static_cast<std::size_t>(tap) * ci_n + ci) * co_n + co];
    conv_gather(s, grad_out, co_n, kt.data(), ci_n, true, grad_in);
}

void conv3x3_backward_weights(const ConvShape& s, const double* in, const double* grad_out, double* grad_kernel,
                              double* grad_bias) {
    const int ci_n = s.in_channels;
    constexpr int kRows = 4;
    const int row_blocks = (ci_n + kRows - 1) / kRows;
    const int jobs = 9 * row_blocks;
#pragma omp parallel for schedule(static)
    for (int job = 0; job < jobs; ++job) {
        const int tap = job / row_blocks;
        const int c0 = (job % row_blocks) * kRows;
        if (c0 + kRows <= ci_n) {
            weight_row<kRows>(s, tap, c0, in, grad_out, grad_kernel);
        } else {
            for (int c = c0; c < ci_n; ++c) weight_row<1>(s, tap, c, in, grad_out, grad_kernel);
        }
    }
    if (grad_bias) {
        const std::size_t n_pix = static_cast<std::size_t>(s.batch) * s.height * s.width;
        for (std::size_t p = 0; p < n_pix; ++p)
            for (int co = 0; co < s.out_channels; ++co) grad_bias[co] += grad_out[p * s.out_channels + co];
    }
}

void dense_forward(int batch, int n_in, int n_out, const double* x, const double* w, const double* bias, double* y) {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < batch; ++b) {
        double* yb = y + static_cast<std::size_t>(b) * n_out;
        for (int o = 0; o < n_out; ++o) yb[o] = bias ? bias[o] : 0.0;
        for (int i = 0; i < n_in; ++i) {
            const double v = x[static_cast<std::size_t>(b) * n_in + i];
            const double* wc = w + static_cast<std::size_t>(i) * n_out;
#pragma omp simd
            for (int o = 0; o < n_out; ++o) yb[o] += wc[o] * v;
        }
    }
}

void dense_backward(int batch, int n_in, int n_out, const double* x, const double* w, const double* grad_y,
                    double* grad_x, double* grad_w, double* grad_bias) {
    if (grad_x) {
#pragma omp parallel for schedule(static)
        for (int b = 0; b < batch; ++b) {
            const double* g = grad_y + static_cast<std::size_t>(b) * n_out;
            for (int i = 0; i < n_in; ++i) {
                const double* wc = w + static_cast<std::size_t>(i) * n_out;
                double acc = 0.0;
#pragma omp simd reduction(+ : acc)
                for (int o = 0; o < n_out; ++o) acc += wc[o] * g[o];
                grad_x[static_cast<std::size_t>(b) * n_in + i] += acc;
            }
        }
    }
    if (grad_w) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < n_in; ++i) {
            double* gw = grad_w + static_cast<std::size_t>(i) * n_out;
            for (int b = 0; b < batch; ++b) {
                const double v = x[static_cast<std::size_t>(b) * n_in + i];
                const double* g = grad_y + static_cast<std::size_t>(b) * n_out;
#pragma omp simd
                for (int o = 0; o < n_out; ++o) gw[o] += v * g[o];
            }
        }
    }
    if (grad_bias)
        for (int b = 0; b < batch; ++b)
            for (int o = 0; o < n_out; ++o) grad_bias[o] += grad_y[static_cast<std::size_t>(b) * n_out + o];
}

}  // namespace parallel

}  // namespace mce::kernels
