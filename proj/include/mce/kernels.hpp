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

// Dense and 3x3 convolution kernels on raw buffers.
//
// Layouts: images are [B, H, W, C] row-major (channel fastest); conv kernels
// are [3, 3, Cin, Cout] (Cout fastest); dense weights are column-major
// [n_out x n_in], i.e. W(o, i) = w[o + i * n_out].
//
// Each kernel exists twice: a plain serial reference (namespace `serial`) and
// the OpenMP version used by training (namespace `parallel`). Work is split so
// that every output element is summed by one thread in a fixed order; results
// do not depend on the thread count. Backward kernels accumulate (+=).

namespace mce::kernels {

struct ConvShape {
    int batch = 1;
    int height = 1;
    int width = 1;
    int in_channels = 1;
    int out_channels = 1;
};

namespace serial {
void conv3x3_forward(const ConvShape& s, const double* in, const double* kernel, const double* bias, double* out);
void conv3x3_backward_input(const ConvShape& s, const double* grad_out, const double* kernel, double* grad_in);
void conv3x3_backward_weights(const ConvShape& s, const double* in, const double* grad_out, double* grad_kernel,
                              double* grad_bias);
void dense_forward(int batch, int n_in, int n_out, const double* x, const double* w, const double* bias, double* y);
void dense_backward(int batch, int n_in, int n_out, const double* x, const double* w, const double* grad_y,
                    double* grad_x, double* grad_w, double* grad_bias);
}  // namespace serial

namespace parallel {
void conv3x3_forward(const ConvShape& s, const double* in, const double* kernel, const double* bias, double* out);
void conv3x3_backward_input(const ConvShape& s, const double* grad_out, const double* kernel, double* grad_in);
void conv3x3_backward_weights(const ConvShape& s, const double* in, const double* grad_out, double* grad_kernel,
                              double* grad_bias);
void dense_forward(int batch, int n_in, int n_out, const double* x, const double* w, const double* bias, double* y);
void dense_backward(int batch, int n_in, int n_out, const double* x, const double* w, const double* grad_y,
                    double* grad_x, double* grad_w, double* grad_bias);
}  // namespace parallel

/// Number of OpenMP threads the parallel kernels use (1 when built without OpenMP).
void set_threads(int n);
int threads();

}  // namespace mce::kernels
