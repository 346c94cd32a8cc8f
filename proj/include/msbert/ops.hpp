// Copyright 2026 The msbert Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <span>

#include "msbert/autodiff.hpp"
#include "msbert/rng.hpp"
#include "msbert/tensor.hpp"

// Differentiable primitives over Var. Matrices are rank 2 ([rows, cols]);
// bias and gain vectors are rank 1 and broadcast over rows.
namespace msbert {

enum class Mode { train, eval };

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_row(Var x, Var bias);
// Adds a constant tensor of the same shape (attention masks, fixed offsets).
Var add_constant(Var x, const Tensor& offset);

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
// x * weight + bias, weight laid out as [in, out].
Var linear(Var x, Var weight, Var bias);

Var gelu(Var x);
Var tanh(Var x);
Var sigmoid(Var x);

// Softmax over the last axis.
Var softmax(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps);
// Inverted dropout; identity in eval mode or when rate == 0.
Var dropout(Var x, double rate, Rng& rng, Mode mode);

// Rows of `table` selected by `ids`.
Var embedding(Var table, std::span<const int> ids);
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var slice_cols(Var x, std::size_t start, std::size_t width);
Var concat_cols(std::span<const Var> parts);
// Stacks single-row operands ([1, m] or [m]) into [n, m].
Var stack_rows(std::span<const Var> rows);
Var reshape(Var x, Shape shape);

Var sum(Var x);
Var mean(Var x);

// Mean cross-entropy over rows whose target is not `ignore_index`.
Var cross_entropy(Var logits, std::span<const int> targets,
                  int ignore_index = -100);

}  // namespace msbert
