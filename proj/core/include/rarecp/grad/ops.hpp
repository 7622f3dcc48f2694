#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rarecp/grad/tape.hpp"

namespace rarecp::grad {

// Added inside the square root of l2_normalize so the all-zero vector maps to zero.
inline constexpr double kEpsNorm = 1e-12;

// x W^T + b. x is [in] or [n x in], W is [out x in], b is [out].
Var affine(const Var& x, const Var& weight, const Var& bias);
// [m x k] times [k x n] (or [k], giving [m]); a [k] vector times [k x n] gives [n].
Var matmul(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var add_scalar(const Var& x, double c);
// Multiply / divide every element by a one-element tensor.
Var scale_by(const Var& x, const Var& s);
Var div_by(const Var& x, const Var& s);

Var sum(const Var& x);
Var mean(const Var& x);
Var dot(const Var& a, const Var& b);

// Vector: x / sqrt(|x|^2 + eps). Matrix: applied to every row.
Var l2_normalize(const Var& x, double eps = kEpsNorm);
Var softmax_with_temperature(const Var& x, double temperature);

Var sigmoid(const Var& x);
// tau * log(1 + exp(x / tau))
Var softplus_with_temperature(const Var& x, double tau);
Var tanh(const Var& x);
Var relu(const Var& x);
Var log(const Var& x);
Var exp(const Var& x);
Var square(const Var& x);
Var sqrt(const Var& x);

// Vectors are joined end to end; matrices with equal row counts are joined column-wise.
Var concat(std::span<const Var> parts);
// Vector: gathers elements. Matrix: gathers rows. Indices may repeat.
Var index_select(const Var& x, const std::vector<std::size_t>& indices);
Var reshape(const Var& x, std::vector<std::size_t> shape);
// Elements [begin, end) of a vector.
Var slice(const Var& x, std::size_t begin, std::size_t end);
// Inclusive prefix sum of a vector.
Var cumsum(const Var& x);

enum class Activation { tanh, relu };
Var activate(const Var& x, Activation activation);

// Scalar helpers used by the forward-only paths.
double sigmoid_value(double x);
double softplus_value(double x, double tau);

}  // namespace rarecp::grad
