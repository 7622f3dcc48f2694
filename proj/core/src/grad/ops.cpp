#include "rarecp/grad/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

#include "rarecp/error.hpp"

namespace rarecp::grad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using CMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

CMapMat as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return CMapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MapMat as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw NumericError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

void require_same_size(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error(op, a, b);
}

void require_scalar(const char* op, const Tensor& s) {
  if (s.size() != 1) throw NumericError(std::string(op) + ": expected a one-element tensor");
}

template <class F, class DF>
Var unary(const Var& x, F f, DF df) {
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, df](const Tensor& g, Tape& tape) {
    Tensor* gx = tape.grad_of(xid);
    if (!gx) return;
    const Tensor& xv = tape.value(xid);
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * df(xv[i]);
  });
}

}  // namespace

double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_value(double x, double tau) {
  const double z = x / tau;
  return tau * (std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))));
}

Var affine(const Var& x, const Var& weight, const Var& bias) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  const Tensor& bv = bias.value();
  if (wv.rank() != 2 || bv.rank() != 1 || bv.size() != wv.shape()[0]) shape_error("affine", wv, bv);
  const std::size_t out_dim = wv.shape()[0];
  const std::size_t in_dim = wv.shape()[1];
  if (xv.rank() == 0 || xv.cols() != in_dim) shape_error("affine", xv, wv);
  const std::size_t n = xv.rows();

  Tensor out(xv.rank() == 1 ? std::vector<std::size_t>{out_dim} : std::vector<std::size_t>{n, out_dim});
  auto y = as_mat(out, n, out_dim);
  y.noalias() = as_mat(xv, n, in_dim) * as_mat(wv, out_dim, in_dim).transpose();
  y.rowwise() += CMapVec(bv.data().data(), static_cast<Eigen::Index>(out_dim)).transpose();

  const std::size_t xid = x.id(), wid = weight.id(), bid = bias.id();
  return x.tape().record(std::move(out), {x, weight, bias},
                         [xid, wid, bid, n, in_dim, out_dim](const Tensor& g, Tape& tape) {
                           const auto gm = as_mat(g, n, out_dim);
                           if (Tensor* gx = tape.grad_of(xid)) {
                             as_mat(*gx, n, in_dim).noalias() += gm * as_mat(tape.value(wid), out_dim, in_dim);
                           }
                           if (Tensor* gw = tape.grad_of(wid)) {
                             const auto xm = as_mat(tape.value(xid), n, in_dim);
                             // retrieval leaves most rows of g at exactly zero; contract only the live ones
                             std::vector<Eigen::Index> live;
                             for (std::size_t i = 0; i < n; ++i)
                               if (!gm.row(static_cast<Eigen::Index>(i)).isZero(0.0)) live.push_back(static_cast<Eigen::Index>(i));
                             if (2 * live.size() < n) {
                               as_mat(*gw, out_dim, in_dim).noalias() += gm(live, Eigen::all).transpose() * xm(live, Eigen::all);
                             } else {
                               as_mat(*gw, out_dim, in_dim).noalias() += gm.transpose() * xm;
                             }
                           }
                           if (Tensor* gb = tape.grad_of(bid)) {
                             MapVec(gb->data().data(), static_cast<Eigen::Index>(out_dim)) +=
                                 gm.colwise().sum().transpose();
                           }
                         });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  std::size_t m = 0, k = 0, n = 0;
  std::vector<std::size_t> out_shape;
  if (av.rank() == 2 && bv.rank() == 2) {
    m = av.shape()[0];
    k = av.shape()[1];
    n = bv.shape()[1];
    if (bv.shape()[0] != k) shape_error("matmul", av, bv);
    out_shape = {m, n};
  } else if (av.rank() == 2 && bv.rank() == 1) {
    m = av.shape()[0];
    k = av.shape()[1];
    n = 1;
    if (bv.size() != k) shape_error("matmul", av, bv);
    out_shape = {m};
  } else if (av.rank() == 1 && bv.rank() == 2) {
    m = 1;
    k = av.size();
    n = bv.shape()[1];
    if (bv.shape()[0] != k) shape_error("matmul", av, bv);
    out_shape = {n};
  } else {
    shape_error("matmul", av, bv);
  }
  Tensor out(out_shape);
  as_mat(out, m, n).noalias() = as_mat(av, m, k) * as_mat(bv, k, n);
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid, m, k, n](const Tensor& g, Tape& tape) {
    const auto gm = as_mat(g, m, n);
    if (Tensor* ga = tape.grad_of(aid)) {
      as_mat(*ga, m, k).noalias() += gm * as_mat(tape.value(bid), k, n).transpose();
    }
    if (Tensor* gb = tape.grad_of(bid)) {
      as_mat(*gb, k, n).noalias() += as_mat(tape.value(aid), m, k).transpose() * gm;
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_size("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid](const Tensor& g, Tape& tape) {
    if (Tensor* ga = tape.grad_of(aid)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = tape.grad_of(bid)) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i];
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_size("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid](const Tensor& g, Tape& tape) {
    if (Tensor* ga = tape.grad_of(aid)) for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
    if (Tensor* gb = tape.grad_of(bid)) for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i];
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_size("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(out), {a, b}, [aid, bid](const Tensor& g, Tape& tape) {
    if (Tensor* ga = tape.grad_of(aid)) {
      const Tensor& bv = tape.value(bid);
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * bv[i];
    }
    if (Tensor* gb = tape.grad_of(bid)) {
      const Tensor& av = tape.value(aid);
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * av[i];
    }
  });
}

Var scale(const Var& x, double c) {
  return unary(x, [c](double v) { return c * v; }, [c](double) { return c; });
}

Var add_scalar(const Var& x, double c) {
  return unary(x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

Var scale_by(const Var& x, const Var& s) {
  require_scalar("scale_by", s.value());
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (double& v : out.values()) v *= sv;
  const std::size_t xid = x.id(), sid = s.id();
  return x.tape().record(std::move(out), {x, s}, [xid, sid](const Tensor& g, Tape& tape) {
    const double sv = tape.value(sid)[0];
    if (Tensor* gx = tape.grad_of(xid)) for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * sv;
    if (Tensor* gs = tape.grad_of(sid)) {
      const Tensor& xv = tape.value(xid);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      (*gs)[0] += acc;
    }
  });
}

Var div_by(const Var& x, const Var& s) {
  require_scalar("div_by", s.value());
  const double sv = s.value()[0];
  Tensor out = x.value();
  for (double& v : out.values()) v /= sv;
  const std::size_t xid = x.id(), sid = s.id();
  return x.tape().record(std::move(out), {x, s}, [xid, sid](const Tensor& g, Tape& tape) {
    const double sv = tape.value(sid)[0];
    if (Tensor* gx = tape.grad_of(xid)) for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] / sv;
    if (Tensor* gs = tape.grad_of(sid)) {
      const Tensor& xv = tape.value(xid);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      (*gs)[0] -= acc / (sv * sv);
    }
  });
}

Var sum(const Var& x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const std::size_t xid = x.id();
  return x.tape().record(Tensor::scalar(acc), {x}, [xid](const Tensor& g, Tape& tape) {
    if (Tensor* gx = tape.grad_of(xid)) for (double& v : gx->values()) v += g[0];
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.size());
  if (n == 0) throw NumericError("mean of an empty tensor");
  return scale(sum(x), 1.0 / n);
}

Var dot(const Var& a, const Var& b) { return sum(mul(a, b)); }

Var l2_normalize(const Var& x, double eps) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw NumericError("l2_normalize needs a vector or matrix");
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out(xv.shape());
  std::vector<double> inv_norm(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += xv.at(r, c) * xv.at(r, c);
    inv_norm[r] = 1.0 / std::sqrt(sq + eps);
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = xv.at(r, c) * inv_norm[r];
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(out), {x},
                         [xid, rows, cols, inv_norm = std::move(inv_norm)](const Tensor& g, Tape& tape) {
                           Tensor* gx = tape.grad_of(xid);
                           if (!gx) return;
                           const Tensor& xv = tape.value(xid);
                           for (std::size_t r = 0; r < rows; ++r) {
                             double xg = 0.0;
                             for (std::size_t c = 0; c < cols; ++c) xg += xv.at(r, c) * g.at(r, c);
                             const double s = inv_norm[r];
                             const double s3 = s * s * s;
                             for (std::size_t c = 0; c < cols; ++c) {
                               gx->at(r, c) += g.at(r, c) * s - xv.at(r, c) * xg * s3;
                             }
                           }
                         });
}

Var softmax_with_temperature(const Var& x, double temperature) {
  const Tensor& xv = x.value();
  if (xv.rank() != 1 || xv.size() == 0) throw NumericError("softmax needs a non-empty vector");
  if (!(temperature > 0.0)) throw NumericError("softmax temperature must be positive");
  Tensor out(xv.shape());
  const double mx = *std::max_element(xv.data().begin(), xv.data().end());
  double z = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    out[i] = std::exp((xv[i] - mx) / temperature);
    z += out[i];
  }
  for (double& v : out.values()) v /= z;
  const std::size_t xid = x.id();
  const std::size_t self = x.tape().size();
  return x.tape().record(std::move(out), {x}, [xid, self, temperature](const Tensor& g, Tape& tape) {
    Tensor* gx = tape.grad_of(xid);
    if (!gx) return;
    const Tensor& y = tape.value(self);
    double yg = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) yg += y[i] * g[i];
    for (std::size_t i = 0; i < y.size(); ++i) (*gx)[i] += y[i] * (g[i] - yg) / temperature;
  });
}

Var sigmoid(const Var& x) {
  return unary(x, sigmoid_value, [](double v) {
    const double s = sigmoid_value(v);
    return s * (1.0 - s);
  });
}

Var softplus_with_temperature(const Var& x, double tau) {
  if (!(tau > 0.0)) throw NumericError("softplus temperature must be positive");
  return unary(x, [tau](double v) { return softplus_value(v, tau); },
               [tau](double v) { return sigmoid_value(v / tau); });
}

Var tanh(const Var& x) {
  return unary(x, [](double v) { return std::tanh(v); }, [](double v) {
    const double t = std::tanh(v);
    return 1.0 - t * t;
  });
}

Var relu(const Var& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var log(const Var& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Var exp(const Var& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var square(const Var& x) {
  return unary(x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var sqrt(const Var& x) {
  return unary(x, [](double v) { return std::sqrt(v); }, [](double v) { return 0.5 / std::sqrt(v); });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw NumericError("concat of nothing");
  Tape& tape = parts.front().tape();
  const bool matrix = parts.front().value().rank() == 2;
  const std::size_t rows = parts.front().value().rows();
  std::size_t total_cols = 0;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    if ((v.rank() == 2) != matrix || v.rank() == 0 || v.rows() != rows) {
      shape_error("concat", parts.front().value(), v);
    }
    widths.push_back(v.cols());
    total_cols += v.cols();
  }
  Tensor out(matrix ? std::vector<std::size_t>{rows, total_cols} : std::vector<std::size_t>{total_cols});
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(r * v.cols()), v.cols(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(r * total_cols + offset));
    }
    offset += v.cols();
  }
  std::vector<std::size_t> ids;
  std::vector<Var> inputs(parts.begin(), parts.end());
  for (const Var& p : parts) ids.push_back(p.id());
  return tape.record(std::move(out), inputs, [ids, widths, rows, total_cols](const Tensor& g, Tape& tape) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (Tensor* gp = tape.grad_of(ids[k])) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) {
            (*gp)[r * widths[k] + c] += g[r * total_cols + offset + c];
          }
        }
      }
      offset += widths[k];
    }
  });
}

Var index_select(const Var& x, const std::vector<std::size_t>& indices) {
  const Tensor& xv = x.value();
  if (xv.rank() == 0) throw NumericError("index_select needs a vector or matrix");
  const std::size_t n = xv.rank() == 1 ? xv.size() : xv.shape()[0];
  const std::size_t width = xv.rank() == 1 ? 1 : xv.shape()[1];
  for (std::size_t i : indices) {
    if (i >= n) throw NumericError("index_select: index " + std::to_string(i) + " out of range");
  }
  Tensor out(xv.rank() == 1 ? std::vector<std::size_t>{indices.size()}
                            : std::vector<std::size_t>{indices.size(), width});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    std::copy_n(xv.data().begin() + static_cast<std::ptrdiff_t>(indices[k] * width), width,
                out.data().begin() + static_cast<std::ptrdiff_t>(k * width));
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, indices, width](const Tensor& g, Tape& tape) {
    Tensor* gx = tape.grad_of(xid);
    if (!gx) return;
    for (std::size_t k = 0; k < indices.size(); ++k) {
      for (std::size_t c = 0; c < width; ++c) (*gx)[indices[k] * width + c] += g[k * width + c];
    }
  });
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
  if (shape_size(shape) != x.size()) {
    throw NumericError("reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  }
  Tensor out(std::move(shape), x.value().values());
  const std::size_t xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid](const Tensor& g, Tape& tape) {
    if (Tensor* gx = tape.grad_of(xid)) for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
}

Var slice(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& xv = x.value();
  if (xv.rank() != 1 || begin > end || end > xv.size()) {
    throw NumericError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                       shape_string(xv.shape()));
  }
  Tensor out({end - begin}, std::vector<double>(xv.data().begin() + static_cast<std::ptrdiff_t>(begin),
                                                xv.data().begin() + static_cast<std::ptrdiff_t>(end)));
  const std::size_t xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid, begin](const Tensor& g, Tape& tape) {
    if (Tensor* gx = tape.grad_of(xid)) for (std::size_t i = 0; i < g.size(); ++i) (*gx)[begin + i] += g[i];
  });
}

Var cumsum(const Var& x) {
  const Tensor& xv = x.value();
  if (xv.rank() != 1) throw NumericError("cumsum needs a vector");
  Tensor out(xv.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = (acc += xv[i]);
  const std::size_t xid = x.id();
  return x.tape().record(std::move(out), {x}, [xid](const Tensor& g, Tape& tape) {
    Tensor* gx = tape.grad_of(xid);
    if (!gx) return;
    double acc = 0.0;
    for (std::size_t i = g.size(); i-- > 0;) {
      acc += g[i];
      (*gx)[i] += acc;
    }
  });
}

Var activate(const Var& x, Activation activation) {
  switch (activation) {
    case Activation::tanh:
      return tanh(x);
    case Activation::relu:
      return relu(x);
  }
  throw NumericError("unknown activation");
}

}  // namespace rarecp::grad
