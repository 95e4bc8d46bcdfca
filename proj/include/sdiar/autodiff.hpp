// Copyright 2026 The sdiar Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <type_traits>
#include <vector>

#include "sdiar/errors.hpp"

namespace sdiar::ad {

// Minimal reverse-mode tape over 2-D tensors (scalars are 1x1, vectors 1xN).
// Single-threaded and allocation-order deterministic; gradients are exact,
// which the finite-difference test oracle verifies end to end.

struct Shape {
  int rows = 1;
  int cols = 1;
  int size() const { return rows * cols; }
  bool operator==(const Shape& o) const { return rows == o.rows && cols == o.cols; }
};

class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<double> val;
    std::vector<double> grad;
    std::function<void(Tape&)> backward;  // empty for leaves/constants
  };

  int leaf(Shape s, const std::vector<double>& data) {
    Node n;
    n.shape = s;
    n.val = data;
    n.grad.assign(s.size(), 0.0);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int constant(Shape s, std::vector<double> data) {
    Node n;
    n.shape = s;
    n.val = std::move(data);
    n.grad.assign(s.size(), 0.0);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int scalar_const(double v) { return constant({1, 1}, {v}); }

  const std::vector<double>& val(int id) const { return nodes_[id].val; }
  const std::vector<double>& grad(int id) const { return nodes_[id].grad; }
  Shape shape(int id) const { return nodes_[id].shape; }

  void backward(int loss_id) {
    if (nodes_[loss_id].shape.size() != 1)
      throw ShapeMismatch("backward expects a scalar loss");
    for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), 0.0);
    nodes_[loss_id].grad[0] = 1.0;
    for (int i = loss_id; i >= 0; --i)
      if (nodes_[i].backward) nodes_[i].backward(*this);
  }

  // ---- elementwise -------------------------------------------------------

  int add(int a, int b) {
    check_same(a, b, "add");
    return unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      const auto& vb = val(b);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    }, [a, b](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a].grad;
      auto& gb = t.nodes_[b].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] += g[i];
      }
    });
  }

  int sub(int a, int b) {
    check_same(a, b, "sub");
    return unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      const auto& vb = val(b);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    }, [a, b](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a].grad;
      auto& gb = t.nodes_[b].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] -= g[i];
      }
    });
  }

  int mul(int a, int b) {
    check_same(a, b, "mul");
    return unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      const auto& vb = val(b);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    }, [a, b](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad;
      const auto& va = t.val(a);
      const auto& vb = t.val(b);
      auto& ga = t.nodes_[a].grad;
      auto& gb = t.nodes_[b].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * vb[i];
        gb[i] += g[i] * va[i];
      }
    });
  }

  int scale_const(int a, double c) {
    return unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * c;
    }, [a, c](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }

  /// a*x + b elementwise with constant scalars.
  int affine_const(int x, double a, double b) {
    return unary_like(x, [&](std::vector<double>& out) {
      const auto& vx = val(x);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * vx[i] + b;
    }, [x, a](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad;
      auto& gx = t.nodes_[x].grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * a;
    });
  }

  int mul_const(int a, std::vector<double> c) {
    if (static_cast<int>(c.size()) != shape(a).size())
      throw ShapeMismatch("mul_const size mismatch");
    auto cc = std::make_shared<std::vector<double>>(std::move(c));
    return unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * (*cc)[i];
    }, [a, cc](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*cc)[i];
    });
  }

  int abs_t(int a) {
    return unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(va[i]);
    }, [a](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad;
      const auto& va = t.val(a);
      auto& ga = t.nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[i] += g[i] * (va[i] > 0.0 ? 1.0 : (va[i] < 0.0 ? -1.0 : 0.0));
    });
  }

  int relu(int a) {
    return unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(va[i], 0.0);
    }, [a](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad;
      const auto& va = t.val(a);
      auto& ga = t.nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += va[i] > 0.0 ? g[i] : 0.0;
    });
  }

  int sigmoid(int a) {
    const int self = unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-va[i]));
    }, nullptr);
    nodes_[self].backward = [a, self](Tape& t) {
      const auto& g = t.nodes_[self].grad;
      const auto& y = t.val(self);
      auto& ga = t.nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
    };
    return self;
  }

  int tanh_t(int a) {
    const int self = unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(va[i]);
    }, nullptr);
    nodes_[self].backward = [a, self](Tape& t) {
      const auto& g = t.nodes_[self].grad;
      const auto& y = t.val(self);
      auto& ga = t.nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
    };
    return self;
  }

  int swish(int a) {
    return unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = va[i] / (1.0 + std::exp(-va[i]));
    }, [a](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad;
      const auto& va = t.val(a);
      auto& ga = t.nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = 1.0 / (1.0 + std::exp(-va[i]));
        ga[i] += g[i] * (s + va[i] * s * (1.0 - s));
      }
    });
  }

  /// min(x, c): gradient passes where x < c.
  int min_const(int a, double c) {
    return unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(va[i], c);
    }, [a, c](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad;
      const auto& va = t.val(a);
      auto& ga = t.nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (va[i] < c) ga[i] += g[i];
    });
  }

  // ---- shape ops ---------------------------------------------------------

  int slice_cols(int a, int c0, int c1) {
    const Shape s = shape(a);
    Node n;
    n.shape = {s.rows, c1 - c0};
    n.val.resize(n.shape.size());
    for (int r = 0; r < s.rows; ++r)
      for (int c = c0; c < c1; ++c)
        n.val[r * (c1 - c0) + (c - c0)] = val(a)[r * s.cols + c];
    n.grad.assign(n.shape.size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [a, c0, c1, self](Tape& t) {
      const Shape sa = t.shape(a);
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a].grad;
      const int w = c1 - c0;
      for (int r = 0; r < sa.rows; ++r)
        for (int c = 0; c < w; ++c) ga[r * sa.cols + c0 + c] += g[r * w + c];
    };
    return self;
  }

  int slice_rows(int a, int r0, int r1) {
    const Shape s = shape(a);
    Node n;
    n.shape = {r1 - r0, s.cols};
    n.val.assign(val(a).begin() + static_cast<std::size_t>(r0) * s.cols,
                 val(a).begin() + static_cast<std::size_t>(r1) * s.cols);
    n.grad.assign(n.shape.size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [a, r0, self](Tape& t) {
      const Shape sa = t.shape(a);
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a].grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        ga[static_cast<std::size_t>(r0) * sa.cols + i] += g[i];
    };
    return self;
  }

  int concat_cols(int a, int b) {
    const Shape sa = shape(a), sb = shape(b);
    if (sa.rows != sb.rows) throw ShapeMismatch("concat_cols row mismatch");
    Node n;
    n.shape = {sa.rows, sa.cols + sb.cols};
    n.val.resize(n.shape.size());
    for (int r = 0; r < sa.rows; ++r) {
      for (int c = 0; c < sa.cols; ++c) n.val[r * n.shape.cols + c] = val(a)[r * sa.cols + c];
      for (int c = 0; c < sb.cols; ++c)
        n.val[r * n.shape.cols + sa.cols + c] = val(b)[r * sb.cols + c];
    }
    n.grad.assign(n.shape.size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [a, b, self](Tape& t) {
      const Shape sa = t.shape(a), sb = t.shape(b);
      const int w = sa.cols + sb.cols;
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a].grad;
      auto& gb = t.nodes_[b].grad;
      for (int r = 0; r < sa.rows; ++r) {
        for (int c = 0; c < sa.cols; ++c) ga[r * sa.cols + c] += g[r * w + c];
        for (int c = 0; c < sb.cols; ++c) gb[r * sb.cols + c] += g[r * w + sa.cols + c];
      }
    };
    return self;
  }

  /// Stacks equal-width row vectors (each [1 x d]) into [n x d].
  int stack_rows(const std::vector<int>& ids) {
    const Shape s0 = shape(ids[0]);
    Node n;
    n.shape = {static_cast<int>(ids.size()), s0.cols};
    n.val.resize(n.shape.size());
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (!(shape(ids[r]) == Shape{1, s0.cols})) throw ShapeMismatch("stack_rows width");
      std::copy(val(ids[r]).begin(), val(ids[r]).end(), n.val.begin() + r * s0.cols);
    }
    n.grad.assign(n.shape.size(), 0.0);
    const int self = push(std::move(n));
    auto captured = ids;
    nodes_[self].backward = [captured, self](Tape& t) {
      const auto& g = t.nodes_[self].grad;
      const int w = t.shape(self).cols;
      for (std::size_t r = 0; r < captured.size(); ++r) {
        auto& gr = t.nodes_[captured[r]].grad;
        for (int c = 0; c < w; ++c) gr[c] += g[r * w + c];
      }
    };
    return self;
  }

  /// Stacks scalars into a [1 x n] row.
  int stack_scalars(const std::vector<int>& ids) {
    Node n;
    n.shape = {1, static_cast<int>(ids.size())};
    n.val.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) n.val[i] = val(ids[i])[0];
    n.grad.assign(ids.size(), 0.0);
    const int self = push(std::move(n));
    auto captured = ids;
    nodes_[self].backward = [captured, self](Tape& t) {
      const auto& g = t.nodes_[self].grad;
      for (std::size_t i = 0; i < captured.size(); ++i) t.nodes_[captured[i]].grad[0] += g[i];
    };
    return self;
  }

  int slice_scalar(int a, int index) {
    Node n;
    n.shape = {1, 1};
    n.val = {val(a)[index]};
    n.grad = {0.0};
    const int self = push(std::move(n));
    nodes_[self].backward = [a, index, self](Tape& t) {
      t.nodes_[a].grad[index] += t.nodes_[self].grad[0];
    };
    return self;
  }

  // ---- linear algebra ----------------------------------------------------

  int matmul(int a, int b) {
    const Shape sa = shape(a), sb = shape(b);
    if (sa.cols != sb.rows) throw ShapeMismatch("matmul inner dims");
    Node n;
    n.shape = {sa.rows, sb.cols};
    n.val.assign(n.shape.size(), 0.0);
    const auto& va = val(a);
    const auto& vb = val(b);
    for (int i = 0; i < sa.rows; ++i)
      for (int k = 0; k < sa.cols; ++k) {
        const double x = va[i * sa.cols + k];
        if (x == 0.0) continue;
        for (int j = 0; j < sb.cols; ++j) n.val[i * sb.cols + j] += x * vb[k * sb.cols + j];
      }
    n.grad.assign(n.shape.size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [a, b, self](Tape& t) {
      const Shape sa = t.shape(a), sb = t.shape(b);
      const auto& g = t.nodes_[self].grad;
      const auto& va = t.val(a);
      const auto& vb = t.val(b);
      auto& ga = t.nodes_[a].grad;
      auto& gb = t.nodes_[b].grad;
      // ga += g * b^T ; gb += a^T * g
      for (int i = 0; i < sa.rows; ++i)
        for (int j = 0; j < sb.cols; ++j) {
          const double gij = g[i * sb.cols + j];
          if (gij == 0.0) continue;
          for (int k = 0; k < sa.cols; ++k) {
            ga[i * sa.cols + k] += gij * vb[k * sb.cols + j];
            gb[k * sb.cols + j] += gij * va[i * sa.cols + k];
          }
        }
    };
    return self;
  }

  /// a * b^T for attention scores; a is [m x k], b is [n x k].
  int matmul_nt(int a, int b) {
    const Shape sa = shape(a), sb = shape(b);
    if (sa.cols != sb.cols) throw ShapeMismatch("matmul_nt inner dims");
    Node n;
    n.shape = {sa.rows, sb.rows};
    n.val.assign(n.shape.size(), 0.0);
    const auto& va = val(a);
    const auto& vb = val(b);
    for (int i = 0; i < sa.rows; ++i)
      for (int j = 0; j < sb.rows; ++j) {
        double acc = 0.0;
        for (int k = 0; k < sa.cols; ++k) acc += va[i * sa.cols + k] * vb[j * sb.cols + k];
        n.val[i * sb.rows + j] = acc;
      }
    n.grad.assign(n.shape.size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [a, b, self](Tape& t) {
      const Shape sa = t.shape(a), sb = t.shape(b);
      const auto& g = t.nodes_[self].grad;
      const auto& va = t.val(a);
      const auto& vb = t.val(b);
      auto& ga = t.nodes_[a].grad;
      auto& gb = t.nodes_[b].grad;
      for (int i = 0; i < sa.rows; ++i)
        for (int j = 0; j < sb.rows; ++j) {
          const double gij = g[i * sb.rows + j];
          if (gij == 0.0) continue;
          for (int k = 0; k < sa.cols; ++k) {
            ga[i * sa.cols + k] += gij * vb[j * sb.cols + k];
            gb[j * sb.cols + k] += gij * va[i * sa.cols + k];
          }
        }
    };
    return self;
  }

  /// Adds a [1 x d] row vector to every row of [T x d].
  int add_rowvec(int x, int v) {
    const Shape sx = shape(x), sv = shape(v);
    if (sv.rows != 1 || sv.cols != sx.cols) throw ShapeMismatch("add_rowvec");
    return unary_like(x, [&](std::vector<double>& out) {
      const auto& vx = val(x);
      const auto& vv = val(v);
      for (int r = 0; r < sx.rows; ++r)
        for (int c = 0; c < sx.cols; ++c) out[r * sx.cols + c] = vx[r * sx.cols + c] + vv[c];
    }, [x, v](Tape& t, int self) {
      const Shape s = t.shape(x);
      const auto& g = t.nodes_[self].grad;
      auto& gx = t.nodes_[x].grad;
      auto& gv = t.nodes_[v].grad;
      for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < s.cols; ++c) {
          gx[r * s.cols + c] += g[r * s.cols + c];
          gv[c] += g[r * s.cols + c];
        }
    });
  }

  /// x * s with scalar node s.
  int mul_scalar(int x, int s) {
    if (shape(s).size() != 1) throw ShapeMismatch("mul_scalar needs scalar");
    return unary_like(x, [&](std::vector<double>& out) {
      const auto& vx = val(x);
      const double sv = val(s)[0];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = vx[i] * sv;
    }, [x, s](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad;
      const auto& vx = t.val(x);
      const double sv = t.val(s)[0];
      auto& gx = t.nodes_[x].grad;
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i] * sv;
        acc += g[i] * vx[i];
      }
      t.nodes_[s].grad[0] += acc;
    });
  }

  int mean_all(int a) {
    Node n;
    n.shape = {1, 1};
    const auto& va = val(a);
    n.val = {std::accumulate(va.begin(), va.end(), 0.0) / static_cast<double>(va.size())};
    n.grad = {0.0};
    const int self = push(std::move(n));
    nodes_[self].backward = [a, self](Tape& t) {
      const double g = t.nodes_[self].grad[0] / static_cast<double>(t.val(a).size());
      auto& ga = t.nodes_[a].grad;
      for (auto& v : ga) v += g;
    };
    return self;
  }

  // ---- neural-net ops ----------------------------------------------------

  /// Filter-bank convolution: x [1 x L], w [F x K], stride s.
  /// out[t][f] = sum_k w[f][k] * x[t*s + k], T = (L - K) / s + 1.
  int conv_bank(int x, int w, int stride) {
    const Shape sx = shape(x), sw = shape(w);
    const int L = sx.cols, F = sw.rows, K = sw.cols;
    const int T = (L - K) / stride + 1;
    if (T < 1) throw ShapeMismatch("conv_bank: input shorter than kernel");
    Node n;
    n.shape = {T, F};
    n.val.assign(static_cast<std::size_t>(T) * F, 0.0);
    const auto& vx = val(x);
    const auto& vw = val(w);
    for (int t = 0; t < T; ++t) {
      const double* seg = vx.data() + static_cast<std::size_t>(t) * stride;
      for (int f = 0; f < F; ++f) {
        const double* kf = vw.data() + static_cast<std::size_t>(f) * K;
        double acc = 0.0;
        for (int k = 0; k < K; ++k) acc += kf[k] * seg[k];
        n.val[static_cast<std::size_t>(t) * F + f] = acc;
      }
    }
    n.grad.assign(n.shape.size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [x, w, stride, self](Tape& t) {
      const Shape sx = t.shape(x), sw = t.shape(w);
      const int F = sw.rows, K = sw.cols;
      const int T = t.shape(self).rows;
      const auto& g = t.nodes_[self].grad;
      const auto& vx = t.val(x);
      const auto& vw = t.val(w);
      auto& gx = t.nodes_[x].grad;
      auto& gw = t.nodes_[w].grad;
      (void)sx;
      for (int ti = 0; ti < T; ++ti) {
        const std::size_t base = static_cast<std::size_t>(ti) * stride;
        for (int f = 0; f < F; ++f) {
          const double go = g[static_cast<std::size_t>(ti) * F + f];
          if (go == 0.0) continue;
          const double* kf = vw.data() + static_cast<std::size_t>(f) * K;
          double* gkf = gw.data() + static_cast<std::size_t>(f) * K;
          for (int k = 0; k < K; ++k) {
            gx[base + k] += go * kf[k];
            gkf[k] += go * vx[base + k];
          }
        }
      }
    };
    return self;
  }

  /// Non-overlapping max pooling along time: [T x F] -> [T/p x F].
  int maxpool_time(int a, int p) {
    const Shape s = shape(a);
    const int T = s.rows / p;
    if (T < 1) throw ShapeMismatch("maxpool_time: too few frames");
    Node n;
    n.shape = {T, s.cols};
    n.val.resize(n.shape.size());
    auto arg = std::make_shared<std::vector<int>>(n.shape.size());
    const auto& va = val(a);
    for (int t = 0; t < T; ++t)
      for (int f = 0; f < s.cols; ++f) {
        int best = t * p;
        double bv = va[static_cast<std::size_t>(t * p) * s.cols + f];
        for (int r = 1; r < p; ++r) {
          const double v = va[static_cast<std::size_t>(t * p + r) * s.cols + f];
          if (v > bv) {
            bv = v;
            best = t * p + r;
          }
        }
        n.val[static_cast<std::size_t>(t) * s.cols + f] = bv;
        (*arg)[static_cast<std::size_t>(t) * s.cols + f] = best;
      }
    n.grad.assign(n.shape.size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [a, arg, self](Tape& t) {
      const Shape s = t.shape(a);
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a].grad;
      const int T = t.shape(self).rows;
      for (int ti = 0; ti < T; ++ti)
        for (int f = 0; f < s.cols; ++f) {
          const std::size_t oi = static_cast<std::size_t>(ti) * s.cols + f;
          ga[static_cast<std::size_t>((*arg)[oi]) * s.cols + f] += g[oi];
        }
    };
    return self;
  }

  /// Instance norm over time per feature column, no affine terms.
  int instnorm_cols(int a, double eps = 1e-5) {
    const Shape s = shape(a);
    Node n;
    n.shape = s;
    n.val.resize(s.size());
    auto stats = std::make_shared<std::vector<double>>(2 * s.cols);  // mean, inv_std
    const auto& va = val(a);
    for (int f = 0; f < s.cols; ++f) {
      double mean = 0.0;
      for (int t = 0; t < s.rows; ++t) mean += va[static_cast<std::size_t>(t) * s.cols + f];
      mean /= s.rows;
      double var = 0.0;
      for (int t = 0; t < s.rows; ++t) {
        const double d = va[static_cast<std::size_t>(t) * s.cols + f] - mean;
        var += d * d;
      }
      var /= s.rows;
      const double inv = 1.0 / std::sqrt(var + eps);
      (*stats)[f] = mean;
      (*stats)[s.cols + f] = inv;
      for (int t = 0; t < s.rows; ++t)
        n.val[static_cast<std::size_t>(t) * s.cols + f] =
            (va[static_cast<std::size_t>(t) * s.cols + f] - mean) * inv;
    }
    n.grad.assign(s.size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [a, stats, self](Tape& t) {
      const Shape s = t.shape(a);
      const auto& g = t.nodes_[self].grad;
      const auto& y = t.val(self);
      auto& ga = t.nodes_[a].grad;
      for (int f = 0; f < s.cols; ++f) {
        const double inv = (*stats)[s.cols + f];
        double gsum = 0.0, gysum = 0.0;
        for (int ti = 0; ti < s.rows; ++ti) {
          const std::size_t i = static_cast<std::size_t>(ti) * s.cols + f;
          gsum += g[i];
          gysum += g[i] * y[i];
        }
        const double inv_t = 1.0 / s.rows;
        for (int ti = 0; ti < s.rows; ++ti) {
          const std::size_t i = static_cast<std::size_t>(ti) * s.cols + f;
          ga[i] += inv * (g[i] - gsum * inv_t - y[i] * gysum * inv_t);
        }
      }
    };
    return self;
  }

  /// Layer norm per row with affine gamma, beta (each [1 x d]).
  int layernorm_rows(int a, int gamma, int beta, double eps = 1e-5) {
    const Shape s = shape(a);
    Node n;
    n.shape = s;
    n.val.resize(s.size());
    auto norm = std::make_shared<std::vector<double>>(s.size());  // pre-affine y_hat
    auto invs = std::make_shared<std::vector<double>>(s.rows);
    const auto& va = val(a);
    const auto& vg = val(gamma);
    const auto& vb = val(beta);
    for (int r = 0; r < s.rows; ++r) {
      double mean = 0.0;
      for (int c = 0; c < s.cols; ++c) mean += va[static_cast<std::size_t>(r) * s.cols + c];
      mean /= s.cols;
      double var = 0.0;
      for (int c = 0; c < s.cols; ++c) {
        const double d = va[static_cast<std::size_t>(r) * s.cols + c] - mean;
        var += d * d;
      }
      var /= s.cols;
      const double inv = 1.0 / std::sqrt(var + eps);
      (*invs)[r] = inv;
      for (int c = 0; c < s.cols; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * s.cols + c;
        (*norm)[i] = (va[i] - mean) * inv;
        n.val[i] = (*norm)[i] * vg[c] + vb[c];
      }
    }
    n.grad.assign(s.size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [a, gamma, beta, norm, invs, self](Tape& t) {
      const Shape s = t.shape(a);
      const auto& g = t.nodes_[self].grad;
      const auto& vg = t.val(gamma);
      auto& ga = t.nodes_[a].grad;
      auto& ggamma = t.nodes_[gamma].grad;
      auto& gbeta = t.nodes_[beta].grad;
      for (int r = 0; r < s.rows; ++r) {
        double gsum = 0.0, gysum = 0.0;
        for (int c = 0; c < s.cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * s.cols + c;
          const double gh = g[i] * vg[c];  // grad wrt y_hat
          gsum += gh;
          gysum += gh * (*norm)[i];
          ggamma[c] += g[i] * (*norm)[i];
          gbeta[c] += g[i];
        }
        const double inv = (*invs)[r];
        const double inv_d = 1.0 / s.cols;
        for (int c = 0; c < s.cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * s.cols + c;
          const double gh = g[i] * vg[c];
          ga[i] += inv * (gh - gsum * inv_d - (*norm)[i] * gysum * inv_d);
        }
      }
    };
    return self;
  }

  int softmax_rows(int a) {
    const Shape s = shape(a);
    const int self = unary_like(a, [&](std::vector<double>& out) {
      const auto& va = val(a);
      for (int r = 0; r < s.rows; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < s.cols; ++c) mx = std::max(mx, va[static_cast<std::size_t>(r) * s.cols + c]);
        double total = 0.0;
        for (int c = 0; c < s.cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * s.cols + c;
          out[i] = std::exp(va[i] - mx);
          total += out[i];
        }
        for (int c = 0; c < s.cols; ++c) out[static_cast<std::size_t>(r) * s.cols + c] /= total;
      }
    }, nullptr);
    nodes_[self].backward = [a, self](Tape& t) {
      const Shape s = t.shape(a);
      const auto& g = t.nodes_[self].grad;
      const auto& y = t.val(self);
      auto& ga = t.nodes_[a].grad;
      for (int r = 0; r < s.rows; ++r) {
        double dotgy = 0.0;
        for (int c = 0; c < s.cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * s.cols + c;
          dotgy += g[i] * y[i];
        }
        for (int c = 0; c < s.cols; ++c) {
          const std::size_t i = static_cast<std::size_t>(r) * s.cols + c;
          ga[i] += y[i] * (g[i] - dotgy);
        }
      }
    };
    return self;
  }

  /// Gated linear unit along columns: [T x 2d] -> [T x d], a * sigmoid(b).
  int glu_cols(int x) {
    const Shape s = shape(x);
    if (s.cols % 2 != 0) throw ShapeMismatch("glu_cols needs even columns");
    const int d = s.cols / 2;
    Node n;
    n.shape = {s.rows, d};
    n.val.resize(n.shape.size());
    const auto& vx = val(x);
    for (int r = 0; r < s.rows; ++r)
      for (int c = 0; c < d; ++c) {
        const double a = vx[static_cast<std::size_t>(r) * s.cols + c];
        const double b = vx[static_cast<std::size_t>(r) * s.cols + d + c];
        n.val[static_cast<std::size_t>(r) * d + c] = a / (1.0 + std::exp(-b));
      }
    n.grad.assign(n.shape.size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [x, d, self](Tape& t) {
      const Shape s = t.shape(x);
      const auto& g = t.nodes_[self].grad;
      const auto& vx = t.val(x);
      auto& gx = t.nodes_[x].grad;
      for (int r = 0; r < s.rows; ++r)
        for (int c = 0; c < d; ++c) {
          const std::size_t ia = static_cast<std::size_t>(r) * s.cols + c;
          const std::size_t ib = static_cast<std::size_t>(r) * s.cols + d + c;
          const std::size_t io = static_cast<std::size_t>(r) * d + c;
          const double sb = 1.0 / (1.0 + std::exp(-vx[ib]));
          gx[ia] += g[io] * sb;
          gx[ib] += g[io] * vx[ia] * sb * (1.0 - sb);
        }
    };
    return self;
  }

  /// Depthwise temporal convolution with same padding; w is [d x K], K odd.
  int dwconv_time(int x, int w) {
    const Shape sx = shape(x), sw = shape(w);
    if (sw.rows != sx.cols || sw.cols % 2 == 0) throw ShapeMismatch("dwconv_time");
    const int K = sw.cols, half = K / 2;
    Node n;
    n.shape = sx;
    n.val.assign(sx.size(), 0.0);
    const auto& vx = val(x);
    const auto& vw = val(w);
    for (int t = 0; t < sx.rows; ++t)
      for (int c = 0; c < sx.cols; ++c) {
        double acc = 0.0;
        for (int k = 0; k < K; ++k) {
          const int tt = t + k - half;
          if (tt < 0 || tt >= sx.rows) continue;
          acc += vw[static_cast<std::size_t>(c) * K + k] *
                 vx[static_cast<std::size_t>(tt) * sx.cols + c];
        }
        n.val[static_cast<std::size_t>(t) * sx.cols + c] = acc;
      }
    n.grad.assign(sx.size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [x, w, self](Tape& t) {
      const Shape sx = t.shape(x), sw = t.shape(w);
      const int K = sw.cols, half = K / 2;
      const auto& g = t.nodes_[self].grad;
      const auto& vx = t.val(x);
      const auto& vw = t.val(w);
      auto& gx = t.nodes_[x].grad;
      auto& gw = t.nodes_[w].grad;
      for (int ti = 0; ti < sx.rows; ++ti)
        for (int c = 0; c < sx.cols; ++c) {
          const double go = g[static_cast<std::size_t>(ti) * sx.cols + c];
          if (go == 0.0) continue;
          for (int k = 0; k < K; ++k) {
            const int tt = ti + k - half;
            if (tt < 0 || tt >= sx.rows) continue;
            gx[static_cast<std::size_t>(tt) * sx.cols + c] +=
                go * vw[static_cast<std::size_t>(c) * K + k];
            gw[static_cast<std::size_t>(c) * K + k] +=
                go * vx[static_cast<std::size_t>(tt) * sx.cols + c];
          }
        }
    };
    return self;
  }

  /// 1x1 channel-combining convolution: out = b + sum_c w_c * xs[c].
  /// The per-element sum is accumulated in value-sorted order, which makes
  /// the result invariant to a simultaneous permutation of channels and
  /// weights despite floating-point non-associativity.
  int combine_channels(const std::vector<int>& xs, int w, int b) {
    const Shape s = shape(xs[0]);
    const int C = static_cast<int>(xs.size());
    if (shape(w).size() != C || shape(b).size() != 1)
      throw ShapeMismatch("combine_channels weights");
    Node n;
    n.shape = s;
    n.val.assign(s.size(), 0.0);
    {
      const auto& vw = val(w);
      const double bias = val(b)[0];
      std::vector<double> terms(C);
      for (int e = 0; e < s.size(); ++e) {
        for (int c = 0; c < C; ++c) terms[c] = vw[c] * val(xs[c])[e];
        std::sort(terms.begin(), terms.end());
        double acc = bias;
        for (int c = 0; c < C; ++c) acc += terms[c];
        n.val[e] = acc;
      }
    }
    n.grad.assign(s.size(), 0.0);
    const int self = push(std::move(n));
    auto captured = xs;
    nodes_[self].backward = [captured, w, b, self](Tape& t) {
      const auto& g = t.nodes_[self].grad;
      const auto& vw = t.val(w);
      auto& gw = t.nodes_[w].grad;
      double gb = 0.0;
      for (std::size_t e = 0; e < g.size(); ++e) gb += g[e];
      t.nodes_[b].grad[0] += gb;
      for (std::size_t c = 0; c < captured.size(); ++c) {
        const auto& vx = t.val(captured[c]);
        auto& gx = t.nodes_[captured[c]].grad;
        double acc = 0.0;
        for (std::size_t e = 0; e < g.size(); ++e) {
          gx[e] += g[e] * vw[c];
          acc += g[e] * vx[e];
        }
        gw[c] += acc;
      }
    };
    return self;
  }

  /// Row-vector matmul s [1 x C] * W [C x n] whose per-output sum runs in
  /// value-sorted order; like combine_channels, this keeps the output
  /// bitwise stable under a simultaneous permutation of s and rows of W.
  int rowvec_matmul_sorted(int s, int w) {
    const Shape ss = shape(s), sw = shape(w);
    if (ss.rows != 1 || ss.cols != sw.rows) throw ShapeMismatch("rowvec_matmul_sorted");
    Node n;
    n.shape = {1, sw.cols};
    n.val.resize(sw.cols);
    {
      const auto& vs = val(s);
      const auto& vw = val(w);
      std::vector<double> terms(ss.cols);
      for (int j = 0; j < sw.cols; ++j) {
        for (int c = 0; c < ss.cols; ++c) terms[c] = vs[c] * vw[static_cast<std::size_t>(c) * sw.cols + j];
        std::sort(terms.begin(), terms.end());
        double acc = 0.0;
        for (double v : terms) acc += v;
        n.val[j] = acc;
      }
    }
    n.grad.assign(sw.cols, 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [s, w, self](Tape& t) {
      const Shape ss = t.shape(s), sw = t.shape(w);
      const auto& g = t.nodes_[self].grad;
      const auto& vs = t.val(s);
      const auto& vw = t.val(w);
      auto& gs = t.nodes_[s].grad;
      auto& gw = t.nodes_[w].grad;
      for (int c = 0; c < ss.cols; ++c) {
        double acc = 0.0;
        for (int j = 0; j < sw.cols; ++j) {
          acc += g[j] * vw[static_cast<std::size_t>(c) * sw.cols + j];
          gw[static_cast<std::size_t>(c) * sw.cols + j] += g[j] * vs[c];
        }
        gs[c] += acc;
      }
    };
    return self;
  }

  /// Band edge response of a sinc kernel: for time offsets t_k (constant),
  /// out[k] = sin(2 pi f t_k) / (pi t_k), with the t_k = 0 limit 2 f.
  int sinc_band(int f, std::vector<double> t_offsets) {
    if (shape(f).size() != 1) throw ShapeMismatch("sinc_band needs scalar frequency");
    auto toff = std::make_shared<std::vector<double>>(std::move(t_offsets));
    Node n;
    n.shape = {1, static_cast<int>(toff->size())};
    n.val.resize(toff->size());
    const double fv = val(f)[0];
    for (std::size_t k = 0; k < toff->size(); ++k) {
      const double t = (*toff)[k];
      n.val[k] = (t == 0.0) ? 2.0 * fv : std::sin(2.0 * M_PI * fv * t) / (M_PI * t);
    }
    n.grad.assign(toff->size(), 0.0);
    const int self = push(std::move(n));
    nodes_[self].backward = [f, toff, self](Tape& t) {
      const auto& g = t.nodes_[self].grad;
      const double fv = t.val(f)[0];
      double acc = 0.0;
      for (std::size_t k = 0; k < toff->size(); ++k) {
        const double tk = (*toff)[k];
        const double d = (tk == 0.0) ? 2.0 : 2.0 * std::cos(2.0 * M_PI * fv * tk);
        acc += g[k] * d;
      }
      t.nodes_[f].grad[0] += acc;
    };
    return self;
  }

  /// Mean binary cross entropy of probabilities p [T x 1] against constant
  /// labels, with probabilities clamped to [1e-7, 1 - 1e-7].
  int bce(int p, std::vector<double> labels) {
    const Shape s = shape(p);
    if (s.size() != static_cast<int>(labels.size()))
      throw LengthMismatch("bce: posterior length " + std::to_string(s.size()) +
                           " vs labels " + std::to_string(labels.size()));
    auto y = std::make_shared<std::vector<double>>(std::move(labels));
    Node n;
    n.shape = {1, 1};
    const auto& vp = val(p);
    double loss = 0.0;
    for (std::size_t i = 0; i < vp.size(); ++i) {
      const double pc = std::clamp(vp[i], 1e-7, 1.0 - 1e-7);
      loss -= (*y)[i] * std::log(pc) + (1.0 - (*y)[i]) * std::log(1.0 - pc);
    }
    n.val = {loss / static_cast<double>(vp.size())};
    n.grad = {0.0};
    const int self = push(std::move(n));
    nodes_[self].backward = [p, y, self](Tape& t) {
      const double g = t.nodes_[self].grad[0];
      const auto& vp = t.val(p);
      auto& gp = t.nodes_[p].grad;
      const double inv_t = 1.0 / static_cast<double>(vp.size());
      for (std::size_t i = 0; i < vp.size(); ++i) {
        if (vp[i] <= 1e-7 || vp[i] >= 1.0 - 1e-7) continue;  // clamped: zero grad
        gp[i] += g * inv_t * (-(*y)[i] / vp[i] + (1.0 - (*y)[i]) / (1.0 - vp[i]));
      }
    };
    return self;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  template <typename Fwd, typename Bwd>
  int unary_like(int a, Fwd&& fwd, Bwd&& bwd) {
    Node n;
    n.shape = shape(a);
    n.val.resize(n.shape.size());
    fwd(n.val);
    n.grad.assign(n.shape.size(), 0.0);
    const int self = push(std::move(n));
    if constexpr (!std::is_same_v<std::decay_t<Bwd>, std::nullptr_t>) {
      auto fn = std::forward<Bwd>(bwd);
      nodes_[self].backward = [fn, self](Tape& t) { fn(t, self); };
    }
    return self;
  }

  void check_same(int a, int b, const char* op) {
    if (!(shape(a) == shape(b)))
      throw ShapeMismatch(std::string(op) + ": shape mismatch");
  }

  std::vector<Node> nodes_;
};

}  // namespace sdiar::ad
