#include "drivecap/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace drivecap {

namespace {

thread_local Tape* g_active_tape = nullptr;
std::atomic<uint64_t> g_next_node_id{1};

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> values) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->id = g_next_node_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

// Decompose a shape as (outer, extent-at-axis, inner) for row-major walks.
void axis_split(const Shape& shape, size_t axis, size_t* outer, size_t* len, size_t* inner) {
  *outer = 1;
  *inner = 1;
  for (size_t i = 0; i < axis; ++i) *outer *= shape[i];
  *len = shape[axis];
  for (size_t i = axis + 1; i < shape.size(); ++i) *inner *= shape[i];
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// c[m,n] += a[m,k] @ b[k,n]
void mm_acc(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m,k] += dc[m,n] @ b[k,n]^T
void mm_abt_acc(const double* dc, const double* b, double* da, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* dcrow = dc + i * n;
    double* darow = da + i * k;
    for (size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double s = 0.0;
      for (size_t j = 0; j < n; ++j) s += dcrow[j] * brow[j];
      darow[p] += s;
    }
  }
}

// db[k,n] += a[m,k]^T @ dc[m,n]
void mm_atb_acc(const double* a, const double* dc, double* db, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* dcrow = dc + i * n;
    for (size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* dbrow = db + p * n;
      for (size_t j = 0; j < n; ++j) dbrow[j] += av * dcrow[j];
    }
  }
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::vector<double>& Node::grad_buffer() {
  if (grad.empty()) grad.assign(values.size(), 0.0);
  return grad;
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size())
    throw ShapeError("tensor data size " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  auto n = new_node(std::move(shape), std::move(values));
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), value);
  return leaf(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double value) { return leaf({1}, {value}, false); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return leaf(std::move(shape), std::move(v), requires_grad);
}

const std::vector<double>& Tensor::grad() const {
  static const std::vector<double> kEmpty;
  return node_->grad.empty() ? kEmpty : node_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar tensor of shape " + shape_str(shape()));
  return node_->values[0];
}

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

bool Tape::active() { return g_active_tape != nullptr; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("<null>")));
  // Interior grads are scratch per backward pass; leaf grads accumulate.
  for (auto& n : ops_)
    if (n->backward_fn) n->grad.assign(n->values.size(), 0.0);
  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node& n = **it;
    if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
  }
}

std::string Tape::first_nonfinite() const {
  const Node* worst = nullptr;
  auto consider = [&](const Node* n) {
    if (all_finite(n->values)) return;
    if (!worst || n->id < worst->id) worst = n;
  };
  for (const auto& n : ops_) {
    for (const auto& p : n->parents) consider(p.get());
    consider(n.get());
  }
  if (!worst) return "";
  return worst->name.empty() ? std::string(worst->op) : worst->name;
}

namespace detail {

Tensor make_op(const char* op, Shape shape, std::vector<double> values,
               const std::vector<Tensor>& inputs, std::function<void(Node&)> backward) {
  if (shape_numel(shape) != values.size())
    throw ShapeError(std::string("op ") + op + ": result data does not match shape " +
                     shape_str(shape));
  auto n = new_node(std::move(shape), std::move(values));
  n->op = op;
  bool track = Tape::active();
  if (track) {
    bool any = false;
    for (const auto& t : inputs) any = any || t.requires_grad();
    track = any;
  }
  if (track) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (const auto& t : inputs) n->parents.push_back(t.node());
    n->backward_fn = std::move(backward);
    // record even on nested scopes: exactly one tape is active per thread
    // NOLINTNEXTLINE: g_active_tape non-null because Tape::active() was true
    g_active_tape->record(n);
  }
  return Tensor(n);
}

}  // namespace detail

namespace {

enum class BinKind { kEqual, kBroadcastB, kBroadcastA };

BinKind classify_binary(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return BinKind::kEqual;
  if (shape_numel(b) == 1 || is_suffix(b, a)) return BinKind::kBroadcastB;
  if (shape_numel(a) == 1 || is_suffix(a, b)) return BinKind::kBroadcastA;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                   shape_str(b));
}

// out = f(a, b) where b is broadcast (size divides a evenly, trailing suffix).
template <typename Fwd>
std::vector<double> broadcast_apply(const std::vector<double>& a, const std::vector<double>& b,
                                    Fwd f) {
  std::vector<double> out(a.size());
  const size_t nb = b.size();
  for (size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i % nb]);
  return out;
}

// Accumulate d(out)/d(broadcast operand): sum over the leading groups.
void reduce_into(const std::vector<double>& gout, std::vector<double>& gsmall, double sign) {
  const size_t nb = gsmall.size();
  for (size_t i = 0; i < gout.size(); ++i) gsmall[i % nb] += sign * gout[i];
}

Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, bool subtract) {
  const BinKind kind = classify_binary(op, a.shape(), b.shape());
  const double sb = subtract ? -1.0 : 1.0;
  std::vector<double> out;
  Shape shape;
  if (kind == BinKind::kBroadcastA) {
    shape = b.shape();
    out = broadcast_apply(b.data(), a.data(), [sb](double bv, double av) { return av + sb * bv; });
  } else {
    shape = a.shape();
    out = broadcast_apply(a.data(), b.data(), [sb](double av, double bv) { return av + sb * bv; });
  }
  return detail::make_op(op, std::move(shape), std::move(out), {a, b}, [kind, sb](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      if (kind == BinKind::kBroadcastA) {
        reduce_into(self.grad, ga, 1.0);
      } else {
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
      }
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      if (kind == BinKind::kBroadcastB) {
        reduce_into(self.grad, gb, sb);
      } else {
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += sb * self.grad[i];
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", a, b, false); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", a, b, true); }

Tensor mul(const Tensor& a, const Tensor& b) {
  const BinKind kind = classify_binary("mul", a.shape(), b.shape());
  std::vector<double> out;
  Shape shape;
  if (kind == BinKind::kBroadcastA) {
    shape = b.shape();
    out = broadcast_apply(b.data(), a.data(), [](double bv, double av) { return av * bv; });
  } else {
    shape = a.shape();
    out = broadcast_apply(a.data(), b.data(), [](double av, double bv) { return av * bv; });
  }
  return detail::make_op("mul", std::move(shape), std::move(out), {a, b}, [kind](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const auto& av = pa.values;
    const auto& bv = pb.values;
    if (pa.requires_grad) {
      auto& ga = pa.grad_buffer();
      if (kind == BinKind::kBroadcastA) {
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i % ga.size()] += self.grad[i] * bv[i];
      } else {
        for (size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * bv[i % bv.size()];
      }
    }
    if (pb.requires_grad) {
      auto& gb = pb.grad_buffer();
      if (kind == BinKind::kBroadcastB) {
        for (size_t i = 0; i < self.grad.size(); ++i) gb[i % gb.size()] += self.grad[i] * av[i];
      } else {
        for (size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * av[i % av.size()];
      }
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  return detail::make_op("scale", a.shape(), std::move(out), {a}, [c](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += c * self.grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + c;
  return detail::make_op("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sa.size() > 3 || sb.size() < 2 || sb.size() > 3)
    throw ShapeError("matmul: ranks must be 2 or 3, got " + shape_str(sa) + " and " +
                     shape_str(sb));
  const size_t m = sa[sa.size() - 2], ka = sa[sa.size() - 1];
  const size_t kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  if (ka != kb)
    throw ShapeError("matmul: inner extents differ, " + shape_str(sa) + " vs " + shape_str(sb));
  const size_t batch_a = sa.size() == 3 ? sa[0] : 1;
  const size_t batch_b = sb.size() == 3 ? sb[0] : 1;
  if (sa.size() == 3 && sb.size() == 3 && batch_a != batch_b)
    throw ShapeError("matmul: batch extents differ, " + shape_str(sa) + " vs " + shape_str(sb));
  const size_t batch = std::max(batch_a, batch_b);
  const bool a_batched = sa.size() == 3;
  const bool b_batched = sb.size() == 3;

  Shape out_shape = (a_batched || b_batched) ? Shape{batch, m, n} : Shape{m, n};
  std::vector<double> out(batch * m * n, 0.0);
  const size_t k = ka;
  for (size_t bb = 0; bb < batch; ++bb) {
    const double* ap = a.data().data() + (a_batched ? bb * m * k : 0);
    const double* bp = b.data().data() + (b_batched ? bb * k * n : 0);
    mm_acc(ap, bp, out.data() + bb * m * n, m, k, n);
  }
  return detail::make_op(
      "matmul", std::move(out_shape), std::move(out), {a, b},
      [m, k, n, batch, a_batched, b_batched](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
          auto& ga = pa.grad_buffer();
          for (size_t bb = 0; bb < batch; ++bb) {
            const double* dc = self.grad.data() + bb * m * n;
            const double* bp = pb.values.data() + (b_batched ? bb * k * n : 0);
            double* da = ga.data() + (a_batched ? bb * m * k : 0);
            mm_abt_acc(dc, bp, da, m, k, n);
          }
        }
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          for (size_t bb = 0; bb < batch; ++bb) {
            const double* dc = self.grad.data() + bb * m * n;
            const double* ap = pa.values.data() + (a_batched ? bb * m * k : 0);
            double* db = gb.data() + (b_batched ? bb * k * n : 0);
            mm_atb_acc(ap, dc, db, m, k, n);
          }
        }
      });
}

namespace {

std::vector<size_t> shape_strides(const Shape& s) {
  std::vector<size_t> strides(s.size(), 1);
  for (size_t i = s.size(); i-- > 1;) strides[i - 1] = strides[i] * s[i];
  return strides;
}

void permute_copy(const std::vector<double>& src, const Shape& src_shape,
                  const std::vector<size_t>& axes, std::vector<double>& dst, bool accumulate) {
  const size_t r = src_shape.size();
  Shape dst_shape(r);
  for (size_t i = 0; i < r; ++i) dst_shape[i] = src_shape[axes[i]];
  const auto src_strides = shape_strides(src_shape);
  const auto dst_strides = shape_strides(dst_shape);
  std::vector<size_t> idx(r, 0);
  const size_t total = src.size();
  for (size_t flat = 0; flat < total; ++flat) {
    // idx is the destination multi-index
    size_t src_flat = 0;
    for (size_t i = 0; i < r; ++i) src_flat += idx[i] * src_strides[axes[i]];
    if (accumulate)
      dst[src_flat] += src[flat];
    else
      dst[flat] = src[src_flat];
    for (size_t i = r; i-- > 0;) {
      if (++idx[i] < dst_shape[i]) break;
      idx[i] = 0;
    }
  }
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<size_t>& axes) {
  const Shape& s = a.shape();
  if (axes.size() != s.size()) throw ShapeError("permute: axes rank mismatch for " + shape_str(s));
  std::vector<bool> seen(s.size(), false);
  for (size_t ax : axes) {
    if (ax >= s.size() || seen[ax]) throw ShapeError("permute: invalid axis list");
    seen[ax] = true;
  }
  Shape out_shape(s.size());
  for (size_t i = 0; i < s.size(); ++i) out_shape[i] = s[axes[i]];
  std::vector<double> out(a.size());
  permute_copy(a.data(), s, axes, out, false);
  return detail::make_op("permute", std::move(out_shape), std::move(out), {a}, [axes](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    permute_copy(self.grad, p.shape, axes, g, true);
  });
}

Tensor transpose_last(const Tensor& a) {
  std::vector<size_t> axes(a.rank());
  for (size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  if (axes.size() < 2) throw ShapeError("transpose_last: rank must be >= 2");
  std::swap(axes[axes.size() - 1], axes[axes.size() - 2]);
  return permute(a, axes);
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<double> out = a.data();
  return detail::make_op("reshape", std::move(shape), std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
    throw ShapeError("concat_rows: need rank-2 with equal columns, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  const size_t cols = a.shape()[1];
  Shape out_shape{a.shape()[0] + b.shape()[0], cols};
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  const size_t asize = a.size();
  return detail::make_op("concat_rows", std::move(out_shape), std::move(out), {a, b},
                         [asize](Node& self) {
                           Node& pa = *self.parents[0];
                           Node& pb = *self.parents[1];
                           if (pa.requires_grad) {
                             auto& g = pa.grad_buffer();
                             for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                           }
                           if (pb.requires_grad) {
                             auto& g = pb.grad_buffer();
                             for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[asize + i];
                           }
                         });
}

Tensor slice_rows(const Tensor& a, size_t begin, size_t count) {
  if (a.rank() != 2) throw ShapeError("slice_rows: need rank-2, got " + shape_str(a.shape()));
  if (begin + count > a.shape()[0])
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " +
                     std::to_string(begin + count) + ") exceeds " + shape_str(a.shape()));
  const size_t cols = a.shape()[1];
  std::vector<double> out(a.data().begin() + begin * cols, a.data().begin() + (begin + count) * cols);
  return detail::make_op("slice_rows", Shape{count, cols}, std::move(out), {a},
                         [begin, cols](Node& self) {
                           Node& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& g = p.grad_buffer();
                           for (size_t i = 0; i < self.grad.size(); ++i)
                             g[begin * cols + i] += self.grad[i];
                         });
}

Tensor softmax(const Tensor& a, int axis) {
  const int r = static_cast<int>(a.rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    throw ShapeError("softmax: axis out of range for " + shape_str(a.shape()));
  size_t outer, len, inner;
  axis_split(a.shape(), static_cast<size_t>(axis), &outer, &len, &inner);
  std::vector<double> out(a.size());
  const auto& x = a.data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * len * inner + in;
      double mx = x[base];
      for (size_t l = 1; l < len; ++l) mx = std::max(mx, x[base + l * inner]);
      double sum = 0.0;
      for (size_t l = 0; l < len; ++l) {
        const double e = std::exp(x[base + l * inner] - mx);
        out[base + l * inner] = e;
        sum += e;
      }
      for (size_t l = 0; l < len; ++l) out[base + l * inner] /= sum;
    }
  }
  return detail::make_op("softmax", a.shape(), std::move(out), {a},
                         [outer, len, inner](Node& self) {
                           Node& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& g = p.grad_buffer();
                           const auto& y = self.values;
                           const auto& dy = self.grad;
                           for (size_t o = 0; o < outer; ++o) {
                             for (size_t in = 0; in < inner; ++in) {
                               const size_t base = o * len * inner + in;
                               double dot = 0.0;
                               for (size_t l = 0; l < len; ++l) {
                                 const size_t i = base + l * inner;
                                 dot += dy[i] * y[i];
                               }
                               for (size_t l = 0; l < len; ++l) {
                                 const size_t i = base + l * inner;
                                 g[i] += y[i] * (dy[i] - dot);
                               }
                             }
                           }
                         });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm: rank must be >= 1");
  const size_t dim = x.shape().back();
  if (gain.size() != dim || bias.size() != dim)
    throw ShapeError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                     shape_str(bias.shape()) + " do not match last axis of " +
                     shape_str(x.shape()));
  const size_t rows = x.size() / dim;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_sd(rows);
  const auto& xv = x.data();
  const auto& gv = gain.data();
  const auto& bv = bias.data();
  for (size_t r = 0; r < rows; ++r) {
    const size_t base = r * dim;
    double mean = 0.0;
    for (size_t j = 0; j < dim; ++j) mean += xv[base + j];
    mean /= static_cast<double>(dim);
    double var = 0.0;
    for (size_t j = 0; j < dim; ++j) {
      const double d = xv[base + j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(dim);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sd[r] = is;
    for (size_t j = 0; j < dim; ++j) {
      const double xh = (xv[base + j] - mean) * is;
      xhat[base + j] = xh;
      out[base + j] = gv[j] * xh + bv[j];
    }
  }
  return detail::make_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [dim, rows, xhat = std::move(xhat), inv_sd = std::move(inv_sd)](Node& self) {
        Node& px = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        const auto& dy = self.grad;
        const auto& gv = pg.values;
        if (pg.requires_grad) {
          auto& gg = pg.grad_buffer();
          for (size_t r = 0; r < rows; ++r)
            for (size_t j = 0; j < dim; ++j) gg[j] += dy[r * dim + j] * xhat[r * dim + j];
        }
        if (pb.requires_grad) {
          auto& gb = pb.grad_buffer();
          for (size_t r = 0; r < rows; ++r)
            for (size_t j = 0; j < dim; ++j) gb[j] += dy[r * dim + j];
        }
        if (px.requires_grad) {
          auto& gx = px.grad_buffer();
          for (size_t r = 0; r < rows; ++r) {
            const size_t base = r * dim;
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (size_t j = 0; j < dim; ++j) {
              const double dxh = dy[base + j] * gv[j];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xhat[base + j];
            }
            mean_dxh /= static_cast<double>(dim);
            mean_dxh_xh /= static_cast<double>(dim);
            for (size_t j = 0; j < dim; ++j) {
              const double dxh = dy[base + j] * gv[j];
              gx[base + j] += inv_sd[r] * (dxh - mean_dxh - xhat[base + j] * mean_dxh_xh);
            }
          }
        }
      });
}

Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.size());
  const auto& x = a.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * M_SQRT1_2));
  return detail::make_op("gelu", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    const auto& x = p.values;
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    for (size_t i = 0; i < g.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(x[i] * M_SQRT1_2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
      g[i] += self.grad[i] * (cdf + x[i] * pdf);
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a.data()[i]));
  return detail::make_op("sigmoid", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) {
      const double y = self.values[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

Tensor log_sigmoid(const Tensor& a) {
  std::vector<double> out(a.size());
  for (size_t i = 0; i < out.size(); ++i) {
    const double x = a.data()[i];
    // -softplus(-x), stable on both tails
    out[i] = x < 0.0 ? x - std::log1p(std::exp(x)) : -std::log1p(std::exp(-x));
  }
  return detail::make_op("log_sigmoid", a.shape(), std::move(out), {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) {
      const double x = p.values[i];
      g[i] += self.grad[i] / (1.0 + std::exp(x));  // d log sigma(x) = sigma(-x)
    }
  });
}

Tensor embed_block(const Tensor& a, size_t rows, size_t cols, size_t row0, size_t col0) {
  if (a.rank() != 2) throw ShapeError("embed_block: need rank-2, got " + shape_str(a.shape()));
  const size_t br = a.shape()[0];
  const size_t bc = a.shape()[1];
  if (row0 + br > rows || col0 + bc > cols)
    throw ShapeError("embed_block: block " + shape_str(a.shape()) + " at (" +
                     std::to_string(row0) + ", " + std::to_string(col0) +
                     ") exceeds target " + std::to_string(rows) + "x" + std::to_string(cols));
  std::vector<double> out(rows * cols, 0.0);
  for (size_t r = 0; r < br; ++r)
    for (size_t c = 0; c < bc; ++c) out[(row0 + r) * cols + col0 + c] = a.data()[r * bc + c];
  return detail::make_op("embed_block", Shape{rows, cols}, std::move(out), {a},
                         [cols, row0, col0, br, bc](Node& self) {
                           Node& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& g = p.grad_buffer();
                           for (size_t r = 0; r < br; ++r)
                             for (size_t c = 0; c < bc; ++c)
                               g[r * bc + c] += self.grad[(row0 + r) * cols + col0 + c];
                         });
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) throw ShapeError("embedding: table must be rank-2");
  const size_t vocab = table.shape()[0];
  const size_t dim = table.shape()[1];
  for (int id : ids)
    if (id < 0 || static_cast<size_t>(id) >= vocab)
      throw ContractError("embedding: id " + std::to_string(id) + " out of range [0, " +
                          std::to_string(vocab) + ")");
  std::vector<double> out(ids.size() * dim);
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(table.data().begin() + static_cast<size_t>(ids[i]) * dim, dim,
                out.begin() + i * dim);
  return detail::make_op("embedding", Shape{ids.size(), dim}, std::move(out), {table},
                         [ids, dim](Node& self) {
                           Node& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& g = p.grad_buffer();
                           for (size_t i = 0; i < ids.size(); ++i) {
                             const size_t row = static_cast<size_t>(ids[i]) * dim;
                             for (size_t j = 0; j < dim; ++j) g[row + j] += self.grad[i * dim + j];
                           }
                         });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_op("sum_all", Shape{1}, {s}, {a}, [](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    auto& g = p.grad_buffer();
    for (size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0];
  });
}

Tensor mean_all(const Tensor& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.size())); }

Tensor sum_axis(const Tensor& a, size_t axis) {
  if (axis >= a.rank()) throw ShapeError("sum_axis: axis out of range for " + shape_str(a.shape()));
  size_t outer, len, inner;
  axis_split(a.shape(), axis, &outer, &len, &inner);
  Shape out_shape;
  for (size_t i = 0; i < a.rank(); ++i)
    if (i != axis) out_shape.push_back(a.shape()[i]);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(outer * inner, 0.0);
  const auto& x = a.data();
  for (size_t o = 0; o < outer; ++o)
    for (size_t l = 0; l < len; ++l)
      for (size_t in = 0; in < inner; ++in) out[o * inner + in] += x[(o * len + l) * inner + in];
  return detail::make_op("sum_axis", std::move(out_shape), std::move(out), {a},
                         [outer, len, inner](Node& self) {
                           Node& p = *self.parents[0];
                           if (!p.requires_grad) return;
                           auto& g = p.grad_buffer();
                           for (size_t o = 0; o < outer; ++o)
                             for (size_t l = 0; l < len; ++l)
                               for (size_t in = 0; in < inner; ++in)
                                 g[(o * len + l) * inner + in] += self.grad[o * inner + in];
                         });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id,
                     bool* all_ignored) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy: logits must be rank-2, got " + shape_str(logits.shape()));
  const size_t n = logits.shape()[0];
  const size_t vocab = logits.shape()[1];
  if (targets.size() != n)
    throw ContractError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(n) + " rows");
  for (int t : targets)
    if (t != ignore_id && (t < 0 || static_cast<size_t>(t) >= vocab))
      throw ContractError("cross_entropy: target " + std::to_string(t) + " out of range [0, " +
                          std::to_string(vocab) + ")");
  size_t counted = 0;
  double loss = 0.0;
  std::vector<double> probs(logits.size(), 0.0);
  const auto& x = logits.data();
  for (size_t i = 0; i < n; ++i) {
    if (targets[i] == ignore_id) continue;
    ++counted;
    const size_t base = i * vocab;
    double mx = x[base];
    for (size_t j = 1; j < vocab; ++j) mx = std::max(mx, x[base + j]);
    double sum = 0.0;
    for (size_t j = 0; j < vocab; ++j) {
      const double e = std::exp(x[base + j] - mx);
      probs[base + j] = e;
      sum += e;
    }
    for (size_t j = 0; j < vocab; ++j) probs[base + j] /= sum;
    loss += std::log(sum) + mx - x[base + static_cast<size_t>(targets[i])];
  }
  if (all_ignored) *all_ignored = counted == 0;
  if (counted == 0)
    return detail::make_op("cross_entropy", Shape{1}, {0.0}, {logits}, [](Node&) {});
  loss /= static_cast<double>(counted);
  return detail::make_op(
      "cross_entropy", Shape{1}, {loss}, {logits},
      [targets, ignore_id, vocab, counted, probs = std::move(probs)](Node& self) {
        Node& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.grad_buffer();
        const double upstream = self.grad[0] / static_cast<double>(counted);
        for (size_t i = 0; i < targets.size(); ++i) {
          if (targets[i] == ignore_id) continue;
          const size_t base = i * vocab;
          for (size_t j = 0; j < vocab; ++j) g[base + j] += upstream * probs[base + j];
          g[base + static_cast<size_t>(targets[i])] -= upstream;
        }
      });
}

namespace {

double rel_error(double analytic, double numeric) {
  const double m = std::max(std::abs(analytic), std::abs(numeric));
  if (m < 1e-6) return 0.0;
  return std::abs(analytic - numeric) / m;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h,
                           double tol) {
  if (!x.requires_grad()) throw ContractError("grad_check: x must require grad");
  x.zero_grad();
  {
    Tape tape;
    Tensor y = f(x);
    tape.backward(y);
  }
  std::vector<double> analytic = x.has_grad() ? x.grad() : std::vector<double>(x.size(), 0.0);
  x.zero_grad();

  GradCheckReport report;
  auto& xs = x.mutable_data();
  for (size_t i = 0; i < xs.size(); ++i) {
    const double keep = xs[i];
    xs[i] = keep + h;
    const double fp = f(x).item();
    xs[i] = keep - h;
    const double fm = f(x).item();
    xs[i] = keep;
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = rel_error(analytic[i], numeric);
    if (err >= report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
  }
  report.pass = report.max_rel_error < tol;
  return report;
}

GradCheckReport grad_check_params(const std::function<Tensor()>& loss_fn,
                                  const std::vector<Tensor>& params, size_t samples_per_tensor,
                                  Rng& rng, double h, double tol) {
  for (const auto& p : params) {
    if (!p.requires_grad()) throw ContractError("grad_check_params: all params must require grad");
    const_cast<Tensor&>(p).zero_grad();
  }
  {
    Tape tape;
    Tensor y = loss_fn();
    tape.backward(y);
  }
  GradCheckReport report;
  size_t probe_counter = 0;
  for (const auto& p : params) {
    auto node = p.node();
    const std::vector<double> analytic =
        node->grad.empty() ? std::vector<double>(p.size(), 0.0) : node->grad;
    auto& xs = node->values;
    for (size_t s = 0; s < std::min(samples_per_tensor, xs.size()); ++s) {
      const size_t i = samples_per_tensor >= xs.size() ? s : rng.uniform_index(xs.size());
      const double keep = xs[i];
      xs[i] = keep + h;
      const double fp = loss_fn().item();
      xs[i] = keep - h;
      const double fm = loss_fn().item();
      xs[i] = keep;
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = rel_error(analytic[i], numeric);
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_index = probe_counter;
        report.analytic_at_worst = analytic[i];
        report.numeric_at_worst = numeric;
      }
      ++probe_counter;
    }
  }
  for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
  report.pass = report.max_rel_error < tol;
  return report;
}

}  // namespace drivecap
