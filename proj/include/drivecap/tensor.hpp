#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "drivecap/errors.hpp"
#include "drivecap/rng.hpp"

namespace drivecap {

using Shape = std::vector<size_t>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One value in the computation graph. Nodes are created by ops and stay
// immutable afterwards except for gradient accumulation; leaf parameters are
// additionally mutated by the optimizer between steps.
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::string name;
  uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // null for leaves

  std::vector<double>& grad_buffer();  // resize-to-zero on first use
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t size() const { return node_->values.size(); }
  size_t rank() const { return node_->shape.size(); }
  const std::vector<double>& data() const { return node_->values; }
  std::vector<double>& mutable_data() { return node_->values; }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad() { node_->grad.clear(); }
  double item() const;
  const std::string& name() const { return node_->name; }
  void set_name(std::string name) { node_->name = std::move(name); }
  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Records ops executed while it is alive (one active tape per thread;
// construction nests). backward() replays the record in exact reverse order.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // loss must be scalar. Repeated calls accumulate into leaf grads.
  void backward(const Tensor& loss);

  size_t recorded_ops() const { return ops_.size(); }

  // Name/op of the earliest node (including leaf inputs) holding a NaN/Inf,
  // or "" if the recorded graph is finite. Used for training diagnostics.
  std::string first_nonfinite() const;

  static bool active();

  void record(std::shared_ptr<Node> node) { ops_.push_back(std::move(node)); }

 private:
  std::vector<std::shared_ptr<Node>> ops_;
  Tape* prev_ = nullptr;
};

namespace detail {
// Builds an op node; records it on the active tape when any input requires
// grad. `backward` reads self.grad and accumulates into parents' grads.
Tensor make_op(const char* op, Shape shape, std::vector<double> values,
               const std::vector<Tensor>& inputs, std::function<void(Node&)> backward);
}  // namespace detail

// Elementwise ops accept equal shapes, a size-1 operand, or one operand whose
// shape is a trailing suffix of the other's (broadcast over leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

// (m,k)x(k,n), batched (B,m,k)x(B,k,n), or rank-2/rank-3 mixes with the
// rank-2 operand broadcast over the batch.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor permute(const Tensor& a, const std::vector<size_t>& axes);
Tensor transpose_last(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, size_t begin, size_t count);

Tensor softmax(const Tensor& a, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log_sigmoid(const Tensor& a);
// Places a rank-2 tensor as a block inside a zero (rows, cols) matrix.
Tensor embed_block(const Tensor& a, size_t rows, size_t cols, size_t row0, size_t col0);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_axis(const Tensor& a, size_t axis);

// Mean negative log-softmax over rows whose target != ignore_id. If every
// row is ignored the loss is 0 and *all_ignored is set.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int ignore_id,
                     bool* all_ignored = nullptr);

struct GradCheckReport {
  double max_rel_error = 0.0;
  size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  bool pass = false;
};

// Central finite differences (f(x+h)-f(x-h))/2h against the analytic grad,
// elementwise over x. Relative error uses max(|a|,|n|) with values below
// 1e-6 treated as zero (finite-difference noise floor).
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                           double h = 1e-5, double tol = 1e-4);

// Same check against a closure over many parameter tensors, probing
// `samples_per_tensor` random coordinates of each (full models are too large
// for exhaustive probing).
GradCheckReport grad_check_params(const std::function<Tensor()>& loss_fn,
                                  const std::vector<Tensor>& params, size_t samples_per_tensor,
                                  Rng& rng, double h = 1e-5, double tol = 1e-4);

}  // namespace drivecap
