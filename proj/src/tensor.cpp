#include "ftz/tensor.hpp"

#include <atomic>
#include <cmath>
#include <sstream>

namespace ftz {

namespace {

std::atomic<Precision> g_precision{Precision::f32};
std::atomic<bool> g_finite_checks{false};
std::atomic<uint64_t> g_next_id{1};

}  // namespace

void set_precision(Precision p) { g_precision.store(p, std::memory_order_relaxed); }
Precision precision() { return g_precision.load(std::memory_order_relaxed); }

void set_finite_checks(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }
bool finite_checks() { return g_finite_checks.load(std::memory_order_relaxed); }

size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (int extent : shape) {
    if (extent <= 0) throw DimensionError("tensor extent must be positive, got " + shape_str(shape));
    n *= static_cast<size_t>(extent);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ",";
    out << shape[i];
  }
  out << "]";
  return out.str();
}

double store_round(double v) {
  return precision() == Precision::f32 ? static_cast<double>(static_cast<float>(v)) : v;
}

void store_round_inplace(std::vector<double>& values) {
  if (precision() != Precision::f32) return;
  for (double& v : values) v = static_cast<double>(static_cast<float>(v));
}

Tensor wrap_node(std::shared_ptr<TensorNode> node) { return Tensor(std::move(node)); }

static std::shared_ptr<TensorNode> make_node(Shape shape, bool requires_grad) {
  auto node = std::make_shared<TensorNode>();
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  node->data.resize(shape_numel(shape));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return node;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return wrap_node(make_node(std::move(shape), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = make_node(std::move(shape), requires_grad);
  const double v = store_round(value);
  for (double& x : node->data) x = v;
  return wrap_node(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("from_data: shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  auto node = make_node(std::move(shape), requires_grad);
  node->data = std::move(values);
  store_round_inplace(node->data);
  return wrap_node(std::move(node));
}

double Tensor::value() const {
  if (numel() != 1) throw DimensionError("value(): tensor is not a scalar, shape " + shape_str(shape()));
  return node_->data[0];
}

double Tensor::at2(int row, int col) const {
  if (rank() != 2) throw DimensionError("at2(): tensor is not rank-2, shape " + shape_str(shape()));
  return node_->data[static_cast<size_t>(row) * static_cast<size_t>(dim(1)) + static_cast<size_t>(col)];
}

std::vector<double>& Tensor::grad_vec() {
  if (node_->grad.empty()) throw Error("grad accessed before backward populated it");
  return node_->grad;
}

const std::vector<double>& Tensor::grad_vec() const {
  if (node_->grad.empty()) throw Error("grad accessed before backward populated it");
  return node_->grad;
}

void Tensor::ensure_grad() {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
}

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::reset() {
  entries_.clear();
  ++generation_;
  consumed_ = false;
}

void Tape::record(TapeEntry entry) { entries_.push_back(std::move(entry)); }

void Tape::run_backward(const Tensor& loss) {
  if (!loss.defined()) throw Error("backward: undefined tensor");
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be a scalar, shape " + shape_str(loss.shape()));
  }
  const TensorNode* node = loss.node();
  if (!node->on_tape || node->tape_gen != generation_) {
    throw Error("backward: loss was not produced on the active tape (stale tape)");
  }
  if (consumed_) {
    throw Error("backward: tape already consumed; call reset() before reusing it");
  }
  const_cast<TensorNode*>(node)->grad.assign(1, 1.0);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->backward) it->backward();
  }
  consumed_ = true;
}

void backward(const Tensor& loss) { Tape::active().run_backward(loss); }

bool tracks_grad(const Tensor& t) {
  const TensorNode* n = t.node();
  if (n->requires_grad) return true;
  return n->on_tape && n->tape_gen == Tape::active().generation();
}

}  // namespace ftz
