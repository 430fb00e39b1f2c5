#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ftz/errors.hpp"

namespace ftz {

// Process-wide scalar precision. Training runs in the 32-bit default: every
// stored scalar is rounded to IEEE-754 single precision, so checkpoints
// round-trip bit-exactly. The 64-bit mode keeps full doubles and exists for
// finite-difference verification, where single precision is too coarse.
enum class Precision { f32, f64 };

void set_precision(Precision p);
Precision precision();

// NaN/Inf detection mode: when on, every op scans its output and throws.
void set_finite_checks(bool on);
bool finite_checks();

using Shape = std::vector<int>;

size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorNode {
  uint64_t id = 0;
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  bool on_tape = false;   // produced by a recorded op
  uint64_t tape_gen = 0;  // generation of the tape that produced it
};

// Dense row-major tensor. Value-semantic handle over shared storage: copies
// alias the same data, which is what the tape needs to accumulate gradients.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  size_t numel() const { return node_->data.size(); }

  double* data() { return node_->data.data(); }
  const double* data() const { return node_->data.data(); }
  std::vector<double>& vec() { return node_->data; }
  const std::vector<double>& vec() const { return node_->data; }

  // Scalar convenience; requires numel() == 1.
  double value() const;
  double at2(int row, int col) const;  // rank-2 convenience

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::vector<double>& grad_vec();
  const std::vector<double>& grad_vec() const;
  void ensure_grad();  // allocate zero-filled gradient buffer
  void drop_grad() { node_->grad.clear(); }

  uint64_t id() const { return node_->id; }

  TensorNode* node() { return node_.get(); }
  const TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<TensorNode>& handle() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<TensorNode> node_;

  friend Tensor wrap_node(std::shared_ptr<TensorNode> node);
};

Tensor wrap_node(std::shared_ptr<TensorNode> node);

// Rounds v to the active storage precision.
double store_round(double v);
void store_round_inplace(std::vector<double>& values);

struct TapeEntry {
  const char* op = "";
  std::vector<uint64_t> input_ids;
  uint64_t output_id = 0;
  std::function<void()> backward;
};

// Wengert list: ops are appended in execution order, which is already a
// topological order, and backward walks it once in reverse. One tape per
// training thread; recording itself is single-threaded.
class Tape {
 public:
  static Tape& active();  // thread-local

  bool recording() const { return enabled_; }
  void set_recording(bool on) { enabled_ = on; }

  size_t size() const { return entries_.size(); }
  uint64_t generation() const { return generation_; }
  bool consumed() const { return consumed_; }

  void reset();
  void record(TapeEntry entry);
  void run_backward(const Tensor& loss);

 private:
  std::vector<TapeEntry> entries_;
  uint64_t generation_ = 1;
  bool enabled_ = true;
  bool consumed_ = false;
};

// RAII guard: disables tape recording in scope (inference, finite
// differences).
class GradPause {
 public:
  GradPause() : previous_(Tape::active().recording()) {
    Tape::active().set_recording(false);
  }
  ~GradPause() { Tape::active().set_recording(previous_); }
  GradPause(const GradPause&) = delete;
  GradPause& operator=(const GradPause&) = delete;

 private:
  bool previous_;
};

// Runs reverse-mode accumulation from a scalar loss on the active tape.
// Rejects non-scalar losses, losses from a stale tape generation, and a
// second call without reset().
void backward(const Tensor& loss);

// True if this tensor feeds gradient flow in the current tape generation.
bool tracks_grad(const Tensor& t);

}  // namespace ftz
