#ifndef WEAKMAP_TENSOR_HPP_
#define WEAKMAP_TENSOR_HPP_

#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "check.hpp"

namespace weakmap {

// Extents, outermost first. Feature maps are [H, W, C] row-major with the
// channel index fastest; dense weights are [out, in].
using Shape = std::vector<int>;

int shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
};

// Shared-payload handle: copies alias the same buffers, so parameters can be
// mounted as leaves on many tapes while keeping one value/grad store.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int rank() const { return static_cast<int>(d_->shape.size()); }
  int extent(int i) const { return d_->shape[static_cast<size_t>(i)]; }
  int size() const { return static_cast<int>(d_->values.size()); }

  // Handle semantics: constness of the handle does not propagate to the
  // shared payload, same as shared_ptr.
  std::vector<double>& values() const { return d_->values; }
  std::vector<double>& grad() const { return d_->grad; }
  double& v(int i) const { return d_->values[static_cast<size_t>(i)]; }
  double& g(int i) const { return d_->grad[static_cast<size_t>(i)]; }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) const { d_->requires_grad = b; }
  void zero_grad() const;

  // Deep copy; keeps requires_grad, grad comes back zeroed.
  Tensor clone() const;

  TensorData* data_ptr() const { return d_.get(); }

 private:
  std::shared_ptr<TensorData> d_;
};

// Per-channel batchnorm statistics carried across steps (not differentiated).
struct RunningStats {
  std::vector<double> mean;
  std::vector<double> var;
  double momentum = 0.1;
  void init(int channels) {
    mean.assign(static_cast<size_t>(channels), 0.0);
    var.assign(static_cast<size_t>(channels), 1.0);
  }
};

// Records one forward pass. Operations append in execution order, so walking
// the list backwards is a valid reverse-topological sweep. backward() works
// on per-call adjoint buffers and then adds them into the persistent grad
// stores, so repeated calls accumulate.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Node id of t on this tape; registers it as a leaf on first sight.
  int id(const Tensor& t);
  // Fresh node owned by this tape.
  Tensor alloc(Shape shape, bool requires_grad);

  void record(const char* name, std::vector<int> inputs, int output,
              std::function<void(Tape&)> forward,
              std::function<void(Tape&)> backward);

  // Accumulates d(loss)/d(node) into the grad buffer of every
  // requires_grad node reached from the loss. Loss must be scalar.
  void backward(const Tensor& loss);

  // Recomputes every op output in recording order (no side effects on
  // running statistics). Use to verify the forward pass is reproducible.
  void replay();

  Tensor& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  // Adjoint buffer for a node, lazily zero-filled. Only meaningful while a
  // backward() call is in flight.
  std::vector<double>& adj(int id);
  bool has_adj(int id) const { return !adj_[static_cast<size_t>(id)].empty(); }

  size_t op_count() const { return ops_.size(); }
  size_t node_count() const { return nodes_.size(); }

  // Smallest distance to a relu kink or top-k selection boundary seen while
  // recording; gradient checks near a kink are meaningless and get skipped.
  double kink_margin() const { return kink_margin_; }
  void note_kink(double distance) {
    if (distance < kink_margin_) kink_margin_ = distance;
  }

 private:
  struct OpRecord {
    const char* name;
    std::vector<int> inputs;
    int output;
    std::function<void(Tape&)> forward;
    std::function<void(Tape&)> backward;
  };

  std::vector<Tensor> nodes_;
  std::unordered_map<const TensorData*, int> ids_;
  std::vector<OpRecord> ops_;
  std::vector<std::vector<double>> adj_;
  double kink_margin_ = std::numeric_limits<double>::infinity();
};

// Differentiable operations. All record onto the given tape and propagate
// requires_grad from their inputs.

// Cross-correlation of [H,W,Cin] with kernels [Kh,Kw,Cin,Cout] (+ optional
// bias [Cout]); output [H',W',Cout] with H' = (H + 2p - Kh)/stride + 1.
Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernels,
              const Tensor* bias, int stride, int padding);

Tensor avg_pool2d(Tape& tape, const Tensor& input, int window, int stride);

// Spatial mean per channel: [H,W,C] -> [C].
Tensor global_avg_pool(Tape& tape, const Tensor& input);

// weight [M,N] times input [N] (+ optional bias [M]).
Tensor dense(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor* bias);

Tensor relu(Tape& tape, const Tensor& input);
Tensor sigmoid(Tape& tape, const Tensor& input);

// Same-shape product, or [H,W,C] * [C] channel broadcast.
Tensor elementwise_mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scalar_mul(Tape& tape, const Tensor& a, double s);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);
// Channels [c0, c1) of a [H,W,C] tensor.
Tensor slice_channels(Tape& tape, const Tensor& a, int c0, int c1);

// Train mode normalizes by the per-channel spatial statistics of the input
// and pushes them into *stats (momentum update); eval mode normalizes by the
// running statistics. Epsilon 1e-5.
Tensor batchnorm(Tape& tape, const Tensor& input, const Tensor& gamma,
                 const Tensor& beta, bool train, RunningStats* stats);

// Sum of all entries -> scalar [1].
Tensor sum(Tape& tape, const Tensor& input);

// max over coordinates of |g_autodiff - g_central_difference| /
// max(1e-8, |g_ad| + |g_fd|) for a scalar-valued fn of one tensor.
// If kink_margin_out is given it receives the tape's kink margin at the
// base point so callers can discard checks taken too close to a kink.
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& fn,
                  const Tensor& input, double eps,
                  double* kink_margin_out = nullptr);

}  // namespace weakmap

#endif  // WEAKMAP_TENSOR_HPP_
