#ifndef ACTFNO_TENSOR_HPP
#define ACTFNO_TENSOR_HPP

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "core/common.hpp"

namespace actfno {

class Graph;

struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<double>> data;
  std::shared_ptr<std::vector<double>> grad;  // allocated lazily for leaves
  bool requires_grad = false;
  // Trace linkage; valid only while graph_id matches the active graph.
  uint64_t graph_id = 0;
  int32_t node = -1;
  int32_t slot = 0;
};

// Dense double-precision tensor, contiguous row-major. Copies are shallow
// (shared storage). A tensor participates in at most one computation graph
// between a forward trace and the matching backward call.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(p_); }
  const Shape& shape() const { return p_->shape; }
  int ndim() const { return int(p_->shape.size()); }
  int64_t size(int dim) const { return p_->shape[size_t(dim)]; }
  int64_t numel() const { return int64_t(p_->data->size()); }

  const double* data() const { return p_->data->data(); }
  double* data_mut() { return p_->data->data(); }
  const std::vector<double>& vec() const { return *p_->data; }
  std::shared_ptr<std::vector<double>> storage() const { return p_->data; }

  double scalar_value() const;

  bool requires_grad() const { return p_ && p_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    p_->requires_grad = v;
    return *this;
  }

  // Gradient buffer; null until a backward pass has touched this leaf.
  const std::vector<double>* grad() const { return p_->grad ? p_->grad.get() : nullptr; }
  std::vector<double>& grad_mut();
  void zero_grad();

  // Same storage, new shape (numel must match). Keeps trace linkage.
  Tensor reshape(Shape shape) const;
  // Deep copy, detached from any graph, requires_grad off.
  Tensor clone() const;
  // Shared storage, no trace linkage, requires_grad off.
  Tensor detach() const;

  std::shared_ptr<TensorImpl> impl() const { return p_; }
  static Tensor wrap(std::shared_ptr<TensorImpl> p) {
    Tensor t;
    t.p_ = std::move(p);
    return t;
  }

 private:
  std::shared_ptr<TensorImpl> p_;
};

// Reverse-mode tape. Constructing a Graph makes it the active graph for the
// current thread; ops trace onto it when any input needs gradients. The tape
// lives for exactly one forward/backward pair; training re-traces each step.
class Graph {
 public:
  struct Ref {
    int32_t node = -1;
    int32_t slot = 0;
  };

  class BackCtx {
   public:
    // Adjoint of output slot; nullptr means it never received gradient.
    const double* adjoint(int slot) const;
    // Accumulation buffer for parent i; nullptr if that parent is not tracked.
    double* parent_grad(int i);

   private:
    friend class Graph;
    Graph* g_ = nullptr;
    int32_t node_ = -1;
  };

  using BackwardFn = std::function<void(BackCtx&)>;

  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  static Graph* active();

  // True if t is traced on this graph or is a grad-requiring leaf.
  bool wants(const Tensor& t) const;
  // Trace reference for t, registering a leaf node if needed.
  // Returns {-1,0} for inputs that do not need gradients.
  Ref ref(const Tensor& t);

  int32_t add_node(std::vector<Shape> out_shapes, std::vector<Ref> parents, BackwardFn fn);
  void bind(Tensor& t, int32_t node, int32_t slot);

  // Populates d(loss)/d(leaf) for every reachable grad-requiring leaf.
  // loss must be a scalar traced on this graph; callable once.
  void backward(const Tensor& loss);

 private:
  struct Node {
    std::vector<int64_t> out_numels;
    std::vector<Ref> parents;
    BackwardFn backward;
    std::shared_ptr<std::vector<double>> leaf_grad;  // leaves only
    int64_t leaf_numel = 0;
  };

  std::vector<double>* adjoint_for(Ref r, bool create);

  uint64_t id_ = 0;
  std::vector<Node> nodes_;
  std::unordered_map<const TensorImpl*, int32_t> leaf_nodes_;
  std::vector<std::vector<std::unique_ptr<std::vector<double>>>> adjoints_;
  bool backward_done_ = false;
  Graph* prev_active_ = nullptr;
};

// Throws NumericError if any element is NaN/Inf. Every forward op calls this.
void ensure_finite(const Tensor& t, const char* op);

// --- elementwise / structural ops ------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

enum class Activation { Gelu, Tanh };
Tensor activation(const Tensor& x, Activation kind);

Tensor sum(const Tensor& x);                               // -> scalar
Tensor mse_loss(const Tensor& pred, const Tensor& target); // mean squared error
Tensor concat_channels(const std::vector<Tensor>& parts);  // along dim 1 of (B,C,H,W)
Tensor channel_scale(const Tensor& x, const Tensor& gate); // gate: (C)

}  // namespace actfno

#endif
