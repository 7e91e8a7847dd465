#include "core/tensor.hpp"

#include <atomic>
#include <cmath>

namespace actfno {

namespace {

thread_local Graph* g_active = nullptr;
std::atomic<uint64_t> g_graph_counter{1};

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> values) {
  auto p = std::make_shared<TensorImpl>();
  p->shape = std::move(shape);
  p->data = std::make_shared<std::vector<double>>(std::move(values));
  return p;
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  int64_t n = numel_of(shape);
  if (n < 0) throw ValidationError("tensor shape with negative extent " + shape_str(shape));
  return wrap(make_impl(std::move(shape), std::vector<double>(size_t(n), 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
  int64_t n = numel_of(shape);
  return wrap(make_impl(std::move(shape), std::vector<double>(size_t(n), value)));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
  if (numel_of(shape) != int64_t(values.size()))
    throw ValidationError(format_msg("from_data: shape ", shape_str(shape), " does not match ",
                                     values.size(), " values"));
  return wrap(make_impl(std::move(shape), std::move(values)));
}

double Tensor::scalar_value() const {
  if (numel() != 1) throw ValidationError("scalar_value on tensor of shape " + shape_str(shape()));
  return (*p_->data)[0];
}

std::vector<double>& Tensor::grad_mut() {
  if (!p_->grad) p_->grad = std::make_shared<std::vector<double>>(p_->data->size(), 0.0);
  return *p_->grad;
}

void Tensor::zero_grad() {
  if (p_->grad) std::fill(p_->grad->begin(), p_->grad->end(), 0.0);
}

Tensor Tensor::reshape(Shape shape) const {
  if (numel_of(shape) != numel())
    throw ValidationError(format_msg("reshape ", shape_str(this->shape()), " -> ", shape_str(shape),
                                     ": element count differs"));
  auto q = std::make_shared<TensorImpl>(*p_);
  q->shape = std::move(shape);
  return wrap(q);
}

Tensor Tensor::clone() const {
  return wrap(make_impl(p_->shape, *p_->data));
}

Tensor Tensor::detach() const {
  auto q = std::make_shared<TensorImpl>();
  q->shape = p_->shape;
  q->data = p_->data;
  return wrap(q);
}

// --- Graph ------------------------------------------------------------------

Graph::Graph() {
  id_ = g_graph_counter.fetch_add(1);
  prev_active_ = g_active;
  g_active = this;
}

Graph::~Graph() { g_active = prev_active_; }

Graph* Graph::active() { return g_active; }

bool Graph::wants(const Tensor& t) const {
  if (!t.defined()) return false;
  const TensorImpl* p = t.impl().get();
  if (p->graph_id == id_ && p->node >= 0) return true;
  return p->requires_grad;
}

Graph::Ref Graph::ref(const Tensor& t) {
  TensorImpl* p = t.impl().get();
  if (p->graph_id == id_ && p->node >= 0) return {p->node, p->slot};
  if (!p->requires_grad) return {};
  auto it = leaf_nodes_.find(p);
  if (it != leaf_nodes_.end()) return {it->second, 0};
  if (!p->grad) p->grad = std::make_shared<std::vector<double>>(p->data->size(), 0.0);
  Node n;
  n.out_numels = {int64_t(p->data->size())};
  n.leaf_grad = p->grad;
  n.leaf_numel = int64_t(p->data->size());
  int32_t idx = int32_t(nodes_.size());
  nodes_.push_back(std::move(n));
  adjoints_.emplace_back();
  adjoints_.back().resize(1);
  leaf_nodes_.emplace(p, idx);
  p->graph_id = id_;
  p->node = idx;
  p->slot = 0;
  return {idx, 0};
}

int32_t Graph::add_node(std::vector<Shape> out_shapes, std::vector<Ref> parents, BackwardFn fn) {
  Node n;
  n.out_numels.reserve(out_shapes.size());
  for (auto& s : out_shapes) n.out_numels.push_back(numel_of(s));
  n.parents = std::move(parents);
  n.backward = std::move(fn);
  int32_t idx = int32_t(nodes_.size());
  nodes_.push_back(std::move(n));
  adjoints_.emplace_back();
  adjoints_.back().resize(out_shapes.size());
  return idx;
}

void Graph::bind(Tensor& t, int32_t node, int32_t slot) {
  TensorImpl* p = t.impl().get();
  p->graph_id = id_;
  p->node = node;
  p->slot = slot;
}

std::vector<double>* Graph::adjoint_for(Ref r, bool create) {
  if (r.node < 0) return nullptr;
  auto& slotvec = adjoints_[size_t(r.node)];
  auto& buf = slotvec[size_t(r.slot)];
  if (!buf && create)
    buf = std::make_unique<std::vector<double>>(size_t(nodes_[size_t(r.node)].out_numels[size_t(r.slot)]), 0.0);
  return buf ? buf.get() : nullptr;
}

const double* Graph::BackCtx::adjoint(int slot) const {
  auto& buf = g_->adjoints_[size_t(node_)][size_t(slot)];
  return buf ? buf->data() : nullptr;
}

double* Graph::BackCtx::parent_grad(int i) {
  const auto& parents = g_->nodes_[size_t(node_)].parents;
  Ref r = parents[size_t(i)];
  if (r.node < 0) return nullptr;
  Node& pn = g_->nodes_[size_t(r.node)];
  if (pn.leaf_grad) return pn.leaf_grad->data();
  return g_->adjoint_for(r, true)->data();
}

void Graph::backward(const Tensor& loss) {
  if (backward_done_) throw ValidationError("backward called twice on the same graph");
  if (!loss.defined() || loss.numel() != 1) throw ValidationError("backward requires a scalar loss");
  const TensorImpl* p = loss.impl().get();
  if (p->graph_id != id_ || p->node < 0)
    throw ValidationError("loss tensor is not traced on the active graph");
  backward_done_ = true;

  *adjoint_for({p->node, p->slot}, true) = {1.0};

  for (int32_t n = p->node; n >= 0; --n) {
    Node& node = nodes_[size_t(n)];
    auto& slots = adjoints_[size_t(n)];
    bool any = false;
    for (auto& b : slots)
      if (b) {
        any = true;
        break;
      }
    if (!any) continue;
    if (node.leaf_grad) {
      const auto& adj = *slots[0];
      auto& g = *node.leaf_grad;
      for (size_t i = 0; i < adj.size(); ++i) g[i] += adj[i];
    } else if (node.backward) {
      BackCtx ctx;
      ctx.g_ = this;
      ctx.node_ = n;
      node.backward(ctx);
    }
    for (auto& b : slots) b.reset();  // free as we go
  }
}

void ensure_finite(const Tensor& t, const char* op) {
  const double* d = t.data();
  int64_t n = t.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(d[i]))
      throw NumericError(format_msg("non-finite value produced by ", op, " at flat index ", i));
  }
}

// --- op helpers --------------------------------------------------------------

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ValidationError(format_msg(op, ": shape mismatch ", shape_str(a.shape()), " vs ",
                                     shape_str(b.shape())));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data_mut();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  ensure_finite(out, "add");
  Graph* g = Graph::active();
  if (g && (g->wants(a) || g->wants(b))) {
    int32_t node = g->add_node({a.shape()}, {g->ref(a), g->ref(b)}, [n](Graph::BackCtx& ctx) {
      const double* adj = ctx.adjoint(0);
      if (!adj) return;
      for (int pi : {0, 1})
        if (double* dst = ctx.parent_grad(pi))
          for (int64_t i = 0; i < n; ++i) dst[i] += adj[i];
    });
    g->bind(out, node, 0);
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data_mut();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  ensure_finite(out, "sub");
  Graph* g = Graph::active();
  if (g && (g->wants(a) || g->wants(b))) {
    int32_t node = g->add_node({a.shape()}, {g->ref(a), g->ref(b)}, [n](Graph::BackCtx& ctx) {
      const double* adj = ctx.adjoint(0);
      if (!adj) return;
      if (double* dst = ctx.parent_grad(0))
        for (int64_t i = 0; i < n; ++i) dst[i] += adj[i];
      if (double* dst = ctx.parent_grad(1))
        for (int64_t i = 0; i < n; ++i) dst[i] -= adj[i];
    });
    g->bind(out, node, 0);
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data_mut();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  ensure_finite(out, "mul");
  Graph* g = Graph::active();
  if (g && (g->wants(a) || g->wants(b))) {
    auto sa = a.storage();
    auto sb = b.storage();
    int32_t node = g->add_node({a.shape()}, {g->ref(a), g->ref(b)}, [n, sa, sb](Graph::BackCtx& ctx) {
      const double* adj = ctx.adjoint(0);
      if (!adj) return;
      if (double* dst = ctx.parent_grad(0))
        for (int64_t i = 0; i < n; ++i) dst[i] += adj[i] * (*sb)[size_t(i)];
      if (double* dst = ctx.parent_grad(1))
        for (int64_t i = 0; i < n; ++i) dst[i] += adj[i] * (*sa)[size_t(i)];
    });
    g->bind(out, node, 0);
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  int64_t n = a.numel();
  Tensor out = Tensor::zeros(a.shape());
  const double* pa = a.data();
  double* po = out.data_mut();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  ensure_finite(out, "scale");
  Graph* g = Graph::active();
  if (g && g->wants(a)) {
    int32_t node = g->add_node({a.shape()}, {g->ref(a)}, [n, s](Graph::BackCtx& ctx) {
      const double* adj = ctx.adjoint(0);
      if (!adj) return;
      if (double* dst = ctx.parent_grad(0))
        for (int64_t i = 0; i < n; ++i) dst[i] += adj[i] * s;
    });
    g->bind(out, node, 0);
  }
  return out;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440084436210485;
constexpr double kInvSqrt2Pi = 0.39894228040143267793994605993438;

inline double gelu_val(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }
inline double gelu_deriv(double x) {
  double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

}  // namespace

Tensor activation(const Tensor& x, Activation kind) {
  int64_t n = x.numel();
  Tensor out = Tensor::zeros(x.shape());
  const double* px = x.data();
  double* po = out.data_mut();
  if (kind == Activation::Gelu) {
    for (int64_t i = 0; i < n; ++i) po[i] = gelu_val(px[i]);
  } else {
    for (int64_t i = 0; i < n; ++i) po[i] = std::tanh(px[i]);
  }
  ensure_finite(out, "activation");
  Graph* g = Graph::active();
  if (g && g->wants(x)) {
    auto sx = x.storage();
    auto so = out.storage();
    int32_t node =
        g->add_node({x.shape()}, {g->ref(x)}, [n, sx, so, kind](Graph::BackCtx& ctx) {
          const double* adj = ctx.adjoint(0);
          if (!adj) return;
          double* dst = ctx.parent_grad(0);
          if (!dst) return;
          if (kind == Activation::Gelu) {
            for (int64_t i = 0; i < n; ++i) dst[i] += adj[i] * gelu_deriv((*sx)[size_t(i)]);
          } else {
            for (int64_t i = 0; i < n; ++i) {
              double t = (*so)[size_t(i)];
              dst[i] += adj[i] * (1.0 - t * t);
            }
          }
        });
    g->bind(out, node, 0);
  }
  return out;
}

Tensor sum(const Tensor& x) {
  int64_t n = x.numel();
  const double* px = x.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += px[i];
  Tensor out = Tensor::full({1}, acc);
  ensure_finite(out, "sum");
  Graph* g = Graph::active();
  if (g && g->wants(x)) {
    int32_t node = g->add_node({Shape{1}}, {g->ref(x)}, [n](Graph::BackCtx& ctx) {
      const double* adj = ctx.adjoint(0);
      if (!adj) return;
      if (double* dst = ctx.parent_grad(0))
        for (int64_t i = 0; i < n; ++i) dst[i] += adj[0];
    });
    g->bind(out, node, 0);
  }
  return out;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "mse_loss");
  int64_t n = pred.numel();
  const double* pp = pred.data();
  const double* pt = target.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double d = pp[i] - pt[i];
    acc += d * d;
  }
  Tensor out = Tensor::full({1}, acc / double(n));
  ensure_finite(out, "mse_loss");
  Graph* g = Graph::active();
  if (g && (g->wants(pred) || g->wants(target))) {
    auto sp = pred.storage();
    auto st = target.storage();
    int32_t node = g->add_node({Shape{1}}, {g->ref(pred), g->ref(target)},
                               [n, sp, st](Graph::BackCtx& ctx) {
                                 const double* adj = ctx.adjoint(0);
                                 if (!adj) return;
                                 double c = adj[0] * 2.0 / double(n);
                                 if (double* dst = ctx.parent_grad(0))
                                   for (int64_t i = 0; i < n; ++i)
                                     dst[i] += c * ((*sp)[size_t(i)] - (*st)[size_t(i)]);
                                 if (double* dst = ctx.parent_grad(1))
                                   for (int64_t i = 0; i < n; ++i)
                                     dst[i] -= c * ((*sp)[size_t(i)] - (*st)[size_t(i)]);
                               });
    g->bind(out, node, 0);
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ValidationError("concat_channels: no inputs");
  const Shape& s0 = parts[0].shape();
  if (s0.size() != 4) throw ValidationError("concat_channels expects (B,C,H,W) tensors");
  int64_t B = s0[0], H = s0[2], W = s0[3];
  int64_t ctotal = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != 4 || s[0] != B || s[2] != H || s[3] != W)
      throw ValidationError("concat_channels: incompatible shapes " + shape_str(s0) + " vs " +
                            shape_str(p.shape()));
    ctotal += s[1];
  }
  Tensor out = Tensor::zeros({B, ctotal, H, W});
  double* po = out.data_mut();
  int64_t plane = H * W;
  int64_t coff = 0;
  for (const auto& p : parts) {
    int64_t c = p.shape()[1];
    const double* pp = p.data();
    for (int64_t b = 0; b < B; ++b)
      std::copy(pp + b * c * plane, pp + (b + 1) * c * plane,
                po + (b * ctotal + coff) * plane);
    coff += c;
  }
  Graph* g = Graph::active();
  bool any = false;
  if (g)
    for (const auto& p : parts)
      if (g->wants(p)) {
        any = true;
        break;
      }
  if (g && any) {
    std::vector<Graph::Ref> refs;
    std::vector<int64_t> chans;
    refs.reserve(parts.size());
    for (const auto& p : parts) {
      refs.push_back(g->ref(p));
      chans.push_back(p.shape()[1]);
    }
    int32_t node = g->add_node({out.shape()}, std::move(refs),
                               [B, ctotal, plane, chans](Graph::BackCtx& ctx) {
                                 const double* adj = ctx.adjoint(0);
                                 if (!adj) return;
                                 int64_t coff = 0;
                                 for (size_t pi = 0; pi < chans.size(); ++pi) {
                                   int64_t c = chans[pi];
                                   if (double* dst = ctx.parent_grad(int(pi))) {
                                     for (int64_t b = 0; b < B; ++b) {
                                       const double* src = adj + (b * ctotal + coff) * plane;
                                       double* d = dst + b * c * plane;
                                       for (int64_t i = 0; i < c * plane; ++i) d[i] += src[i];
                                     }
                                   }
                                   coff += c;
                                 }
                               });
    g->bind(out, node, 0);
  }
  return out;
}

Tensor channel_scale(const Tensor& x, const Tensor& gate) {
  const Shape& s = x.shape();
  if (s.size() != 4) throw ValidationError("channel_scale expects (B,C,H,W)");
  if (gate.ndim() != 1 || gate.size(0) != s[1])
    throw ValidationError("channel_scale: gate must have one entry per channel");
  int64_t B = s[0], C = s[1], plane = s[2] * s[3];
  Tensor out = Tensor::zeros(s);
  const double* px = x.data();
  const double* pg = gate.data();
  double* po = out.data_mut();
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c) {
      double gv = pg[c];
      const double* src = px + (b * C + c) * plane;
      double* dst = po + (b * C + c) * plane;
      for (int64_t i = 0; i < plane; ++i) dst[i] = src[i] * gv;
    }
  ensure_finite(out, "channel_scale");
  Graph* g = Graph::active();
  if (g && (g->wants(x) || g->wants(gate))) {
    auto sx = x.storage();
    auto sg = gate.storage();
    int32_t node = g->add_node(
        {s}, {g->ref(x), g->ref(gate)}, [B, C, plane, sx, sg](Graph::BackCtx& ctx) {
          const double* adj = ctx.adjoint(0);
          if (!adj) return;
          if (double* dst = ctx.parent_grad(0)) {
            for (int64_t b = 0; b < B; ++b)
              for (int64_t c = 0; c < C; ++c) {
                double gv = (*sg)[size_t(c)];
                const double* a = adj + (b * C + c) * plane;
                double* d = dst + (b * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) d[i] += a[i] * gv;
              }
          }
          if (double* dst = ctx.parent_grad(1)) {
            for (int64_t b = 0; b < B; ++b)
              for (int64_t c = 0; c < C; ++c) {
                const double* a = adj + (b * C + c) * plane;
                const double* xv = sx->data() + (b * C + c) * plane;
                double acc = 0.0;
                for (int64_t i = 0; i < plane; ++i) acc += a[i] * xv[i];
                dst[c] += acc;
              }
          }
        });
    g->bind(out, node, 0);
  }
  return out;
}

}  // namespace actfno
