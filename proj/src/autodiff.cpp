#include "hse/autodiff.hpp"

#include <utility>

#include "hse/ops.hpp"

namespace hse {

void Graph::check_node(NodeId id) const {
  if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
    throw ShapeError("graph: invalid node id " + std::to_string(id));
}

NodeId Graph::push_node(Tensor value, bool needs_grad, Tensor* external) {
  nodes_.push_back(Node{std::move(value), needs_grad, external});
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::constant(Tensor value) { return push_node(std::move(value), false); }

NodeId Graph::leaf(Tensor* param) {
  if (!param) throw ShapeError("graph: null parameter leaf");
  return push_node(*param, param->requires_grad(), param);
}

const Tensor& Graph::value(NodeId id) const {
  check_node(id);
  return nodes_[static_cast<size_t>(id)].value;
}

bool Graph::needs_grad(NodeId id) const {
  check_node(id);
  return nodes_[static_cast<size_t>(id)].needs_grad;
}

Tensor Graph::execute(const Record& rec) const {
  const auto& v = [&](NodeId id) -> const Tensor& { return nodes_[static_cast<size_t>(id)].value; };
  switch (rec.kind) {
    case OpKind::Conv2d:
      return ops::conv2d(v(rec.a), v(rec.b), v(rec.c), rec.i0, rec.i1);
    case OpKind::Linear:
      return ops::linear(v(rec.a), v(rec.b), v(rec.c));
    case OpKind::Relu:
      return ops::relu(v(rec.a));
    case OpKind::Tanh:
      return ops::tanh_op(v(rec.a));
    case OpKind::AvgPool2:
      return ops::avg_pool2(v(rec.a));
    case OpKind::GlobalAvgPool:
      return ops::global_avg_pool(v(rec.a));
    case OpKind::SumSpatial:
      return ops::sum_spatial(v(rec.a));
    case OpKind::Add:
      return ops::add(v(rec.a), v(rec.b));
    case OpKind::Mul:
      return ops::mul(v(rec.a), v(rec.b));
    case OpKind::Scale:
      return ops::scale(v(rec.a), rec.alpha);
    case OpKind::SoftmaxSpatial:
      return ops::softmax_spatial(v(rec.a));
    case OpKind::SpatialToRows:
      return ops::spatial_to_rows(v(rec.a));
    case OpKind::RowsToSpatial:
      return ops::rows_to_spatial(v(rec.a), rec.i0, rec.i1, rec.i2, rec.i3);
    case OpKind::RepeatRows:
      return ops::repeat_rows(v(rec.a), rec.i0);
    case OpKind::ConcatCols:
      return ops::concat_cols(v(rec.a), v(rec.b));
    case OpKind::ExtendRows:
      return ops::extend_rows(v(rec.a), rec.indices);
    case OpKind::CrossEntropySum:
      return ops::cross_entropy_sum(v(rec.a), rec.indices);
    case OpKind::KlTemperedSum:
      return ops::kl_tempered_sum(v(rec.a), v(rec.b), rec.alpha);
    default:
      throw ShapeError("graph: cannot execute node kind");
  }
}

NodeId Graph::push_op(Record rec, Tensor out_value) {
  bool ng = false;
  for (NodeId in : {rec.a, rec.b, rec.c})
    if (in >= 0) ng = ng || nodes_[static_cast<size_t>(in)].needs_grad;
  NodeId out = push_node(std::move(out_value), ng);
  rec.out = out;
  records_.push_back(std::move(rec));
  return out;
}

NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
  check_node(x);
  check_node(w);
  check_node(b);
  Record r{OpKind::Conv2d, x, w, b};
  r.i0 = stride;
  r.i1 = pad;
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::linear(NodeId x, NodeId w, NodeId b) {
  check_node(x);
  check_node(w);
  check_node(b);
  Record r{OpKind::Linear, x, w, b};
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::relu(NodeId x) {
  check_node(x);
  Record r{OpKind::Relu, x};
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::tanh_(NodeId x) {
  check_node(x);
  Record r{OpKind::Tanh, x};
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::avg_pool2(NodeId x) {
  check_node(x);
  Record r{OpKind::AvgPool2, x};
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::global_avg_pool(NodeId x) {
  check_node(x);
  Record r{OpKind::GlobalAvgPool, x};
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::sum_spatial(NodeId x) {
  check_node(x);
  Record r{OpKind::SumSpatial, x};
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::add(NodeId a, NodeId b) {
  check_node(a);
  check_node(b);
  Record r{OpKind::Add, a, b};
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  check_node(a);
  check_node(b);
  Record r{OpKind::Mul, a, b};
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::scale(NodeId a, double alpha) {
  check_node(a);
  Record r{OpKind::Scale, a};
  r.alpha = alpha;
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::softmax_spatial(NodeId x) {
  check_node(x);
  Record r{OpKind::SoftmaxSpatial, x};
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::spatial_to_rows(NodeId x) {
  check_node(x);
  Record r{OpKind::SpatialToRows, x};
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::rows_to_spatial(NodeId rows, int n, int c, int h, int w) {
  check_node(rows);
  Record r{OpKind::RowsToSpatial, rows};
  r.i0 = n;
  r.i1 = c;
  r.i2 = h;
  r.i3 = w;
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::repeat_rows(NodeId x, int times) {
  check_node(x);
  Record r{OpKind::RepeatRows, x};
  r.i0 = times;
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::concat_cols(NodeId a, NodeId b) {
  check_node(a);
  check_node(b);
  Record r{OpKind::ConcatCols, a, b};
  r.i0 = value(a).dim(1);
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::extend_rows(NodeId x, std::vector<int> parent) {
  check_node(x);
  Record r{OpKind::ExtendRows, x};
  r.indices = std::move(parent);
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::cross_entropy_sum(NodeId scores, std::vector<int> targets) {
  check_node(scores);
  Record r{OpKind::CrossEntropySum, scores};
  r.indices = std::move(targets);
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

NodeId Graph::kl_tempered_sum(NodeId student, NodeId teacher, double temperature,
                              bool backprop_teacher) {
  check_node(student);
  check_node(teacher);
  Record r{OpKind::KlTemperedSum, student, teacher};
  r.alpha = temperature;
  r.flag = backprop_teacher;
  Tensor out = execute(r);
  return push_op(std::move(r), std::move(out));
}

Tensor* Graph::grad_ptr(NodeId id) {
  if (id < 0) return nullptr;
  auto i = static_cast<size_t>(id);
  if (!nodes_[i].needs_grad) return nullptr;
  return &grads_[i];
}

void Graph::backward(NodeId root) {
  check_node(root);
  backward(root, Tensor::full(value(root).shape(), 1.0, value(root).dtype()));
}

void Graph::backward(NodeId root, const Tensor& seed) {
  if (records_.empty()) throw ShapeError("graph: backward before any forward op was recorded");
  check_node(root);
  const Tensor& rv = value(root);
  if (!seed.same_shape(rv) || seed.dtype() != rv.dtype())
    throw ShapeError("graph: seed " + seed.shape_str() + " does not match output " +
                     rv.shape_str());

  grads_.assign(nodes_.size(), Tensor());
  grad_live_.assign(nodes_.size(), 0);
  for (size_t i = 0; i < nodes_.size(); ++i)
    if (nodes_[i].needs_grad) {
      grads_[i] = Tensor::zeros(nodes_[i].value.shape(), nodes_[i].value.dtype());
      grad_live_[i] = 1;
    }

  if (!nodes_[static_cast<size_t>(root)].needs_grad) return;  // nothing reachable requires grad
  grads_[static_cast<size_t>(root)] = seed;

  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    const Record& rec = *it;
    if (!nodes_[static_cast<size_t>(rec.out)].needs_grad) continue;
    const Tensor& gout = grads_[static_cast<size_t>(rec.out)];
    const Tensor& av = value(rec.a);
    switch (rec.kind) {
      case OpKind::Conv2d:
        ops::conv2d_backward(av, value(rec.b), gout, rec.i0, rec.i1, grad_ptr(rec.a),
                             grad_ptr(rec.b), grad_ptr(rec.c));
        break;
      case OpKind::Linear:
        ops::linear_backward(av, value(rec.b), gout, grad_ptr(rec.a), grad_ptr(rec.b),
                             grad_ptr(rec.c));
        break;
      case OpKind::Relu:
        ops::relu_backward(av, gout, grad_ptr(rec.a));
        break;
      case OpKind::Tanh:
        ops::tanh_backward(value(rec.out), gout, grad_ptr(rec.a));
        break;
      case OpKind::AvgPool2:
        ops::avg_pool2_backward(av, gout, grad_ptr(rec.a));
        break;
      case OpKind::GlobalAvgPool:
        ops::global_avg_pool_backward(av, gout, grad_ptr(rec.a));
        break;
      case OpKind::SumSpatial:
        ops::sum_spatial_backward(av, gout, grad_ptr(rec.a));
        break;
      case OpKind::Add:
        if (Tensor* ga = grad_ptr(rec.a))
          for (int64_t i = 0; i < gout.numel(); ++i) ga->set(i, ga->get(i) + gout.get(i));
        if (Tensor* gb = grad_ptr(rec.b))
          for (int64_t i = 0; i < gout.numel(); ++i) gb->set(i, gb->get(i) + gout.get(i));
        break;
      case OpKind::Mul: {
        const Tensor& bv = value(rec.b);
        if (Tensor* ga = grad_ptr(rec.a))
          for (int64_t i = 0; i < gout.numel(); ++i)
            ga->set(i, ga->get(i) + gout.get(i) * bv.get(i));
        if (Tensor* gb = grad_ptr(rec.b))
          for (int64_t i = 0; i < gout.numel(); ++i)
            gb->set(i, gb->get(i) + gout.get(i) * av.get(i));
        break;
      }
      case OpKind::Scale:
        if (Tensor* ga = grad_ptr(rec.a))
          for (int64_t i = 0; i < gout.numel(); ++i)
            ga->set(i, ga->get(i) + gout.get(i) * rec.alpha);
        break;
      case OpKind::SoftmaxSpatial:
        ops::softmax_spatial_backward(value(rec.out), gout, grad_ptr(rec.a));
        break;
      case OpKind::SpatialToRows:
        ops::spatial_to_rows_backward(av, gout, grad_ptr(rec.a));
        break;
      case OpKind::RowsToSpatial:
        ops::rows_to_spatial_backward(gout, grad_ptr(rec.a));
        break;
      case OpKind::RepeatRows:
        ops::repeat_rows_backward(av, rec.i0, gout, grad_ptr(rec.a));
        break;
      case OpKind::ConcatCols:
        ops::concat_cols_backward(rec.i0, gout, grad_ptr(rec.a), grad_ptr(rec.b));
        break;
      case OpKind::ExtendRows:
        ops::extend_rows_backward(av, rec.indices, gout, grad_ptr(rec.a));
        break;
      case OpKind::CrossEntropySum:
        ops::cross_entropy_sum_backward(av, rec.indices, gout, grad_ptr(rec.a));
        break;
      case OpKind::KlTemperedSum:
        ops::kl_tempered_sum_backward(av, value(rec.b), rec.alpha, rec.flag, gout,
                                      grad_ptr(rec.a), grad_ptr(rec.b));
        break;
      default:
        break;
    }
  }

  // Push leaf gradients out to the bound parameters.
  for (size_t i = 0; i < nodes_.size(); ++i) {
    Node& nd = nodes_[i];
    if (nd.external && nd.needs_grad) {
      Tensor& g = nd.external->grad();
      const Tensor& src = grads_[i];
      for (int64_t j = 0; j < g.numel(); ++j) g.set(j, g.get(j) + src.get(j));
    }
  }
}

const Tensor& Graph::grad(NodeId id) const {
  check_node(id);
  if (grads_.empty() || !grad_live_[static_cast<size_t>(id)])
    throw ShapeError("graph: no gradient recorded for node " + std::to_string(id));
  return grads_[static_cast<size_t>(id)];
}

bool Graph::replay() const {
  for (const Record& rec : records_) {
    Tensor redo = execute(rec);
    if (!redo.bits_equal(value(rec.out))) return false;
  }
  return true;
}

}  // namespace hse
