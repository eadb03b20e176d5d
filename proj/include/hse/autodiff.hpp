#pragma once

#include <vector>

#include "hse/tensor.hpp"

namespace hse {

using NodeId = int32_t;

enum class OpKind {
  Constant,
  Leaf,
  Conv2d,
  Linear,
  Relu,
  Tanh,
  AvgPool2,
  GlobalAvgPool,
  SumSpatial,
  Add,
  Mul,
  Scale,
  SoftmaxSpatial,
  SpatialToRows,
  RowsToSpatial,
  RepeatRows,
  ConcatCols,
  ExtendRows,
  CrossEntropySum,
  KlTemperedSum,
};

// Reverse-mode tape. Ops execute eagerly as they are recorded, so the record
// list is topologically ordered by construction; replay() re-executes it to
// validate that property. backward() walks the records in reverse, summing
// gradients across fan-out, and finally accumulates leaf gradients into the
// bound parameter tensors.
class Graph {
 public:
  // Constant input: no gradient flows into it.
  NodeId constant(Tensor value);
  // Leaf bound to an external parameter; after backward, param->grad() holds
  // the accumulated gradient iff param->requires_grad(). The pointer must stay
  // valid for the life of the graph.
  NodeId leaf(Tensor* param);
  // Detached copy of an existing node's value.
  NodeId detach(NodeId id) { return constant(value(id)); }

  NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
  NodeId linear(NodeId x, NodeId w, NodeId b);
  NodeId relu(NodeId x);
  NodeId tanh_(NodeId x);
  NodeId avg_pool2(NodeId x);
  NodeId global_avg_pool(NodeId x);
  NodeId sum_spatial(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double alpha);
  NodeId softmax_spatial(NodeId x);
  NodeId spatial_to_rows(NodeId x);
  NodeId rows_to_spatial(NodeId rows, int n, int c, int h, int w);
  NodeId repeat_rows(NodeId x, int times);
  NodeId concat_cols(NodeId a, NodeId b);
  NodeId extend_rows(NodeId x, std::vector<int> parent);
  NodeId cross_entropy_sum(NodeId scores, std::vector<int> targets);
  NodeId kl_tempered_sum(NodeId student, NodeId teacher, double temperature,
                         bool backprop_teacher = false);

  const Tensor& value(NodeId id) const;
  bool needs_grad(NodeId id) const;
  size_t size() const { return nodes_.size(); }
  size_t record_count() const { return records_.size(); }

  // Seeded reverse pass from `root`. Seed shape/dtype must match the root
  // value. Throws if no forward has been recorded.
  void backward(NodeId root, const Tensor& seed);
  void backward(NodeId root);  // seed = ones

  // Gradient of `id` from the last backward pass (zeros if untouched).
  const Tensor& grad(NodeId id) const;

  // Re-executes every record in order against the stored inputs and returns
  // true iff all outputs reproduce bitwise.
  bool replay() const;

 private:
  struct Node {
    Tensor value;
    bool needs_grad = false;
    Tensor* external = nullptr;
  };
  struct Record {
    OpKind kind;
    NodeId a = -1, b = -1, c = -1;
    NodeId out = -1;
    int i0 = 0, i1 = 0, i2 = 0, i3 = 0;  // stride/pad or target dims
    double alpha = 0.0;                  // scale factor or temperature
    bool flag = false;                   // kl: backprop_teacher
    std::vector<int> indices;            // targets or parent map
  };

  NodeId push_node(Tensor value, bool needs_grad, Tensor* external = nullptr);
  NodeId push_op(Record rec, Tensor out_value);
  Tensor execute(const Record& rec) const;
  void check_node(NodeId id) const;
  Tensor* grad_ptr(NodeId id);

  std::vector<Node> nodes_;
  std::vector<Record> records_;
  std::vector<Tensor> grads_;
  std::vector<char> grad_live_;
};

}  // namespace hse
