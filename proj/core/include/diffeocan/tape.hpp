#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "diffeocan/tensor.hpp"

namespace diffeocan {

// Differentiable primitives.  Leaf is the only node kind without inputs.
enum class Prim : std::uint8_t {
  Leaf,
  Add,
  Sub,
  Mul,
  MatMul,
  Conv2d,
  ConvTranspose2d,
  Sin,
  Relu,
  Sigmoid,
  Exp,
  Log,
  Square,
  Sum,
  Mean,
  MaxConst,
  GridSample,
  Concat,
  Reshape,
};

const char* prim_name(Prim p);

struct OpAttrs {
  int stride = 1;
  int pad = 0;
  int axis = 0;
  float scalar = 0.0f;
  std::vector<int> shape;  // Reshape target
};

// Eagerly evaluated reverse-mode tape over dense float tensors.  Values are
// computed at record time; backward walks the recorded program once in
// reverse.  Reductions and accumulations run in a fixed order, so identical
// programs on identical inputs are bit-identical.
class Tape {
 public:
  using NodeId = std::int32_t;
  static constexpr NodeId kInvalid = -1;

  // Leaves.  Parameters are the leaves reported by parameters() and are the
  // usual gradient targets; constants participate in backward as well.
  NodeId leaf(Tensor value, bool parameter = false);
  NodeId constant(Tensor value) { return leaf(std::move(value), false); }

  // Elementwise with limited broadcasting: shapes must be equal, or one
  // operand's shape must be a prefix or a suffix of the other's.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);

  // [M, K] x [K, N] -> [M, N].
  NodeId matmul(NodeId a, NodeId b);

  // input [C, H, W], weight [F, C, kh, kw] -> [F, OH, OW] with zero padding.
  NodeId conv2d(NodeId input, NodeId weight, int stride = 1, int pad = 0);
  // input [C, H, W], weight [C, F, kh, kw] -> [F, (H-1)*s - 2p + kh, ...].
  NodeId conv_transpose2d(NodeId input, NodeId weight, int stride = 1, int pad = 0);

  NodeId sin(NodeId a);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId exp(NodeId a);
  NodeId log(NodeId a);
  NodeId square(NodeId a);

  // Full reductions to a [1] tensor, accumulated left to right.
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);

  // Elementwise max(x, c).
  NodeId max_with(NodeId a, float c);

  // Border-replicate bilinear sampling.  image is [H, W] or [C, H, W];
  // coord_x and coord_y share shape [OH, OW] and hold absolute pixel
  // coordinates.  Differentiable in the image and in both coordinate planes.
  NodeId grid_sample(NodeId image, NodeId coord_x, NodeId coord_y);

  NodeId concat(NodeId a, NodeId b, int axis);
  NodeId reshape(NodeId a, std::vector<int> shape);

  // Generic entry point used by tooling that enumerates primitives.
  NodeId record(Prim op, std::span<const NodeId> inputs, const OpAttrs& attrs = {});

  const Tensor& value(NodeId id) const;
  bool is_parameter(NodeId id) const;
  std::vector<NodeId> parameters() const;
  std::size_t size() const { return nodes_.size(); }

  // Reverse pass from a single-element loss node.  Clears previous gradients.
  void backward(NodeId loss);
  // Gradient of the last backward target with respect to node id.  Nodes the
  // loss does not depend on report a zero tensor.
  const Tensor& grad(NodeId id) const;

  // Re-evaluates the recorded program in double precision and returns the
  // values of `target`.  `overrides` substitutes leaf values; everything
  // downstream is recomputed.  This is the probe evaluator behind
  // gradient_check, giving finite differences headroom below float noise.
  std::vector<double> eval_f64(
      NodeId target,
      const std::vector<std::pair<NodeId, std::vector<double>>>& overrides) const;

 private:
  struct Node {
    Prim kind = Prim::Leaf;
    std::vector<NodeId> inputs;
    OpAttrs attrs;
    Tensor value;
    bool is_param = false;
  };

  NodeId push(Node nd);
  void check_id(NodeId id, const char* where) const;

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  bool has_grads_ = false;
};

// Builds a scalar loss from input leaves; used by gradient_check.
using TapeProgram =
    std::function<Tape::NodeId(Tape&, const std::vector<Tape::NodeId>&)>;

// Records f at `point`, runs backward, and compares every input coordinate's
// analytic gradient against a central finite difference of the program,
// evaluated in double precision.  Returns the maximum over coordinates of
//   |analytic - central| / max(1e-8, |analytic| + |central|).
float gradient_check(const TapeProgram& f, const std::vector<Tensor>& point,
                     float eps = 1e-3f);

struct PrimitiveCheck {
  std::string name;
  float max_rel_error = 0.0f;
};

// Runs gradient_check for every differentiable primitive on
// `points_per_primitive` random points each and reports the worst error per
// primitive.  Used by the gradcheck command and the acceptance suite.
std::vector<PrimitiveCheck> primitive_gradient_table(std::uint64_t seed,
                                                     int points_per_primitive = 10,
                                                     float eps = 1e-3f);

}  // namespace diffeocan
