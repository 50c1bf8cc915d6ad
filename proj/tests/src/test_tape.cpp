#include <doctest.h>

#include <cmath>
#include <vector>

#include "diffeocan/common.hpp"
#include "diffeocan/tape.hpp"
#include "diffeocan/tensor.hpp"

using namespace diffeocan;

namespace {

Tensor tensor1d(std::vector<float> v) {
  Tensor t;
  t.shape = {static_cast<int>(v.size())};
  t.data = std::move(v);
  return t;
}

Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, float lo = -1.0f,
                     float hi = 1.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  Rng rng(seed);
  for (float& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("add computes elementwise sums") {
  Tape t;
  const auto a = t.constant(tensor1d({1.0f, 2.0f}));
  const auto b = t.constant(tensor1d({3.0f, 4.0f}));
  const Tensor& out = t.value(t.add(a, b));
  CHECK(out.data[0] == 4.0f);
  CHECK(out.data[1] == 6.0f);
}

TEST_CASE("matmul of ones counts the inner dimension") {
  Tape t;
  const auto a = t.constant(Tensor::full({2, 3}, 1.0f));
  const auto b = t.constant(Tensor::full({3, 2}, 1.0f));
  const Tensor& out = t.value(t.matmul(a, b));
  REQUIRE(out.shape == std::vector<int>{2, 2});
  for (float v : out.data) CHECK(v == 3.0f);
}

TEST_CASE("sin of zero is zero") {
  Tape t;
  const Tensor& out = t.value(t.sin(t.constant(Tensor::scalar(0.0f))));
  CHECK(out.data[0] == 0.0f);
}

TEST_CASE("row bias broadcasts over matmul output") {
  Tape t;
  const auto x = t.constant(Tensor::full({1, 3}, 2.0f));
  const auto w = t.constant(Tensor::full({3, 2}, 1.0f));
  const auto b = t.constant(tensor1d({10.0f, 20.0f}));
  const Tensor& out = t.value(t.add(t.matmul(x, w), b));
  REQUIRE(out.shape == std::vector<int>{1, 2});
  CHECK(out.data[0] == 16.0f);
  CHECK(out.data[1] == 26.0f);
}

TEST_CASE("per-channel bias broadcasts over spatial dims") {
  Tape t;
  const auto x = t.constant(Tensor::zeros({2, 3, 3}));
  const auto b = t.constant(tensor1d({1.0f, 2.0f}));
  const Tensor& out = t.value(t.add(x, b));
  CHECK(out.data[0] == 1.0f);
  CHECK(out.data[8] == 1.0f);
  CHECK(out.data[9] == 2.0f);
  CHECK(out.data[17] == 2.0f);
}

TEST_CASE("square gradient is two x") {
  Tape t;
  const auto x = t.leaf(Tensor::scalar(3.0f), true);
  t.backward(t.square(x));
  CHECK(t.grad(x).data[0] == doctest::Approx(6.0f));
}

TEST_CASE("sin gradient at zero is one") {
  Tape t;
  const auto x = t.leaf(Tensor::scalar(0.0f), true);
  t.backward(t.sin(x));
  CHECK(t.grad(x).data[0] == doctest::Approx(1.0f));
}

TEST_CASE("grid sample gradients match finite differences") {
  const TapeProgram f = [](Tape& t, const std::vector<Tape::NodeId>& in) {
    return t.sum(t.grid_sample(in[0], in[1], in[2]));
  };
  // Coordinates away from integers so the bilinear kernel is smooth locally.
  Tensor img = random_tensor({6, 6}, 3, 0.0f, 1.0f);
  Tensor cx = random_tensor({4, 4}, 4, 0.3f, 4.3f);
  Tensor cy = random_tensor({4, 4}, 5, 0.3f, 4.3f);
  CHECK(gradient_check(f, {img, cx, cy}) < 1e-3f);
}

TEST_CASE("gradient of a linear program is exact") {
  const TapeProgram f = [](Tape& t, const std::vector<Tape::NodeId>& in) {
    return t.sum(in[0]);
  };
  CHECK(gradient_check(f, {random_tensor({5, 5}, 9)}) < 1e-6f);
}

TEST_CASE("adjoints add over independent losses") {
  Tensor ax = random_tensor({4}, 21);
  Tensor bx = random_tensor({4}, 22);

  Tape t1;
  const auto p1 = t1.leaf(ax, true);
  t1.backward(t1.sum(t1.square(p1)));
  Tape t2;
  const auto p2 = t2.leaf(ax, true);
  const auto q2 = t2.constant(bx);
  t2.backward(t2.sum(t2.mul(p2, q2)));

  Tape t3;
  const auto p3 = t3.leaf(ax, true);
  const auto q3 = t3.constant(bx);
  t3.backward(t3.add(t3.sum(t3.square(p3)), t3.sum(t3.mul(p3, q3))));

  for (int k = 0; k < 4; ++k) {
    const float separate = t1.grad(p1).data[k] + t2.grad(p2).data[k];
    CHECK(std::abs(t3.grad(p3).data[k] - separate) < 1e-6f);
  }
}

TEST_CASE("identical programs produce bit-identical values and gradients") {
  auto run = [](std::vector<float>& value, std::vector<float>& grad) {
    Tape t;
    const auto x = t.leaf(random_tensor({3, 5}, 33), true);
    const auto w = t.constant(random_tensor({5, 2}, 34));
    const auto loss = t.mean(t.sigmoid(t.matmul(x, w)));
    t.backward(loss);
    value = t.value(loss).data;
    grad = t.grad(x).data;
  };
  std::vector<float> v1, g1, v2, g2;
  run(v1, g1);
  run(v2, g2);
  CHECK(v1 == v2);
  CHECK(g1 == g2);
}

TEST_CASE("conv2d matches a hand-computed 3x3 valid convolution") {
  Tape t;
  Tensor img = Tensor::zeros({1, 3, 3});
  for (int k = 0; k < 9; ++k) img.data[static_cast<std::size_t>(k)] = static_cast<float>(k);
  const auto x = t.constant(img);
  const auto w = t.constant(Tensor::full({1, 1, 3, 3}, 1.0f));
  const Tensor& out = t.value(t.conv2d(x, w, 1, 0));
  REQUIRE(out.shape == std::vector<int>{1, 1, 1});
  CHECK(out.data[0] == 36.0f);
}

TEST_CASE("conv_transpose2d inverts the stride-2 shape arithmetic") {
  Tape t;
  const auto x = t.constant(Tensor::full({3, 8, 8}, 0.5f));
  const auto w = t.constant(Tensor::full({3, 2, 4, 4}, 0.1f));
  const Tensor& out = t.value(t.conv_transpose2d(x, w, 2, 1));
  CHECK(out.shape == std::vector<int>{2, 16, 16});
}

TEST_CASE("backward requires a scalar loss") {
  Tape t;
  const auto x = t.leaf(random_tensor({3}, 41), true);
  CHECK_THROWS(t.backward(t.square(x)));
}

TEST_CASE("reshape rejects element count changes") {
  Tape t;
  const auto x = t.constant(random_tensor({2, 3}, 42));
  CHECK_THROWS(t.reshape(x, {4, 2}));
}

TEST_CASE("every primitive passes its gradient check") {
  for (const PrimitiveCheck& row : primitive_gradient_table(1234, 10)) {
    INFO(row.name);
    CHECK(row.max_rel_error < 1e-3f);
  }
}
