#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dlrgrid/autodiff.hpp"
#include "dlrgrid/checkpoint.hpp"
#include "dlrgrid/errors.hpp"

using namespace dlrgrid::autodiff;
using dlrgrid::Matrix;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (auto& x : m.flat()) x = u(rng);
  return m;
}

}  // namespace

TEST(Autodiff, ScalarPrimitiveExamples) {
  Tape t;
  Var x = t.variable(Matrix{{0.0}});
  t.backward(sum(sigmoid(x)));
  EXPECT_DOUBLE_EQ(t.value(sigmoid(x))(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 0.25);

  Tape t2;
  Var y = t2.variable(Matrix{{0.0}});
  Var ty = tanh(y);
  t2.backward(sum(ty));
  EXPECT_DOUBLE_EQ(t2.value(ty)(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(t2.grad(y)(0, 0), 1.0);
}

TEST(Autodiff, HadamardProductRule) {
  Tape t;
  Var a = t.variable(Matrix{{2.0, 3.0}});
  Var b = t.constant(Matrix{{4.0, 5.0}});
  Var h = hadamard(a, b);
  EXPECT_EQ(t.value(h), (Matrix{{8.0, 15.0}}));
  t.backward(sum(h));
  EXPECT_EQ(t.grad(a), (Matrix{{4.0, 5.0}}));
}

TEST(Autodiff, LinearMapAndUnusedParam) {
  Param w{"w", Matrix{{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}}};
  Param unused{"unused", Matrix{{7.0}}};
  Tape t;
  Var x = t.constant(Matrix{{0.5}, {-1.0}});
  t.param(unused);
  t.backward(sum(matmul(t.param(w), x)));
  Matrix g = t.gradient(w);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_DOUBLE_EQ(g(r, 0), 0.5);
    EXPECT_DOUBLE_EQ(g(r, 1), -1.0);
  }
  EXPECT_EQ(t.gradient(unused), Matrix(1, 1));
}

TEST(Autodiff, ErrorsNameShapes) {
  Tape t;
  Var a = t.variable(Matrix(2, 3));
  Var b = t.variable(Matrix(2, 3));
  try {
    matmul(a, b);
    FAIL();
  } catch (const dlrgrid::ShapeMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
  }
  EXPECT_THROW(t.backward(a), dlrgrid::NonScalarLoss);
}

TEST(Autodiff, SharedSubexpressionsAccumulate) {
  // f = sum(x*x + x) with x used three times: df/dx = 2x + 1.
  Tape t;
  Var x = t.variable(Matrix{{1.5, -2.0}});
  t.backward(sum(add(hadamard(x, x), x)));
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(t.grad(x)(0, 1), -3.0);
}

TEST(Autodiff, SquareGradCheck) {
  Param x{"x", Matrix{{3.0}}};
  Param* ps[] = {&x};
  auto rep = grad_check([&](Tape& t) { Var v = t.param(x); return sum(hadamard(v, v)); }, ps, 1e-5);
  EXPECT_LT(rep.max_relative_error, 1e-9);
  EXPECT_EQ(rep.checked, 1u);
}

TEST(Autodiff, CompositeGradCheckCoversEveryPrimitive) {
  std::mt19937_64 rng(42);
  Param w1{"w1", random_matrix(4, 5, rng)};
  Param b1{"b1", random_matrix(1, 5, rng)};
  Param w2{"w2", random_matrix(5, 3, rng)};
  Param w3{"w3", random_matrix(6, 2, rng)};
  Param* ps[] = {&w1, &b1, &w2, &w3};
  const Matrix x = random_matrix(3, 4, rng);
  const dlrgrid::CsrMatrix s = dlrgrid::CsrMatrix::from_dense(Matrix{{0.5, 0.5, 0}, {0.2, 0.6, 0.2}, {0, 0, 1}});
  const Matrix target = random_matrix(2, 2, rng);
  auto loss = [&](Tape& t) {
    Var in = sparse_dense_matmul(s, t.constant(x));
    Var h1 = sigmoid(row_broadcast_add(matmul(in, t.param(w1)), t.param(b1)));
    Var h2 = tanh(matmul(h1, t.param(w2)));
    Var parts[] = {h2, hadamard(h2, h2)};
    Var cat = concat_columns(parts);
    Var out = matmul(scalar_scale(cat, 0.7), t.param(w3));
    Var top = slice_rows(out, 0, 2);
    Var rest = slice_columns(slice_rows(out, 2, 1), 0, 2);
    return add(mean(pinball_elem(top, target, 0.3)),
               sum(hadamard(rest, rest)));
  };
  auto rep = grad_check(loss, ps, 1e-5);
  EXPECT_LT(rep.max_relative_error, 1e-4) << rep.worst_param << "[" << rep.worst_index << "]";
  EXPECT_GT(rep.checked, 40u);
}

TEST(Autodiff, PinballKinkIsSkipped) {
  Param p{"p", Matrix{{1.0, 2.0}}};
  Param* ps[] = {&p};
  const Matrix target{{1.0, 5.0}};
  auto rep = grad_check([&](Tape& t) { return sum(pinball_elem(t.param(p), target, 0.9)); }, ps,
                        1e-5);
  EXPECT_EQ(rep.skipped, 1u);
  EXPECT_EQ(rep.checked, 1u);
  EXPECT_LT(rep.max_relative_error, 1e-9);
}

TEST(Autodiff, AdamWZeroGradientNoDecay) {
  std::vector<Param> ps{{"w", Matrix{{1.0, -2.0}}}};
  std::vector<Matrix> gs{Matrix(1, 2)};
  AdamWState st;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  for (int i = 0; i < 5; ++i) adamw_step(ps, gs, st, cfg);
  EXPECT_EQ(ps[0].value, (Matrix{{1.0, -2.0}}));
}

TEST(Autodiff, AdamWConstantGradientStepIsLrSign) {
  std::vector<Param> ps{{"w", Matrix{{0.0, 0.0}}}};
  std::vector<Matrix> gs{Matrix{{3.0, -0.01}}};
  AdamWState st;
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.lr = 0.01;
  Matrix before;
  for (int i = 0; i < 200; ++i) {
    before = ps[0].value;
    adamw_step(ps, gs, st, cfg);
  }
  EXPECT_NEAR(ps[0].value(0, 0) - before(0, 0), -0.01, 1e-6);
  EXPECT_NEAR(ps[0].value(0, 1) - before(0, 1), 0.01, 1e-5);
}

TEST(Autodiff, AdamWMinimizesQuadratic) {
  std::vector<Param> ps{{"w", Matrix{{0.0}}}};
  AdamWState st;
  AdamWConfig cfg;
  cfg.lr = 0.05;
  for (int i = 0; i < 500; ++i) {
    std::vector<Matrix> gs{Matrix{{2.0 * (ps[0].value(0, 0) - 2.0)}}};
    adamw_step(ps, gs, st, cfg);
  }
  EXPECT_LT(std::abs(ps[0].value(0, 0) - 2.0), 1e-2);
}

TEST(Autodiff, AdamWRejectsNonFiniteGradient) {
  std::vector<Param> ps{{"a", Matrix{{1.0}}}, {"bad", Matrix{{1.0}}}};
  std::vector<Matrix> gs{Matrix{{1.0}}, Matrix{{std::nan("")}}};
  AdamWState st;
  try {
    adamw_step(ps, gs, st, {});
    FAIL();
  } catch (const dlrgrid::NonFiniteGradient& e) {
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
  }
  EXPECT_EQ(ps[0].value(0, 0), 1.0);
  EXPECT_EQ(st.step, 0u);
}

TEST(Autodiff, CheckpointRoundTrip) {
  std::mt19937_64 rng(1);
  std::vector<Param> ps{{"a", random_matrix(3, 2, rng)}, {"b", random_matrix(1, 4, rng), false}};
  auto path = std::filesystem::temp_directory_path() / "dlrgrid_params_test.json";
  save_params(path, ps);
  auto back = load_params(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "a");
  EXPECT_EQ(back[0].value, ps[0].value);
  EXPECT_EQ(back[1].value, ps[1].value);
  EXPECT_FALSE(back[1].trainable);
}
