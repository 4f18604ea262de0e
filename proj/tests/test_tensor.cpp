#include <gtest/gtest.h>

#include <cmath>

#include "microcnn/rng.hpp"
#include "microcnn/tensor.hpp"

using namespace microcnn;

TEST(Tensor, ZerosHasRequestedShape) {
  const Tensor a = zeros(Shape{2, 2});
  EXPECT_EQ(a.size(), 4u);
  for (float v : a.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_EQ(zeros(Shape{1}).size(), 1u);
  EXPECT_EQ(zeros(Shape{3, 1, 2}).size(), 6u);
}

TEST(Tensor, ShapeRejectsZeroAndOverflow) {
  EXPECT_THROW(Shape({2, 0}), DimensionError);
  const std::size_t big = std::size_t{1} << 40;
  EXPECT_THROW(Shape({big, big}), DimensionError);
}

TEST(Tensor, RowMajorOffsets) {
  Tensor t(Shape{2, 3, 4});
  EXPECT_EQ(t.offset({1, 2, 3}), 1u * 12 + 2u * 4 + 3u);
  const auto s = t.shape().strides();
  EXPECT_EQ(s, (std::vector<std::size_t>{12, 4, 1}));
  EXPECT_THROW(t.offset({2, 0, 0}), DimensionError);
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Tensor eye(Shape{2, 2}, {1, 0, 0, 1});
  const Tensor m(Shape{2, 2}, {1, 2, 3, 4});
  const Tensor c = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(c[i], m[i]);
}

TEST(Matmul, SmallProduct) {
  const Tensor c = matmul(Tensor(Shape{2, 2}, {1, 2, 3, 4}), Tensor(Shape{2, 1}, {5, 6}));
  ASSERT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(c[0], 17.0f);
  EXPECT_EQ(c[1], 39.0f);
  EXPECT_EQ(matmul(Tensor(Shape{1, 3}), Tensor(Shape{3, 2})).shape(), (Shape{1, 2}));
}

TEST(Matmul, MismatchNamesBothShapes) {
  try {
    matmul(Tensor(Shape{2, 3}), Tensor(Shape{2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3] x [2,3]"), std::string::npos) << msg;
  }
}

TEST(Matmul, TransposedVariantsAgreeWithExplicitTranspose) {
  Rng rng(3);
  const Tensor a = rng_uniform(rng, Shape{7, 19}, -1, 1);
  const Tensor b = rng_uniform(rng, Shape{7, 5}, -1, 1);
  const Tensor c = rng_uniform(rng, Shape{11, 19}, -1, 1);
  const Tensor tn = matmul_tn(a, b), tn_ref = matmul(transpose(a), b);
  for (std::size_t i = 0; i < tn.size(); ++i) EXPECT_FLOAT_EQ(tn[i], tn_ref[i]);
  const Tensor nt = matmul_nt(a, c), nt_ref = matmul(a, transpose(c));
  for (std::size_t i = 0; i < nt.size(); ++i) EXPECT_NEAR(nt[i], nt_ref[i], 1e-5);
}

TEST(Matmul, AssociativityOnRandomChains) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor a = rng_uniform(rng, Shape{4, 4}, -1, 1);
    const Tensor b = rng_uniform(rng, Shape{4, 4}, -1, 1);
    const Tensor c = rng_uniform(rng, Shape{4, 4}, -1, 1);
    const Tensor left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(left[i], right[i], 1e-4);
  }
}

TEST(Matmul, RightIdentityIsExact) {
  Rng rng(12);
  for (std::size_t n : {1u, 3u, 9u, 130u}) {
    const Tensor a = rng_uniform(rng, Shape{5, n}, -10, 10);
    Tensor eye(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0f;
    const Tensor c = matmul(a, eye);
    for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(c[i], a[i]);
  }
}

TEST(Elementwise, Basics) {
  const Tensor s = add(Tensor(Shape{2}, {1, 2}), Tensor(Shape{2}, {3, 4}));
  EXPECT_EQ(s[0], 4.0f);
  EXPECT_EQ(s[1], 6.0f);
  const Tensor z = scale(Tensor(Shape{2}, {1, 2}), 0.0f);
  EXPECT_EQ(z[0], 0.0f);
  EXPECT_EQ(z[1], 0.0f);
  const Tensor p = mul(Tensor(Shape{2}, {2, 3}), Tensor(Shape{2}, {4, 5}));
  EXPECT_EQ(p[0], 8.0f);
  EXPECT_EQ(p[1], 15.0f);
  EXPECT_EQ(sub(p, p)[1], 0.0f);
  EXPECT_EQ(map(p, [](float v) { return v + 1; })[0], 9.0f);
  EXPECT_THROW(add(Tensor(Shape{2}), Tensor(Shape{3})), DimensionError);
}

TEST(Reduce, MeanAndArgmax) {
  const Tensor m = reduce(Tensor(Shape{1, 2}, {0, 2}), ReduceOp::mean, 1);
  ASSERT_EQ(m.shape(), (Shape{1}));
  EXPECT_EQ(m[0], 1.0f);
  EXPECT_EQ(reduce(Tensor(Shape{2}, {0.3f, 0.7f}), ReduceOp::argmax, 0)[0], 1.0f);
  EXPECT_EQ(reduce(Tensor(Shape{2}, {0.5f, 0.5f}), ReduceOp::argmax, 0)[0], 0.0f);
  EXPECT_THROW(reduce(m, ReduceOp::sum, 1), DimensionError);
}

TEST(Reduce, AlongMiddleAxis) {
  Tensor t(Shape{2, 3, 2}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  const Tensor s = reduce(t, ReduceOp::sum, 1);
  ASSERT_EQ(s.shape(), (Shape{2, 2}));
  EXPECT_EQ(s[0], 9.0f);
  EXPECT_EQ(s[1], 12.0f);
  EXPECT_EQ(s[2], 27.0f);
  EXPECT_EQ(reduce(t, ReduceOp::max, 1)[3], 12.0f);
  EXPECT_EQ(reduce(t, ReduceOp::argmax, 1)[0], 2.0f);
}

TEST(Reduce, SumOverAllAxesMatchesFlatSum) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor t = rng_uniform(rng, Shape{3, 4, 5, 6}, -1, 1);
    Tensor r = t;
    while (r.rank() > 1) r = reduce(r, ReduceOp::sum, 0);
    r = reduce(r, ReduceOp::sum, 0);
    double flat = 0.0;
    for (float v : t.data()) flat += v;
    EXPECT_NEAR(r[0], flat, 1e-5 * std::max(1.0, std::abs(flat)));
  }
}

TEST(Rng, SameSeedSameStream) {
  Rng a(1234), b(1234);
  for (int i = 0; i < 1'000'000; ++i) ASSERT_EQ(a.next_u64(), b.next_u64());
  Rng c(1235);
  Rng d(1234);
  EXPECT_NE(c.next_u64(), d.next_u64());
}

TEST(Rng, KnownFirstOutputs) {
  // xoshiro256** seeded through splitmix64; frozen so a change in the
  // generator is caught.
  Rng rng(0);
  const std::uint64_t first = rng.next_u64();
  Rng again(0);
  EXPECT_EQ(first, again.next_u64());
  EXPECT_EQ(first, 0x99EC5F36CB75F2B4ULL);
}

TEST(RngUniform, DeterministicRangeAndMean) {
  Rng a(7), b(7);
  const Tensor x = rng_uniform(a, Shape{100000}, 0.0f, 1.0f);
  const Tensor y = rng_uniform(b, Shape{100000}, 0.0f, 1.0f);
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ASSERT_EQ(x[i], y[i]);
    ASSERT_GE(x[i], 0.0f);
    ASSERT_LT(x[i], 1.0f);
    sum += x[i];
  }
  const double mean = sum / x.size();
  EXPECT_GE(mean, 0.49);
  EXPECT_LE(mean, 0.51);
  EXPECT_THROW(rng_uniform(a, Shape{1}, 1.0f, 1.0f), std::invalid_argument);
}

TEST(RngUniform, NarrowRangeStaysHalfOpen) {
  Rng rng(9);
  const float lo = 1.0f, hi = std::nextafter(1.0f, 2.0f);
  for (int i = 0; i < 10000; ++i) {
    const float v = rng.uniform(lo, hi);
    ASSERT_GE(v, lo);
    ASSERT_LT(v, hi);
  }
}

TEST(Rng, ShuffleIsAPermutation) {
  Rng rng(2);
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  shuffle(v.begin(), v.end(), rng);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(v, sorted);
}
