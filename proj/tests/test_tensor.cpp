#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <set>
#include <vector>

#include "scgib/tensor.hpp"
#include "support/oracles.hpp"

using namespace scgib;
using oracle::max_gradient_error;
using oracle::Program;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -2.0, double hi = 2.0) {
  return (rng.uniform_matrix(r, c).array() * (hi - lo) + lo).matrix();
}

}  // namespace

TEST_CASE("elementwise binaries broadcast scalar, row and column operands") {
  Tape t;
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  Value a = t.leaf(m);
  Value s = t.leaf(Matrix::Constant(1, 1, 10.0));
  Matrix row(1, 3);
  row << 1, 10, 100;
  Matrix col(2, 1);
  col << 1, 10;

  CHECK(add(a, s).data()(1, 2) == doctest::Approx(16.0));
  CHECK(add(s, a).data()(0, 0) == doctest::Approx(11.0));
  CHECK(mul(a, t.leaf(row)).data()(1, 1) == doctest::Approx(50.0));
  CHECK(mul(t.leaf(col), a).data()(1, 0) == doctest::Approx(40.0));
  CHECK(div(a, t.leaf(col)).data()(1, 2) == doctest::Approx(0.6));
  CHECK(sub(a, t.leaf(row)).data()(0, 2) == doctest::Approx(-97.0));

  Value bad = t.leaf(Matrix::Zero(3, 2));
  CHECK_THROWS_AS((void)add(a, bad), ShapeError);
  CHECK_THROWS_AS((void)mul(a, t.leaf(Matrix::Zero(1, 2))), ShapeError);
}

TEST_CASE("operands from different tapes are rejected") {
  Tape t1, t2;
  Value a = t1.leaf(Matrix::Ones(2, 2));
  Value b = t2.leaf(Matrix::Ones(2, 2));
  CHECK_THROWS_AS((void)add(a, b), ValidationError);
}

TEST_CASE("scalar() requires a 1x1 value") {
  Tape t;
  CHECK(t.leaf(Matrix::Constant(1, 1, 3.5)).scalar() == doctest::Approx(3.5));
  CHECK_THROWS_AS((void)t.leaf(Matrix::Ones(2, 1)).scalar(), ShapeError);
}

TEST_CASE("domain guards: log, sqrt, backward root") {
  Tape t;
  CHECK_THROWS_AS((void)log(t.leaf(Matrix::Zero(1, 1))), DomainError);
  CHECK_THROWS_AS((void)sqrt(t.leaf(Matrix::Constant(1, 1, -1.0))), DomainError);
  Value v = t.leaf(Matrix::Ones(2, 2), true);
  CHECK_THROWS_AS(t.backward(v), ShapeError);
}

TEST_CASE("gradients of single ops match central differences") {
  Rng rng(7);
  auto check = [&](const Program& p, std::vector<Matrix> inputs) {
    CHECK(max_gradient_error(p, inputs) < 1e-6);
  };

  Matrix a = random_matrix(rng, 3, 4);
  Matrix b = random_matrix(rng, 3, 4);

  check([](Tape&, const std::vector<Value>& v) { return sum(mul(v[0], v[1])); }, {a, b});
  check([](Tape&, const std::vector<Value>& v) { return sum(sub(v[0], v[1])); }, {a, b});
  check([](Tape&, const std::vector<Value>& v) { return mean(div(v[0], v[1])); },
        {a, (b.array().abs() + 1.0).matrix()});
  check([](Tape&, const std::vector<Value>& v) { return sum(matmul(v[0], transpose(v[1]))); },
        {a, b});
  check([](Tape&, const std::vector<Value>& v) { return sum(sigmoid(v[0])); }, {a});
  check([](Tape&, const std::vector<Value>& v) { return sum(exp(scale(v[0], 0.3))); }, {a});
  check([](Tape&, const std::vector<Value>& v) { return sum(log(v[0])); },
        {(a.array().abs() + 0.5).matrix()});
  check([](Tape&, const std::vector<Value>& v) { return sum(sqrt(v[0])); },
        {(a.array().abs() + 0.5).matrix()});
  check([](Tape&, const std::vector<Value>& v) { return frobenius_sq(v[0]); }, {a});
  check([](Tape&, const std::vector<Value>& v) { return sum(mul(relu(v[0]), v[1])); },
        {(a.array() + 0.01).matrix(), b});  // keep entries away from the kink
  check([](Tape&, const std::vector<Value>& v) { return sum(clamp(v[0], -0.9, 0.9)); },
        {random_matrix(rng, 3, 3, -0.5, 0.5)});
  check([](Tape&, const std::vector<Value>& v) { return sum(mul(v[0], add_constant(v[0], 2.0))); },
        {a});
  check([](Tape&, const std::vector<Value>& v) { return mean(neg(v[0])); }, {a});
}

TEST_CASE("gradients flow through broadcasting") {
  Rng rng(11);
  Matrix m = random_matrix(rng, 4, 3);
  Matrix row = random_matrix(rng, 1, 3);
  Matrix col = random_matrix(rng, 4, 1);
  Matrix sc = random_matrix(rng, 1, 1);

  auto check = [&](const Program& p, std::vector<Matrix> inputs) {
    CHECK(max_gradient_error(p, inputs) < 1e-6);
  };
  check([](Tape&, const std::vector<Value>& v) { return sum(mul(v[0], v[1])); }, {m, row});
  check([](Tape&, const std::vector<Value>& v) { return sum(mul(v[0], v[1])); }, {col, m});
  check([](Tape&, const std::vector<Value>& v) { return sum(add(v[0], v[1])); }, {sc, m});
  check([](Tape&, const std::vector<Value>& v) { return sum(div(v[0], v[1])); },
        {m, (col.array().abs() + 1.0).matrix()});
}

TEST_CASE("gradients of reductions and reshaping ops") {
  Rng rng(13);
  Matrix a = random_matrix(rng, 4, 5);
  Matrix b = random_matrix(rng, 2, 5);
  auto check = [&](const Program& p, std::vector<Matrix> inputs) {
    CHECK(max_gradient_error(p, inputs) < 1e-6);
  };

  check([](Tape&, const std::vector<Value>& v) { return sum(mul(sum(v[0], 0), sum(v[0], 0))); },
        {a});
  check([](Tape&, const std::vector<Value>& v) { return sum(mul(mean(v[0], 1), mean(v[0], 1))); },
        {a});
  check([](Tape&, const std::vector<Value>& v) { return sum(variance(v[0], 0)); }, {a});
  check([](Tape&, const std::vector<Value>& v) { return sum(variance(v[0], 1)); }, {a});
  check([](Tape&, const std::vector<Value>& v) { return frobenius_sq(concat(v[0], v[1], 0)); },
        {a, b});
  check([](Tape&, const std::vector<Value>& v) {
          return frobenius_sq(concat(v[0], transpose(v[1]), 1));
        },
        {a, random_matrix(rng, 2, 4)});
  check([](Tape&, const std::vector<Value>& v) {
          return frobenius_sq(concat_rows({v[0], v[1], v[0]}));
        },
        {a, b});
  check([](Tape&, const std::vector<Value>& v) {
          return frobenius_sq(slice_rows(v[0], {3, 0, 0, 2}));
        },
        {a});
  check([](Tape&, const std::vector<Value>& v) { return frobenius_sq(slice_rows(v[0], 1, 2)); },
        {a});
}

TEST_CASE("variance is the biased estimator") {
  Tape t;
  Matrix x(4, 1);
  x << 1, 2, 3, 4;
  Value v = variance(t.leaf(x), 0);
  CHECK(v.data()(0, 0) == doctest::Approx(1.25));  // divide by N, not N-1
}

TEST_CASE("segmented softmax normalizes per segment and matches closed forms") {
  Tape t;
  Matrix logits(5, 1);
  logits << 0.0, 0.0, 5.0, 0.0, std::log(3.0);
  std::vector<int> seg{0, 0, 1, 2, 2};
  Value y = segmented_softmax(t.leaf(logits), seg);
  CHECK(y.data()(0, 0) == doctest::Approx(0.5));
  CHECK(y.data()(1, 0) == doctest::Approx(0.5));
  CHECK(y.data()(2, 0) == doctest::Approx(1.0));
  CHECK(y.data()(3, 0) == doctest::Approx(0.25));
  CHECK(y.data()(4, 0) == doctest::Approx(0.75));

  double s01 = y.data()(0, 0) + y.data()(1, 0);
  double s2 = y.data()(3, 0) + y.data()(4, 0);
  CHECK(std::abs(s01 - 1.0) < 1e-12);
  CHECK(std::abs(s2 - 1.0) < 1e-12);

  std::vector<int> unsorted{1, 0, 0, 0, 0};
  CHECK_THROWS_AS((void)segmented_softmax(t.leaf(logits), unsorted), ValidationError);
}

TEST_CASE("segmented softmax survives large logits") {
  Tape t;
  Matrix logits(3, 1);
  logits << 1000.0, 1001.0, 999.0;
  Value y = segmented_softmax(t.leaf(logits), {0, 0, 0});
  double total = y.data().sum();
  CHECK(std::isfinite(total));
  CHECK(std::abs(total - 1.0) < 1e-12);
  CHECK(y.data()(1, 0) > y.data()(0, 0));
}

TEST_CASE("segment reductions match loops and propagate gradients") {
  Rng rng(17);
  Matrix x = random_matrix(rng, 6, 3);
  std::vector<int> seg{0, 0, 1, 1, 1, 2};

  Tape t;
  Value vx = t.leaf(x);
  Matrix s = segment_sum(vx, seg, 3).data();
  CHECK(s.row(0).isApprox(x.row(0) + x.row(1)));
  CHECK(s.row(2).isApprox(x.row(5)));
  Matrix m = segment_mean(vx, seg, 3).data();
  CHECK(m.row(1).isApprox((x.row(2) + x.row(3) + x.row(4)) / 3.0));
  Matrix mx = segment_max(vx, seg, 3).data();
  for (int c = 0; c < 3; ++c) {
    CHECK(mx(0, c) == doctest::Approx(std::max(x(0, c), x(1, c))));
  }

  auto check = [&](const Program& p) { CHECK(max_gradient_error(p, {x}) < 1e-6); };
  check([&](Tape&, const std::vector<Value>& v) {
    return frobenius_sq(segment_sum(v[0], seg, 3));
  });
  check([&](Tape&, const std::vector<Value>& v) {
    return frobenius_sq(segment_mean(v[0], seg, 3));
  });
  check([&](Tape&, const std::vector<Value>& v) {
    return frobenius_sq(segment_max(v[0], seg, 3));
  });
  check([&](Tape&, const std::vector<Value>& v) {
    return sum(mul(segmented_softmax(sum(v[0], 1), seg), sum(v[0], 1)));
  });
}

TEST_CASE("neighbor_sum equals dense adjacency product") {
  Rng rng(19);
  Matrix x = random_matrix(rng, 5, 4);
  std::vector<std::vector<int>> nbr{{1, 2}, {0}, {0, 3, 4}, {2}, {2}};
  Matrix adj = Matrix::Zero(5, 5);
  for (int i = 0; i < 5; ++i) {
    for (int j : nbr[static_cast<std::size_t>(i)]) adj(i, j) = 1.0;
  }

  Tape t;
  Matrix got = neighbor_sum(t.leaf(x), nbr).data();
  CHECK(got.isApprox(adj * x, 1e-12));

  CHECK(max_gradient_error(
            [&](Tape&, const std::vector<Value>& v) {
              return frobenius_sq(neighbor_sum(v[0], nbr));
            },
            {x}) < 1e-6);
}

TEST_CASE("row_norms floors degenerate rows and zeroes their gradient") {
  Tape t;
  Matrix x(3, 2);
  x << 3, 4, 0, 0, 1, 0;
  Value v = t.leaf(x, true);
  Value n = row_norms(v, 1e-12);
  CHECK(n.data()(0, 0) == doctest::Approx(5.0));
  CHECK(n.data()(1, 0) == doctest::Approx(1e-12));
  CHECK(n.data()(2, 0) == doctest::Approx(1.0));

  t.backward(sum(n));
  CHECK(v.grad()(0, 0) == doctest::Approx(0.6));
  CHECK(v.grad()(1, 0) == 0.0);
  CHECK(v.grad()(1, 1) == 0.0);

  Rng rng(23);
  Matrix y = (random_matrix(rng, 4, 3).array() + 3.0).matrix();
  CHECK(max_gradient_error(
            [](Tape&, const std::vector<Value>& v2) {
              return sum(mul(row_norms(v2[0], 1e-12), row_norms(v2[0], 1e-12)));
            },
            {y}) < 1e-6);
}

TEST_CASE("column_std floors constant columns and zeroes their gradient") {
  Tape t;
  Matrix x(3, 2);
  x << 0, 7, 2, 7, 4, 7;
  Value v = t.leaf(x, true);
  Value s = column_std(v, 1e-6);
  // biased std of {0,2,4} is sqrt(8/3)
  CHECK(s.data()(0, 0) == doctest::Approx(std::sqrt(8.0 / 3.0)));
  CHECK(s.data()(0, 1) == doctest::Approx(1e-6));

  t.backward(sum(s));
  CHECK(v.grad()(0, 1) == 0.0);  // floored column stays flat
  CHECK(v.grad()(0, 0) != 0.0);

  Rng rng(61);
  Matrix y = (rng.uniform_matrix(5, 3).array() * 4.0 - 2.0).matrix();
  CHECK(max_gradient_error(
            [](Tape&, const std::vector<Value>& v2) {
              return sum(mul(column_std(v2[0], 1e-6), column_std(v2[0], 1e-6)));
            },
            {y}) < 1e-6);
}

TEST_CASE("cosine similarity matrix is symmetric with unit diagonal") {
  Rng rng(29);
  Matrix h = random_matrix(rng, 6, 4);
  Tape t;
  Matrix s = cosine_similarity_matrix(t.leaf(h)).data();
  CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  for (int i = 0; i < 6; ++i) {
    CHECK(std::abs(s(i, i) - 1.0) < 1e-12);
  }
  CHECK(s.maxCoeff() <= 1.0 + 1e-12);
  CHECK(s.minCoeff() >= -1.0 - 1e-12);

  // a zero row contributes zero similarity rather than NaN
  h.row(2).setZero();
  Tape t2;
  Matrix s2 = cosine_similarity_matrix(t2.leaf(h)).data();
  CHECK(s2.row(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(std::isfinite(s2.sum()));

  CHECK(max_gradient_error(
            [](Tape&, const std::vector<Value>& v) {
              return frobenius_sq(cosine_similarity_matrix(v[0]));
            },
            {random_matrix(rng, 5, 3)}) < 1e-5);
}

TEST_CASE("random composite programs pass gradient checks") {
  // Chains of mixed ops exercise interactions the per-op tests cannot.
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.next_u64() % 4);
    Eigen::Index d = 2 + static_cast<Eigen::Index>(rng.next_u64() % 3);
    Matrix x = random_matrix(rng, n, d, -1.5, 1.5);
    Matrix w = random_matrix(rng, d, d, -1.0, 1.0);
    std::vector<int> seg(static_cast<std::size_t>(n));
    for (std::size_t i = 0; i < seg.size(); ++i) {
      seg[i] = static_cast<int>(i) / 2;
    }
    int nseg = seg.back() + 1;
    unsigned sel = static_cast<unsigned>(rng.next_u64() % 6);

    Program p = [=](Tape&, const std::vector<Value>& v) -> Value {
      Value h = matmul(v[0], v[1]);
      switch (sel) {
        case 0:
          h = sigmoid(h);
          break;
        case 1:
          h = add(h, exp(scale(h, 0.2)));
          break;
        case 2:
          h = mul(h, sigmoid(h));
          break;
        case 3:
          h = div(h, add_constant(mul(h, h), 1.0));
          break;
        case 4:
          h = segment_mean(h, seg, nseg);
          break;
        default:
          h = mul(h, segmented_softmax(sum(h, 1), seg));
          break;
      }
      Value pooled = sum(h, 0);
      return add(mean(mul(pooled, pooled)), sum(variance(h, 0)));
    };
    CAPTURE(trial);
    CHECK(max_gradient_error(p, {x, w}, 1e-5) < 1e-4);
  }
}

TEST_CASE("backward zeroes stale gradients and is bitwise repeatable") {
  Rng rng(37);
  Matrix x = random_matrix(rng, 3, 3);
  Tape t;
  Value v = t.leaf(x, true);
  Value r1 = sum(mul(v, v));
  Value r2 = mean(sigmoid(v));

  t.backward(r1);
  Matrix g1 = v.grad();
  t.backward(r2);
  Matrix g2 = v.grad();
  CHECK(!g1.isApprox(g2));

  t.backward(r1);
  Matrix g1_again = v.grad();
  // bitwise identical, not merely close
  CHECK(std::memcmp(g1.data(), g1_again.data(), sizeof(double) * 9) == 0);

  t.backward(r2);
  Matrix g2_again = v.grad();
  CHECK(std::memcmp(g2.data(), g2_again.data(), sizeof(double) * 9) == 0);
}

TEST_CASE("nodes without requires_grad stay out of the backward pass") {
  Tape t;
  Value w = t.leaf(Matrix::Ones(2, 2), true);
  Value c = t.leaf(Matrix::Ones(2, 2) * 3.0, false);
  Value r = sum(mul(w, c));
  t.backward(r);
  CHECK(w.grad()(0, 0) == doctest::Approx(3.0));
  CHECK(c.grad().size() == 0);
  CHECK(mul(w, c).requires_grad());
}

TEST_CASE("rng: fixed seed pins the sequence") {
  Rng a(42), b(42), c(43);
  bool all_equal = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    double ua = a.uniform(), ub = b.uniform(), uc = c.uniform();
    all_equal = all_equal && (ua == ub);
    any_diff = any_diff || (ua != uc);
  }
  CHECK(all_equal);
  CHECK(any_diff);

  Rng s1 = Rng(42).substream(7);
  Rng s2 = Rng(42).substream(7);
  Rng s3 = Rng(42).substream(8);
  CHECK(s1.uniform() == s2.uniform());
  CHECK(s1.uniform() != s3.uniform());
  CHECK(s1.seed() != 42);  // substream is a distinct stream, not a reseed
}

TEST_CASE("rng: uniform stays inside the open interval with the right mean") {
  Rng rng(4242);
  double total = 0.0;
  bool inside = true;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    inside = inside && (u > 0.0) && (u < 1.0);
    total += u;
  }
  CHECK(inside);
  CHECK(total / n == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("rng: gaussian moments and degenerate stddev") {
  Rng rng(555);
  const int n = 100000;
  double total = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = rng.gaussian(1.0, 2.0);
    total += z;
    sq += z * z;
  }
  double mean = total / n;
  double var = sq / n - mean * mean;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.05));
  CHECK(var == doctest::Approx(4.0).epsilon(0.05));

  Matrix zeros = rng.gaussian_matrix(0.0, 0.0, 3, 3);
  CHECK(zeros.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS((void)rng.gaussian(0.0, -1.0), DomainError);
}

TEST_CASE("rng: shuffle is a seeded permutation") {
  std::vector<int> items{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> copy = items;
  Rng a(9), b(9);
  a.shuffle(items);
  b.shuffle(copy);
  CHECK(items == copy);
  CHECK(std::set<int>(items.begin(), items.end()).size() == 8);
}

TEST_CASE("tape draws never require grad") {
  Tape t;
  Rng rng(1);
  Value u = uniform(t, rng, 2, 2);
  Value g = gaussian(t, rng, 0.0, 1.0, 2, 2);
  CHECK(!u.requires_grad());
  CHECK(!g.requires_grad());
  CHECK(u.rows() == 2);
  CHECK(g.cols() == 2);
}
