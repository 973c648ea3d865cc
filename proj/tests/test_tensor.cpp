#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace sizerec;
using namespace sizerec::nn;

namespace {

Tensor random_tensor(std::vector<size_t> shape, Rng& rng, bool requires_grad = false,
                     double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and shapes") {
  Rng rng(1);
  Tensor eye = Tensor::zeros({2, 2});
  eye.data()[0] = 1.0;
  eye.data()[3] = 1.0;
  Tensor a = random_tensor({2, 3}, rng);
  Tensor out = matmul(eye, a);
  CHECK(testsupport::bitwise_equal(out.values(), a.values()));
  CHECK_THROWS_AS(matmul(random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)), Error);
}

TEST_CASE("concat along last axis adds lengths") {
  Rng rng(2);
  Tensor a = random_tensor({3}, rng);
  Tensor b = random_tensor({5}, rng);
  Tensor c = concat_last({a, b});
  REQUIRE(c.shape() == std::vector<size_t>{8});
  CHECK(c.data()[0] == a.data()[0]);
  CHECK(c.data()[3] == b.data()[0]);
  CHECK_THROWS_AS(concat_last({random_tensor({2, 3}, rng), random_tensor({3, 3}, rng)}), Error);
}

TEST_CASE("layer_norm rows have mean 0 and variance 1") {
  Rng rng(3);
  Tensor x = random_tensor({4, 16}, rng, false, 3.0);
  Tensor gain = Tensor::full({16}, 1.0);
  Tensor bias = Tensor::zeros({16});
  Tensor y = layer_norm(x, gain, bias);
  for (size_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (size_t j = 0; j < 16; ++j) mean += y.data()[r * 16 + j];
    mean /= 16;
    for (size_t j = 0; j < 16; ++j) {
      double d = y.data()[r * 16 + j] - mean;
      var += d * d;
    }
    var /= 16;
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(var - 1.0) <= 1e-6);
  }
}

TEST_CASE("softmax basics") {
  Tensor x = Tensor::from({2}, {0.0, 0.0});
  Tensor p = masked_softmax(x, nullptr);
  CHECK(p.data()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p.data()[1] == doctest::Approx(0.5).epsilon(1e-12));

  // shift invariance is exact for exactly-representable shifts
  Tensor a = Tensor::from({3}, {1.0, 2.0, 3.0});
  Tensor b = Tensor::from({3}, {1.0 + 2.0, 2.0 + 2.0, 3.0 + 2.0});
  Tensor pa = masked_softmax(a, nullptr);
  Tensor pb = masked_softmax(b, nullptr);
  CHECK(testsupport::bitwise_equal(pa.values(), pb.values()));

  // frozen oracle values for [1,2,3]
  double e1 = std::exp(1.0 - 3.0), e2 = std::exp(2.0 - 3.0), e3 = 1.0;
  double z = e1 + e2 + e3;
  CHECK(pa.data()[0] == doctest::Approx(e1 / z).epsilon(1e-12));
  CHECK(pa.data()[0] == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(pa.data()[1] == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(pa.data()[2] == doctest::Approx(0.66524).epsilon(1e-4));
}

TEST_CASE("masked softmax: exact zeros, unit sum, AllMasked") {
  Rng rng(4);
  Tensor x = random_tensor({3, 5}, rng, false, 4.0);
  std::vector<uint8_t> mask(15, 1);
  mask[2] = 0;
  mask[5 + 4] = 0;
  Tensor p = masked_softmax(x, &mask);
  CHECK(p.data()[2] == 0.0);
  CHECK(p.data()[9] == 0.0);
  for (size_t r = 0; r < 3; ++r) {
    double sum = 0.0;
    for (size_t j = 0; j < 5; ++j) sum += p.data()[r * 5 + j];
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
  std::vector<uint8_t> all_masked(15, 1);
  for (size_t j = 0; j < 5; ++j) all_masked[5 + j] = 0;
  CHECK_THROWS_AS(masked_softmax(x, &all_masked), Error);
}

TEST_CASE("cross entropy values") {
  const size_t K = 7;
  Tensor uniform = Tensor::full({1, K}, 1.0 / K);
  CHECK(cross_entropy(uniform, {3}).item() == doctest::Approx(std::log((double)K)).epsilon(1e-12));

  Tensor sure = Tensor::from({1, 2}, {0.0, 1.0});
  CHECK(cross_entropy(sure, {1}).item() == 0.0);

  Tensor p = Tensor::from({1, 2}, {0.1, 0.9});
  CHECK(cross_entropy(p, {1}).item() == doctest::Approx(0.10536).epsilon(1e-4));
  CHECK_THROWS_AS(cross_entropy(p, {5}), Error);
}

TEST_CASE("backward on linear and quadratic sums") {
  Rng rng(5);
  Tensor w = random_tensor({4, 3}, rng, true);
  backward(sum_all(w));
  for (double g : w.grad()) CHECK(g == 1.0);
  w.clear_grad();

  Tensor loss = sum_all(mul(w, w));
  backward(loss);
  for (size_t i = 0; i < w.size(); ++i)
    CHECK(w.grad()[i] == doctest::Approx(2.0 * w.data()[i]).epsilon(1e-12));

  CHECK_THROWS_AS(backward(w), Error);  // NotAScalar
}

TEST_CASE("embedding lookup: PAD row, repeats, gradient multiplicity") {
  Rng rng(6);
  EmbeddingTable table(5, 4, rng);
  for (size_t j = 0; j < 4; ++j) CHECK(table.weight.data()[j] == 0.0);

  std::vector<int32_t> ids{0, 2, 2, 4};
  Tensor out = table.lookup(ids, {4});
  for (size_t j = 0; j < 4; ++j) {
    CHECK(out.data()[j] == 0.0);                          // PAD -> zero vector
    CHECK(out.data()[4 + j] == out.data()[8 + j]);        // repeated id
  }
  backward(sum_all(out));
  const auto& g = table.weight.grad();
  for (size_t j = 0; j < 4; ++j) {
    CHECK(g[0 * 4 + j] == 0.0);  // PAD row receives no gradient
    CHECK(g[2 * 4 + j] == 2.0);  // multiplicity of id 2
    CHECK(g[4 * 4 + j] == 1.0);
    CHECK(g[1 * 4 + j] == 0.0);
  }
  table.weight.clear_grad();
  CHECK_THROWS_AS(table.lookup({7}, {1}), Error);

  auto rep = testsupport::fd_check(
      {{"table.weight", table.weight}},
      [&] { return sum_all(mul(table.lookup(ids, {4}), table.lookup(ids, {4}))); }, 1e-5,
      [&](const std::string& name, size_t idx) {
        return testsupport::skip_pad_row(name, idx, 4);
      });
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("adam against scalar oracle") {
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  Tensor p = Tensor::from({1}, {1.0}, true);
  Adam opt({p}, cfg);
  testsupport::AdamOracle oracle{cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.eps};
  double ref = 1.0;
  double prev = 1.0;
  for (int step = 0; step < 2; ++step) {
    p.grad().assign(1, 1.0);
    opt.step();
    ref = oracle.step(ref, 1.0);
    CHECK(p.data()[0] == doctest::Approx(ref).epsilon(1e-12));
    CHECK(p.data()[0] < prev);  // constant positive gradient: monotone decrease
    prev = p.data()[0];
    CHECK_FALSE(p.has_grad());  // step() clears gradients
  }

  // first step moves by ~ -lr * sign(grad)
  Tensor q = Tensor::from({1}, {0.5}, true);
  Adam opt2({q}, cfg);
  q.grad().assign(1, -3.7);
  opt2.step();
  CHECK(q.data()[0] == doctest::Approx(0.5 + cfg.lr).epsilon(1e-6));

  // zero gradient and wd=0 is a fixed point
  Tensor r = Tensor::from({1}, {2.5}, true);
  Adam opt3({r}, cfg);
  r.grad().assign(1, 0.0);
  opt3.step();
  CHECK(r.data()[0] == 2.5);

  Tensor s = Tensor::from({1}, {1.0}, true);
  Adam opt4({s}, cfg);
  CHECK_THROWS_AS(opt4.step(), Error);  // NoGradients
}

TEST_CASE("finite differences: linear, layer_norm, mlp") {
  Rng rng(7);
  Linear lin(6, 4, rng);
  Tensor x = random_tensor({3, 6}, rng, true);
  std::vector<std::pair<std::string, Tensor>> params{{"x", x}, {"w", lin.w}, {"b", lin.b}};
  auto rep = testsupport::fd_check(params, [&] { return mean_all(mul(lin.forward(x), lin.forward(x))); });
  CHECK(rep.max_rel < 1e-4);

  LayerNorm ln(6);
  auto rep2 = testsupport::fd_check(
      {{"x", x}, {"g", ln.gain}, {"b", ln.bias}},
      [&] { return mean_all(mul(ln.forward(x), ln.forward(x))); });
  CHECK(rep2.max_rel < 1e-4);

  Mlp mlp(6, {5, 4}, rng);
  std::vector<std::pair<std::string, Tensor>> mp{{"x", x}};
  mlp.collect(mp, "mlp");
  auto rep3 = testsupport::fd_check(mp, [&] { return mean_all(mul(mlp.forward(x), mlp.forward(x))); });
  CHECK(rep3.max_rel < 1e-4);
}

TEST_CASE("bilstm: shapes, padding neutrality, gradients") {
  Rng rng(8);
  const size_t D = 5, H = 3;
  BiLstm lstm(D, H, rng);

  // single step: both streams consume the same event
  Tensor x1 = random_tensor({1, 1, D}, rng);
  Tensor h1 = lstm.forward(x1, {1});
  REQUIRE(h1.shape() == std::vector<size_t>{1, 2 * H});

  // appending PAD steps leaves the output bit-identical
  Tensor x3 = random_tensor({1, 3, D}, rng);
  Tensor padded = Tensor::zeros({1, 5, D});
  std::memcpy(padded.data(), x3.data(), x3.size() * sizeof(double));
  Tensor out3 = lstm.forward(x3, {3});
  Tensor out5 = lstm.forward(padded, {3});
  CHECK(testsupport::bitwise_equal(out3.values(), out5.values()));

  CHECK_THROWS_AS(lstm.forward(x3, {0}), Error);  // EmptySequence

  // gradients vs central differences on a random 3-step input
  Tensor xg = random_tensor({2, 3, D}, rng, true);
  std::vector<size_t> lengths{3, 2};
  std::vector<std::pair<std::string, Tensor>> params{{"x", xg}};
  lstm.collect(params, "lstm");
  auto rep = testsupport::fd_check(params, [&] {
    Tensor h = lstm.forward(xg, lengths);
    return mean_all(mul(h, h));
  });
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("attention: single key, permutation, gradients") {
  Rng rng(9);
  const size_t D = 8, heads = 2;
  Linear wq(D, D, rng), wk(D, D, rng), wv(D, D, rng), wo(D, D, rng);

  // Tk = 1: softmax over one element is 1, so the output ignores query content
  Tensor k1 = random_tensor({1, 1, D}, rng);
  std::vector<uint8_t> mask1{1};
  Tensor q_a = random_tensor({1, 1, D}, rng);
  Tensor q_b = random_tensor({1, 1, D}, rng);
  Tensor out_a = multi_head_attention(q_a, k1, k1, mask1, heads, wq, wk, wv, wo);
  Tensor out_b = multi_head_attention(q_b, k1, k1, mask1, heads, wq, wk, wv, wo);
  CHECK(testsupport::bitwise_equal(out_a.values(), out_b.values()));

  // permuting keys and values together leaves the weighted sum unchanged
  Tensor q = random_tensor({1, 2, D}, rng);
  Tensor kv = random_tensor({1, 3, D}, rng);
  Tensor kv_perm = Tensor::zeros({1, 3, D});
  int perm[3] = {2, 0, 1};
  for (int t = 0; t < 3; ++t)
    std::memcpy(kv_perm.data() + t * D, kv.data() + perm[t] * D, D * sizeof(double));
  std::vector<uint8_t> mask3{1, 1, 1};
  Tensor o1 = multi_head_attention(q, kv, kv, mask3, heads, wq, wk, wv, wo);
  Tensor o2 = multi_head_attention(q, kv_perm, kv_perm, mask3, heads, wq, wk, wv, wo);
  CHECK(testsupport::max_abs_diff(o1.values(), o2.values()) < 1e-9);

  // a fully masked key row throws
  std::vector<uint8_t> none{0, 0, 0};
  CHECK_THROWS_AS(multi_head_attention(q, kv, kv, none, heads, wq, wk, wv, wo), Error);
}

TEST_CASE("transformer block: shape preservation and gradients") {
  Rng rng(10);
  const size_t D = 8, heads = 2, F = 16;
  TransformerBlock block(D, heads, F, rng);
  Tensor x = random_tensor({2, 3, D}, rng, true);
  std::vector<uint8_t> mask(2 * 3, 1);
  mask[5] = 0;  // one padded key

  Tensor self_out = block.forward(x, x, mask);
  REQUIRE(self_out.shape() == x.shape());  // "transformed event history"

  Tensor probe = random_tensor({2, 1, D}, rng, true);
  Tensor cross_out = block.forward(probe, self_out, mask);
  REQUIRE(cross_out.shape() == std::vector<size_t>{2, 1, D});

  std::vector<std::pair<std::string, Tensor>> params{{"x", x}, {"probe", probe}};
  block.collect(params, "block");
  auto rep = testsupport::fd_check(params, [&] {
    Tensor t = block.forward(x, x, mask);
    Tensor c = block.forward(probe, t, mask);
    return mean_all(mul(c, c));
  });
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("select_rows routes values and gradients by row") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
  Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8}, true);
  Tensor s = select_rows({1, 0}, a, b);
  CHECK(s.data()[0] == 1.0);
  CHECK(s.data()[2] == 7.0);
  backward(sum_all(s));
  CHECK(a.grad()[0] == 1.0);
  CHECK(a.grad()[2] == 0.0);
  CHECK(b.grad()[2] == 1.0);
  CHECK(b.grad()[0] == 0.0);
}

TEST_CASE("positional encoding is deterministic and bounded") {
  std::vector<double> offsets{0.0, 1.0, 365.0};
  Tensor pe = day_positional_encoding(offsets, 1, 3, 8);
  REQUIRE(pe.shape() == std::vector<size_t>{1, 3, 8});
  CHECK(pe.data()[0] == 0.0);  // sin(0)
  CHECK(pe.data()[1] == 1.0);  // cos(0)
  for (double v : pe.values()) CHECK(std::abs(v) <= 1.0);
}
