#include <catch2/catch_amalgamated.hpp>

#include <cstring>

#include "xlce/adam.hpp"
#include "xlce/grad_check.hpp"
#include "xlce/layers.hpp"

using namespace xlce;
using Catch::Approx;

namespace {

Tensor randn(std::vector<std::int64_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = scale * rng.gaussian();
  return t;
}

template <class Layer>
double layer_grad_error(Layer& layer, Tensor& x,
                        const std::vector<Tensor*>& params) {
  for (Tensor* p : params) {
    p->requires_grad();
    p->zero_grad();
  }
  x.requires_grad();
  Tensor y = layer.forward(x);
  Tensor dx = layer.backward(project_grad(y));
  x.grad = dx.data;
  auto loss = [&layer, &x]() {
    auto copy = layer;
    return project(copy.forward(x));
  };
  std::vector<Tensor*> all = params;
  all.push_back(&x);
  return grad_check(loss, all).max_rel_err;
}

}  // namespace

TEST_CASE("conv2d") {
  Rng rng(1);

  SECTION("delta kernel is the identity on a 1x1 input") {
    Conv2d conv(1, 1, rng);
    std::fill(conv.w.data.begin(), conv.w.data.end(), 0.0);
    conv.w.at({1, 1, 0, 0}) = 1.0;  // center tap
    Tensor x({1, 1, 1, 1});
    x.data[0] = 3.25;
    Tensor y = conv.forward(x);
    REQUIRE(y.data[0] == 3.25);
  }

  SECTION("zero kernel and bias give zero output") {
    Conv2d conv(2, 3, rng);
    std::fill(conv.w.data.begin(), conv.w.data.end(), 0.0);
    Tensor x = randn({2, 5, 5, 2}, rng);
    Tensor y = conv.forward(x);
    for (double v : y.data) REQUIRE(v == 0.0);
  }

  SECTION("spatial shape preserved") {
    Conv2d conv(2, 4, rng);
    Tensor x = randn({3, 7, 7, 2}, rng);
    Tensor y = conv.forward(x);
    REQUIRE(y.shape == std::vector<std::int64_t>{3, 7, 7, 4});
  }

  SECTION("gradients match finite differences") {
    Conv2d conv(2, 3, rng);
    Tensor x = randn({1, 4, 4, 2}, rng);
    REQUIRE(layer_grad_error(conv, x, {&conv.w, &conv.b}) < 1e-4);
  }

  SECTION("channel mismatch rejected") {
    Conv2d conv(2, 3, rng);
    Tensor x = randn({1, 4, 4, 5}, rng);
    REQUIRE_THROWS_AS(conv.forward(x), std::invalid_argument);
  }
}

TEST_CASE("batch normalization") {
  Rng rng(2);

  SECTION("train-mode pre-affine statistics: mean 0, variance 1") {
    BatchNorm bn(3);
    Tensor x = randn({8, 4, 4, 3}, rng, 100.0);  // large scale so eps is negligible
    Tensor y = bn.forward(x, Mode::Train);
    std::int64_t rows = x.size() / 3;
    auto ym = y.as_matrix(rows, 3);
    for (int c = 0; c < 3; ++c) {
      double mean = ym.col(c).mean();
      double var = (ym.col(c).array() - mean).square().mean();
      REQUIRE(mean == Approx(0.0).margin(1e-6));
      REQUIRE(var == Approx(1.0).margin(1e-6));
    }
  }

  SECTION("standardized input passes through (scale 1, shift 0)") {
    BatchNorm bn(2);
    Tensor x = randn({64, 2}, rng);
    // standardize by hand
    auto xm = x.as_matrix(64, 2);
    for (int c = 0; c < 2; ++c) {
      double mean = xm.col(c).mean();
      double sd = std::sqrt((xm.col(c).array() - mean).square().mean());
      xm.col(c) = (xm.col(c).array() - mean) / sd;
    }
    Tensor y = bn.forward(x, Mode::Train);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      REQUIRE(y.data[i] == Approx(x.data[i]).margin(1e-4));
  }

  SECTION("running statistics drive inference mode") {
    BatchNorm bn(1);
    Tensor x = randn({32, 1}, rng, 2.0);
    for (int i = 0; i < 50; ++i) bn.forward(x, Mode::Train);
    Tensor y_inf = bn.forward(x, Mode::Infer);
    Tensor y_tr = bn.forward(x, Mode::Train);
    for (std::size_t i = 0; i < y_inf.data.size(); ++i)
      REQUIRE(y_inf.data[i] == Approx(y_tr.data[i]).margin(1e-2));
  }

  SECTION("train mode rejects fewer than 2 elements per channel") {
    BatchNorm bn(4);
    Tensor x = randn({1, 4}, rng);
    REQUIRE_THROWS_AS(bn.forward(x, Mode::Train), std::invalid_argument);
    // a single conv sample still has H*W elements per channel
    BatchNorm bn2(2);
    Tensor xc = randn({1, 3, 3, 2}, rng);
    REQUIRE_NOTHROW(bn2.forward(xc, Mode::Train));
  }

  SECTION("gradients match finite differences (train mode)") {
    BatchNorm bn(2);
    Tensor x = randn({6, 2}, rng);
    bn.gamma.zero_grad();
    bn.beta.zero_grad();
    x.requires_grad();
    Tensor y = bn.forward(x, Mode::Train);
    Tensor dx = bn.backward(project_grad(y));
    x.grad = dx.data;
    auto loss = [&bn, &x]() {
      auto copy = bn;
      return project(copy.forward(x, Mode::Train));
    };
    REQUIRE(grad_check(loss, {&x, &bn.gamma, &bn.beta}).max_rel_err < 1e-4);
  }
}

TEST_CASE("relu and linear") {
  Rng rng(3);

  SECTION("relu clamps negatives") {
    Relu relu;
    Tensor x = Tensor::from({3}, {-1.0, 0.0, 2.0});
    Tensor y = relu.forward(x);
    REQUIRE(y.data[0] == 0.0);
    REQUIRE(y.data[1] == 0.0);
    REQUIRE(y.data[2] == 2.0);
    Tensor dy = Tensor::from({3}, {5.0, 5.0, 5.0});
    Tensor dx = relu.backward(dy);
    REQUIRE(dx.data[0] == 0.0);
    REQUIRE(dx.data[1] == 0.0);
    REQUIRE(dx.data[2] == 5.0);
  }

  SECTION("linear matches hand computation") {
    Linear lin(2, 2, rng);
    lin.w = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
    lin.b = Tensor::from({2}, {0.5, -0.5});
    Tensor x = Tensor::from({1, 2}, {1.0, 1.0});
    Tensor y = lin.forward(x);
    REQUIRE(y.data[0] == Approx(4.5));
    REQUIRE(y.data[1] == Approx(5.5));
  }

  SECTION("linear gradient is near-exact under finite differences") {
    Linear lin(5, 7, rng);
    Tensor x = randn({3, 5}, rng);
    REQUIRE(layer_grad_error(lin, x, {&lin.w, &lin.b}) < 1e-6);
  }
}

TEST_CASE("layer normalization") {
  Rng rng(4);

  SECTION("per-token pre-affine statistics") {
    LayerNorm ln(16);
    Tensor x = randn({5, 16}, rng, 50.0);
    Tensor y = ln.forward(x);
    auto ym = y.as_matrix(5, 16);
    for (int r = 0; r < 5; ++r) {
      double mean = ym.row(r).mean();
      double var = (ym.row(r).array() - mean).square().mean();
      REQUIRE(mean == Approx(0.0).margin(1e-6));
      REQUIRE(var == Approx(1.0).margin(1e-6));
    }
  }

  SECTION("gradients match finite differences") {
    LayerNorm ln(6);
    Tensor x = randn({4, 6}, rng);
    REQUIRE(layer_grad_error(ln, x, {&ln.gamma, &ln.beta}) < 1e-4);
  }
}

TEST_CASE("softmax") {
  SECTION("uniform row") {
    Tensor x = Tensor::from({1, 3}, {0.0, 0.0, 0.0});
    Tensor y = softmax_rows(x);
    for (double v : y.data) REQUIRE(v == Approx(1.0 / 3.0).margin(1e-15));
  }

  SECTION("large magnitudes do not overflow") {
    Tensor x = Tensor::from({1, 2}, {1000.0, 0.0});
    Tensor y = softmax_rows(x);
    REQUIRE(std::isfinite(y.data[0]));
    REQUIRE(y.data[0] == Approx(1.0).margin(1e-12));
    REQUIRE(y.data[1] == Approx(0.0).margin(1e-12));
  }

  SECTION("rows sum to one") {
    Rng rng(5);
    Tensor x = randn({20, 7}, rng, 3.0);
    Tensor y = softmax_rows(x);
    auto ym = y.as_matrix(20, 7);
    for (int r = 0; r < 20; ++r)
      REQUIRE(std::abs(ym.row(r).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("scaled dot-product attention") {
  Rng rng(6);

  SECTION("a single key/value token passes V through") {
    Tensor q = randn({3, 4}, rng);
    Tensor k = randn({1, 4}, rng);
    Tensor v = randn({1, 2}, rng);
    Tensor out = scaled_dot_product_attention(q, k, v);
    for (int t = 0; t < 3; ++t) {
      REQUIRE(out.at({t, 0}) == Approx(v.data[0]).margin(1e-15));
      REQUIRE(out.at({t, 1}) == Approx(v.data[1]).margin(1e-15));
    }
  }

  SECTION("saturated query picks out one value row") {
    // orthogonal keys, query = large multiple of key row 1
    Tensor k = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
    Tensor v = Tensor::from({2, 2}, {5.0, 6.0, 7.0, 8.0});
    Tensor q = Tensor::from({1, 2}, {0.0, 500.0});
    Tensor attn;
    Tensor out = scaled_dot_product_attention(q, k, v, &attn);
    REQUIRE(attn.at({0, 1}) == Approx(1.0).margin(1e-12));
    REQUIRE(out.at({0, 0}) == Approx(7.0).margin(1e-9));
    REQUIRE(out.at({0, 1}) == Approx(8.0).margin(1e-9));
  }

  SECTION("gradients match finite differences") {
    Tensor q = randn({3, 4}, rng);
    Tensor k = randn({5, 4}, rng);
    Tensor v = randn({5, 2}, rng);
    q.requires_grad();
    k.requires_grad();
    v.requires_grad();
    Tensor attn;
    Tensor out = scaled_dot_product_attention(q, k, v, &attn);
    scaled_dot_product_attention_backward(project_grad(out), q, k, v, attn);
    auto loss = [&]() { return project(scaled_dot_product_attention(q, k, v)); };
    REQUIRE(grad_check(loss, {&q, &k, &v}).max_rel_err < 1e-4);
  }

  SECTION("shape mismatches rejected") {
    Tensor q = randn({3, 4}, rng);
    Tensor k = randn({5, 3}, rng);
    Tensor v = randn({5, 2}, rng);
    REQUIRE_THROWS_AS(scaled_dot_product_attention(q, k, v), std::invalid_argument);
    Tensor k2 = randn({4, 4}, rng);
    REQUIRE_THROWS_AS(scaled_dot_product_attention(q, k2, v), std::invalid_argument);
  }
}

TEST_CASE("multi-head attention") {
  Rng rng(7);

  SECTION("single head with identity projections collapses to plain attention") {
    MultiHeadAttention mha(AttentionConfig{4, 1}, rng);
    auto eye = [](Tensor& t) {
      std::fill(t.data.begin(), t.data.end(), 0.0);
      for (int i = 0; i < 4; ++i) t.at({i, i}) = 1.0;
    };
    eye(mha.wq);
    eye(mha.wk);
    eye(mha.wv);
    eye(mha.wo);
    Tensor x = randn({1, 5, 4}, rng);
    Tensor y = mha.forward(x);
    Tensor x2d = Tensor::from({5, 4}, x.data);
    Tensor plain = scaled_dot_product_attention(x2d, x2d, x2d);
    for (std::size_t i = 0; i < plain.data.size(); ++i)
      REQUIRE(y.data[i] == plain.data[i]);
  }

  SECTION("output shape equals input shape for any valid head count") {
    for (int h : {1, 2, 3, 6}) {
      MultiHeadAttention mha(AttentionConfig{6, h}, rng);
      Tensor x = randn({2, 5, 6}, rng);
      Tensor y = mha.forward(x);
      REQUIRE(y.shape == x.shape);
    }
  }

  SECTION("head count must divide d_model") {
    REQUIRE_THROWS_AS(AttentionConfig({6, 4}).validate(), std::invalid_argument);
  }

  SECTION("gradients through all projections match finite differences") {
    MultiHeadAttention mha(AttentionConfig{6, 2}, rng);
    Tensor x = randn({2, 3, 6}, rng);
    x.requires_grad();
    for (Tensor* t : {&mha.wq, &mha.wk, &mha.wv, &mha.wo}) t->zero_grad();
    Tensor y = mha.forward(x);
    Tensor dx = mha.backward_self(project_grad(y));
    x.grad = dx.data;
    auto loss = [&mha, &x]() {
      auto copy = mha;
      return project(copy.forward(x));
    };
    REQUIRE(grad_check(loss, {&x, &mha.wq, &mha.wk, &mha.wv, &mha.wo}).max_rel_err < 1e-4);
  }
}

TEST_CASE("adam optimizer") {
  SECTION("zero gradient leaves parameters untouched") {
    Tensor w = Tensor::from({3}, {1.0, -2.0, 0.5});
    w.requires_grad();
    Adam adam(0.1);
    adam.step({&w});
    REQUIRE(w.data == std::vector<double>{1.0, -2.0, 0.5});
    REQUIRE(adam.steps() == 1);
  }

  SECTION("first step from zero state is -lr * g / (|g| + eps)") {
    Tensor w = Tensor::from({2}, {0.0, 0.0});
    w.requires_grad();
    w.grad = {3.0, -0.25};
    Adam adam(1e-3);
    adam.step({&w});
    for (int i = 0; i < 2; ++i) {
      double g = i == 0 ? 3.0 : -0.25;
      double want = -1e-3 * g / (std::abs(g) + 1e-8);
      REQUIRE(w.data[static_cast<std::size_t>(i)] == Approx(want).margin(1e-12));
    }
  }

  SECTION("converges on a convex quadratic") {
    Tensor w = Tensor::from({1}, {1.0});
    w.requires_grad();
    Adam adam(0.1);
    for (int i = 0; i < 200; ++i) {
      w.grad[0] = 2.0 * w.data[0];
      adam.step({&w});
    }
    REQUIRE(std::abs(w.data[0]) < 0.1);
  }

  SECTION("shape change rejected") {
    Tensor w = Tensor::from({2}, {0.0, 0.0});
    w.requires_grad();
    Adam adam;
    adam.step({&w});
    Tensor w2 = Tensor::from({3}, {0.0, 0.0, 0.0});
    w2.requires_grad();
    REQUIRE_THROWS_AS(adam.step({&w2}), std::invalid_argument);
  }
}

TEST_CASE("forward passes are bit deterministic") {
  Rng rng(8);
  Conv2d conv(2, 4, rng);
  Tensor x = randn({2, 5, 5, 2}, rng);
  Tensor a = conv.forward(x);
  Tensor b = conv.forward(x);
  REQUIRE(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0);

  MultiHeadAttention mha(AttentionConfig{8, 2}, rng);
  Tensor t = randn({2, 6, 8}, rng);
  Tensor y1 = mha.forward(t);
  Tensor y2 = mha.forward(t);
  REQUIRE(std::memcmp(y1.data.data(), y2.data.data(), y1.data.size() * sizeof(double)) == 0);
}

TEST_CASE("a corrupted backward pass is caught by the gradient check") {
  Rng rng(9);
  Linear lin(3, 3, rng);
  Tensor x = randn({2, 3}, rng);
  x.requires_grad();
  lin.w.zero_grad();
  lin.b.zero_grad();
  Tensor y = lin.forward(x);
  Tensor dx = lin.backward(project_grad(y));
  x.grad = dx.data;
  // sabotage: scale the analytic weight gradient
  for (auto& g : lin.w.grad) g *= 1.5;
  auto loss = [&lin, &x]() {
    auto copy = lin;
    return project(copy.forward(x));
  };
  REQUIRE_FALSE(grad_check(loss, {&x, &lin.w, &lin.b}).pass(1e-4));
}
