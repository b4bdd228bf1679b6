#include <doctest.h>

#include <cmath>

#include "modnet/ops.hpp"
#include "test_util.hpp"

using namespace modnet;
using namespace modnet::testutil;

TEST_CASE("conv2d matches the paper encoder shape arithmetic") {
  Rng rng(1);
  auto x = random_tensor<float>({1, 3, 28, 28}, rng);
  auto w = random_tensor<float>({64, 3, 3, 3}, rng);
  auto y = conv2d(x, w, TensorPtr<float>(), 1, 1);
  CHECK(y->shape == std::vector<int>{1, 64, 28, 28});
}

TEST_CASE("conv2d on a zero input with zero bias is all zero") {
  Rng rng(2);
  auto x = Tensor<float>::create({1, 1, 1, 1});
  auto w = random_tensor<float>({4, 1, 1, 1}, rng);
  auto b = Tensor<float>::create({4});
  auto y = conv2d(x, w, b, 1, 0);
  for (float v : y->value) CHECK(v == 0.0f);
}

TEST_CASE("conv2d equals the sextuple-loop oracle on random shapes") {
  Rng rng(3);
  for (int trial = 0; trial < 12; ++trial) {
    int B = 1 + rng.uniform_int(4), Cin = 1 + rng.uniform_int(8), Cout = 1 + rng.uniform_int(6);
    int H = 3 + rng.uniform_int(7), W = 3 + rng.uniform_int(7);
    int k = 1 + rng.uniform_int(3), stride = 1 + rng.uniform_int(2), pad = rng.uniform_int(2);
    if (H + 2 * pad < k || W + 2 * pad < k) continue;
    auto x = random_tensor<float>({B, Cin, H, W}, rng);
    auto w = random_tensor<float>({Cout, Cin, k, k}, rng);
    auto b = random_tensor<float>({Cout}, rng);
    auto y = conv2d(x, w, b, stride, pad);
    int OH, OW;
    auto ref = conv2d_oracle(x->value, B, Cin, H, W, w->value, Cout, k, k, &b->value, stride, pad, OH, OW);
    REQUIRE(y->shape == std::vector<int>{B, Cout, OH, OW});
    CHECK(max_abs_diff(y->value, ref) < 1e-5);
  }
}

TEST_CASE("conv2d rejects channel mismatch and overlarge kernels") {
  Rng rng(4);
  auto x = random_tensor<float>({1, 3, 8, 8}, rng);
  auto w_bad = random_tensor<float>({4, 2, 3, 3}, rng);
  CHECK_THROWS_AS((void)conv2d(x, w_bad, TensorPtr<float>(), 1, 1), ShapeError);
  auto w_big = random_tensor<float>({4, 3, 11, 11}, rng);
  CHECK_THROWS_AS((void)conv2d(x, w_big, TensorPtr<float>(), 1, 0), ShapeError);
}

TEST_CASE("relu definition and dead region") {
  auto x = Tensor<float>::from({3}, {-1.0f, 0.0f, 2.0f}, true);
  auto y = relu(x);
  CHECK(y->value == std::vector<float>{0.0f, 0.0f, 2.0f});

  auto neg = Tensor<float>::from({4}, {-3.0f, -2.0f, -1.0f, -0.5f}, true);
  auto z = sum(relu(neg));
  backward(z);
  for (float v : neg->grad) CHECK(v == 0.0f);
}

TEST_CASE("maxpool2d ramp oracle") {
  std::vector<float> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[static_cast<size_t>(i)] = static_cast<float>(i);
  auto x = Tensor<float>::from({1, 1, 4, 4}, ramp);
  auto y = maxpool2d(x, 2, 2);
  CHECK(y->value == std::vector<float>{5.0f, 7.0f, 13.0f, 15.0f});
}

TEST_CASE("maxpool2d matches a window-scan oracle and routes gradient mass exactly") {
  Rng rng(5);
  for (int trial = 0; trial < 8; ++trial) {
    int B = 1 + rng.uniform_int(3), C = 1 + rng.uniform_int(4);
    int H = 4 + rng.uniform_int(6), W = 4 + rng.uniform_int(6);
    int k = 2 + rng.uniform_int(2), s = 1 + rng.uniform_int(2);
    if (k > H || k > W) continue;
    auto x = random_tensor<float>({B, C, H, W}, rng, true);
    auto y = maxpool2d(x, k, s);
    int OH = (H - k) / s + 1, OW = (W - k) / s + 1;
    for (int b = 0; b < B; ++b)
      for (int c = 0; c < C; ++c)
        for (int oy = 0; oy < OH; ++oy)
          for (int ox = 0; ox < OW; ++ox) {
            float best = -1e30f;
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx)
                best = std::max(best, x->value[((static_cast<size_t>(b) * C + c) * H + oy * s + ky) * W +
                                               ox * s + kx]);
            CHECK(y->value[((static_cast<size_t>(b) * C + c) * OH + oy) * OW + ox] == best);
          }
    backward(sum(y));
    double in_mass = 0, out_mass = static_cast<double>(y->numel());
    for (float g : x->grad) in_mass += g;
    CHECK(in_mass == doctest::Approx(out_mass).epsilon(1e-9));
  }
}

TEST_CASE("maxpool tie-break picks the first occurrence in row-major order") {
  auto x = Tensor<float>::from({1, 1, 2, 2}, {1.0f, 1.0f, 1.0f, 1.0f}, true);
  auto y = maxpool2d(x, 2, 2);
  backward(sum(y));
  CHECK(x->grad == std::vector<float>{1.0f, 0.0f, 0.0f, 0.0f});
}

TEST_CASE("batchnorm train-mode statistics and eval identity") {
  Rng rng(6);
  int B = 6, C = 3, H = 5, W = 5;
  auto x = random_tensor<float>({B, C, H, W}, rng, false, 2.0);
  auto gamma = Tensor<float>::from({C}, std::vector<float>(C, 1.0f), true);
  auto beta = Tensor<float>::create({C}, true);
  auto rm = Tensor<float>::create({C});
  auto rv = Tensor<float>::from({C}, std::vector<float>(C, 1.0f));

  auto y = batchnorm(x, gamma, beta, rm, rv, /*train=*/true);
  int64_t N = static_cast<int64_t>(B) * H * W;
  for (int c = 0; c < C; ++c) {
    double mean = 0, var = 0;
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < H * W; ++i) mean += y->value[(static_cast<size_t>(b) * C + c) * H * W + i];
    mean /= static_cast<double>(N);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < H * W; ++i) {
        double d = y->value[(static_cast<size_t>(b) * C + c) * H * W + i] - mean;
        var += d * d;
      }
    var /= static_cast<double>(N);
    CHECK(std::fabs(mean) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-3);
  }

  // eval with identity running stats reproduces the input up to eps effects
  auto rm0 = Tensor<float>::create({C});
  auto rv1 = Tensor<float>::from({C}, std::vector<float>(C, 1.0f));
  auto ye = batchnorm(x, gamma, beta, rm0, rv1, /*train=*/false);
  CHECK(max_abs_diff(ye->value, x->value) < 1e-4);
}

TEST_CASE("batchnorm two-point batch matches the closed form") {
  float a = 1.7f, b = -0.3f;
  auto x = Tensor<float>::from({2, 1, 1, 1}, {a, b});
  auto gamma = Tensor<float>::from({1}, {1.0f});
  auto beta = Tensor<float>::create({1});
  auto rm = Tensor<float>::create({1});
  auto rv = Tensor<float>::from({1}, {1.0f});
  auto y = batchnorm(x, gamma, beta, rm, rv, true);
  double mu = (a + b) / 2.0, var = ((a - mu) * (a - mu) + (b - mu) * (b - mu)) / 2.0;
  double expect = (a - mu) / std::sqrt(var + 1e-5);
  CHECK(y->value[0] == doctest::Approx(expect).epsilon(1e-5));
  CHECK(y->value[1] == doctest::Approx(-expect).epsilon(1e-5));
  // running stats: momentum 0.1, unbiased variance
  CHECK(rm->value[0] == doctest::Approx(0.1 * mu).epsilon(1e-5));
  CHECK(rv->value[0] == doctest::Approx(0.9 * 1.0 + 0.1 * var * 2.0).epsilon(1e-5));
}

TEST_CASE("batchnorm rejects batch of one in train mode") {
  auto x = Tensor<float>::create({1, 2, 3, 3});
  auto g = Tensor<float>::from({2}, {1.0f, 1.0f});
  auto b = Tensor<float>::create({2});
  auto rm = Tensor<float>::create({2});
  auto rv = Tensor<float>::from({2}, {1.0f, 1.0f});
  CHECK_THROWS_AS((void)batchnorm(x, g, b, rm, rv, true), ConfigError);
  CHECK_NOTHROW((void)batchnorm(x, g, b, rm, rv, false));
}

TEST_CASE("linear identity and the paper classifier shape") {
  int F = 4;
  std::vector<float> eye(static_cast<size_t>(F) * F, 0.0f);
  for (int i = 0; i < F; ++i) eye[static_cast<size_t>(i) * F + i] = 1.0f;
  Rng rng(7);
  auto x = random_tensor<float>({3, F}, rng);
  auto w = Tensor<float>::from({F, F}, eye);
  auto b = Tensor<float>::create({F});
  auto y = linear(x, w, b);
  CHECK(max_abs_diff(y->value, x->value) == 0.0);

  auto x2 = random_tensor<float>({1, 512}, rng);
  auto w2 = random_tensor<float>({1024, 512}, rng, false, 0.05);
  auto b2 = random_tensor<float>({1024}, rng);
  CHECK(linear(x2, w2, b2)->shape == std::vector<int>{1, 1024});
}

TEST_CASE("linear matches an explicit double-loop oracle") {
  Rng rng(8);
  auto x = random_tensor<float>({5, 7}, rng);
  auto w = random_tensor<float>({3, 7}, rng);
  auto b = random_tensor<float>({3}, rng);
  auto y = linear(x, w, b);
  for (int i = 0; i < 5; ++i)
    for (int o = 0; o < 3; ++o) {
      double acc = b->value[o];
      for (int f = 0; f < 7; ++f) acc += static_cast<double>(x->value[static_cast<size_t>(i) * 7 + f]) *
                                         w->value[static_cast<size_t>(o) * 7 + f];
      CHECK(y->value[static_cast<size_t>(i) * 3 + o] == doctest::Approx(acc).epsilon(1e-5));
    }
  auto xbad = random_tensor<float>({5, 8}, rng);
  CHECK_THROWS_AS((void)linear(xbad, w, b), ShapeError);
}

TEST_CASE("concat_channels joins and splits losslessly") {
  Rng rng(9);
  auto a = random_tensor<float>({2, 3, 4, 4}, rng, true);
  auto b = random_tensor<float>({2, 5, 4, 4}, rng, true);
  auto cat = concat_channels(a, b);
  CHECK(cat->shape == std::vector<int>{2, 8, 4, 4});
  auto [a2, b2] = split_channels(cat, 3);
  CHECK(a2->value == a->value);
  CHECK(b2->value == b->value);

  auto empty = Tensor<float>::create({2, 0, 4, 4});
  auto same = concat_channels(a, empty);
  CHECK(same->value == a->value);

  auto bad = random_tensor<float>({2, 3, 5, 4}, rng);
  CHECK_THROWS_AS((void)concat_channels(a, bad), ShapeError);
}

TEST_CASE("modulate identity, annihilation, and oracle") {
  Rng rng(10);
  auto f = random_tensor<float>({2, 3, 4, 4}, rng, true);
  auto ones = Tensor<float>::from({3}, std::vector<float>(3, 1.0f));
  CHECK(modulate(f, ones)->value == f->value);
  auto zeros = Tensor<float>::create({3});
  auto annihilated = modulate(f, zeros);
  for (float v : annihilated->value) CHECK(v == 0.0f);

  auto g = random_tensor<float>({3}, rng, true);
  auto y = modulate(f, g);
  for (int b = 0; b < 2; ++b)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 16; ++i)
        CHECK(y->value[(static_cast<size_t>(b) * 3 + c) * 16 + i] ==
              doctest::Approx(f->value[(static_cast<size_t>(b) * 3 + c) * 16 + i] * g->value[c]));
  auto bad = random_tensor<float>({4}, rng);
  CHECK_THROWS_AS((void)modulate(f, bad), ShapeError);
}

TEST_CASE("embedding_lookup selects rows and accumulates gradients") {
  auto table = Tensor<float>::from({1, 3}, {0.5f, -1.0f, 2.0f}, true);
  auto row = embedding_lookup(table, 0);
  CHECK(row->value == std::vector<float>{0.5f, -1.0f, 2.0f});
  CHECK_THROWS_AS((void)embedding_lookup(table, 1), modnet::IndexError);

  auto table2 = Tensor<float>::from({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(embedding_lookup(table2, 1)));
  CHECK(table2->grad == std::vector<float>{0, 0, 1, 1, 0, 0});

  table2->zero_grad();
  auto l1 = embedding_lookup(table2, 2);
  auto l2 = embedding_lookup(table2, 2);
  backward(sum(add(l1, l2)));
  CHECK(table2->grad == std::vector<float>{0, 0, 0, 0, 2, 2});
}

TEST_CASE("tanh_affine_gamma hits 1 at zero and saturates at 3") {
  auto x = Tensor<float>::from({3}, {0.0f, 30.0f, -30.0f});
  auto y = tanh_affine_gamma(x);
  CHECK(y->value[0] == doctest::Approx(1.0));
  CHECK(y->value[1] == doctest::Approx(3.0));
  CHECK(y->value[2] == doctest::Approx(-1.0));

  Rng rng(11);
  auto r = random_tensor<float>({13}, rng, false, 2.0);
  auto yr = tanh_affine_gamma(r);
  for (size_t i = 0; i < r->value.size(); ++i)
    CHECK(yr->value[i] == doctest::Approx(2.0 * std::tanh(r->value[i]) + 1.0).epsilon(1e-6));
}

TEST_CASE("softmax_cross_entropy uniform loss, limit, and analytic gradient") {
  auto uniform = Tensor<float>::create({1, 2}, true);
  auto loss = softmax_cross_entropy(uniform, {0});
  CHECK(loss->value[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));

  auto strong = Tensor<float>::from({1, 2}, {30.0f, -30.0f});
  CHECK(softmax_cross_entropy(strong, {0})->value[0] < 1e-6);

  Rng rng(12);
  auto logits = random_tensor<float>({6, 4}, rng, true, 2.0);
  std::vector<int> labels = {0, 3, 1, 2, 2, 0};
  backward(softmax_cross_entropy(logits, labels));
  auto probs = softmax_rows(logits);
  for (int b = 0; b < 6; ++b)
    for (int k = 0; k < 4; ++k) {
      double expect = (probs[static_cast<size_t>(b) * 4 + k] - (labels[b] == k ? 1.0 : 0.0)) / 6.0;
      CHECK(logits->grad[static_cast<size_t>(b) * 4 + k] == doctest::Approx(expect).epsilon(1e-6));
    }
  CHECK_THROWS_AS((void)softmax_cross_entropy(logits, std::vector<int>{0, 1, 2, 3, 4, 0}),
                  modnet::IndexError);
}

TEST_CASE("backward: linear case, disconnected parameter, and non-scalar rejection") {
  Rng rng(13);
  auto x = random_tensor<float>({7}, rng, true);
  backward(sum(x));
  for (float g : x->grad) CHECK(g == 1.0f);

  auto used = random_tensor<float>({3}, rng, true);
  auto unused = random_tensor<float>({3}, rng, true);
  backward(sum(relu(used)));
  for (float g : unused->grad) CHECK(g == 0.0f);

  auto vec = random_tensor<float>({4}, rng, true);
  CHECK_THROWS_AS(backward(relu(vec)), UsageError);
}

TEST_CASE("gather, concat_batch and broadcast_batch invert cleanly") {
  Rng rng(14);
  auto x = random_tensor<float>({4, 3}, rng, true);
  auto g = gather_batch(x, {2, 0, 2});
  CHECK(g->shape == std::vector<int>{3, 3});
  for (int j = 0; j < 3; ++j) {
    CHECK(g->value[j] == x->value[6 + j]);
    CHECK(g->value[3 + j] == x->value[j]);
  }
  backward(sum(g));
  CHECK(x->grad[6] == 2.0f);  // row 2 picked twice
  CHECK(x->grad[0] == 1.0f);
  CHECK(x->grad[3] == 0.0f);

  auto a = random_tensor<float>({2, 3}, rng);
  auto b = random_tensor<float>({1, 3}, rng);
  auto cat = concat_batch<float>({a, b});
  CHECK(cat->shape == std::vector<int>{3, 3});

  auto v = random_tensor<float>({5}, rng, true);
  auto bc = broadcast_batch(v, 4);
  CHECK(bc->shape == std::vector<int>{4, 5});
  backward(sum(bc));
  for (float gr : v->grad) CHECK(gr == 4.0f);
}

TEST_CASE("no-grad mode skips graph recording") {
  Rng rng(15);
  auto x = random_tensor<float>({3}, rng, true);
  {
    NoGradGuard guard;
    auto y = relu(x);
    CHECK_FALSE(y->requires_grad);
    CHECK(y->inputs.empty());
  }
  auto y2 = relu(x);
  CHECK(y2->requires_grad);
}

TEST_CASE("fixed graph is bit-reproducible across runs") {
  auto run = [] {
    Rng rng(77);
    auto x = random_tensor<float>({2, 3, 9, 9}, rng, true);
    auto w = random_tensor<float>({4, 3, 3, 3}, rng, true);
    auto b = random_tensor<float>({4}, rng, true);
    auto loss = softmax_cross_entropy(
        linear(global_maxpool2d(relu(conv2d(x, w, b, 1, 1))), Tensor<float>::from({2, 4}, {1, 0, 0, 1, 0, 0, 1, 1}),
               TensorPtr<float>()),
        {0, 1});
    backward(loss);
    std::vector<float> out = {loss->value[0]};
    out.insert(out.end(), w->grad.begin(), w->grad.end());
    return out;
  };
  CHECK(run() == run());
}
