/* Copyright 2026 The anchordistill Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "anchordistill/errors.hpp"
#include "anchordistill/gradcheck.hpp"
#include "anchordistill/ops.hpp"
#include "anchordistill/random.hpp"
#include "test_util.hpp"

using namespace ad;
using ad::test::random_tensor;

TEST_CASE("tensor factories and shape invariants") {
  const Tensor z = Tensor::zeros({2, 3});
  CHECK(z.size() == 6);
  CHECK(z.dim() == 2);
  CHECK(z.extent(-1) == 3);
  CHECK(z.values().isZero());
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  CHECK_THROWS_AS(z.item(), DimensionError);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
  CHECK(Tensor().defined() == false);
}

TEST_CASE("backward of sum gives ones") {
  const Tensor x = random_tensor({2, 3, 4}, 1, true);
  sum(x).backward();
  CHECK(x.grad().isOnes());
}

TEST_CASE("backward of sum of squares") {
  const Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  sum(x * x).backward();
  CHECK(x.grad()[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(x.grad()[1] == doctest::Approx(4.0).epsilon(1e-15));
}

TEST_CASE("backward rejects non-scalar roots and consumed graphs") {
  const Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_AS((x * 2.0).backward(), DimensionError);
  const Tensor loss = sum(x * x);
  loss.backward();
  CHECK_THROWS_AS(loss.backward(), StateError);
}

TEST_CASE("leaves accumulate across backward calls until zero_grad") {
  Tensor x = Tensor::from({2}, {1.0, -1.0}, true);
  sum(x).backward();
  sum(x * 3.0).backward();
  CHECK(x.grad()[0] == 4.0);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("results without grad-requiring parents build no graph") {
  const Tensor a = random_tensor({3}, 2);
  const Tensor b = relu(a * a + a);
  CHECK_FALSE(b.requires_grad());
  CHECK(b.node()->parents.empty());
}

TEST_CASE("detach cuts gradient flow") {
  const Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  const Tensor y = x.detach();
  CHECK_FALSE(y.requires_grad());
  sum(x * y).backward();
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 2.0);
}

TEST_CASE("tape is topologically ordered") {
  const Tensor x = random_tensor({4}, 3, true);
  const Tensor a = relu(x);
  const Tensor b = a * x;
  const Tensor root = sum(b + a);
  const GraphTape tape = record_tape(root);
  std::map<const detail::Node*, std::size_t> pos;
  for (std::size_t i = 0; i < tape.order.size(); ++i) pos[tape.order[i]] = i;
  for (const auto* n : tape.order) {
    for (const auto& p : n->parents) {
      if (pos.count(p.get())) CHECK(pos[p.get()] < pos[n]);
    }
  }
  CHECK(tape.order.back() == root.node().get());
}

TEST_CASE("conv2d identity kernel returns the input") {
  const Tensor in = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  const Tensor w = Tensor::from({1, 1, 1, 1}, {1.0});
  const Tensor b = Tensor::from({1}, {0.0});
  const Tensor out = conv2d(in, w, b, 1, 0);
  CHECK(out.shape() == Shape{1, 2, 2});
  CHECK(out.values() == in.values());
}

TEST_CASE("conv2d all-ones 3x3") {
  const Tensor out = conv2d(Tensor::full({1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0),
                            Tensor::zeros({1}), 1, 0);
  CHECK(out.shape() == Shape{1, 1, 1});
  CHECK(out.item() == 9.0);
}

TEST_CASE("conv2d shape rules") {
  const Tensor w = Tensor::zeros({4, 2, 3, 3});
  const Tensor b = Tensor::zeros({4});
  CHECK(conv2d(Tensor::zeros({2, 8, 8}), w, b, 2, 1).shape() == Shape{4, 4, 4});
  CHECK(conv2d(Tensor::zeros({5, 2, 8, 8}), w, b, 1, 1).shape() == Shape{5, 4, 8, 8});
  CHECK_THROWS_AS(conv2d(Tensor::zeros({3, 8, 8}), w, b, 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 8, 8}), Tensor::zeros({4, 2, 2, 2}), b, 1, 0),
                  DimensionError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({2, 1, 1}), w, b, 1, 0), DimensionError);
}

TEST_CASE("conv2d matches a direct loop") {
  const Tensor in = random_tensor({2, 3, 5, 6}, 4);
  const Tensor w = random_tensor({4, 3, 3, 3}, 5);
  const Tensor b = random_tensor({4}, 6);
  const Tensor out = conv2d(in, w, b, 2, 1);
  REQUIRE(out.shape() == Shape{2, 4, 3, 3});
  for (Index n = 0; n < 2; ++n) {
    for (Index o = 0; o < 4; ++o) {
      for (Index y = 0; y < 3; ++y) {
        for (Index x = 0; x < 3; ++x) {
          double acc = b[o];
          for (Index c = 0; c < 3; ++c) {
            for (Index ky = 0; ky < 3; ++ky) {
              for (Index kx = 0; kx < 3; ++kx) {
                const Index iy = y * 2 - 1 + ky, ix = x * 2 - 1 + kx;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                acc += w[((o * 3 + c) * 3 + ky) * 3 + kx] * in[((n * 3 + c) * 5 + iy) * 6 + ix];
              }
            }
          }
          CHECK(out[((n * 4 + o) * 3 + y) * 3 + x] == doctest::Approx(acc).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("relu values and subgradient") {
  const Tensor x = Tensor::from({3}, {-1, 0, 2}, true);
  const Tensor y = relu(x);
  CHECK(y.values() == Vector{{0.0, 0.0, 2.0}});
  sum(y).backward();
  CHECK(x.grad() == Vector{{0.0, 0.0, 1.0}});
  const Tensor x2 = Tensor::from({2}, {-1, 2}, true);
  sum(relu(x2)).backward();
  CHECK(x2.grad() == Vector{{0.0, 1.0}});
}

TEST_CASE("masked average pool") {
  const Tensor f = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  const auto r = masked_average_pool(f, Tensor::from({2, 2}, {1, 0, 0, 1}));
  CHECK(r.present);
  CHECK(r.value.item() == 2.5);
  const auto full = masked_average_pool(f, Tensor::full({2, 2}, 1.0));
  CHECK(full.value.item() == doctest::Approx(2.5).epsilon(1e-12));
  const auto empty = masked_average_pool(f, Tensor::zeros({2, 2}));
  CHECK_FALSE(empty.present);
  CHECK(empty.value.values().isZero());
  CHECK_THROWS_AS(masked_average_pool(f, Tensor::full({2, 2}, 0.5)), ValidationError);
  const auto area = masked_average_pool(f, Tensor::from({2, 2}, {1, 0, 0, 1}), PoolMode::full_area);
  CHECK(area.value.item() == 1.25);
}

TEST_CASE("masked average pool with full mask equals the spatial mean") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor f = random_tensor({3, 4, 5}, seed);
    const auto r = masked_average_pool(f, Tensor::full({4, 5}, 1.0));
    for (Index c = 0; c < 3; ++c) {
      const double m = f.values().segment(c * 20, 20).mean();
      CHECK(std::abs(r.value[c] - m) <= 1e-12);
    }
  }
}

TEST_CASE("cosine similarity") {
  auto cs = [](std::initializer_list<double> a, std::initializer_list<double> b) {
    return cosine_similarity(Tensor::from({2}, a), Tensor::from({2}, b)).item();
  };
  CHECK(cs({1, 0}, {1, 0}) == 1.0);
  CHECK(cs({1, 0}, {0, 1}) == 0.0);
  CHECK(cs({1, 1}, {1, 0}) == doctest::Approx(0.7071).epsilon(1e-6 / 0.7071 + 1e-5));
  CHECK(std::abs(cs({1, 1}, {1, 0}) - 0.7071067811865476) <= 1e-6);
  CHECK(cs({0, 0}, {1, 0}) == 0.0);
}

TEST_CASE("cosine similarity properties") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor a = random_tensor({5}, seed);
    const Tensor b = random_tensor({5}, seed + 100);
    CHECK(std::abs(cosine_similarity(a, a).item() - 1.0) <= 1e-9);
    CHECK(std::abs(cosine_similarity(a, b).item()) <= 1.0 + 1e-9);
  }
}

TEST_CASE("channel cosine agrees with per-pixel cosine") {
  const Tensor f = random_tensor({2, 3, 2, 2}, 7);
  const Tensor anchors = random_tensor({4, 3}, 8);
  const Tensor s = channel_cosine(f, anchors);
  REQUIRE(s.shape() == Shape{2, 4, 2, 2});
  for (Index n = 0; n < 2; ++n) {
    for (Index p = 0; p < 4; ++p) {
      for (Index i = 0; i < 4; ++i) {
        Vector px(3);
        for (Index c = 0; c < 3; ++c) px[c] = f[(n * 3 + c) * 4 + i];
        const double ref = cosine_similarity(Tensor::from({3}, px),
                                             Tensor::from({3}, anchors.values().segment(p * 3, 3)))
                               .item();
        CHECK(s[(n * 4 + p) * 4 + i] == doctest::Approx(ref).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("softmax with temperature") {
  const Tensor a = softmax_temperature(Tensor::from({2}, {0, 0}), 0.37, 0);
  CHECK(a[0] == 0.5);
  CHECK(a[1] == 0.5);
  const Tensor b = softmax_temperature(Tensor::from({2}, {1, 0}), 0.1, 0);
  CHECK(std::abs(b[0] - 0.9999546) <= 1e-7);
  CHECK(std::abs(b[1] - 0.0000454) <= 1e-7);
  CHECK(softmax_temperature(Tensor::from({1}, {3}), 1.0, 0).item() == 1.0);
  CHECK_THROWS_AS(softmax_temperature(a, 0.0, 0), ParameterError);
  CHECK_THROWS_AS(softmax_temperature(a, -1.0, 0), ParameterError);
}

TEST_CASE("softmax slices sum to one, even for tiny temperatures") {
  for (double tau : {0.01, 0.1, 1.0, 5.0}) {
    for (Index axis = 0; axis < 3; ++axis) {
      const Tensor x = random_tensor({3, 4, 5}, static_cast<std::uint64_t>(axis) + 11, false, 3.0);
      const Tensor s = softmax_temperature(x, tau, axis);
      CHECK(s.values().allFinite());
      const Index n = x.extent(axis);
      const Index inner = axis == 2 ? 1 : (axis == 1 ? 5 : 20);
      const Index outer = 60 / (n * inner);
      for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
          double total = 0;
          for (Index j = 0; j < n; ++j) total += s[(o * n + j) * inner + i];
          CHECK(std::abs(total - 1.0) <= 1e-9);
        }
      }
    }
  }
}

TEST_CASE("kl divergence examples") {
  const Tensor p = softmax_temperature(Tensor::from({2}, {1, 0}), 0.1, 0);
  const Tensor q = softmax_temperature(Tensor::from({2}, {0, 1}), 0.1, 0);
  CHECK(std::abs(kl_divergence(p, q, 0).item() - 9.9995) <= 1e-3);
  CHECK(std::abs(kl_divergence(Tensor::from({2}, {1, 0}), Tensor::from({2}, {0.5, 0.5}), 0).item() -
                 std::log(2.0)) <= 1e-4);
  CHECK(kl_divergence(p, p, 0).item() == 0.0);
  CHECK_THROWS_AS(kl_divergence(Tensor::from({2}, {0.7, 0.7}), p, 0), ValidationError);
  CHECK_THROWS_AS(kl_divergence(Tensor::from({2}, {1.2, -0.2}), p, 0), ValidationError);
  CHECK_THROWS_AS(kl_divergence(p, Tensor::from({3}, {0.2, 0.2, 0.6}), 0), DimensionError);
}

TEST_CASE("kl divergence properties") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Tensor p = softmax_temperature(random_tensor({3, 6}, seed, false, 2.0), 0.5, 1);
    const Tensor q = softmax_temperature(random_tensor({3, 6}, seed + 500, false, 2.0), 0.5, 1);
    CHECK(std::abs(kl_divergence(p, p, 1).item()) <= 1e-9);
    CHECK(kl_divergence(p, q, 1).item() >= -1e-9);
  }
}

TEST_CASE("focal loss matches its closed form") {
  const Tensor logits = Tensor::from({3}, {2.0, -1.0, 0.3});
  const Tensor targets = Tensor::from({3}, {1.0, 0.0, 1.0});
  double expect = 0;
  for (int i = 0; i < 3; ++i) {
    const double p = 1.0 / (1.0 + std::exp(-logits[i]));
    expect += targets[i] == 1.0 ? -0.25 * std::pow(1 - p, 2) * std::log(p)
                                : -0.75 * std::pow(p, 2) * std::log(1 - p);
  }
  CHECK(sigmoid_focal_loss(logits, targets, 0.25, 2.0).item() ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("finite difference checker on exact cases") {
  const Tensor x = random_tensor({2, 3}, 21, true);
  CHECK(finite_difference_check([](const Tensor& t) { return sum(t); }, x) < 1e-10);
  const Tensor y = Tensor::from({3}, {1, 2, 3}, true);
  CHECK(finite_difference_check([](const Tensor& t) { return sum(t * t); }, y) < 1e-8);
  CHECK_THROWS_AS(finite_difference_check([](const Tensor& t) { return sum(t); }, y, 0.0),
                  ParameterError);
  CHECK_THROWS_AS(finite_difference_check([](const Tensor& t) { return sum(t); }, y, 0.1),
                  ParameterError);
}

TEST_CASE("gradients of every differentiable op match finite differences") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    CAPTURE(seed);
    const Tensor a = random_tensor({2, 3}, seed, true);
    const Tensor b = random_tensor({2, 3}, seed + 10, true);
    const Tensor away = ad::test::away_from_zero({2, 3}, seed + 20, true);
    std::vector<Tensor> ab{a, b};
    CHECK(finite_difference_check([&] { return sum(add(a, b) * sub(a, b)); }, ab) < 1e-4);
    CHECK(finite_difference_check([&] { return mean(scale(mul(a, b), 1.7)); }, ab) < 1e-4);
    CHECK(finite_difference_check([](const Tensor& t) { return sum(add_scalar(t, 0.3) * t); }, a) <
          1e-4);
    CHECK(finite_difference_check([](const Tensor& t) { return sum(relu(t) * t); }, away) < 1e-4);
    CHECK(finite_difference_check([](const Tensor& t) { return sum(softplus(t) * t); }, a) < 1e-4);
    CHECK(finite_difference_check([](const Tensor& t) { return sum(reshape(t, {3, 2}) * reshape(t, {3, 2})); }, a) <
          1e-4);

    const Tensor in = random_tensor({2, 2, 5, 5}, seed + 30, true);
    const Tensor w = random_tensor({3, 2, 3, 3}, seed + 31, true);
    const Tensor bias = random_tensor({3}, seed + 32, true);
    const Tensor probe = random_tensor({2, 3, 3, 3}, seed + 33);
    std::vector<Tensor> conv_leaves{in, w, bias};
    CHECK(finite_difference_check([&] { return sum(conv2d(in, w, bias, 2, 1) * probe); },
                                  conv_leaves) < 1e-4);

    const Tensor feat = random_tensor({2, 3, 3}, seed + 40, true);
    const Tensor mask = Tensor::from({3, 3}, {1, 0, 1, 0, 1, 1, 0, 0, 1});
    const Tensor pool_probe = Tensor::from({2}, {0.7, -1.3});
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return sum(masked_average_pool(t, mask).value * pool_probe); },
              feat) < 1e-4);

    const Tensor u = random_tensor({4}, seed + 50, true);
    const Tensor v = random_tensor({4}, seed + 51, true);
    std::vector<Tensor> uv{u, v};
    CHECK(finite_difference_check([&] { return cosine_similarity(u, v); }, uv) < 1e-4);
    const Tensor parts_a = random_tensor({3}, seed + 52, true);
    std::vector<Tensor> pieces{u, v};
    CHECK(finite_difference_check(
              [&] {
                const std::vector<Tensor> s{u, v};
                return sum(stack(s) * stack(s));
              },
              pieces) < 1e-4);

    const Tensor fmap = random_tensor({2, 3, 2, 3}, seed + 60, true);
    const Tensor anchors = random_tensor({4, 3}, seed + 61, true);
    const Tensor probe2 = random_tensor({2, 4, 2, 3}, seed + 62);
    std::vector<Tensor> ca{fmap, anchors};
    CHECK(finite_difference_check([&] { return sum(channel_cosine(fmap, anchors) * probe2); }, ca) <
          1e-4);

    const Tensor logits = random_tensor({2, 4, 3}, seed + 70, true);
    const Tensor probe3 = random_tensor({2, 4, 3}, seed + 71);
    for (Index axis = 0; axis < 3; ++axis) {
      CHECK(finite_difference_check(
                [&](const Tensor& t) { return sum(softmax_temperature(t, 0.5, axis) * probe3); },
                logits) < 1e-4);
    }
    const Tensor lp = random_tensor({3, 4}, seed + 80, true);
    const Tensor lq = random_tensor({3, 4}, seed + 81, true);
    std::vector<Tensor> pq{lp, lq};
    CHECK(finite_difference_check(
              [&] {
                return kl_divergence(softmax_temperature(lp, 0.7, 1),
                                     softmax_temperature(lq, 0.7, 1), 1);
              },
              pq) < 1e-4);

    const Tensor fl = random_tensor({6}, seed + 90, true);
    const Tensor tgt = Tensor::from({6}, {1, 0, 0, 1, 0, 0});
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return sigmoid_focal_loss(t, tgt, 0.25, 2.0); }, fl) < 1e-4);
    const Tensor pred = ad::test::away_from_zero({5}, seed + 91, true);
    const Tensor l1w = Tensor::from({5}, {0.25, 0.25, 0, 0.25, 1});
    CHECK(finite_difference_check(
              [&](const Tensor& t) { return weighted_l1(t, Tensor::zeros({5}), l1w); }, pred) <
          1e-4);
    (void)parts_a;
  }
}

TEST_CASE("composite conv, relu, softmax and kl chain") {
  const Tensor img = random_tensor({1, 2, 6, 6}, 99, true);
  const Tensor w = random_tensor({3, 2, 3, 3}, 98, true);
  const Tensor b = Tensor::full({3}, 0.3, true);
  const Tensor target = softmax_temperature(random_tensor({1, 3, 36}, 97), 1.0, 2);
  std::vector<Tensor> leaves{img, w, b};
  const double err = finite_difference_check(
      [&] {
        const Tensor f = reshape(relu(conv2d(img, w, b, 1, 1)), {1, 3, 36});
        return kl_divergence(softmax_temperature(f, 0.5, 2), target, 2);
      },
      leaves);
  CHECK(err < 1e-4);
}

TEST_CASE("counter rng is order independent and in range") {
  CounterRng a(stream_key({1, 2, 3}));
  CounterRng b(stream_key({1, 2, 3}));
  CHECK(a.next() == b.next());
  CHECK(stream_key({1, 2}) != stream_key({2, 1}));
  CounterRng r(5);
  double mean = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto k = r.uniform_int(-2, 3);
    CHECK(k >= -2);
    CHECK(k <= 3);
    const double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    mean += r.normal();
  }
  CHECK(std::abs(mean / 10000) < 0.05);
}
