#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "skewprune/errors.hpp"
#include "skewprune/graph.hpp"
#include "skewprune/ops.hpp"
#include "skewprune/optim.hpp"
#include "skewprune/rng.hpp"
#include "skewprune/windowing.hpp"

using namespace skewprune;
using testutil::grad_check;
using testutil::random_tensor;

namespace {

Tensor eval_unary(Var (*op)(Var), const Tensor& in) {
  Graph g;
  g.set_grad_enabled(false);
  return g.value(op(g.leaf(in, false)));
}

}  // namespace

TEST_SUITE("ops.forward") {
  TEST_CASE("matmul identity and dot product") {
    Graph g;
    Var a = g.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}), false);
    Var identity = g.leaf(Tensor::from({2, 2}, {1, 0, 0, 1}), false);
    CHECK(g.value(ops::matmul(a, identity)).data == std::vector<float>{1, 2, 3, 4});

    Var row = g.leaf(Tensor::from({1, 2}, {1, 2}), false);
    Var col = g.leaf(Tensor::from({2, 1}, {3, 4}), false);
    CHECK(g.value(ops::matmul(row, col)).data == std::vector<float>{11});
  }

  TEST_CASE("matmul names both shapes on mismatch") {
    Graph g;
    Var a = g.leaf(Tensor::zeros({2, 3}), false);
    Var b = g.leaf(Tensor::zeros({2, 3}), false);
    try {
      ops::matmul(a, b);
      FAIL("expected DimensionError");
    } catch (const DimensionError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
    }
  }

  TEST_CASE("layer_norm collapses constant rows to beta") {
    Graph g;
    Var x = g.leaf(Tensor::from({1, 3}, {1, 1, 1}), false);
    Var gamma = g.leaf(Tensor::from({3}, {1, 1, 1}), false);
    Var beta = g.leaf(Tensor::from({3}, {0, 0, 0}), false);
    const Tensor& out = g.value(ops::layer_norm(x, gamma, beta, 1e-5));
    for (const float v : out.data) CHECK(v == doctest::Approx(0.0).epsilon(1e-6));
  }

  TEST_CASE("layer_norm exact two-point case, eps=0") {
    Graph g;
    Var x = g.leaf(Tensor::from({1, 2}, {0, 2}), false);
    Var gamma = g.leaf(Tensor::from({2}, {1, 1}), false);
    Var beta = g.leaf(Tensor::from({2}, {0, 0}), false);
    const Tensor& out = g.value(ops::layer_norm(x, gamma, beta, 0.0));
    CHECK(out.data[0] == doctest::Approx(-1.0));
    CHECK(out.data[1] == doctest::Approx(1.0));
  }

  TEST_CASE("layer_norm matches direct evaluation") {
    Graph g;
    Var x = g.leaf(Tensor::from({1, 3}, {1, 2, 3}), false);
    Var gamma = g.leaf(Tensor::from({3}, {2, 2, 2}), false);
    Var beta = g.leaf(Tensor::from({3}, {1, 1, 1}), false);
    const Tensor& out = g.value(ops::layer_norm(x, gamma, beta, 1e-5));
    // mean 2, population var 2/3: hat = (x-2)/sqrt(2/3 + 1e-5)
    const double inv = 1.0 / std::sqrt(2.0 / 3.0 + 1e-5);
    CHECK(out.data[0] == doctest::Approx(-inv * 2 + 1).epsilon(1e-4));
    CHECK(out.data[1] == doctest::Approx(1.0).epsilon(1e-4));
    CHECK(out.data[2] == doctest::Approx(inv * 2 + 1).epsilon(1e-4));
  }

  TEST_CASE("gelu fixed points") {
    Tensor out = eval_unary(ops::gelu, Tensor::from({3}, {0.0f, 10.0f, 1.0f}));
    CHECK(out.data[0] == 0.0f);
    CHECK(out.data[1] == doctest::Approx(10.0).epsilon(1e-5));
    CHECK(out.data[2] == doctest::Approx(0.841345).epsilon(1e-4));
  }

  TEST_CASE("softmax uniform, stability, closed form") {
    Tensor a = eval_unary(ops::softmax, Tensor::from({1, 2}, {0, 0}));
    CHECK(a.data[0] == doctest::Approx(0.5));
    Tensor b = eval_unary(ops::softmax, Tensor::from({1, 2}, {1000, 1000}));
    CHECK(b.data[0] == doctest::Approx(0.5));
    CHECK(b.all_finite());
    Tensor c = eval_unary(ops::softmax, Tensor::from({1, 2}, {0.0f, std::log(3.0f)}));
    CHECK(c.data[0] == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(c.data[1] == doctest::Approx(0.75).epsilon(1e-6));
  }

  TEST_CASE("softmax rows sum to one on random input") {
    Rng rng(21);
    Graph g;
    Var x = g.leaf(random_tensor({7, 9}, rng, 3.0), false);
    const Tensor& p = g.value(ops::softmax(x));
    for (int64_t r = 0; r < 7; ++r) {
      double s = 0.0;
      for (int64_t c = 0; c < 9; ++c) {
        const float v = p.at(r, c);
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
        s += v;
      }
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  TEST_CASE("cross_entropy fixed values") {
    Graph g;
    Var sure = g.leaf(Tensor::from({1, 3}, {100, 0, 0}), false);
    CHECK(g.value(ops::cross_entropy(sure, {0})).data[0] == doctest::Approx(0.0).epsilon(1e-6));

    Var uniform = g.leaf(Tensor::zeros({2, 7}), false);
    CHECK(g.value(ops::cross_entropy(uniform, {3, 6})).data[0] ==
          doctest::Approx(std::log(7.0)).epsilon(1e-6));

    Var two = g.leaf(Tensor::from({1, 2}, {0.0f, std::log(3.0f)}), false);
    CHECK(g.value(ops::cross_entropy(two, {0})).data[0] ==
          doctest::Approx(std::log(4.0)).epsilon(1e-6));
  }

  TEST_CASE("cross_entropy validates labels and weights") {
    Graph g;
    Var l = g.leaf(Tensor::zeros({2, 3}), false);
    CHECK_THROWS_AS(ops::cross_entropy(l, {0, 3}), IndexError);
    CHECK_THROWS_AS(ops::cross_entropy(l, {0}), ArgumentError);
    std::vector<float> bad_w{1, 1};
    CHECK_THROWS_AS(ops::cross_entropy(l, {0, 1}, &bad_w), DimensionError);
    std::vector<float> zero_w{0, 0, 0};
    CHECK_THROWS_AS(ops::cross_entropy(l, {0, 1}, &zero_w), ArgumentError);
  }

  TEST_CASE("cross_entropy class weights form a weighted mean") {
    Graph g;
    Var l = g.leaf(Tensor::from({2, 2}, {0, 0, 0, 0}), false);
    std::vector<float> w{3, 1};
    // both rows cost ln 2; any weighting still averages to ln 2
    CHECK(g.value(ops::cross_entropy(l, {0, 1}, &w)).data[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
    // now make row costs differ: row0 (label 0) is certain, row1 (label 1) costs ln 2
    Var m = g.leaf(Tensor::from({2, 2}, {50, 0, 0, 0}), false);
    const double expect = (3.0 * 0.0 + 1.0 * std::log(2.0)) / 4.0;
    CHECK(g.value(ops::cross_entropy(m, {0, 1}, &w)).data[0] ==
          doctest::Approx(expect).epsilon(1e-6));
  }

  TEST_CASE("permute_rows gathers and validates") {
    Graph g;
    Var x = g.leaf(Tensor::from({3, 2}, {0, 1, 10, 11, 20, 21}), false);
    const Tensor& out = g.value(ops::permute_rows(x, {2, 0, 1}));
    CHECK(out.data == std::vector<float>{20, 21, 0, 1, 10, 11});
    CHECK_THROWS_AS(ops::permute_rows(x, {0, 1}), DimensionError);
    CHECK_THROWS_AS(ops::permute_rows(x, {0, 1, 3}), IndexError);
  }

  TEST_CASE("reshape keeps data") {
    Graph g;
    Var x = g.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}), false);
    const Tensor& out = g.value(ops::reshape(x, {4}));
    CHECK(out.shape == std::vector<int64_t>{4});
    CHECK(out.data == std::vector<float>{1, 2, 3, 4});
    CHECK_THROWS_AS(ops::reshape(x, {3}), DimensionError);
  }

  TEST_CASE("mean_pool_rows averages row groups") {
    Graph g;
    Var x = g.leaf(Tensor::from({4, 2}, {1, 2, 3, 4, 10, 20, 30, 40}), false);
    const Tensor& out = g.value(ops::mean_pool_rows(x, 2));
    CHECK(out.shape == std::vector<int64_t>{2, 2});
    CHECK(out.data == std::vector<float>{2, 3, 20, 30});
    CHECK_THROWS_AS(ops::mean_pool_rows(x, 3), DimensionError);
  }

  TEST_CASE("embedding_lookup selects rows and checks bounds") {
    Graph g;
    Var t = g.leaf(Tensor::from({3, 2}, {0, 1, 10, 11, 20, 21}), false);
    const Tensor& out = g.value(ops::embedding_lookup(t, {2, 2, 0}));
    CHECK(out.data == std::vector<float>{20, 21, 20, 21, 0, 1});
    CHECK_THROWS_AS(ops::embedding_lookup(t, {3}), IndexError);
  }

  TEST_CASE("forward purity: identical inputs give identical bits") {
    Rng rng(31);
    Tensor x = random_tensor({6, 5}, rng, 1.0);
    Tensor a = eval_unary(ops::gelu, x);
    Tensor b = eval_unary(ops::gelu, x);
    CHECK(a.data == b.data);
  }
}

TEST_SUITE("ops.window_msa") {
  TEST_CASE("two tokens, score gap ln 3 gives weights 1/4, 3/4") {
    // One window, one head, identity projections, no relative bias. Token 0's
    // scores against keys 0 and 1 differ by ln 3 after 1/sqrt(D) scaling.
    const double gap = std::log(3.0);
    Graph g;
    const float k1 = static_cast<float>(1.0 + std::sqrt(2.0) * gap);
    Var x = g.leaf(Tensor::from({2, 2}, {1, 0, k1, 1}), false);
    Var eye = g.leaf(Tensor::from({2, 2}, {1, 0, 0, 1}), false);
    Var zero = g.leaf(Tensor::zeros({2}), false);
    Var out = ops::window_msa(x, eye, zero, eye, zero, eye, zero, Var{}, {}, 2, 1);
    // row 0 = 0.25·v0 + 0.75·v1 with v = x rows
    const Tensor& o = g.value(out);
    CHECK(o.at(0, 0) == doctest::Approx(0.25 * 1.0 + 0.75 * k1).epsilon(1e-5));
    CHECK(o.at(0, 1) == doctest::Approx(0.75).epsilon(1e-5));
  }

  TEST_CASE("matches an unfused reference on random inputs") {
    Rng rng(41);
    const int64_t nw = 3, t = 4, e = 5, h = 2, d = 3;
    Tensor x = random_tensor({nw * t, e}, rng, 1.0);
    Tensor wq = random_tensor({e, h * d}, rng, 0.5);
    Tensor wk = random_tensor({e, h * d}, rng, 0.5);
    Tensor wv = random_tensor({e, h * d}, rng, 0.5);
    Tensor bq = random_tensor({h * d}, rng, 0.5);
    Tensor bk = random_tensor({h * d}, rng, 0.5);
    Tensor bv = random_tensor({h * d}, rng, 0.5);
    Tensor rb = random_tensor({9, h}, rng, 0.5);
    std::vector<int64_t> ridx;
    for (int64_t i = 0; i < t * t; ++i) ridx.push_back((i * 5 + 2) % 9);

    Graph g;
    g.set_grad_enabled(false);
    Var out = ops::window_msa(g.leaf(x, false), g.leaf(wq, false), g.leaf(bq, false),
                              g.leaf(wk, false), g.leaf(bk, false), g.leaf(wv, false),
                              g.leaf(bv, false), g.leaf(rb, false), ridx, t, h);
    const Tensor& fused = g.value(out);

    // Brute-force reference in double precision.
    auto proj = [&](const Tensor& w, const Tensor& b, int64_t row, int64_t col) {
      double s = b.data[static_cast<size_t>(col)];
      for (int64_t i = 0; i < e; ++i) s += static_cast<double>(x.at(row, i)) * w.at(i, col);
      return s;
    };
    for (int64_t n = 0; n < nw; ++n) {
      for (int64_t hh = 0; hh < h; ++hh) {
        for (int64_t i = 0; i < t; ++i) {
          std::vector<double> scores(static_cast<size_t>(t));
          for (int64_t j = 0; j < t; ++j) {
            double s = 0.0;
            for (int64_t dd = 0; dd < d; ++dd) {
              s += proj(wq, bq, n * t + i, hh * d + dd) * proj(wk, bk, n * t + j, hh * d + dd);
            }
            scores[static_cast<size_t>(j)] =
                s / std::sqrt(static_cast<double>(d)) +
                rb.at(ridx[static_cast<size_t>(i * t + j)], hh);
          }
          double mx = scores[0];
          for (double v : scores) mx = std::max(mx, v);
          double denom = 0.0;
          for (double v : scores) denom += std::exp(v - mx);
          for (int64_t dd = 0; dd < d; ++dd) {
            double o = 0.0;
            for (int64_t j = 0; j < t; ++j) {
              o += std::exp(scores[static_cast<size_t>(j)] - mx) / denom *
                   proj(wv, bv, n * t + j, hh * d + dd);
            }
            CHECK(fused.at(n * t + i, hh * d + dd) == doctest::Approx(o).epsilon(2e-4));
          }
        }
      }
    }
  }

  TEST_CASE("validates its geometry") {
    Graph g;
    Var x = g.leaf(Tensor::zeros({5, 4}), false);
    Var w = g.leaf(Tensor::zeros({4, 6}), false);
    Var b = g.leaf(Tensor::zeros({6}), false);
    // 5 rows don't divide into windows of 2
    CHECK_THROWS_AS(ops::window_msa(x, w, b, w, b, w, b, Var{}, {}, 2, 2), DimensionError);
    // projection width 6 not divisible by 4 heads
    Var x4 = g.leaf(Tensor::zeros({4, 4}), false);
    CHECK_THROWS_AS(ops::window_msa(x4, w, b, w, b, w, b, Var{}, {}, 2, 4), DimensionError);
  }
}

TEST_SUITE("ops.gradients") {
  TEST_CASE("matmul gradient of summed product is exact") {
    Graph g;
    Var a = g.leaf(Tensor::from({2, 2}, {1, 2, 3, 4}), true);
    Var b = g.leaf(Tensor::from({2, 2}, {1, 1, 1, 1}), true);
    Var loss = ops::sum_all(ops::matmul(a, b));
    g.backward(loss);
    CHECK(g.grad(a).data == std::vector<float>{2, 2, 2, 2});
  }

  TEST_CASE("finite differences across all primitives") {
    Rng rng(55);
    auto fd = [&](const char* name, auto&& build, std::vector<Tensor> inputs) {
      auto r = grad_check(build, std::move(inputs), rng.next_u64());
      INFO(name << ": " << r.detail);
      CHECK(r.ok);
    };

    fd("matmul",
       [](Graph& g, const std::vector<Var>& v) { return ops::matmul(v[0], v[1]); },
       {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)});
    fd("add", [](Graph& g, const std::vector<Var>& v) { return ops::add(v[0], v[1]); },
       {random_tensor({3, 3}, rng), random_tensor({3, 3}, rng)});
    fd("add_row_bias",
       [](Graph& g, const std::vector<Var>& v) { return ops::add_row_bias(v[0], v[1]); },
       {random_tensor({4, 3}, rng), random_tensor({3}, rng)});
    fd("scale", [](Graph& g, const std::vector<Var>& v) { return ops::scale(v[0], -1.7); },
       {random_tensor({3, 4}, rng)});
    fd("permute_rows",
       [](Graph& g, const std::vector<Var>& v) {
         return ops::permute_rows(v[0], {3, 0, 2, 1});
       },
       {random_tensor({4, 3}, rng)});
    fd("reshape",
       [](Graph& g, const std::vector<Var>& v) { return ops::reshape(v[0], {2, 6}); },
       {random_tensor({4, 3}, rng)});
    fd("layer_norm",
       [](Graph& g, const std::vector<Var>& v) {
         return ops::layer_norm(v[0], v[1], v[2], 1e-5);
       },
       {random_tensor({4, 6}, rng, 0.5), random_tensor({6}, rng, 1.0),
        random_tensor({6}, rng, 1.0)});
    fd("gelu", [](Graph& g, const std::vector<Var>& v) { return ops::gelu(v[0]); },
       {random_tensor({5, 3}, rng, 1.0)});
    fd("softmax", [](Graph& g, const std::vector<Var>& v) { return ops::softmax(v[0]); },
       {random_tensor({4, 5}, rng, 1.0)});
    fd("mean_pool_rows",
       [](Graph& g, const std::vector<Var>& v) { return ops::mean_pool_rows(v[0], 3); },
       {random_tensor({6, 4}, rng)});
    fd("embedding_lookup",
       [](Graph& g, const std::vector<Var>& v) {
         return ops::embedding_lookup(v[0], {1, 0, 2, 1});
       },
       {random_tensor({3, 4}, rng)});
    fd("cross_entropy",
       [](Graph& g, const std::vector<Var>& v) {
         return ops::cross_entropy(v[0], {0, 2, 1});
       },
       {random_tensor({3, 4}, rng, 1.0)});
    std::vector<float> cw{0.5f, 2.0f, 1.0f, 0.25f};
    fd("cross_entropy_weighted",
       [cw](Graph& g, const std::vector<Var>& v) {
         return ops::cross_entropy(v[0], {3, 1, 0}, &cw);
       },
       {random_tensor({3, 4}, rng, 1.0)});
    std::vector<int64_t> ridx = windowing::relative_position_index(2);
    fd("window_msa",
       [ridx](Graph& g, const std::vector<Var>& v) {
         return ops::window_msa(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], ridx, 4, 2);
       },
       {random_tensor({8, 3}, rng, 0.5), random_tensor({3, 4}, rng, 0.5),
        random_tensor({4}, rng, 0.5), random_tensor({3, 4}, rng, 0.5),
        random_tensor({4}, rng, 0.5), random_tensor({3, 4}, rng, 0.5),
        random_tensor({4}, rng, 0.5), random_tensor({9, 2}, rng, 0.5)});
    fd("window_msa_no_bias",
       [](Graph& g, const std::vector<Var>& v) {
         return ops::window_msa(v[0], v[1], v[2], v[1], v[2], v[1], v[2], Var{}, {}, 2, 1);
       },
       {random_tensor({4, 3}, rng, 0.5), random_tensor({3, 2}, rng, 0.5),
        random_tensor({2}, rng, 0.5)});
  }

  TEST_CASE("composed graph end to end") {
    Rng rng(77);
    auto build = [](Graph& g, const std::vector<Var>& v) {
      Var h = ops::gelu(ops::add_row_bias(ops::matmul(v[0], v[1]), v[2]));
      Var n = ops::layer_norm(h, v[3], v[4], 1e-5);
      return ops::softmax(n);
    };
    auto r = grad_check(build,
                        {random_tensor({3, 4}, rng, 0.5), random_tensor({4, 5}, rng, 0.5),
                         random_tensor({5}, rng, 0.5), random_tensor({5}, rng, 1.0),
                         random_tensor({5}, rng, 1.0)},
                        rng.next_u64());
    INFO(r.detail);
    CHECK(r.ok);
  }

  TEST_CASE("no gradients recorded when disabled") {
    Graph g;
    g.set_grad_enabled(false);
    Var a = g.leaf(Tensor::from({1, 1}, {2}), true);
    Var out = ops::scale(a, 3.0);
    CHECK(g.node_count() == 0);
    CHECK(!g.requires_grad(out));
  }
}

TEST_SUITE("ops.adam") {
  TEST_CASE("zero gradient leaves parameters unchanged") {
    Tensor p = Tensor::from({3}, {1, 2, 3});
    const Tensor before = p;
    AdamState st;
    adam_step(p, Tensor::zeros({3}), st, AdamConfig{});
    CHECK(p.data == before.data);
  }

  TEST_CASE("first step moves by about lr in the gradient sign") {
    AdamConfig cfg;
    cfg.lr = 0.01;
    for (float gmag : {1e-4f, 1.0f, 250.0f}) {
      Tensor p = Tensor::from({2}, {0.5f, -0.5f});
      Tensor g = Tensor::from({2}, {gmag, -gmag});
      AdamState st;
      adam_step(p, g, st, cfg);
      CHECK(p.data[0] == doctest::Approx(0.5 - cfg.lr).epsilon(1e-3));
      CHECK(p.data[1] == doctest::Approx(-0.5 + cfg.lr).epsilon(1e-3));
    }
  }

  TEST_CASE("bitwise deterministic") {
    Rng rng(90);
    Tensor p1 = random_tensor({8}, rng, 1.0);
    Tensor p2 = p1;
    Tensor g1 = random_tensor({8}, rng, 1.0);
    AdamState s1, s2;
    AdamConfig cfg;
    for (int i = 0; i < 5; ++i) {
      adam_step(p1, g1, s1, cfg);
      adam_step(p2, g1, s2, cfg);
    }
    CHECK(p1.data == p2.data);
  }

  TEST_CASE("shape mismatch is rejected") {
    Tensor p = Tensor::zeros({3});
    AdamState st;
    CHECK_THROWS_AS(adam_step(p, Tensor::zeros({4}), st, AdamConfig{}), DimensionError);
  }
}

TEST_SUITE("windowing") {
  TEST_CASE("4x4 grid with w=2 partitions row-major") {
    const auto perm = windowing::window_perm(4, 2, 0);
    // first window: rows 0,1,4,5 of the grid
    CHECK(perm[0] == 0);
    CHECK(perm[1] == 1);
    CHECK(perm[2] == 4);
    CHECK(perm[3] == 5);
    // second window: columns 2,3 of rows 0,1
    CHECK(perm[4] == 2);
    CHECK(perm[7] == 7);
    CHECK(perm.size() == 16);
  }

  TEST_CASE("partition then reverse is the identity, with and without shift") {
    for (int64_t shift : {0L, 2L}) {
      const auto perm = windowing::window_perm(8, 4, shift);
      const auto inv = windowing::inverse_perm(perm);
      for (size_t i = 0; i < perm.size(); ++i) {
        CHECK(inv[static_cast<size_t>(perm[i])] == static_cast<int64_t>(i));
      }
    }
  }

  TEST_CASE("shift moves the labeled grid cyclically") {
    // grid 4, w 2, shift 1: shifted-grid cell (0,0) holds source token (1,1)
    const auto perm = windowing::window_perm(4, 2, 1);
    CHECK(perm[0] == 5);  // (1,1) -> row 5
  }

  TEST_CASE("batch_perm offsets per image") {
    const auto p = windowing::batch_perm({1, 0}, 3);
    CHECK(p == std::vector<int64_t>{1, 0, 3, 2, 5, 4});
  }

  TEST_CASE("relative_position_index spans (2w-1)^2 buckets symmetrically") {
    const auto idx = windowing::relative_position_index(2);
    CHECK(idx.size() == 16);
    for (const int64_t v : idx) {
      CHECK(v >= 0);
      CHECK(v < 9);
    }
    // self-pairs share the centre bucket
    const int64_t centre = idx[0 * 4 + 0];
    for (int64_t i = 0; i < 4; ++i) CHECK(idx[static_cast<size_t>(i * 4 + i)] == centre);
    // opposite offsets land in mirrored buckets: idx(q,k) + idx(k,q) is constant
    for (int64_t q = 0; q < 4; ++q) {
      for (int64_t k = 0; k < 4; ++k) {
        CHECK(idx[static_cast<size_t>(q * 4 + k)] + idx[static_cast<size_t>(k * 4 + q)] == 8);
      }
    }
  }

  TEST_CASE("merge_perm groups 2x2 cells") {
    const auto p = windowing::merge_perm(4);
    CHECK(p[0] == 0);
    CHECK(p[1] == 1);
    CHECK(p[2] == 4);
    CHECK(p[3] == 5);
    CHECK(p[4] == 2);
    const auto inv = windowing::inverse_perm(p);  // must be bijective
    CHECK(inv.size() == 16);
  }

  TEST_CASE("geometry validation") {
    CHECK_THROWS_AS(windowing::window_perm(5, 2, 0), DimensionError);
    CHECK_THROWS_AS(windowing::window_perm(4, 2, 2), ArgumentError);
    CHECK_THROWS_AS(windowing::merge_perm(3), DimensionError);
    CHECK_THROWS_AS(windowing::inverse_perm({0, 0}), ArgumentError);
  }
}
