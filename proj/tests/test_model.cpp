#include <cmath>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "skewprune/errors.hpp"
#include "skewprune/graph.hpp"
#include "skewprune/model.hpp"
#include "skewprune/ops.hpp"
#include "skewprune/rng.hpp"

using namespace skewprune;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.depths = {2, 2};
  c.num_heads = {2, 4};
  c.window_size = 2;
  c.mlp_ratio = 2;
  c.num_classes = 5;
  c.seed = 7;
  return c;
}

Tensor random_images(int64_t b, int64_t s, Rng& rng) {
  Tensor t = Tensor::zeros({b, 3, s, s});
  for (auto& v : t.data) v = rng.uniform();
  return t;
}

std::vector<TabularInput> some_tab(int64_t b) {
  std::vector<TabularInput> tab;
  for (int64_t i = 0; i < b; ++i) tab.push_back({i % 3, (i * 5) % 22, (i * 7) % 16});
  return tab;
}

}  // namespace

TEST_SUITE("model.config") {
  TEST_CASE("derived sizes follow the stage doubling rule") {
    ModelConfig c = tiny_config();
    CHECK(c.num_stages() == 2);
    CHECK(c.stage_dim(0) == 8);
    CHECK(c.stage_dim(1) == 16);
    CHECK(c.head_dim(0) == 4);
    CHECK(c.head_dim(1) == 4);
    CHECK(c.grid_at(0) == 4);
    CHECK(c.grid_at(1) == 2);
    CHECK(c.final_dim() == 16);
    CHECK(c.tokens_per_window() == 4);
    CHECK(c.mlp_group_size(0) == 8);   // group count = mlp_ratio
    c.mlp_grouping = MlpGrouping::DimGroups;
    CHECK(c.mlp_group_size(0) == 2);   // group count = stage dim
  }

  TEST_CASE("validate rejects inconsistent shapes") {
    ModelConfig c = tiny_config();
    c.patch_size = 5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.num_heads = {3, 4};  // 8 % 3 != 0
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.window_size = 3;  // grid 4 % 3 != 0
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.depths = {2, 2, 2};  // num_heads has 2 entries
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.fusion_weights = {0.9, 0.05, 0.05, 0.05};
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.depths = {2, 2, 2};
    c.num_heads = {2, 4, 4};  // grid at stage 2 would be 1, window 2
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_NOTHROW(tiny_config().validate());
  }
}

TEST_SUITE("model.patchify") {
  TEST_CASE("patch rows hold channel-major patch pixels") {
    // 1 image, side 4, patch 2 -> 4 patches of 12 features.
    Tensor img = Tensor::zeros({1, 3, 4, 4});
    for (int64_t i = 0; i < img.numel(); ++i) img.data[static_cast<size_t>(i)] = static_cast<float>(i);
    Tensor p = patchify(img, 2);
    CHECK(p.shape == std::vector<int64_t>{4, 12});
    // First patch, channel 0 holds pixels (0,0),(0,1),(1,0),(1,1) = 0,1,4,5.
    CHECK(p.at(0, 0) == 0.0f);
    CHECK(p.at(0, 1) == 1.0f);
    CHECK(p.at(0, 2) == 4.0f);
    CHECK(p.at(0, 3) == 5.0f);
    // Channel 1 of the same patch starts at 16.
    CHECK(p.at(0, 4) == 16.0f);
    // Second patch (top-right), channel 0 first pixel = (0,2) = 2.
    CHECK(p.at(1, 0) == 2.0f);
    // Third patch (bottom-left), channel 0 first pixel = (2,0) = 8.
    CHECK(p.at(2, 0) == 8.0f);
    CHECK_THROWS_AS(patchify(Tensor::zeros({1, 1, 4, 4}), 2), DimensionError);
    CHECK_THROWS_AS(patchify(Tensor::zeros({1, 3, 4, 4}), 3), DimensionError);
  }
}

TEST_SUITE("model.init") {
  TEST_CASE("init is deterministic and seed-sensitive") {
    ModelConfig c = tiny_config();
    Model a = Model::init(c);
    Model b = Model::init(c);
    bool same = true;
    a.visit_params([&](const std::string& name, const Tensor& t, bool) {
      b.visit_params([&](const std::string& n2, const Tensor& t2, bool) {
        if (n2 == name && t.data != t2.data) same = false;
      });
    });
    CHECK(same);
    c.seed = 8;
    Model d = Model::init(c);
    bool all_equal = true;
    // Compare one weight tensor across seeds.
    CHECK(a.patch_weight.shape == d.patch_weight.shape);
    if (a.patch_weight.data == d.patch_weight.data) all_equal = false;
    CHECK(all_equal);
  }

  TEST_CASE("norm gains start at one, biases at zero, weights small") {
    Model m = Model::init(tiny_config());
    for (float v : m.stages[0].blocks[0].norm1_gamma.data) CHECK(v == 1.0f);
    for (float v : m.stages[0].blocks[0].norm1_beta.data) CHECK(v == 0.0f);
    for (float v : m.patch_bias.data) CHECK(v == 0.0f);
    for (float v : m.head_bias.data) CHECK(v == 0.0f);
    for (float v : m.patch_weight.data) CHECK(std::abs(v) <= 0.04f + 1e-6f);
    for (float v : m.sex_table.data) CHECK(std::abs(v) <= 0.04f + 1e-6f);
    bool any_nonzero = false;
    for (float v : m.head_weight.data) any_nonzero = any_nonzero || v != 0.0f;
    CHECK(any_nonzero);
  }

  TEST_CASE("parameter count matches a hand count") {
    ModelConfig c = tiny_config();
    Model m = Model::init(c);
    const int64_t e0 = 8, e1 = 16, span = 9;  // (2*2-1)^2
    auto block_params = [&](int64_t e, int64_t h, int64_t d) {
      const int64_t hd = h * d;
      return 4 * e                                 // two norms, gain+shift
             + 3 * (e * hd + hd) + hd * e + e      // qkv + output proj
             + span * h                            // positional bias table
             + e * (2 * e) + 2 * e + 2 * e * e + e;  // mlp at ratio 2
    };
    int64_t expect = (3 * 16) * e0 + e0;                   // patch embed
    expect += 2 * block_params(e0, 2, 4);                  // stage 0 blocks
    expect += 4 * e0 * 2 * e1 / 2 + 2 * e0;                // merge: [4e0 x 2e0] + bias
    expect += 2 * block_params(e1, 4, 4);                  // stage 1 blocks
    expect += 2 * e1;                                      // head norm
    expect += e1 * c.num_classes + c.num_classes;          // classifier
    expect += (3 + 22 + 16) * e1;                          // tabular tables
    CHECK(m.count_params() == expect);
    CHECK(m.memory_footprint_bytes() == 4 * expect);
  }

  TEST_CASE("a stage may have zero blocks") {
    ModelConfig c = tiny_config();
    c.depths = {0, 1};
    Model m = Model::init(c);
    CHECK(m.stages[0].blocks.empty());
    CHECK(m.stages[1].blocks.size() == 1);
    Rng rng(1);
    Tensor imgs = random_images(2, c.image_size, rng);
    Tensor logits = m.forward_logits(imgs, some_tab(2));
    CHECK(logits.shape == std::vector<int64_t>{2, c.num_classes});
  }
}

TEST_SUITE("model.forward") {
  TEST_CASE("logit shape and duplicate-row purity") {
    ModelConfig c = tiny_config();
    Model m = Model::init(c);
    Rng rng(3);
    Tensor one = random_images(1, c.image_size, rng);
    Tensor two = Tensor::zeros({2, 3, c.image_size, c.image_size});
    std::copy(one.data.begin(), one.data.end(), two.data.begin());
    std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.numel());
    std::vector<TabularInput> tab{{1, 4, 9}, {1, 4, 9}};
    Tensor logits = m.forward_logits(two, tab);
    CHECK(logits.shape == std::vector<int64_t>{2, c.num_classes});
    for (int64_t k = 0; k < c.num_classes; ++k) {
      CHECK(logits.at(0, k) == logits.at(1, k));  // bitwise: rows are independent
    }
    CHECK(logits.all_finite());
  }

  TEST_CASE("fusion weight (1,0,0,0) makes tabular inputs irrelevant") {
    ModelConfig c = tiny_config();
    c.fusion_weights = {1.0, 0.0, 0.0, 0.0};
    Model m = Model::init(c);
    Rng rng(4);
    Tensor img = random_images(1, c.image_size, rng);
    Tensor la = m.forward_logits(img, {{0, 0, 0}});
    Tensor lb = m.forward_logits(img, {{2, 21, 15}});
    CHECK(la.data == lb.data);
  }

  TEST_CASE("tabular branch shifts logits when weighted") {
    Model m = Model::init(tiny_config());
    Rng rng(5);
    Tensor img = random_images(1, 16, rng);
    Tensor la = m.forward_logits(img, {{0, 0, 0}});
    Tensor lb = m.forward_logits(img, {{2, 21, 15}});
    CHECK(la.data != lb.data);
  }

  TEST_CASE("batch size must match tabular rows") {
    Model m = Model::init(tiny_config());
    Rng rng(6);
    Tensor img = random_images(2, 16, rng);
    CHECK_THROWS_AS(m.forward_logits(img, some_tab(3)), DimensionError);
    CHECK_THROWS_AS(m.forward_logits(Tensor::zeros({1, 3, 8, 8}), some_tab(1)), DimensionError);
  }

  TEST_CASE("capture shapes follow window geometry") {
    ModelConfig c = tiny_config();
    Model m = Model::init(c);
    Rng rng(7);
    Tensor imgs = random_images(3, c.image_size, rng);
    auto caps = m.capture_activations(imgs, some_tab(3), {{0, 0}, {1, 1}});
    REQUIRE(caps.size() == 2);
    // Stage 0: grid 4, window 2 -> 4 windows per image, 3 images.
    const auto& c00 = caps.at(BlockId{0, 0});
    CHECK(c00.a.shape == std::vector<int64_t>{12, 4, 2, 4});
    CHECK(c00.z.shape == std::vector<int64_t>{12, 4, 16});
    // Stage 1: grid 2, window 2 -> 1 window per image.
    const auto& c11 = caps.at(BlockId{1, 1});
    CHECK(c11.a.shape == std::vector<int64_t>{3, 4, 4, 4});
    CHECK(c11.z.shape == std::vector<int64_t>{3, 4, 32});
    CHECK(c00.a.all_finite());
    CHECK(c00.z.all_finite());
  }

  TEST_CASE("captured attention matches the projected value rows") {
    // With one window the capture is just the pre-projection activation; check
    // it is consistent across two identical calls (pure capture path).
    ModelConfig c = tiny_config();
    c.depths = {1};
    c.num_heads = {2};
    Model m = Model::init(c);
    Rng rng(8);
    Tensor imgs = random_images(2, c.image_size, rng);
    auto a = m.capture_activations(imgs, some_tab(2), {{0, 0}});
    auto b = m.capture_activations(imgs, some_tab(2), {{0, 0}});
    CHECK(a.at(BlockId{0, 0}).a.data == b.at(BlockId{0, 0}).a.data);
    CHECK(a.at(BlockId{0, 0}).z.data == b.at(BlockId{0, 0}).z.data);
    // Capture must not change the logits themselves.
    Tensor with_cap;
    {
      Graph g;
      g.set_grad_enabled(false);
      auto f = m.build(g, imgs, some_tab(2), {{0, 0}});
      with_cap = g.value(f.logits);
    }
    Tensor without = m.forward_logits(imgs, some_tab(2));
    CHECK(with_cap.data == without.data);
  }
}

TEST_SUITE("model.identity_blocks") {
  TEST_CASE("identity attention branch reduces to norm plus residual") {
    ModelConfig c = tiny_config();
    c.depths = {1};
    c.num_heads = {2};
    c.use_shift = false;
    std::vector<std::vector<BlockPruneState>> st(1);
    BlockPruneState s;
    s.msa_is_identity = true;
    s.mlp_is_identity = true;
    st[0].push_back(s);
    Model m = Model::skeleton(c, st);
    // Fill the remaining tensors deterministically.
    Rng fill(11);
    m.visit_params([&](const std::string& name, Tensor& t, bool) {
      const bool gain = name.find("gamma") != std::string::npos;
      for (auto& v : t.data) v = gain ? 1.0f + 0.1f * fill.uniform() : 0.2f * fill.uniform();
    });
    Rng rng(12);
    Tensor imgs = random_images(1, c.image_size, rng);
    Tensor logits = m.forward_logits(imgs, some_tab(1));

    // Oracle: compute the same composition with plain ops.
    Graph g;
    g.set_grad_enabled(false);
    Tensor patches = patchify(imgs, c.patch_size);
    Var x = ops::add_row_bias(ops::matmul(g.leaf(patches, false), g.leaf(m.patch_weight, false)),
                              g.leaf(m.patch_bias, false));
    const Block& blk = m.stages[0].blocks[0];
    Var h1 = ops::layer_norm(x, g.leaf(blk.norm1_gamma, false), g.leaf(blk.norm1_beta, false),
                             c.layer_norm_eps);
    Var zhat = ops::add(h1, x);
    Var h2 = ops::layer_norm(zhat, g.leaf(blk.norm2_gamma, false), g.leaf(blk.norm2_beta, false),
                             c.layer_norm_eps);
    Var out = ops::add(h2, zhat);
    Var hn = ops::layer_norm(out, g.leaf(m.head_norm_gamma, false),
                             g.leaf(m.head_norm_beta, false), c.layer_norm_eps);
    Var fimg = ops::mean_pool_rows(hn, c.grid_at(0) * c.grid_at(0));
    auto tab = some_tab(1);
    Var es = ops::embedding_lookup(g.leaf(m.sex_table, false), {tab[0].sex_id});
    Var ea = ops::embedding_lookup(g.leaf(m.age_table, false), {tab[0].age_bucket_id});
    Var el = ops::embedding_lookup(g.leaf(m.loc_table, false), {tab[0].localization_id});
    Var fused = ops::add(ops::add(ops::scale(fimg, 0.85), ops::scale(es, 0.05)),
                         ops::add(ops::scale(ea, 0.05), ops::scale(el, 0.05)));
    Var ref = ops::add_row_bias(ops::matmul(fused, g.leaf(m.head_weight, false)),
                                g.leaf(m.head_bias, false));
    CHECK(logits.data == g.value(ref).data);
  }

  TEST_CASE("skeleton rejects inconsistent prune state") {
    ModelConfig c = tiny_config();
    c.depths = {1};
    c.num_heads = {2};
    std::vector<std::vector<BlockPruneState>> st(1);
    BlockPruneState s;
    s.kept_heads = {0};  // non-empty but flagged identity
    s.msa_is_identity = true;
    s.kept_channels = {0};
    st[0].push_back(s);
    CHECK_THROWS_AS(Model::skeleton(c, st), ConfigError);
    st[0][0].msa_is_identity = false;
    st[0][0].kept_heads = {1, 0};  // not ascending
    CHECK_THROWS_AS(Model::skeleton(c, st), ConfigError);
    st[0][0].kept_heads = {0, 5};  // out of range
    CHECK_THROWS_AS(Model::skeleton(c, st), ConfigError);
    st[0][0].kept_heads = {0};
    st[0][0].kept_channels = {0, 1};
    CHECK_NOTHROW(Model::skeleton(c, st));
    // Wrong number of block entries.
    std::vector<std::vector<BlockPruneState>> bad(1);
    CHECK_THROWS_AS(Model::skeleton(c, bad), ConfigError);
  }

  TEST_CASE("pruned skeleton has matching tensor shapes and counts") {
    ModelConfig c = tiny_config();
    c.depths = {1};
    c.num_heads = {4};
    std::vector<std::vector<BlockPruneState>> st(1);
    BlockPruneState s;
    s.kept_heads = {1, 3};
    s.kept_channels = {0, 2, 4};
    st[0].push_back(s);
    Model m = Model::skeleton(c, st);
    const Block& blk = m.stages[0].blocks[0];
    CHECK(blk.msa.w_q.shape == std::vector<int64_t>{8, 4});  // 2 heads x dim 2
    CHECK(blk.msa.w_o.shape == std::vector<int64_t>{4, 8});
    CHECK(blk.msa.rel_bias.shape == std::vector<int64_t>{9, 2});
    CHECK(blk.mlp.w1.shape == std::vector<int64_t>{8, 3});
    CHECK(blk.mlp.w2.shape == std::vector<int64_t>{3, 8});
    CHECK(blk.mlp.b2.shape == std::vector<int64_t>{8});
  }
}

TEST_SUITE("model.flops") {
  TEST_CASE("per-image count matches a hand expansion and scales with batch") {
    ModelConfig c = tiny_config();
    c.depths = {1};
    c.num_heads = {2};
    Model m = Model::init(c);
    const int64_t n = 16, e = 8, h = 2, d = 4, w = 2, nw = 4, cmid = 16;
    int64_t expect = 2 * n * 48 * e;                      // patch embed
    expect += 5 * n * e;                                  // norm1
    expect += 6 * n * e * (h * d);                        // qkv
    expect += nw * h * 4 * (w * w) * (w * w) * d;         // scores + weighted sum
    expect += 5 * nw * h * (w * w) * (w * w);             // softmax
    expect += 2 * n * (h * d) * e;                        // out proj
    expect += 5 * n * e;                                  // norm2
    expect += 2 * n * e * cmid + 8 * n * cmid + 2 * n * cmid * e;
    expect += 5 * n * e;                                  // head norm
    expect += 2 * e * c.num_classes;
    CHECK(m.count_flops(1) == expect);
    CHECK(m.count_flops(3) == 3 * expect);
  }

  TEST_CASE("identity branches drop their terms") {
    ModelConfig c = tiny_config();
    c.depths = {1};
    c.num_heads = {2};
    std::vector<std::vector<BlockPruneState>> st(1);
    BlockPruneState s;
    s.msa_is_identity = true;
    s.mlp_is_identity = true;
    st[0].push_back(s);
    Model m = Model::skeleton(c, st);
    const int64_t n = 16, e = 8;
    int64_t expect = 2 * n * 48 * e + 5 * n * e + 5 * n * e + 5 * n * e + 2 * e * c.num_classes;
    CHECK(m.count_flops(1) == expect);
  }
}

TEST_SUITE("model.gradients") {
  TEST_CASE("loss gradients flow to every trainable parameter") {
    ModelConfig c = tiny_config();
    c.depths = {1, 1};
    c.num_heads = {2, 4};
    Model m = Model::init(c);
    Rng rng(13);
    Tensor imgs = random_images(2, c.image_size, rng);
    Graph g;
    auto f = m.build(g, imgs, some_tab(2));
    Var loss = ops::cross_entropy(f.logits, {1, 3});
    g.backward(loss);
    int64_t touched = 0;
    for (const auto& pr : f.params) {
      REQUIRE(pr.trainable);
      const Tensor& gr = g.grad(pr.var);
      CHECK(gr.shape == g.value(pr.var).shape);
      bool nonzero = false;
      for (float v : gr.data) nonzero = nonzero || v != 0.0f;
      if (nonzero) ++touched;
    }
    // Every parameter should receive some gradient signal on random data.
    CHECK(touched == static_cast<int64_t>(f.params.size()));
  }

  TEST_CASE("frozen stages yield non-trainable leaves") {
    ModelConfig c = tiny_config();
    Model m = Model::init(c);
    m.stages[0].frozen = true;
    Graph g;
    Rng rng(14);
    Tensor imgs = random_images(1, c.image_size, rng);
    auto f = m.build(g, imgs, some_tab(1));
    for (const auto& pr : f.params) {
      const bool stage0 = pr.name.rfind("stages.0.", 0) == 0 || pr.name.rfind("patch_embed.", 0) == 0;
      CHECK(pr.trainable == !stage0);
      CHECK(g.requires_grad(pr.var) == pr.trainable);
    }
  }

  TEST_CASE("whole-model finite differences on a micro configuration") {
    ModelConfig c;
    c.image_size = 4;
    c.patch_size = 2;
    c.embed_dim = 4;
    c.depths = {1};
    c.num_heads = {2};
    c.window_size = 2;
    c.mlp_ratio = 2;
    c.num_classes = 3;
    c.sex_vocab = 2;
    c.age_vocab = 3;
    c.loc_vocab = 2;
    c.seed = 21;
    Model m = Model::init(c);
    Rng rng(15);
    Tensor imgs = random_images(1, c.image_size, rng);
    const std::vector<TabularInput> tab{{1, 2, 0}};

    // Pack every parameter into grad-check inputs via a rebuild-from-vector model.
    std::vector<Tensor> inputs;
    std::vector<std::string> names;
    m.visit_params([&](const std::string& name, const Tensor& t, bool) {
      names.push_back(name);
      inputs.push_back(t);
    });
    auto loss_fn = [&](const std::vector<Tensor>& ts) {
      Model probe = m;
      size_t i = 0;
      probe.visit_params([&](const std::string&, Tensor& t, bool) { t = ts[i++]; });
      Graph g;
      g.set_grad_enabled(false);
      auto f = probe.build(g, imgs, tab);
      Var loss = ops::cross_entropy(f.logits, {1});
      return static_cast<double>(g.value(loss).data[0]);
    };
    // Analytic gradients.
    Graph g;
    auto f = m.build(g, imgs, tab);
    Var loss = ops::cross_entropy(f.logits, {1});
    g.backward(loss);
    std::map<std::string, Tensor> analytic;
    for (const auto& pr : f.params) analytic.emplace(pr.name, g.grad(pr.var));

    // Spot-check a subset of coordinates per tensor against central differences.
    const double step = 1e-3;
    double max_err = 0.0;
    Rng pick(99);
    for (size_t ti = 0; ti < inputs.size(); ++ti) {
      const Tensor& grad = analytic.at(names[ti]);
      const int64_t n = inputs[ti].numel();
      const int64_t probes = std::min<int64_t>(n, 4);
      for (int64_t k = 0; k < probes; ++k) {
        const int64_t j = pick.uniform_int(0, n - 1);
        std::vector<Tensor> plus = inputs, minus = inputs;
        plus[ti].data[static_cast<size_t>(j)] += static_cast<float>(step);
        minus[ti].data[static_cast<size_t>(j)] -= static_cast<float>(step);
        const double fd = (loss_fn(plus) - loss_fn(minus)) / (2 * step);
        const double an = grad.data[static_cast<size_t>(j)];
        const double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
        max_err = std::max(max_err, err);
      }
    }
    CHECK(max_err < 2e-2);
  }
}
