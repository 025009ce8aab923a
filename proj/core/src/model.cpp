#include "skewprune/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "skewprune/errors.hpp"
#include "skewprune/ops.hpp"
#include "skewprune/rng.hpp"
#include "skewprune/windowing.hpp"

namespace skewprune {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (image_size < 1 || patch_size < 1) fail("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " not divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (depths.empty()) fail("depths must list at least one stage");
  if (num_heads.size() != depths.size()) {
    fail("num_heads has " + std::to_string(num_heads.size()) + " entries for " +
         std::to_string(depths.size()) + " stages");
  }
  if (embed_dim < 1) fail("embed_dim must be positive");
  if (window_size < 1) fail("window_size must be positive");
  if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  for (int64_t s = 0; s < num_stages(); ++s) {
    const std::string at = " at stage " + std::to_string(s);
    if (depths[static_cast<size_t>(s)] < 0) fail("negative depth" + at);
    if (num_heads[static_cast<size_t>(s)] < 1) fail("need at least one head" + at);
    if (stage_dim(s) % num_heads[static_cast<size_t>(s)] != 0) {
      fail("stage dim " + std::to_string(stage_dim(s)) + " not divisible by " +
           std::to_string(num_heads[static_cast<size_t>(s)]) + " heads" + at);
    }
    const int64_t grid = grid_at(s);
    if (grid < 1) fail("token grid vanished" + at);
    if (grid % window_size != 0) {
      fail("token grid " + std::to_string(grid) + " not divisible by window " +
           std::to_string(window_size) + at);
    }
    if (s + 1 < num_stages() && grid % 2 != 0) {
      fail("token grid " + std::to_string(grid) + " must be even to merge patches" + at);
    }
  }
  if (sex_vocab < 1 || age_vocab < 1 || loc_vocab < 1) fail("tabular vocab sizes must be >= 1");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
  double wsum = 0.0;
  for (const double w : fusion_weights) wsum += w;
  if (std::abs(wsum - 1.0) > 1e-9) {
    fail("fusion_weights sum to " + std::to_string(wsum) + ", expected 1");
  }
}

Tensor patchify(const Tensor& images, int64_t patch_size) {
  if (images.rank() != 4 || images.shape[1] != 3) {
    throw DimensionError("patchify: expected images [B x 3 x S x S], got " + images.shape_str());
  }
  const int64_t b = images.shape[0], s = images.shape[2];
  if (images.shape[3] != s || s % patch_size != 0) {
    throw DimensionError("patchify: image side " + shape_to_string({images.shape[2],
                         images.shape[3]}) + " not square or not divisible by patch " +
                         std::to_string(patch_size));
  }
  const int64_t p = patch_size, side = s / p, n = side * side, feat = 3 * p * p;
  Tensor out = Tensor::zeros({b * n, feat});
  for (int64_t bi = 0; bi < b; ++bi) {
    const float* img = images.data.data() + bi * 3 * s * s;
    for (int64_t pr = 0; pr < side; ++pr) {
      for (int64_t pc = 0; pc < side; ++pc) {
        float* row = out.data.data() + (bi * n + pr * side + pc) * feat;
        int64_t k = 0;
        for (int64_t c = 0; c < 3; ++c) {
          for (int64_t dy = 0; dy < p; ++dy) {
            const float* src = img + c * s * s + (pr * p + dy) * s + pc * p;
            for (int64_t dx = 0; dx < p; ++dx) row[k++] = src[dx];
          }
        }
      }
    }
  }
  return out;
}

namespace {

enum class ParamKind { Weight, Bias, Gain };

std::string block_prefix(int64_t s, int64_t b) {
  return "stages." + std::to_string(s) + ".blocks." + std::to_string(b) + ".";
}

// Single traversal behind visit_params/init: yields (name, tensor, kind,
// owning stage or -1). Skips tensors absent under the current prune state.
template <typename ModelT, typename Fn>
void for_each_param(ModelT& m, Fn&& fn) {
  fn("patch_embed.weight", m.patch_weight, ParamKind::Weight, int64_t{0});
  fn("patch_embed.bias", m.patch_bias, ParamKind::Bias, int64_t{0});
  for (int64_t s = 0; s < m.config.num_stages(); ++s) {
    auto& stage = m.stages[static_cast<size_t>(s)];
    for (int64_t b = 0; b < static_cast<int64_t>(stage.blocks.size()); ++b) {
      auto& blk = stage.blocks[static_cast<size_t>(b)];
      const std::string pre = block_prefix(s, b);
      fn(pre + "norm1.gamma", blk.norm1_gamma, ParamKind::Gain, s);
      fn(pre + "norm1.beta", blk.norm1_beta, ParamKind::Bias, s);
      if (!blk.state.msa_is_identity) {
        fn(pre + "msa.w_q", blk.msa.w_q, ParamKind::Weight, s);
        fn(pre + "msa.b_q", blk.msa.b_q, ParamKind::Bias, s);
        fn(pre + "msa.w_k", blk.msa.w_k, ParamKind::Weight, s);
        fn(pre + "msa.b_k", blk.msa.b_k, ParamKind::Bias, s);
        fn(pre + "msa.w_v", blk.msa.w_v, ParamKind::Weight, s);
        fn(pre + "msa.b_v", blk.msa.b_v, ParamKind::Bias, s);
        fn(pre + "msa.w_o", blk.msa.w_o, ParamKind::Weight, s);
        fn(pre + "msa.b_o", blk.msa.b_o, ParamKind::Bias, s);
        if (m.config.use_rel_pos_bias) {
          fn(pre + "msa.rel_bias", blk.msa.rel_bias, ParamKind::Weight, s);
        }
      }
      fn(pre + "norm2.gamma", blk.norm2_gamma, ParamKind::Gain, s);
      fn(pre + "norm2.beta", blk.norm2_beta, ParamKind::Bias, s);
      if (!blk.state.mlp_is_identity) {
        fn(pre + "mlp.w1", blk.mlp.w1, ParamKind::Weight, s);
        fn(pre + "mlp.b1", blk.mlp.b1, ParamKind::Bias, s);
        fn(pre + "mlp.w2", blk.mlp.w2, ParamKind::Weight, s);
        fn(pre + "mlp.b2", blk.mlp.b2, ParamKind::Bias, s);
      }
    }
    if (s + 1 < m.config.num_stages()) {
      const std::string pre = "stages." + std::to_string(s) + ".merge.";
      fn(pre + "weight", stage.merge_weight, ParamKind::Weight, s);
      fn(pre + "bias", stage.merge_bias, ParamKind::Bias, s);
    }
  }
  fn("head.norm.gamma", m.head_norm_gamma, ParamKind::Gain, int64_t{-1});
  fn("head.norm.beta", m.head_norm_beta, ParamKind::Bias, int64_t{-1});
  fn("head.fc.weight", m.head_weight, ParamKind::Weight, int64_t{-1});
  fn("head.fc.bias", m.head_bias, ParamKind::Bias, int64_t{-1});
  fn("tabular.sex.weight", m.sex_table, ParamKind::Weight, int64_t{-1});
  fn("tabular.age.weight", m.age_table, ParamKind::Weight, int64_t{-1});
  fn("tabular.loc.weight", m.loc_table, ParamKind::Weight, int64_t{-1});
}

void validate_state(const ModelConfig& cfg, int64_t s, const BlockPruneState& st) {
  auto fail = [&](const std::string& m) {
    throw ConfigError("prune state, stage " + std::to_string(s) + ": " + m);
  };
  if (st.msa_is_identity != st.kept_heads.empty()) {
    fail("msa_is_identity must match an empty head keep-set");
  }
  if (st.mlp_is_identity != st.kept_channels.empty()) {
    fail("mlp_is_identity must match an empty channel keep-set");
  }
  const int64_t h = cfg.num_heads[static_cast<size_t>(s)];
  const int64_t c = cfg.mlp_ratio * cfg.stage_dim(s);
  int64_t prev = -1;
  for (const int64_t k : st.kept_heads) {
    if (k <= prev || k >= h) fail("kept head indices must ascend within [0," + std::to_string(h) + ")");
    prev = k;
  }
  prev = -1;
  for (const int64_t k : st.kept_channels) {
    if (k <= prev || k >= c) {
      fail("kept channel indices must ascend within [0," + std::to_string(c) + ")");
    }
    prev = k;
  }
}

void build_structure(Model& m, const std::vector<std::vector<BlockPruneState>>* states) {
  const ModelConfig& c = m.config;
  c.validate();
  if (states != nullptr && static_cast<int64_t>(states->size()) != c.num_stages()) {
    throw ConfigError("prune state covers " + std::to_string(states->size()) + " of " +
                      std::to_string(c.num_stages()) + " stages");
  }
  const int64_t p = c.patch_size;
  m.patch_weight = Tensor::zeros({3 * p * p, c.embed_dim});
  m.patch_bias = Tensor::zeros({c.embed_dim});
  m.stages.clear();
  const int64_t span = (2 * c.window_size - 1) * (2 * c.window_size - 1);
  for (int64_t s = 0; s < c.num_stages(); ++s) {
    const int64_t e = c.stage_dim(s), d = c.head_dim(s);
    Stage stage;
    const int64_t depth = c.depths[static_cast<size_t>(s)];
    if (states != nullptr && static_cast<int64_t>((*states)[static_cast<size_t>(s)].size()) != depth) {
      throw ConfigError("prune state covers " +
                        std::to_string((*states)[static_cast<size_t>(s)].size()) + " of " +
                        std::to_string(depth) + " blocks in stage " + std::to_string(s));
    }
    for (int64_t b = 0; b < depth; ++b) {
      Block blk;
      if (states != nullptr) {
        blk.state = (*states)[static_cast<size_t>(s)][static_cast<size_t>(b)];
        validate_state(c, s, blk.state);
      } else {
        blk.state.kept_heads.resize(static_cast<size_t>(c.num_heads[static_cast<size_t>(s)]));
        std::iota(blk.state.kept_heads.begin(), blk.state.kept_heads.end(), 0);
        blk.state.kept_channels.resize(static_cast<size_t>(c.mlp_ratio * e));
        std::iota(blk.state.kept_channels.begin(), blk.state.kept_channels.end(), 0);
      }
      blk.norm1_gamma = Tensor::zeros({e});
      blk.norm1_beta = Tensor::zeros({e});
      blk.norm2_gamma = Tensor::zeros({e});
      blk.norm2_beta = Tensor::zeros({e});
      if (!blk.state.msa_is_identity) {
        const int64_t hd = static_cast<int64_t>(blk.state.kept_heads.size()) * d;
        blk.msa.w_q = Tensor::zeros({e, hd});
        blk.msa.b_q = Tensor::zeros({hd});
        blk.msa.w_k = Tensor::zeros({e, hd});
        blk.msa.b_k = Tensor::zeros({hd});
        blk.msa.w_v = Tensor::zeros({e, hd});
        blk.msa.b_v = Tensor::zeros({hd});
        blk.msa.w_o = Tensor::zeros({hd, e});
        blk.msa.b_o = Tensor::zeros({e});
        if (c.use_rel_pos_bias) {
          blk.msa.rel_bias =
              Tensor::zeros({span, static_cast<int64_t>(blk.state.kept_heads.size())});
        }
      }
      if (!blk.state.mlp_is_identity) {
        const int64_t cc = static_cast<int64_t>(blk.state.kept_channels.size());
        blk.mlp.w1 = Tensor::zeros({e, cc});
        blk.mlp.b1 = Tensor::zeros({cc});
        blk.mlp.w2 = Tensor::zeros({cc, e});
        blk.mlp.b2 = Tensor::zeros({e});
      }
      stage.blocks.push_back(std::move(blk));
    }
    if (s + 1 < c.num_stages()) {
      stage.merge_weight = Tensor::zeros({4 * e, 2 * e});
      stage.merge_bias = Tensor::zeros({2 * e});
    }
    m.stages.push_back(std::move(stage));
  }
  const int64_t f = c.final_dim();
  m.head_norm_gamma = Tensor::zeros({f});
  m.head_norm_beta = Tensor::zeros({f});
  m.head_weight = Tensor::zeros({f, c.num_classes});
  m.head_bias = Tensor::zeros({c.num_classes});
  m.sex_table = Tensor::zeros({c.sex_vocab, f});
  m.age_table = Tensor::zeros({c.age_vocab, f});
  m.loc_table = Tensor::zeros({c.loc_vocab, f});
}

}  // namespace

Model Model::init(const ModelConfig& cfg) {
  Model m;
  m.config = cfg;
  build_structure(m, nullptr);
  const Rng streams = Rng(cfg.seed).derive("init");
  for_each_param(m, [&](const std::string& name, Tensor& t, ParamKind kind, int64_t) {
    switch (kind) {
      case ParamKind::Gain:
        for (auto& v : t.data) v = 1.0f;
        break;
      case ParamKind::Bias:
        break;  // already zero
      case ParamKind::Weight: {
        Rng r = streams.derive(name);
        for (auto& v : t.data) v = r.trunc_normal(0.02f);
        break;
      }
    }
  });
  return m;
}

Model Model::skeleton(const ModelConfig& cfg,
                      const std::vector<std::vector<BlockPruneState>>& states) {
  Model m;
  m.config = cfg;
  build_structure(m, &states);
  return m;
}

void Model::visit_params(const std::function<void(const std::string&, Tensor&, bool)>& fn) {
  for_each_param(*this, [&](const std::string& name, Tensor& t, ParamKind, int64_t stage) {
    const bool trainable = stage < 0 || !stages[static_cast<size_t>(stage)].frozen;
    fn(name, t, trainable);
  });
}

void Model::visit_params(
    const std::function<void(const std::string&, const Tensor&, bool)>& fn) const {
  for_each_param(*this, [&](const std::string& name, const Tensor& t, ParamKind, int64_t stage) {
    const bool trainable = stage < 0 || !stages[static_cast<size_t>(stage)].frozen;
    fn(name, t, trainable);
  });
}

int64_t Model::count_params() const {
  int64_t n = 0;
  visit_params([&](const std::string&, const Tensor& t, bool) { n += t.numel(); });
  return n;
}

int64_t Model::memory_footprint_bytes() const { return 4 * count_params(); }

int64_t Model::count_flops(int64_t batch) const {
  const ModelConfig& c = config;
  const int64_t p = c.patch_size;
  const int64_t w = c.window_size;
  const int64_t t2 = w * w;           // tokens per window
  const int64_t t4 = t2 * t2;         // attention entries per window
  int64_t f = 0;
  const int64_t side0 = c.image_size / p;
  f += 2 * (side0 * side0) * (3 * p * p) * c.embed_dim;  // patch embedding
  for (int64_t s = 0; s < c.num_stages(); ++s) {
    const int64_t e = c.stage_dim(s), d = c.head_dim(s);
    const int64_t grid = c.grid_at(s), n = grid * grid;
    const int64_t nw = (grid / w) * (grid / w);
    for (const Block& blk : stages[static_cast<size_t>(s)].blocks) {
      f += 5 * n * e;  // pre-attention norm
      if (!blk.state.msa_is_identity) {
        const int64_t h = static_cast<int64_t>(blk.state.kept_heads.size());
        const int64_t hd = h * d;
        f += 3 * 2 * n * e * hd;     // q/k/v projections
        f += nw * h * 4 * t4 * d;    // scores and weighted values
        f += 5 * nw * h * t4;        // softmax over attention entries
        f += 2 * n * hd * e;         // output projection
      }
      f += 5 * n * e;  // pre-MLP norm
      if (!blk.state.mlp_is_identity) {
        const int64_t cc = static_cast<int64_t>(blk.state.kept_channels.size());
        f += 2 * n * e * cc + 8 * n * cc + 2 * n * cc * e;
      }
    }
    if (s + 1 < c.num_stages()) f += 2 * (n / 4) * (4 * e) * (2 * e);
  }
  const int64_t fl = c.final_dim();
  const int64_t nl = c.grid_at(c.num_stages() - 1) * c.grid_at(c.num_stages() - 1);
  f += 5 * nl * fl;             // head norm
  f += 2 * fl * c.num_classes;  // classifier on the pooled feature
  return f * batch;
}

const Block& Model::block_at(BlockId id) const {
  if (id.stage < 0 || id.stage >= static_cast<int64_t>(stages.size()) || id.block < 0 ||
      id.block >= static_cast<int64_t>(stages[static_cast<size_t>(id.stage)].blocks.size())) {
    throw IndexError("no block (" + std::to_string(id.stage) + "," + std::to_string(id.block) +
                     ")");
  }
  return stages[static_cast<size_t>(id.stage)].blocks[static_cast<size_t>(id.block)];
}

Block& Model::block_at(BlockId id) {
  return const_cast<Block&>(static_cast<const Model&>(*this).block_at(id));
}

GraphForward Model::build(Graph& g, const Tensor& images, const std::vector<TabularInput>& tab,
                          const std::set<BlockId>& capture) const {
  if (images.rank() != 4 || images.shape[1] != 3 || images.shape[2] != config.image_size ||
      images.shape[3] != config.image_size) {
    throw DimensionError("forward: expected images [B x 3 x " +
                         std::to_string(config.image_size) + " x " +
                         std::to_string(config.image_size) + "], got " + images.shape_str());
  }
  const int64_t batch = images.shape[0];
  if (batch < 1 || static_cast<int64_t>(tab.size()) != batch) {
    throw DimensionError("forward: " + std::to_string(tab.size()) + " tabular rows for batch " +
                         std::to_string(batch));
  }

  GraphForward out;
  std::map<std::string, Var> pv;
  visit_params([&](const std::string& name, const Tensor& t, bool trainable) {
    Var v = g.leaf(t, trainable);
    pv.emplace(name, v);
    out.params.push_back(ParamRef{name, v, trainable});
  });
  const auto P = [&](const std::string& n) { return pv.at(n); };

  Var x = ops::add_row_bias(
      ops::matmul(g.leaf(patchify(images, config.patch_size), false), P("patch_embed.weight")),
      P("patch_embed.bias"));

  const int64_t w = config.window_size;
  const int64_t t = config.tokens_per_window();
  for (int64_t s = 0; s < config.num_stages(); ++s) {
    const int64_t grid = config.grid_at(s);
    const int64_t d = config.head_dim(s);
    const Stage& stage = stages[static_cast<size_t>(s)];
    for (int64_t b = 0; b < static_cast<int64_t>(stage.blocks.size()); ++b) {
      const Block& blk = stage.blocks[static_cast<size_t>(b)];
      const std::string pre = block_prefix(s, b);
      const int64_t shift = (config.use_shift && b % 2 == 1) ? w / 2 : 0;
      const auto bp = windowing::batch_perm(windowing::window_perm(grid, w, shift), batch);
      const bool want_cap = capture.count(BlockId{s, b}) > 0;
      ActivationCapture cap;

      Var h1 = ops::layer_norm(x, P(pre + "norm1.gamma"), P(pre + "norm1.beta"),
                               config.layer_norm_eps);
      Var zhat;
      if (!blk.state.msa_is_identity) {
        const int64_t h = static_cast<int64_t>(blk.state.kept_heads.size());
        Var part = ops::permute_rows(h1, bp);
        Var rel;
        std::vector<int64_t> ridx;
        if (config.use_rel_pos_bias) {
          rel = P(pre + "msa.rel_bias");
          ridx = windowing::relative_position_index(w);
        }
        Var attn = ops::window_msa(part, P(pre + "msa.w_q"), P(pre + "msa.b_q"),
                                   P(pre + "msa.w_k"), P(pre + "msa.b_k"), P(pre + "msa.w_v"),
                                   P(pre + "msa.b_v"), rel, std::move(ridx), t, h);
        if (want_cap) {
          const Tensor& av = g.value(attn);
          cap.a = Tensor::from({av.shape[0] / t, t, h, d}, av.data);
        }
        Var proj = ops::add_row_bias(ops::matmul(attn, P(pre + "msa.w_o")), P(pre + "msa.b_o"));
        zhat = ops::add(ops::permute_rows(proj, windowing::inverse_perm(bp)), x);
      } else {
        zhat = ops::add(h1, x);
      }

      Var h2 = ops::layer_norm(zhat, P(pre + "norm2.gamma"), P(pre + "norm2.beta"),
                               config.layer_norm_eps);
      if (!blk.state.mlp_is_identity) {
        Var mid = ops::gelu(
            ops::add_row_bias(ops::matmul(h2, P(pre + "mlp.w1")), P(pre + "mlp.b1")));
        if (want_cap) {
          const Tensor& mv = g.value(mid);
          const int64_t cc = mv.shape[1];
          Tensor zt = Tensor::zeros({static_cast<int64_t>(bp.size()) / t, t, cc});
          for (size_t i = 0; i < bp.size(); ++i) {
            const float* src = mv.data.data() + bp[i] * cc;
            std::copy(src, src + cc, zt.data.data() + static_cast<int64_t>(i) * cc);
          }
          cap.z = std::move(zt);
        }
        Var mo = ops::add_row_bias(ops::matmul(mid, P(pre + "mlp.w2")), P(pre + "mlp.b2"));
        x = ops::add(mo, zhat);
      } else {
        x = ops::add(h2, zhat);
      }
      if (want_cap) out.captures.emplace(BlockId{s, b}, std::move(cap));
    }
    if (s + 1 < config.num_stages()) {
      const int64_t e = config.stage_dim(s);
      const auto mp = windowing::batch_perm(windowing::merge_perm(grid), batch);
      Var merged = ops::reshape(ops::permute_rows(x, mp), {batch * grid * grid / 4, 4 * e});
      const std::string pre = "stages." + std::to_string(s) + ".merge.";
      x = ops::add_row_bias(ops::matmul(merged, P(pre + "weight")), P(pre + "bias"));
    }
  }

  Var hn = ops::layer_norm(x, P("head.norm.gamma"), P("head.norm.beta"), config.layer_norm_eps);
  const int64_t last_grid = config.grid_at(config.num_stages() - 1);
  Var f_img = ops::mean_pool_rows(hn, last_grid * last_grid);

  std::vector<int64_t> sex_ids, age_ids, loc_ids;
  sex_ids.reserve(tab.size());
  for (const TabularInput& ti : tab) {
    sex_ids.push_back(ti.sex_id);
    age_ids.push_back(ti.age_bucket_id);
    loc_ids.push_back(ti.localization_id);
  }
  Var e_sex = ops::embedding_lookup(P("tabular.sex.weight"), std::move(sex_ids));
  Var e_age = ops::embedding_lookup(P("tabular.age.weight"), std::move(age_ids));
  Var e_loc = ops::embedding_lookup(P("tabular.loc.weight"), std::move(loc_ids));
  const auto& fw = config.fusion_weights;
  Var fused = ops::add(ops::add(ops::scale(f_img, fw[0]), ops::scale(e_sex, fw[1])),
                       ops::add(ops::scale(e_age, fw[2]), ops::scale(e_loc, fw[3])));
  out.logits = ops::add_row_bias(ops::matmul(fused, P("head.fc.weight")), P("head.fc.bias"));
  return out;
}

Tensor Model::forward_logits(const Tensor& images, const std::vector<TabularInput>& tab) const {
  Graph g;
  g.set_grad_enabled(false);
  GraphForward f = build(g, images, tab);
  return g.value(f.logits);
}

std::map<BlockId, ActivationCapture> Model::capture_activations(
    const Tensor& images, const std::vector<TabularInput>& tab,
    const std::set<BlockId>& blocks) const {
  Graph g;
  g.set_grad_enabled(false);
  GraphForward f = build(g, images, tab, blocks);
  return std::move(f.captures);
}

}  // namespace skewprune
