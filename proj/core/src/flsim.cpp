#include "skewprune/flsim.hpp"

#include <algorithm>
#include <numeric>
#include <string>
#include <utility>

#include "skewprune/checkpoint.hpp"
#include "skewprune/errors.hpp"
#include "skewprune/rng.hpp"

namespace skewprune {

namespace {

std::string block_label(int64_t stage, int64_t block) {
  return std::to_string(stage) + "." + std::to_string(block);
}

/// Structural identity check; throws AggregationError naming the first
/// point of divergence.
void check_same_structure(const Model& a, const Model& b, int64_t index) {
  const std::string who = "model " + std::to_string(index);
  if (a.config.depths != b.config.depths || a.config.num_heads != b.config.num_heads ||
      a.config.embed_dim != b.config.embed_dim || a.config.image_size != b.config.image_size ||
      a.config.patch_size != b.config.patch_size ||
      a.config.window_size != b.config.window_size ||
      a.config.num_classes != b.config.num_classes ||
      a.config.use_rel_pos_bias != b.config.use_rel_pos_bias) {
    throw AggregationError(who + ": model config differs");
  }
  for (size_t s = 0; s < a.stages.size(); ++s) {
    if (a.stages[s].frozen != b.stages[s].frozen) {
      throw AggregationError(who + ": frozen flag differs at stage " + std::to_string(s));
    }
    for (size_t blk = 0; blk < a.stages[s].blocks.size(); ++blk) {
      const BlockPruneState& x = a.stages[s].blocks[blk].state;
      const BlockPruneState& y = b.stages[s].blocks[blk].state;
      if (x.kept_heads != y.kept_heads || x.kept_channels != y.kept_channels ||
          x.msa_is_identity != y.msa_is_identity || x.mlp_is_identity != y.mlp_is_identity ||
          x.revision != y.revision) {
        throw AggregationError(who + ": prune state differs at block " +
                               block_label(static_cast<int64_t>(s), static_cast<int64_t>(blk)));
      }
    }
  }
}

struct ParamView {
  std::string name;
  const Tensor* tensor = nullptr;
  bool trainable = true;
};

std::vector<ParamView> param_views(const Model& m) {
  std::vector<ParamView> out;
  m.visit_params([&](const std::string& name, const Tensor& t, bool trainable) {
    out.push_back({name, &t, trainable});
  });
  return out;
}

}  // namespace

void FlRunConfig::validate() const {
  if (num_clients < 1) throw ConfigError("fl config: num_clients must be >= 1");
  if (rounds < 1) throw ConfigError("fl config: rounds must be >= 1");
  if (local_epochs < 0) throw ConfigError("fl config: local_epochs must be >= 0");
  if (server_finetune_epochs < 0) {
    throw ConfigError("fl config: server_finetune_epochs must be >= 0");
  }
  for (const auto& [round, stage] : prune_schedule) {
    if (round < 0 || round >= rounds) {
      throw ConfigError("fl config: prune_schedule round " + std::to_string(round) +
                        " out of range [0," + std::to_string(rounds) + ")");
    }
    if (stage < 0) throw ConfigError("fl config: prune_schedule stage must be >= 0");
  }
  TrainConfig probe = client;
  probe.epochs = local_epochs;
  probe.validate();
}

Partition partition(const Dataset& data, int64_t num_clients, uint64_t seed) {
  if (num_clients < 1) throw ArgumentError("partition: num_clients must be >= 1");
  const int64_t n = data.size();
  if (n < 5 * num_clients) {
    throw ArgumentError("partition: need at least 5 samples per client plus test share, got " +
                        std::to_string(n) + " for " + std::to_string(num_clients) + " clients");
  }
  std::vector<int64_t> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  Rng(seed).derive("partition").shuffle(perm);

  Partition part;
  const int64_t test_n = n / 5;
  part.test_indices.assign(perm.begin(), perm.begin() + test_n);
  part.server_test = data.subset(part.test_indices);

  const int64_t rest = n - test_n;
  const int64_t base = rest / num_clients;
  const int64_t extra = rest % num_clients;
  int64_t cursor = test_n;
  for (int64_t c = 0; c < num_clients; ++c) {
    const int64_t take = base + (c < extra ? 1 : 0);
    std::vector<int64_t> mine(perm.begin() + cursor, perm.begin() + cursor + take);
    cursor += take;
    const int64_t train_n = 4 * take / 5;  // floor(0.8 * take)
    Shard shard;
    shard.client_id = c;
    shard.train_indices.assign(mine.begin(), mine.begin() + train_n);
    shard.val_indices.assign(mine.begin() + train_n, mine.end());
    shard.train = data.subset(shard.train_indices);
    shard.val = data.subset(shard.val_indices);
    part.shards.push_back(std::move(shard));
  }
  return part;
}

Model aggregate(const std::vector<Model>& models) {
  if (models.empty()) throw ArgumentError("aggregate: no models");
  for (size_t i = 1; i < models.size(); ++i) check_same_structure(models[0], models[i], i);

  std::vector<std::vector<ParamView>> views;
  views.reserve(models.size());
  for (const Model& m : models) views.push_back(param_views(m));
  for (size_t i = 1; i < views.size(); ++i) {
    for (size_t p = 0; p < views[0].size(); ++p) {
      if (views[i][p].name != views[0][p].name ||
          views[i][p].tensor->shape != views[0][p].tensor->shape) {
        throw AggregationError("model " + std::to_string(i) + ": tensor " + views[0][p].name +
                               " diverges");
      }
    }
  }

  Model out = models[0];
  size_t slot = 0;
  out.visit_params([&](const std::string&, Tensor& t, bool trainable) {
    if (trainable) {
      const double inv = 1.0 / static_cast<double>(models.size());
      for (size_t e = 0; e < t.data.size(); ++e) {
        double sum = 0.0;
        for (const auto& view : views) sum += static_cast<double>(view[slot].tensor->data[e]);
        t.data[e] = static_cast<float>(sum * inv);
      }
    }
    ++slot;
  });
  return out;
}

uint64_t client_stream(uint64_t seed, int64_t round, int64_t client) {
  return Rng(seed)
      .derive("client")
      .derive(static_cast<uint64_t>(round))
      .derive(static_cast<uint64_t>(client))
      .key();
}

FlResult fl_run(const FlRunConfig& cfg, const Dataset& data, const ModelConfig& mcfg) {
  cfg.validate();
  mcfg.validate();
  for (const auto& [round, stage] : cfg.prune_schedule) {
    if (stage >= mcfg.num_stages()) {
      throw ConfigError("fl config: prune_schedule stage " + std::to_string(stage) +
                        " out of range [0," + std::to_string(mcfg.num_stages()) + ")");
    }
  }

  Partition part = partition(data, cfg.num_clients, cfg.seed);
  FlResult result;
  result.global = Model::init(mcfg);

  for (int64_t round = 0; round < cfg.rounds; ++round) {
    const std::vector<uint8_t> blob = serialize_model(result.global);

    RoundRecord rec;
    rec.round = round;
    rec.bytes_down = cfg.num_clients * static_cast<int64_t>(blob.size());

    std::vector<Model> clients;
    clients.reserve(static_cast<size_t>(cfg.num_clients));
    for (int64_t c = 0; c < cfg.num_clients; ++c) {
      Model local = deserialize_model(blob);
      TrainConfig tc = cfg.client;
      tc.epochs = cfg.local_epochs;
      tc.seed = client_stream(cfg.seed, round, c);
      const FitHistory hist = fit(local, part.shards[static_cast<size_t>(c)].train, tc);
      double mean_loss = 0.0;
      for (const EpochRecord& e : hist.epochs) mean_loss += e.loss;
      if (!hist.epochs.empty()) mean_loss /= static_cast<double>(hist.epochs.size());
      rec.client_losses.push_back(mean_loss);
      clients.push_back(std::move(local));
    }
    rec.bytes_up = cfg.num_clients * static_cast<int64_t>(serialize_model(clients[0]).size());

    result.global = aggregate(clients);
    const ScoreRecord score = evaluate(result.global, part.server_test, cfg.client);
    rec.test_accuracy = score.accuracy;
    rec.test_f1 = score.f1;

    const auto scheduled = cfg.prune_schedule.find(round);
    if (scheduled != cfg.prune_schedule.end()) {
      if (result.baseline_round < 0) {
        result.baseline_checkpoint = serialize_model(result.global);
        result.baseline_round = round;
      }
      StageSchedule schedule;
      schedule.steps = {
          {scheduled->second, cfg.server_finetune ? cfg.server_finetune_epochs : 0}};
      schedule.freeze = true;
      TrainConfig sc = cfg.client;
      sc.seed = Rng(cfg.seed).derive("server").derive(static_cast<uint64_t>(round)).key();
      PipelineResult pruned =
          skew_prune_pipeline(result.global, part.server_test, part.server_test, schedule, sc);
      rec.pruned_stage = scheduled->second;
      rec.reports = std::move(pruned.reports);
      rec.audits = std::move(pruned.audits);
    }
    rec.global_params = result.global.count_params();
    result.rounds.push_back(std::move(rec));
  }
  if (result.baseline_round < 0) {
    result.baseline_checkpoint = serialize_model(result.global);
    result.baseline_round = cfg.rounds - 1;
  }
  return result;
}

}  // namespace skewprune
