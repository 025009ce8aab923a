#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "skewprune/data.hpp"
#include "skewprune/model.hpp"
#include "skewprune/trainer.hpp"

namespace skewprune {

/// Simulated horizontal FL run. Clients are executed in-process and the
/// "network" is the real checkpoint byte stream, so communication costs
/// are measured on the artifact that would actually move.
struct FlRunConfig {
  int64_t num_clients = 4;
  int64_t rounds = 1;
  int64_t local_epochs = 1;
  uint64_t seed = 0;
  /// Client-side optimizer/batch settings; epochs is ignored in favour of
  /// local_epochs, and seed is ignored in favour of per-(round, client)
  /// derived streams.
  TrainConfig client;
  /// round index -> stage id pruned server-side after that round's
  /// aggregation and evaluation. Empty = never prune.
  std::map<int64_t, int64_t> prune_schedule;
  /// Off by default: surgery only, clients do the recovery training. When
  /// on, the server fine-tunes on its calibration data after surgery.
  bool server_finetune = false;
  int64_t server_finetune_epochs = 1;

  void validate() const;
};

struct Shard {
  int64_t client_id = 0;
  Dataset train;
  Dataset val;
  std::vector<int64_t> train_indices;  // into the partitioned dataset
  std::vector<int64_t> val_indices;
};

struct Partition {
  Dataset server_test;
  std::vector<int64_t> test_indices;
  std::vector<Shard> shards;
};

/// Seeded split: 20% (floor) of a shuffled permutation becomes the server
/// test set; the rest is dealt to clients as evenly as possible (sizes
/// differ by at most 1, earlier clients get the extras); each client shard
/// is split 80/20 (floor on train) into train/val.
Partition partition(const Dataset& data, int64_t num_clients, uint64_t seed);

/// Element-wise unweighted mean of every trainable tensor, accumulated in
/// 64-bit; non-trainable tensors are taken from the first model. All models
/// must agree on config, prune state, and frozen stages.
Model aggregate(const std::vector<Model>& models);

struct RoundRecord {
  int64_t round = 0;
  std::vector<double> client_losses;  // mean local epoch loss per client
  double test_accuracy = 0.0;         // on server test, after aggregation
  double test_f1 = 0.0;
  int64_t bytes_down = 0;  // num_clients x serialized global model
  int64_t bytes_up = 0;    // num_clients x serialized client update
  int64_t pruned_stage = -1;          // -1 when no calibration ran
  int64_t global_params = 0;          // global model size at round end
  std::vector<SkewReport> reports;    // present when calibration ran
  std::vector<PruneAudit> audits;
};

struct FlResult {
  Model global;
  std::vector<RoundRecord> rounds;
  /// Serialized global model captured right before the first surgery (the
  /// "unpruned" reference for effects reports); the final model's bytes
  /// when nothing was ever scheduled.
  std::vector<uint8_t> baseline_checkpoint;
  int64_t baseline_round = -1;  // round whose record scored that baseline
};

/// Seed for one client's local fit in one round; independent of client
/// execution order.
uint64_t client_stream(uint64_t seed, int64_t round, int64_t client);

/// Runs the full simulation: per round distribute (serialize; count bytes),
/// local train, upload (count bytes), aggregate, evaluate on server test,
/// then apply the scheduled server-side prune if any. Pruned stages are
/// frozen, so later client training leaves them untouched. The server's
/// calibration data is its test split (server data is privacy-
/// unconstrained); the calibration batch is its leading samples.
FlResult fl_run(const FlRunConfig& cfg, const Dataset& data, const ModelConfig& mcfg);

}  // namespace skewprune
