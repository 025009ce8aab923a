#pragma once

#include <cstdint>
#include <vector>

#include "skewprune/data.hpp"
#include "skewprune/metrics.hpp"
#include "skewprune/model.hpp"
#include "skewprune/skew.hpp"
#include "skewprune/surgery.hpp"

namespace skewprune {

/// Supervised training knobs. The calibration fields configure how the
/// prune pipeline reads activations: the calibration batch is the leading
/// calib_batch_size samples of the calibration set, and calib_selector
/// picks which window instances feed the norm vectors.
struct TrainConfig {
  int64_t epochs = 1;
  int64_t batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  /// Weight the loss by inverse class frequency of the training set.
  bool class_weighted_loss = false;
  /// evaluate() reports support-weighted F1 instead of macro F1.
  bool weighted_f1 = false;
  NormSelector calib_selector = NormSelector::First;
  int64_t calib_batch_size = 16;

  void validate() const;
};

struct EpochRecord {
  int64_t epoch = 0;
  double loss = 0.0;      // batch-size-weighted mean batch loss
  double accuracy = 0.0;  // full training-set accuracy after the epoch
};

struct FitHistory {
  std::vector<EpochRecord> epochs;
};

/// Inverse-frequency weights n/(K*count_k); a class with no samples gets 0.
std::vector<float> class_weights(const Dataset& data, int64_t num_classes);

/// Trains in place with a fresh Adam instance. Deterministic given
/// cfg.seed: batch composition comes from batches(n, batch_size, seed,
/// epoch). Parameters of frozen stages receive no updates. 0 epochs leaves
/// the model untouched bit for bit.
FitHistory fit(Model& model, const Dataset& data, const TrainConfig& cfg);

/// Greedy class predictions in fixed order; argmax ties break to the
/// lowest class index.
std::vector<int64_t> predict(const Model& model, const Dataset& data, int64_t batch_size);

/// Accuracy plus macro F1 (or support-weighted F1 when cfg.weighted_f1).
ScoreRecord evaluate(const Model& model, const Dataset& data, const TrainConfig& cfg);

/// One pipeline pass over one stage: prune every block, then optionally
/// freeze the stage, then fine-tune the survivors.
struct StageStep {
  int64_t stage = 0;
  int64_t finetune_epochs = 1;
};

struct StageSchedule {
  std::vector<StageStep> steps;  // stage ids strictly increasing
  bool freeze = true;            // freeze each stage after its surgery

  void validate(int64_t num_stages) const;
};

struct PipelineResult {
  std::vector<SkewReport> reports;  // one per visited block, in visit order
  std::vector<PruneAudit> audits;   // parallel to reports
};

/// Stage-stepped pruning: for each scheduled stage (ascending), for each
/// block (ascending) capture activations from the CURRENT model on the
/// calibration batch, score skewness, decide, and apply the surgery; then
/// freeze the stage and fine-tune the remaining trainable parameters on
/// train for the step's epoch count. Captures are taken fresh per block so
/// later blocks see the effect of earlier surgery.
PipelineResult skew_prune_pipeline(Model& model, const Dataset& calib, const Dataset& train,
                                   const StageSchedule& schedule, const TrainConfig& cfg);

}  // namespace skewprune
