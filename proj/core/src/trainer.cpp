#include "skewprune/trainer.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <utility>

#include "skewprune/errors.hpp"
#include "skewprune/graph.hpp"
#include "skewprune/ops.hpp"
#include "skewprune/optim.hpp"
#include "skewprune/rng.hpp"

namespace skewprune {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("train config: batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train config: learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train config: beta1 must be in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train config: beta2 must be in [0,1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train config: adam_eps must be > 0");
  if (calib_batch_size < 1) throw ConfigError("train config: calib_batch_size must be >= 1");
}

std::vector<float> class_weights(const Dataset& data, int64_t num_classes) {
  if (num_classes < 1) throw ArgumentError("class_weights: num_classes must be >= 1");
  std::vector<int64_t> counts(static_cast<size_t>(num_classes), 0);
  for (const Sample& s : data.samples) {
    if (s.label < 0 || s.label >= num_classes) {
      throw ArgumentError("class_weights: label out of range");
    }
    ++counts[static_cast<size_t>(s.label)];
  }
  std::vector<float> w(static_cast<size_t>(num_classes), 0.0f);
  for (int64_t k = 0; k < num_classes; ++k) {
    const int64_t c = counts[static_cast<size_t>(k)];
    if (c > 0) {
      w[static_cast<size_t>(k)] = static_cast<float>(
          static_cast<double>(data.size()) / (static_cast<double>(num_classes) * c));
    }
  }
  return w;
}

FitHistory fit(Model& model, const Dataset& data, const TrainConfig& cfg) {
  cfg.validate();
  if (data.size() == 0) throw ArgumentError("fit: dataset is empty");
  FitHistory hist;
  if (cfg.epochs == 0) return hist;

  std::vector<float> weights;
  if (cfg.class_weighted_loss) weights = class_weights(data, model.config.num_classes);

  std::map<std::string, Tensor*> live;
  model.visit_params([&](const std::string& name, Tensor& t, bool) { live[name] = &t; });

  Adam opt(AdamConfig{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps});
  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    int64_t seen = 0;
    for (const auto& batch : batches(data.size(), cfg.batch_size, cfg.seed, epoch)) {
      const Tensor images = data.image_batch(batch);
      const std::vector<TabularInput> tab = data.tabular_batch(batch);
      const std::vector<int64_t> labels = data.label_batch(batch);
      Graph g;
      GraphForward f = model.build(g, images, tab);
      Var loss = ops::cross_entropy(f.logits, labels, weights.empty() ? nullptr : &weights);
      g.backward(loss);
      loss_sum += static_cast<double>(g.value(loss).data[0]) * static_cast<double>(batch.size());
      seen += static_cast<int64_t>(batch.size());
      for (const ParamRef& p : f.params) {
        if (!p.trainable) continue;
        opt.step(p.name, *live.at(p.name), g.grad(p.var));
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(seen);
    std::vector<int64_t> labels(static_cast<size_t>(data.size()));
    for (int64_t i = 0; i < data.size(); ++i) {
      labels[static_cast<size_t>(i)] = data.samples[static_cast<size_t>(i)].label;
    }
    rec.accuracy = accuracy(predict(model, data, cfg.batch_size), labels);
    hist.epochs.push_back(rec);
  }
  return hist;
}

std::vector<int64_t> predict(const Model& model, const Dataset& data, int64_t batch_size) {
  if (batch_size < 1) throw ArgumentError("predict: batch_size must be >= 1");
  std::vector<int64_t> preds;
  preds.reserve(static_cast<size_t>(data.size()));
  for (int64_t start = 0; start < data.size(); start += batch_size) {
    const int64_t stop = std::min(data.size(), start + batch_size);
    std::vector<int64_t> idx(static_cast<size_t>(stop - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor logits = model.forward_logits(data.image_batch(idx), data.tabular_batch(idx));
    for (int64_t i = 0; i < stop - start; ++i) {
      int64_t best = 0;
      for (int64_t k = 1; k < model.config.num_classes; ++k) {
        if (logits.at(i, k) > logits.at(i, best)) best = k;
      }
      preds.push_back(best);
    }
  }
  return preds;
}

ScoreRecord evaluate(const Model& model, const Dataset& data, const TrainConfig& cfg) {
  const std::vector<int64_t> preds = predict(model, data, cfg.batch_size);
  std::vector<int64_t> labels(static_cast<size_t>(data.size()));
  for (int64_t i = 0; i < data.size(); ++i) {
    labels[static_cast<size_t>(i)] = data.samples[static_cast<size_t>(i)].label;
  }
  ScoreRecord s;
  s.accuracy = accuracy(preds, labels);
  s.f1 = cfg.weighted_f1 ? weighted_f1(preds, labels, model.config.num_classes)
                         : macro_f1(preds, labels, model.config.num_classes);
  return s;
}

void StageSchedule::validate(int64_t num_stages) const {
  int64_t prev = -1;
  for (const StageStep& s : steps) {
    if (s.stage < 0 || s.stage >= num_stages) {
      throw ConfigError("stage schedule: stage " + std::to_string(s.stage) +
                        " out of range [0," + std::to_string(num_stages) + ")");
    }
    if (s.stage <= prev) throw ConfigError("stage schedule: stage ids must strictly increase");
    if (s.finetune_epochs < 0) {
      throw ConfigError("stage schedule: finetune_epochs must be >= 0");
    }
    prev = s.stage;
  }
}

PipelineResult skew_prune_pipeline(Model& model, const Dataset& calib, const Dataset& train,
                                   const StageSchedule& schedule, const TrainConfig& cfg) {
  cfg.validate();
  schedule.validate(model.config.num_stages());
  if (calib.size() == 0) throw ArgumentError("skew_prune_pipeline: calibration set is empty");

  const int64_t cb = std::min<int64_t>(cfg.calib_batch_size, calib.size());
  std::vector<int64_t> idx(static_cast<size_t>(cb));
  std::iota(idx.begin(), idx.end(), 0);
  const Tensor cal_images = calib.image_batch(idx);
  const std::vector<TabularInput> cal_tab = calib.tabular_batch(idx);

  PipelineResult out;
  for (const StageStep& step : schedule.steps) {
    const int64_t depth = model.config.depths[static_cast<size_t>(step.stage)];
    for (int64_t b = 0; b < depth; ++b) {
      const BlockId id{step.stage, b};
      // Fresh capture per block: blocks already pruned this pass feed their
      // reduced activations into the ones still waiting.
      auto caps = model.capture_activations(cal_images, cal_tab, {id});
      SkewReport rep =
          analyze_capture(caps.at(id), id, model.block_at(id).state,
                          model.config.mlp_group_size(step.stage), cfg.calib_selector, 0);
      const PruneDecision dec = decide(rep);
      out.audits.push_back(apply_decision(model, dec));
      out.reports.push_back(std::move(rep));
    }
    if (schedule.freeze) model.stages[static_cast<size_t>(step.stage)].frozen = true;
    if (step.finetune_epochs > 0) {
      TrainConfig ft = cfg;
      ft.epochs = step.finetune_epochs;
      ft.seed = Rng(cfg.seed).derive("finetune").derive(static_cast<uint64_t>(step.stage)).key();
      fit(model, train, ft);
    }
  }
  return out;
}

}  // namespace skewprune
