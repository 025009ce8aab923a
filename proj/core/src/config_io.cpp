#include <set>
#include <string>

#include "json_detail.hpp"
#include "skewprune/config.hpp"
#include "skewprune/errors.hpp"

namespace skewprune::detail {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& known,
                         const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (known.find(key) == known.end()) {
      throw ConfigError(where + ": unknown key \"" + key + "\"");
    }
  }
}

template <typename T>
void read_into(const json& j, const char* key, T& out) {
  if (const auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace

json model_config_to_json(const ModelConfig& c) {
  json j;
  j["image_size"] = c.image_size;
  j["patch_size"] = c.patch_size;
  j["embed_dim"] = c.embed_dim;
  j["depths"] = c.depths;
  j["num_heads"] = c.num_heads;
  j["window_size"] = c.window_size;
  j["mlp_ratio"] = c.mlp_ratio;
  j["num_classes"] = c.num_classes;
  j["use_shift"] = c.use_shift;
  j["use_rel_pos_bias"] = c.use_rel_pos_bias;
  j["sex_vocab"] = c.sex_vocab;
  j["age_vocab"] = c.age_vocab;
  j["loc_vocab"] = c.loc_vocab;
  j["fusion_weights"] = c.fusion_weights;
  j["mlp_grouping"] =
      c.mlp_grouping == MlpGrouping::RatioGroups ? "ratio_groups" : "dim_groups";
  j["layer_norm_eps"] = c.layer_norm_eps;
  j["seed"] = c.seed;
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  reject_unknown_keys(j,
                      {"image_size", "patch_size", "embed_dim", "depths", "num_heads",
                       "window_size", "mlp_ratio", "num_classes", "use_shift",
                       "use_rel_pos_bias", "sex_vocab", "age_vocab", "loc_vocab",
                       "fusion_weights", "mlp_grouping", "layer_norm_eps", "seed"},
                      "model config");
  read_into(j, "image_size", c.image_size);
  read_into(j, "patch_size", c.patch_size);
  read_into(j, "embed_dim", c.embed_dim);
  read_into(j, "depths", c.depths);
  read_into(j, "num_heads", c.num_heads);
  read_into(j, "window_size", c.window_size);
  read_into(j, "mlp_ratio", c.mlp_ratio);
  read_into(j, "num_classes", c.num_classes);
  read_into(j, "use_shift", c.use_shift);
  read_into(j, "use_rel_pos_bias", c.use_rel_pos_bias);
  read_into(j, "sex_vocab", c.sex_vocab);
  read_into(j, "age_vocab", c.age_vocab);
  read_into(j, "loc_vocab", c.loc_vocab);
  read_into(j, "fusion_weights", c.fusion_weights);
  if (const auto it = j.find("mlp_grouping"); it != j.end()) {
    const std::string s = it->get<std::string>();
    if (s == "ratio_groups") {
      c.mlp_grouping = MlpGrouping::RatioGroups;
    } else if (s == "dim_groups") {
      c.mlp_grouping = MlpGrouping::DimGroups;
    } else {
      throw ConfigError("model config: mlp_grouping must be ratio_groups or dim_groups, got \"" +
                        s + "\"");
    }
  }
  read_into(j, "layer_norm_eps", c.layer_norm_eps);
  read_into(j, "seed", c.seed);
  return c;
}

json prune_state_to_json(const BlockPruneState& s) {
  json j;
  j["kept_heads"] = s.kept_heads;
  j["kept_channels"] = s.kept_channels;
  j["msa_is_identity"] = s.msa_is_identity;
  j["mlp_is_identity"] = s.mlp_is_identity;
  j["revision"] = s.revision;
  return j;
}

BlockPruneState prune_state_from_json(const json& j) {
  BlockPruneState s;
  reject_unknown_keys(
      j, {"kept_heads", "kept_channels", "msa_is_identity", "mlp_is_identity", "revision"},
      "prune state");
  read_into(j, "kept_heads", s.kept_heads);
  read_into(j, "kept_channels", s.kept_channels);
  read_into(j, "msa_is_identity", s.msa_is_identity);
  read_into(j, "mlp_is_identity", s.mlp_is_identity);
  read_into(j, "revision", s.revision);
  return s;
}

namespace {

json train_config_to_json(const TrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["seed"] = c.seed;
  j["class_weighted_loss"] = c.class_weighted_loss;
  j["weighted_f1"] = c.weighted_f1;
  j["calib_selector"] =
      c.calib_selector == NormSelector::First ? "first" : "mean_over_instances";
  j["calib_batch_size"] = c.calib_batch_size;
  return j;
}

TrainConfig train_config_from_json(const json& j, const std::string& where) {
  TrainConfig c;
  reject_unknown_keys(j,
                      {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "adam_eps",
                       "seed", "class_weighted_loss", "weighted_f1", "calib_selector",
                       "calib_batch_size"},
                      where);
  read_into(j, "epochs", c.epochs);
  read_into(j, "batch_size", c.batch_size);
  read_into(j, "learning_rate", c.learning_rate);
  read_into(j, "beta1", c.beta1);
  read_into(j, "beta2", c.beta2);
  read_into(j, "adam_eps", c.adam_eps);
  read_into(j, "seed", c.seed);
  read_into(j, "class_weighted_loss", c.class_weighted_loss);
  read_into(j, "weighted_f1", c.weighted_f1);
  if (const auto it = j.find("calib_selector"); it != j.end()) {
    const std::string s = it->get<std::string>();
    if (s == "first") {
      c.calib_selector = NormSelector::First;
    } else if (s == "mean_over_instances") {
      c.calib_selector = NormSelector::MeanOverInstances;
    } else {
      throw ConfigError(where + ": calib_selector must be first or mean_over_instances, got \"" +
                        s + "\"");
    }
  }
  read_into(j, "calib_batch_size", c.calib_batch_size);
  return c;
}

json synth_config_to_json(const SynthConfig& c) {
  json j;
  j["n"] = c.n;
  j["image_size"] = c.image_size;
  j["num_classes"] = c.num_classes;
  j["tabular_correlation"] = c.tabular_correlation;
  j["blob_color_std"] = c.blob_color_std;
  j["radius_min"] = c.radius_min;
  j["radius_max"] = c.radius_max;
  j["eccentricity_min"] = c.eccentricity_min;
  j["eccentricity_max"] = c.eccentricity_max;
  j["background_noise"] = c.background_noise;
  j["seed"] = c.seed;
  return j;
}

SynthConfig synth_config_from_json(const json& j) {
  SynthConfig c;
  reject_unknown_keys(j,
                      {"n", "image_size", "num_classes", "tabular_correlation", "blob_color_std",
                       "radius_min", "radius_max", "eccentricity_min", "eccentricity_max",
                       "background_noise", "seed"},
                      "synth config");
  read_into(j, "n", c.n);
  read_into(j, "image_size", c.image_size);
  read_into(j, "num_classes", c.num_classes);
  read_into(j, "tabular_correlation", c.tabular_correlation);
  read_into(j, "blob_color_std", c.blob_color_std);
  read_into(j, "radius_min", c.radius_min);
  read_into(j, "radius_max", c.radius_max);
  read_into(j, "eccentricity_min", c.eccentricity_min);
  read_into(j, "eccentricity_max", c.eccentricity_max);
  read_into(j, "background_noise", c.background_noise);
  read_into(j, "seed", c.seed);
  return c;
}

json fl_config_to_json(const FlRunConfig& c) {
  json j;
  j["num_clients"] = c.num_clients;
  j["rounds"] = c.rounds;
  j["local_epochs"] = c.local_epochs;
  j["seed"] = c.seed;
  j["client"] = train_config_to_json(c.client);
  json sched = json::object();
  for (const auto& [round, stage] : c.prune_schedule) sched[std::to_string(round)] = stage;
  j["prune_schedule"] = sched;
  j["server_finetune"] = c.server_finetune;
  j["server_finetune_epochs"] = c.server_finetune_epochs;
  return j;
}

FlRunConfig fl_config_from_json(const json& j) {
  FlRunConfig c;
  reject_unknown_keys(j,
                      {"num_clients", "rounds", "local_epochs", "seed", "client",
                       "prune_schedule", "server_finetune", "server_finetune_epochs"},
                      "fl config");
  read_into(j, "num_clients", c.num_clients);
  read_into(j, "rounds", c.rounds);
  read_into(j, "local_epochs", c.local_epochs);
  read_into(j, "seed", c.seed);
  if (const auto it = j.find("client"); it != j.end()) {
    c.client = train_config_from_json(*it, "fl config client");
  }
  if (const auto it = j.find("prune_schedule"); it != j.end()) {
    for (const auto& [key, value] : it->items()) {
      int64_t round = 0;
      try {
        size_t used = 0;
        round = std::stoll(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw ConfigError("fl config: prune_schedule round \"" + key + "\" is not an integer");
      }
      c.prune_schedule[round] = value.get<int64_t>();
    }
  }
  read_into(j, "server_finetune", c.server_finetune);
  read_into(j, "server_finetune_epochs", c.server_finetune_epochs);
  return c;
}

}  // namespace

}  // namespace skewprune::detail

namespace skewprune {

ToolConfig parse_tool_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  ToolConfig cfg;
  try {
    detail::reject_unknown_keys(j, {"model", "train", "synth", "fl"}, "config");
    if (const auto it = j.find("model"); it != j.end()) {
      cfg.model = detail::model_config_from_json(*it);
    }
    if (const auto it = j.find("train"); it != j.end()) {
      cfg.train = detail::train_config_from_json(*it, "train config");
    }
    if (const auto it = j.find("synth"); it != j.end()) {
      cfg.synth = detail::synth_config_from_json(*it);
    }
    if (const auto it = j.find("fl"); it != j.end()) {
      cfg.fl = detail::fl_config_from_json(*it);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

std::string tool_config_to_json(const ToolConfig& cfg) {
  nlohmann::json j;
  j["model"] = detail::model_config_to_json(cfg.model);
  j["train"] = detail::train_config_to_json(cfg.train);
  j["synth"] = detail::synth_config_to_json(cfg.synth);
  j["fl"] = detail::fl_config_to_json(cfg.fl);
  return j.dump(2);
}

}  // namespace skewprune
