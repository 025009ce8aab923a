#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"
#include "skewprune/checkpoint.hpp"
#include "skewprune/config.hpp"
#include "skewprune/data.hpp"
#include "skewprune/errors.hpp"
#include "skewprune/flsim.hpp"
#include "skewprune/metrics.hpp"
#include "skewprune/model.hpp"
#include "skewprune/skew.hpp"
#include "skewprune/surgery.hpp"
#include "skewprune/trainer.hpp"

namespace fs = std::filesystem;
using namespace skewprune;
using nlohmann::json;

namespace {

void apply_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot write " + path.string());
  f << text;
  if (!f) throw FormatError("short write to " + path.string());
}

ToolConfig load_config(const std::string& path) {
  return parse_tool_config(read_text_file(path));
}

/// Comma-separated "stage" or "stage:finetune_epochs" entries, e.g. "0:2,1:2".
StageSchedule parse_schedule(const std::string& text) {
  if (text.empty()) throw ConfigError("schedule: empty");
  StageSchedule s;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    StageStep step;
    step.finetune_epochs = 1;
    const size_t colon = tok.find(':');
    try {
      size_t used = 0;
      step.stage = std::stoll(tok.substr(0, colon), &used);
      if (used != (colon == std::string::npos ? tok.size() : colon)) throw std::invalid_argument(tok);
      if (colon != std::string::npos) {
        step.finetune_epochs = std::stoll(tok.substr(colon + 1), &used);
        if (used != tok.size() - colon - 1) throw std::invalid_argument(tok);
      }
    } catch (const std::exception&) {
      throw ConfigError("schedule: cannot parse entry \"" + tok +
                        "\" (want stage or stage:epochs)");
    }
    s.steps.push_back(step);
  }
  return s;
}

void write_manifest(const fs::path& dir, const std::string& command, const ToolConfig& cfg,
                    json extras) {
  json m;
  m["command"] = command;
  m["config"] = json::parse(tool_config_to_json(cfg));
  for (auto& [key, value] : extras.items()) m[key] = value;
  write_text_file(dir / "manifest.json", m.dump(2) + "\n");
}

json history_to_json(const FitHistory& h) {
  json epochs = json::array();
  for (const EpochRecord& e : h.epochs) {
    epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
  }
  json j;
  j["epochs"] = epochs;
  j["final_accuracy"] = h.epochs.empty() ? 0.0 : h.epochs.back().accuracy;
  return j;
}

std::string skew_reports_text(const std::vector<SkewReport>& reports) {
  std::string out;
  for (const SkewReport& r : reports) {
    out += format_skew_report(r);
    out += "\n";
  }
  return out;
}

std::string audits_text(const std::vector<PruneAudit>& audits) {
  std::string out;
  for (const PruneAudit& a : audits) {
    out += format_prune_audit(a);
    out += "\n";
  }
  return out;
}

void cmd_synth(const std::string& config_path, const std::string& out_dir) {
  const ToolConfig cfg = load_config(config_path);
  const Dataset ds = generate(cfg.synth);
  write_directory(ds, out_dir);
  write_manifest(out_dir, "data synth", cfg, {{"samples", ds.size()}});
  std::printf("wrote %" PRId64 " samples to %s\n", ds.size(), out_dir.c_str());
}

void cmd_train(const std::string& config_path, const std::string& data_dir,
               const std::string& out_ckpt, const std::string& history_path) {
  const ToolConfig cfg = load_config(config_path);
  const Dataset data = load_data_dir(data_dir, cfg.model.image_size);
  Model model = Model::init(cfg.model);
  const FitHistory hist = fit(model, data, cfg.train);
  const size_t bytes = save_checkpoint(model, out_ckpt);
  if (!history_path.empty()) {
    write_text_file(history_path, history_to_json(hist).dump(2) + "\n");
  }
  const double final_acc = hist.epochs.empty() ? 0.0 : hist.epochs.back().accuracy;
  std::printf("trained %" PRId64 " epochs on %" PRId64
              " samples, train accuracy %.4f, wrote %s (%zu bytes)\n",
              cfg.train.epochs, data.size(), final_acc, out_ckpt.c_str(), bytes);
}

void cmd_prune(const std::string& in_ckpt, const std::string& calib_dir,
               const std::string& train_dir, const std::string& schedule_text,
               const std::string& out_ckpt, const std::string& report_dir,
               const std::string& config_path) {
  ToolConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  Model model = load_checkpoint(in_ckpt);
  const Dataset calib = load_data_dir(calib_dir, model.config.image_size);
  const Dataset train = load_data_dir(train_dir, model.config.image_size);
  const StageSchedule schedule = parse_schedule(schedule_text);

  const int64_t params_before = model.count_params();
  const PipelineResult res = skew_prune_pipeline(model, calib, train, schedule, cfg.train);
  const int64_t params_after = model.count_params();
  save_checkpoint(model, out_ckpt);

  fs::create_directories(report_dir);
  write_text_file(fs::path(report_dir) / "skew_reports.txt", skew_reports_text(res.reports));
  write_text_file(fs::path(report_dir) / "prune_audits.txt", audits_text(res.audits));
  cfg.model = model.config;
  json extras;
  extras["input_checkpoint"] = in_ckpt;
  extras["schedule"] = schedule_text;
  extras["params_before"] = params_before;
  extras["params_after"] = params_after;
  write_manifest(report_dir, "prune", cfg, extras);
  std::printf("pruned: params %" PRId64 " -> %" PRId64 " (ratio %.4f), wrote %s\n",
              params_before, params_after,
              static_cast<double>(params_after) / static_cast<double>(params_before),
              out_ckpt.c_str());
}

void cmd_eval(const std::string& ckpt, const std::string& data_dir, bool weighted) {
  const Model model = load_checkpoint(ckpt);
  const Dataset data = load_data_dir(data_dir, model.config.image_size);
  TrainConfig tc;
  tc.weighted_f1 = weighted;
  const ScoreRecord s = evaluate(model, data, tc);
  std::printf("accuracy %.4f\nf1 %.4f\n", s.accuracy, s.f1);
}

void cmd_report(const std::string& ckpt) {
  const Model model = load_checkpoint(ckpt);
  const MetricsRecord r = cost_report(model);
  std::printf("params %" PRId64 "\ngflops %.6f\nmemory_mb %.4f\nsize_mb %.4f\n", r.params,
              r.gflops, r.memory_mb, r.size_mb);
}

json round_to_json(const RoundRecord& r) {
  json j;
  j["round"] = r.round;
  j["client_losses"] = r.client_losses;
  j["test_accuracy"] = r.test_accuracy;
  j["test_f1"] = r.test_f1;
  j["bytes_down"] = r.bytes_down;
  j["bytes_up"] = r.bytes_up;
  j["pruned_stage"] = r.pruned_stage;
  j["global_params"] = r.global_params;
  return j;
}

void cmd_fl_run(const std::string& config_path, const std::string& data_dir,
                const std::string& out_dir) {
  const ToolConfig cfg = load_config(config_path);
  const Dataset data = load_data_dir(data_dir, cfg.model.image_size);
  const FlResult res = fl_run(cfg.fl, data, cfg.model);

  fs::create_directories(fs::path(out_dir) / "reports");
  std::string lines;
  for (const RoundRecord& r : res.rounds) {
    lines += round_to_json(r).dump() + "\n";
    if (r.pruned_stage >= 0) {
      char tag[32];
      std::snprintf(tag, sizeof tag, "round_%03" PRId64, r.round);
      write_text_file(fs::path(out_dir) / "reports" / (std::string(tag) + "_skew.txt"),
                      skew_reports_text(r.reports));
      write_text_file(fs::path(out_dir) / "reports" / (std::string(tag) + "_audits.txt"),
                      audits_text(r.audits));
    }
  }
  write_text_file(fs::path(out_dir) / "rounds.jsonl", lines);

  std::ofstream base(fs::path(out_dir) / "baseline.skpr", std::ios::binary);
  base.write(reinterpret_cast<const char*>(res.baseline_checkpoint.data()),
             static_cast<std::streamsize>(res.baseline_checkpoint.size()));
  if (!base) throw FormatError("cannot write baseline checkpoint");
  base.close();
  save_checkpoint(res.global, (fs::path(out_dir) / "final.skpr").string());

  json extras;
  extras["baseline_round"] = res.baseline_round;
  extras["rounds_run"] = static_cast<int64_t>(res.rounds.size());
  write_manifest(out_dir, "fl run", cfg, extras);

  const RoundRecord& last = res.rounds.back();
  std::printf("fl run complete: %zu rounds, final test accuracy %.4f, f1 %.4f, params %" PRId64
              ", artifacts in %s\n",
              res.rounds.size(), last.test_accuracy, last.test_f1, last.global_params,
              out_dir.c_str());
}

void cmd_fl_effects(const std::string& out_dir) {
  const json manifest = json::parse(read_text_file((fs::path(out_dir) / "manifest.json").string()));
  const int64_t baseline_round = manifest.at("baseline_round").get<int64_t>();

  const Model before = load_checkpoint((fs::path(out_dir) / "baseline.skpr").string());
  const Model after = load_checkpoint((fs::path(out_dir) / "final.skpr").string());

  const std::string lines = read_text_file((fs::path(out_dir) / "rounds.jsonl").string());
  std::stringstream ss(lines);
  std::string line;
  json base_rec, last_rec;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    last_rec = json::parse(line);
    if (last_rec.at("round").get<int64_t>() == baseline_round) base_rec = last_rec;
  }
  if (base_rec.is_null() || last_rec.is_null()) {
    throw FormatError("rounds.jsonl: missing baseline or final round record");
  }

  EffectsReport rep;
  rep.cost_before = cost_report(before);
  rep.cost_after = cost_report(after);
  rep.score_before = {base_rec.at("test_accuracy").get<double>(),
                      base_rec.at("test_f1").get<double>()};
  rep.score_after = {last_rec.at("test_accuracy").get<double>(),
                     last_rec.at("test_f1").get<double>()};
  const std::string table = format_effects(rep);
  std::fputs(table.c_str(), stdout);
  write_text_file(fs::path(out_dir) / "effects.txt", table);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"skewness-guided structured pruning for windowed-attention classifiers"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "cap worker parallelism (0 = library default)")
      ->check(CLI::NonNegativeNumber);

  std::string config_path, data_dir, out_path, history_path;
  std::string in_ckpt, calib_dir, train_dir, schedule_text, report_dir;
  bool weighted = false;

  CLI::App* data = app.add_subcommand("data", "dataset tooling");
  data->require_subcommand(1);
  CLI::App* synth = data->add_subcommand("synth", "generate a synthetic dataset directory");
  synth->add_option("--config", config_path, "JSON config with a synth section")->required();
  synth->add_option("--out", out_path, "output dataset directory")->required();
  synth->callback([&] {
    apply_threads(threads);
    cmd_synth(config_path, out_path);
  });

  CLI::App* train = app.add_subcommand("train", "train a model from scratch");
  train->add_option("--config", config_path, "JSON config with model/train sections")
      ->required();
  train->add_option("--data", data_dir, "training dataset directory")->required();
  train->add_option("--out", out_path, "output checkpoint path")->required();
  train->add_option("--history", history_path, "write per-epoch loss/accuracy JSON here");
  train->callback([&] {
    apply_threads(threads);
    cmd_train(config_path, data_dir, out_path, history_path);
  });

  CLI::App* prune = app.add_subcommand("prune", "stage-stepped skew pruning of a checkpoint");
  prune->add_option("--ckpt", in_ckpt, "input checkpoint")->required();
  prune->add_option("--calib", calib_dir, "calibration dataset directory")->required();
  prune->add_option("--train", train_dir, "fine-tune dataset directory")->required();
  prune->add_option("--schedule", schedule_text,
                    "stages to process, e.g. 0:2,1:2 (stage[:finetune_epochs])")
      ->required();
  prune->add_option("--out", out_path, "output checkpoint path")->required();
  prune->add_option("--report", report_dir, "directory for skew/audit reports")->required();
  prune->add_option("--config", config_path,
                    "optional JSON config; its train section drives the fine-tune");
  prune->callback([&] {
    apply_threads(threads);
    cmd_prune(in_ckpt, calib_dir, train_dir, schedule_text, out_path, report_dir, config_path);
  });

  CLI::App* eval_cmd = app.add_subcommand("eval", "accuracy/F1 of a checkpoint on a dataset");
  eval_cmd->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
  eval_cmd->add_option("--data", data_dir, "evaluation dataset directory")->required();
  eval_cmd->add_flag("--weighted-f1", weighted, "report support-weighted F1 instead of macro");
  eval_cmd->callback([&] {
    apply_threads(threads);
    cmd_eval(in_ckpt, data_dir, weighted);
  });

  CLI::App* report = app.add_subcommand("report", "params/GFLOPs/memory/size of a checkpoint");
  report->add_option("--ckpt", in_ckpt, "checkpoint path")->required();
  report->callback([&] {
    apply_threads(threads);
    cmd_report(in_ckpt);
  });

  CLI::App* fl = app.add_subcommand("fl", "federated-learning simulation");
  fl->require_subcommand(1);
  CLI::App* fl_run_cmd = fl->add_subcommand("run", "simulate an FL run with scheduled pruning");
  fl_run_cmd->add_option("--config", config_path, "JSON config with model/fl sections")
      ->required();
  fl_run_cmd->add_option("--data", data_dir, "full dataset directory to partition")->required();
  fl_run_cmd->add_option("--out", out_path, "run output directory")->required();
  fl_run_cmd->callback([&] {
    apply_threads(threads);
    cmd_fl_run(config_path, data_dir, out_path);
  });
  CLI::App* fl_effects = fl->add_subcommand("effects", "before/after table for a finished run");
  fl_effects->add_option("--out", out_path, "fl run output directory")->required();
  fl_effects->callback([&] {
    apply_threads(threads);
    cmd_fl_effects(out_path);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const Error& e) {
    std::cerr << "skewprune: error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "skewprune: unexpected error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
