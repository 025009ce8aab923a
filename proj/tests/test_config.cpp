#include <string>

#include "doctest.h"
#include "skewprune/config.hpp"
#include "skewprune/errors.hpp"

using namespace skewprune;

TEST_SUITE("config.parse") {
  TEST_CASE("empty document keeps every default") {
    const ToolConfig c = parse_tool_config("{}");
    CHECK(c.model.embed_dim == 32);
    CHECK(c.model.depths == std::vector<int64_t>{2, 2});
    CHECK(c.model.use_shift);
    CHECK(c.train.epochs == 1);
    CHECK(c.train.batch_size == 16);
    CHECK(c.train.calib_selector == NormSelector::First);
    CHECK(c.synth.n == 140);
    CHECK(c.synth.num_classes == 7);
    CHECK(c.fl.num_clients == 4);
    CHECK(c.fl.prune_schedule.empty());
    CHECK_FALSE(c.fl.server_finetune);
  }

  TEST_CASE("sections override selectively") {
    const ToolConfig c = parse_tool_config(R"({
      "model": {"embed_dim": 16, "depths": [1, 1], "num_heads": [2, 2],
                "fusion_weights": [0.7, 0.1, 0.1, 0.1], "mlp_grouping": "dim_groups"},
      "train": {"epochs": 9, "learning_rate": 0.01, "calib_selector": "mean_over_instances",
                "class_weighted_loss": true},
      "synth": {"n": 33, "tabular_correlation": 0.25},
      "fl": {"num_clients": 6, "rounds": 12, "prune_schedule": {"4": 0, "8": 1},
             "client": {"batch_size": 4}}
    })");
    CHECK(c.model.embed_dim == 16);
    CHECK(c.model.fusion_weights[0] == doctest::Approx(0.7));
    CHECK(c.model.mlp_grouping == MlpGrouping::DimGroups);
    CHECK(c.model.window_size == 4);  // untouched default
    CHECK(c.train.epochs == 9);
    CHECK(c.train.calib_selector == NormSelector::MeanOverInstances);
    CHECK(c.train.class_weighted_loss);
    CHECK(c.synth.n == 33);
    CHECK(c.synth.tabular_correlation == doctest::Approx(0.25));
    CHECK(c.fl.num_clients == 6);
    REQUIRE(c.fl.prune_schedule.size() == 2);
    CHECK(c.fl.prune_schedule.at(4) == 0);
    CHECK(c.fl.prune_schedule.at(8) == 1);
    CHECK(c.fl.client.batch_size == 4);
    CHECK(c.fl.client.epochs == 1);  // nested default preserved
  }

  TEST_CASE("round trip preserves a fully customized config") {
    ToolConfig c;
    c.model.embed_dim = 48;
    c.model.depths = {1, 2, 1};
    c.model.num_heads = {2, 4, 8};
    c.model.image_size = 64;
    c.model.use_rel_pos_bias = false;
    c.model.seed = 17;
    c.train.epochs = 5;
    c.train.weighted_f1 = true;
    c.train.seed = 21;
    c.synth.num_classes = 5;
    c.synth.background_noise = 0.2f;
    c.fl.rounds = 7;
    c.fl.local_epochs = 3;
    c.fl.prune_schedule = {{2, 0}, {5, 1}};
    c.fl.server_finetune = true;
    c.fl.client.learning_rate = 0.5;

    const ToolConfig back = parse_tool_config(tool_config_to_json(c));
    CHECK(back.model.embed_dim == c.model.embed_dim);
    CHECK(back.model.depths == c.model.depths);
    CHECK(back.model.num_heads == c.model.num_heads);
    CHECK(back.model.image_size == 64);
    CHECK_FALSE(back.model.use_rel_pos_bias);
    CHECK(back.model.seed == 17);
    CHECK(back.train.epochs == 5);
    CHECK(back.train.weighted_f1);
    CHECK(back.synth.num_classes == 5);
    CHECK(back.synth.background_noise == doctest::Approx(0.2f));
    CHECK(back.fl.rounds == 7);
    CHECK(back.fl.local_epochs == 3);
    CHECK(back.fl.prune_schedule == c.fl.prune_schedule);
    CHECK(back.fl.server_finetune);
    CHECK(back.fl.client.learning_rate == doctest::Approx(0.5));
  }

  TEST_CASE("typos fail loudly") {
    CHECK_THROWS_WITH_AS(parse_tool_config(R"({"models": {}})"),
                         doctest::Contains("unknown key"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_tool_config(R"({"model": {"embed_dims": 8}})"),
                         doctest::Contains("embed_dims"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_tool_config(R"({"train": {"lr": 0.1}})"),
                         doctest::Contains("lr"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_tool_config(R"({"fl": {"client": {"epoch": 1}}})"),
                         doctest::Contains("epoch"), ConfigError);
    CHECK_THROWS_AS(parse_tool_config("not json"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_tool_config(R"({"model": {"mlp_grouping": "columns"}})"),
                         doctest::Contains("mlp_grouping"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_tool_config(R"({"train": {"calib_selector": "last"}})"),
                         doctest::Contains("calib_selector"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_tool_config(R"({"fl": {"prune_schedule": {"x": 0}}})"),
                         doctest::Contains("not an integer"), ConfigError);
  }
}
