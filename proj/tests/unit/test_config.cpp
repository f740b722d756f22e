#include <doctest.h>

#include "hatl/config.hpp"
#include "hatl/errors.hpp"
#include "hatl/harness.hpp"

using namespace hatl;

TEST_SUITE("config") {
  TEST_CASE("key-value parsing") {
    KeyValues kv = KeyValues::parse(
        "# header\n"
        "a = 3\n"
        "  b=2.5   # trailing comment\n"
        "\n"
        "c = yes\n"
        "name = some value\n");
    CHECK(kv.get_int("a", 0) == 3);
    CHECK(kv.get_double("b", 0) == 2.5);
    CHECK(kv.get_bool("c", false));
    CHECK(kv.get_string("name", "") == "some value");
    CHECK(kv.get_int("missing", 7) == 7);
    CHECK_NOTHROW(kv.require_consumed());
  }

  TEST_CASE("malformed input names the line") {
    auto message = [](const std::string& text) {
      try {
        KeyValues::parse(text, "f.conf");
      } catch (const ConfigError& e) {
        return std::string(e.what());
      }
      return std::string("no error");
    };
    CHECK(message("a = 1\nno equals sign\n").find("f.conf:2") != std::string::npos);
    CHECK(message("a = 1\na = 2\n").find("duplicate key a") != std::string::npos);
    CHECK(message(" = 3\n").find("empty key") != std::string::npos);

    KeyValues kv = KeyValues::parse("n = 1.5\nm = 12abc\nflag = maybe\nbig = 99999999999\n", "g.conf");
    CHECK_THROWS_AS(kv.get_int("n", 0), ConfigError);
    CHECK_THROWS_AS(kv.get_double("m", 0), ConfigError);
    CHECK_THROWS_AS(kv.get_bool("flag", false), ConfigError);
    CHECK_THROWS_AS(kv.get_int("big", 0), ConfigError);
    CHECK(kv.get_long("big", 0) == 99999999999L);
  }

  TEST_CASE("unread keys are reported") {
    KeyValues kv = KeyValues::parse("used = 1\ntypo_key = 2\n", "h.conf");
    kv.get_int("used", 0);
    try {
      kv.require_consumed();
      FAIL("expected an error");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("h.conf:2: typo_key") != std::string::npos);
    }
  }

  TEST_CASE("overrides replace file values") {
    KeyValues kv = KeyValues::parse("seed = 1\n");
    kv.set("seed", "5");
    kv.set("extra", "x");
    CHECK(kv.get_int("seed", 0) == 5);
    CHECK(kv.get_string("extra", "") == "x");
  }

  TEST_CASE("run configuration echo round-trips") {
    KeyValues kv = KeyValues::parse(
        "regime = classical\ntask = s2t\nseed = 9\nmodel.n_layers = 4\noptim.lr_backbone = 2e-4\n"
        "controller.delta_bleu = 0.01\ncontroller.criterion2 = smoothed\nloss.w_bb = 0.25\n");
    const RunConfig c = RunConfig::from(kv);
    kv.require_consumed();
    CHECK(c.regime == Regime::Classical);
    CHECK(c.task == Task::S2T);
    CHECK(c.seed == 9);
    CHECK(c.model.n_layers == 4);
    CHECK(c.optim.lr_backbone == 2e-4);
    CHECK(c.controller.criterion2_smoothed);
    // tau defaults to delta.
    CHECK(c.tau_bleu == 0.01);
    KeyValues again = KeyValues::parse(c.echo());
    const RunConfig d = RunConfig::from(again);
    again.require_consumed();
    CHECK(d.echo() == c.echo());
  }

  TEST_CASE("task rules and monitored metrics") {
    RunConfig c;
    c.task = Task::S2T;
    CHECK(c.effective_weights().ctc == 0.0);
    CHECK(c.monitored().size() == 1);
    CHECK(c.monitored()[0].name == "bleu4");
    c.task = Task::S2G2T;
    CHECK(c.effective_weights().ctc == c.weights.ctc);
    REQUIRE(c.monitored().size() == 2);
    CHECK(c.monitored()[1].name == "ctc_loss");
    CHECK_FALSE(c.monitored()[1].maximize);
  }

  TEST_CASE("invalid run configurations") {
    auto rejects = [](const std::string& text) {
      KeyValues kv = KeyValues::parse(text);
      CHECK_THROWS_AS(RunConfig::from(kv).validate(), ConfigError);
    };
    rejects("regime = frozen\n");
    rejects("task = s2s\n");
    rejects("max_epochs = 0\n");
    rejects("optim.lr_backbone = -1\n");
    rejects("optim.llrd_alpha = 2\n");
    rejects("controller.patience = 0\n");
    rejects("controller.criterion2 = median\n");
    rejects("controller.delta_bleu = 0\n");
    rejects("loss.w_ce = -1\n");
    rejects("decode.beam_width = 0\n");
    rejects("task = s2t\nloss.w_ce = 0\n");
    rejects("pretrain.holdout = 1\n");
  }
}
