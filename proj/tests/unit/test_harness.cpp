#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "../oracles.hpp"
#include "../traces.hpp"
#include "hatl/errors.hpp"
#include "hatl/harness.hpp"

using namespace hatl;

namespace {

data::DatasetSpec tiny_spec() {
  data::DatasetSpec s;
  s.gloss_vocab = 6;
  s.function_words = 2;
  s.pretrain_samples = 40;
  s.train_samples = 24;
  s.dev_samples = 8;
  s.test_samples = 8;
  s.gloss_len_min = 2;
  s.gloss_len_max = 3;
  s.dur_min = 1;
  s.dur_max = 2;
  s.feature_dim = 6;
  s.seed = 3;
  return s;
}

const data::Dataset& tiny_data() {
  static const data::Dataset d = data::generate_dataset(tiny_spec());
  return d;
}

RunConfig tiny_config(Regime r, Task t) {
  RunConfig c;
  c.regime = r;
  c.task = t;
  c.model.hidden = 8;
  c.model.n_layers = 3;
  c.model.backbone_width = 4;
  c.model.encoder_layers = 1;
  c.model.max_text_len = 10;
  c.optim.warmup_min_steps = 1;
  c.optim.lr_backbone = 1e-2;
  c.max_epochs = 4;
  c.pretrain_max_epochs = 3;
  c.beam.width = 2;
  c.seed = 5;
  return c;
}

const Checkpoint& tiny_backbone() {
  static const Checkpoint ck = pretrain_backbone(tiny_config(Regime::Hatl, Task::S2G2T), tiny_data());
  return ck;
}

std::vector<Matrix> backbone_values(const LayeredModel& m, int layer) {
  std::vector<Matrix> out;
  for (const auto& p : m.params())
    if (p.group == layer) out.push_back(p.value);
  return out;
}

bool layer_equal(const LayeredModel& m, int layer, const std::vector<Matrix>& ref) {
  return backbone_values(m, layer) == ref;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("batch loss gradients match central differences") {
    RunConfig cfg = tiny_config(Regime::Full, Task::S2G2T);
    LayeredModel m = initial_model(cfg, tiny_backbone());
    const data::Batch batch = data::make_batch(tiny_data().train, {0, 1, 2});
    const losses::LossWeights w = cfg.effective_weights();
    m.zero_grad();
    batch_loss(m, batch, w, true);
    auto f = [&] { return batch_loss(m, batch, w, false).total; };
    std::mt19937_64 rng(1);
    int checked = 0;
    for (auto& p : m.params()) {
      const Eigen::Index i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(p.value.rows()));
      const Eigen::Index j = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(p.value.cols()));
      const double num = oracle::five_point_diff(p.value, i, j, f);
      INFO(p.name);
      CHECK(oracle::rel_err(p.grad(i, j), num, 1e-6) <= 1e-5);
      ++checked;
    }
    CHECK(checked > 20);
  }

  TEST_CASE("s2t ignores the CTC term") {
    RunConfig cfg = tiny_config(Regime::Full, Task::S2T);
    LayeredModel m = initial_model(cfg, tiny_backbone());
    const auto L = batch_loss(m, data::make_batch(tiny_data().train, {0, 1}), cfg.effective_weights(), false);
    CHECK(L.parts.ctc == 0.0);
    CHECK(L.total == doctest::Approx(L.parts.ce + 0.5 * L.parts.enc + 0.5 * L.parts.bb));
  }

  TEST_CASE("classical fine-tuning never moves the backbone") {
    RunConfig cfg = tiny_config(Regime::Classical, Task::S2G2T);
    LayeredModel m = initial_model(cfg, tiny_backbone());
    std::vector<std::vector<Matrix>> start;
    for (int l = 1; l <= 3; ++l) start.push_back(backbone_values(m, l));
    const Matrix t0 = m.param("t.dec.out.W").value;
    int epochs = 0;
    TrainingHooks hooks;
    hooks.after_epoch = [&](int, const LayeredModel& model) {
      ++epochs;
      for (int l = 1; l <= 3; ++l) CHECK(layer_equal(model, l, start[static_cast<std::size_t>(l - 1)]));
    };
    const RunReport r = run_training(cfg, tiny_data(), m, hooks);
    CHECK(epochs == static_cast<int>(r.epochs.size()));
    CHECK(m.param("t.dec.out.W").value != t0);
    CHECK(r.release_epochs.empty());
    for (const auto& e : r.epochs) CHECK(e.trainable_layers == 0);
  }

  TEST_CASE("full fine-tuning moves every layer from the first epoch") {
    RunConfig cfg = tiny_config(Regime::Full, Task::S2T);
    cfg.max_epochs = 1;
    LayeredModel m = initial_model(cfg, tiny_backbone());
    std::vector<std::vector<Matrix>> start;
    for (int l = 1; l <= 3; ++l) start.push_back(backbone_values(m, l));
    TrainingHooks hooks;
    hooks.after_epoch = [&](int, const LayeredModel& model) {
      for (int l = 1; l <= 3; ++l) CHECK_FALSE(layer_equal(model, l, start[static_cast<std::size_t>(l - 1)]));
    };
    run_training(cfg, tiny_data(), m, hooks);
  }

  TEST_CASE("hatl releases top-down and leaves unreleased layers untouched") {
    RunConfig cfg = tiny_config(Regime::Hatl, Task::S2T);
    // Thresholds so loose that every monitored epoch is a plateau.
    cfg.delta_bleu = cfg.tau_bleu = 1e9;
    cfg.controller.early_stop = 100;
    cfg.max_epochs = 16;
    LayeredModel m = initial_model(cfg, tiny_backbone());
    std::vector<std::vector<Matrix>> start;
    for (int l = 1; l <= 3; ++l) start.push_back(backbone_values(m, l));
    std::vector<int> layers_per_epoch;
    TrainingHooks hooks;
    hooks.after_epoch = [&](int, const LayeredModel& model) {
      const auto released = model.trainable().layers();
      layers_per_epoch.push_back(static_cast<int>(released.size()));
      for (int l = 1; l <= 3; ++l)
        if (std::find(released.begin(), released.end(), l) == released.end())
          CHECK(layer_equal(model, l, start[static_cast<std::size_t>(l - 1)]));
    };
    const RunReport r = run_training(cfg, tiny_data(), m, hooks);
    // Plateau ticks on 3..6 schedule L3 at 6; it trains from 7. Cooldown
    // 7..9, ticks 10..13, L2 from 14.
    CHECK(r.release_epochs == std::vector<int>{7, 14});
    REQUIRE(layers_per_epoch.size() == 16);
    CHECK(layers_per_epoch[5] == 0);
    CHECK(layers_per_epoch[6] == 1);
    CHECK(layers_per_epoch[13] == 2);
    CHECK(r.final_trainable.layers() == std::vector<int>{2, 3});
  }

  TEST_CASE("runs are deterministic and checkpoints reproduce every split") {
    RunConfig cfg = tiny_config(Regime::Hatl, Task::S2G2T);
    LayeredModel a = initial_model(cfg, tiny_backbone());
    LayeredModel b = initial_model(cfg, tiny_backbone());
    const RunReport ra = run_training(cfg, tiny_data(), a);
    const RunReport rb = run_training(cfg, tiny_data(), b);
    CHECK(metrics_csv(ra) == metrics_csv(rb));
    CHECK(format_events(ra.events) == format_events(rb.events));

    const auto path = std::filesystem::temp_directory_path() / "hatl_test_run.ckpt";
    ra.checkpoint.write(path.string());
    LayeredModel back = model_from_checkpoint(Checkpoint::read(path.string()));
    for (const char* split : {"train", "dev", "test"}) {
      CAPTURE(split);
      const SplitReport x = evaluate(a, cfg, tiny_data(), split);
      const SplitReport y = evaluate(back, cfg, tiny_data(), split);
      CHECK(x.hyps == y.hyps);
      CHECK(x.scores.bleu == y.scores.bleu);
      CHECK(x.scores.rouge == y.scores.rouge);
      CHECK(x.gloss_bleu4 == y.gloss_bleu4);
    }
  }

  TEST_CASE("run outputs") {
    RunConfig cfg = tiny_config(Regime::Classical, Task::S2T);
    cfg.max_epochs = 2;
    LayeredModel m = initial_model(cfg, tiny_backbone());
    const RunReport r = run_training(cfg, tiny_data(), m);
    const auto dir = std::filesystem::temp_directory_path() / "hatl_test_outputs";
    std::filesystem::remove_all(dir);
    write_run_outputs(r, dir.string());
    for (const char* f : {"report.json", "metrics.csv", "events.tsv", "timing.tsv", "hyp.txt", "ref.txt"})
      CHECK(std::filesystem::exists(dir / f));
    const std::string csv = metrics_csv(r);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(csv.rfind("epoch,loss_total,", 0) == 0);
    const std::string json = report_json(r);
    CHECK(json.find("\"schema\": \"hatl-run-report/1\"") != std::string::npos);
  }

  TEST_CASE("references scored against themselves") {
    RunConfig cfg = tiny_config(Regime::Full, Task::S2T);
    LayeredModel m = initial_model(cfg, tiny_backbone());
    EvalOptions opt;
    opt.references_as_hypotheses = true;
    const SplitReport r = evaluate(m, cfg, tiny_data(), "dev", opt);
    for (double b : r.scores.bleu) CHECK(b == doctest::Approx(1.0));
    CHECK(r.scores.rouge == doctest::Approx(1.0));
  }

  TEST_CASE("pretraining separates clean source frames") {
    data::DatasetSpec spec;
    spec.noise = 0.05;
    const data::Dataset d = data::generate_dataset(spec);
    RunConfig cfg;
    cfg.model.n_layers = 2;
    cfg.model.backbone_width = 8;
    PretrainReport rep;
    const Checkpoint a = pretrain_backbone(cfg, d, &rep);
    MESSAGE("held-out frame accuracy " << rep.best_accuracy << " after " << rep.epochs << " epochs");
    CHECK(rep.best_accuracy >= 0.95);
    CHECK(a.require_string("kind") == "backbone");
    CHECK(pretrain_backbone(cfg, d).serialize() == a.serialize());
  }

  TEST_CASE("controller replay matches the scripted traces") {
    for (const auto& tr : traces::all()) {
      CAPTURE(tr.name);
      const auto events = simulate_controller(tr.cfg, tr.metrics, tr.layers, tr.rows);
      CHECK(events == traces::run(tr).raw);
    }
  }

  TEST_CASE("trace files") {
    const auto p = std::filesystem::temp_directory_path() / "hatl_test_trace.csv";
    std::ofstream(p) << "# comment\nepoch,bleu4,ctc_loss\n1,0.1,2.0\n2,0.2,1.5\n";
    const auto rows = read_trace_csv(p.string());
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].at("bleu4") == 0.2);
    CHECK(rows[1].count("epoch") == 0);
    std::ofstream(p) << "bleu4\n0.1,0.2\n";
    CHECK_THROWS_AS(read_trace_csv(p.string()), ParseError);
    std::ofstream(p) << "bleu4\nabc\n";
    CHECK_THROWS_AS(read_trace_csv(p.string()), ParseError);
  }

  TEST_CASE("model sizing from data") {
    ModelConfig m;
    m.max_text_len = 3;
    CHECK_THROWS_AS(fit_model_to_data(m, tiny_data()), ConfigError);
    m.max_text_len = 32;
    fit_model_to_data(m, tiny_data());
    CHECK(m.input_dim == 6);
    CHECK(m.gloss_vocab == 6);
  }
}
