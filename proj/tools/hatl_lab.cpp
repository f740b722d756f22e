// hatl-lab: dataset generation, training, evaluation, decoding and
// controller replay. Exit codes: 0 success, 2 configuration error,
// 3 numeric failure, 1 anything else.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "hatl/checkpoint.hpp"
#include "hatl/data.hpp"
#include "hatl/errors.hpp"
#include "hatl/harness.hpp"

namespace fs = std::filesystem;
using namespace hatl;

namespace {

struct Common {
  std::string config;
  long seed = -1;
  std::string out;
  std::string data;
  bool single_thread = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key = value configuration file");
  cmd->add_option("--seed", c.seed, "random seed (overrides the config)");
  cmd->add_option("--out", c.out, "output directory");
}

KeyValues load_kv(const std::string& path) { return path.empty() ? KeyValues{} : KeyValues::load(path); }

RunConfig run_config(KeyValues& kv, const Common& c) {
  if (c.seed >= 0) kv.set("seed", std::to_string(c.seed));
  if (!c.data.empty()) kv.set("data_dir", c.data);
  RunConfig cfg = RunConfig::from(kv);
  kv.require_consumed();
  if (c.single_thread) cfg.eval_workers = 1;
  cfg.validate();
  return cfg;
}

data::Dataset load_data(const RunConfig& cfg) {
  if (cfg.data_dir.empty()) throw ConfigError("no dataset: set data_dir in the config or pass --data");
  return data::load_dataset(cfg.data_dir);
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << s;
}

void print_scores(const SplitReport& r) {
  const char* names[] = {"BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4"};
  for (int k = 0; k < 4; ++k) std::printf("%s\t%.4f\n", names[k], r.scores.bleu[k]);
  std::printf("ROUGE-L\t%.4f\n", r.scores.rouge);
}

int cmd_gen_data(const Common& c, const std::string& spec_path) {
  const std::string path = spec_path.empty() ? c.config : spec_path;
  KeyValues kv = load_kv(path);
  if (c.seed >= 0) kv.set("seed", std::to_string(c.seed));
  const data::DatasetSpec spec = data::DatasetSpec::from(kv);
  kv.require_consumed();
  if (c.out.empty()) throw ConfigError("gen-data needs --out");
  const data::Dataset d = data::generate_dataset(spec);
  data::save_dataset(d, c.out, &spec);
  std::printf("split\tsamples\tgloss_len_mean\tgloss_len_cv\ttext_len_mean\ttext_len_cv\tframes_mean\tframes_cv\n");
  for (const char* name : {"pretrain", "train", "dev", "test"}) {
    const data::SplitStats st = data::split_stats(d.split(name));
    std::printf("%s\t%zu\t%.3f\t%.3f\t%.3f\t%.3f\t%.3f\t%.3f\n", name, st.samples, st.gloss_len_mean, st.gloss_len_cv,
                st.text_len_mean, st.text_len_cv, st.frames_mean, st.frames_cv);
  }
  return 0;
}

int cmd_train(const Common& c, const std::string& regime, const std::string& task, const std::string& pretrained) {
  KeyValues kv = load_kv(c.config);
  if (!regime.empty()) kv.set("regime", regime);
  if (!task.empty()) kv.set("task", task);
  if (!pretrained.empty()) kv.set("pretrained", pretrained);
  const RunConfig cfg = run_config(kv, c);
  if (c.out.empty()) throw ConfigError("train needs --out");
  const data::Dataset d = load_data(cfg);
  fs::create_directories(c.out);
  const fs::path out(c.out);

  Checkpoint backbone;
  if (!cfg.pretrained.empty()) {
    backbone = Checkpoint::read(cfg.pretrained);
  } else {
    PretrainReport pr;
    backbone = pretrain_backbone(cfg, d, &pr);
    backbone.write((out / "pretrained.ckpt").string());
    std::fprintf(stderr, "pretrained backbone: %d epochs, held-out frame accuracy %.4f\n", pr.epochs,
                 pr.best_accuracy);
  }
  LayeredModel model = initial_model(cfg, backbone);
  write_text(out / "config.echo", cfg.echo());
  const RunReport rep = run_training(cfg, d, model);
  write_run_outputs(rep, c.out);
  rep.checkpoint.write((out / "best.ckpt").string());
  std::fprintf(stderr, "%s/%s: best epoch %d, dev BLEU-4 %.4f, test BLEU-4 %.4f, %zu epochs\n", to_string(cfg.regime),
               to_string(cfg.task), rep.best_epoch, rep.best_dev_bleu4, rep.test.scores.bleu[3], rep.epochs.size());
  return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt, const std::string& split, bool greedy, bool identity,
             bool write_files) {
  KeyValues kv = load_kv(c.config);
  const RunConfig cfg = run_config(kv, c);
  const data::Dataset d = load_data(cfg);
  if (ckpt.empty()) throw ConfigError("--checkpoint is required");
  LayeredModel model = model_from_checkpoint(Checkpoint::read(ckpt));
  const SplitReport r = evaluate(model, cfg, d, split, EvalOptions{!greedy, identity});
  if (write_files || !c.out.empty()) {
    const fs::path out(c.out.empty() ? "." : c.out);
    fs::create_directories(out);
    write_lines(r.hyps, (out / "hyp.txt").string());
    write_lines(r.refs, (out / "ref.txt").string());
  }
  if (!write_files) print_scores(r);
  return 0;
}

int cmd_simulate(const Common& c, const std::string& trace_path, int layers) {
  KeyValues kv = load_kv(c.config);
  const RunConfig cfg = run_config(kv, c);
  const auto trace = read_trace_csv(trace_path);
  std::vector<MonitoredMetric> m{{"bleu4", true, cfg.delta_bleu, cfg.tau_bleu}};
  if (!trace.empty() && trace.front().count("ctc_loss")) m.push_back({"ctc_loss", false, cfg.delta_ctc, cfg.tau_ctc});
  const auto events = simulate_controller(cfg.controller, m, layers > 0 ? layers : cfg.model.n_layers, trace);
  const std::string text = format_events(events);
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text(fs::path(c.out) / "events.tsv", text);
  }
  std::fputs(text.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical adaptive transfer learning lab"};
  app.require_subcommand(1);

  Common common;
  std::string spec, regime, task, pretrained, checkpoint, split = "test", trace;
  bool greedy = false, identity = false;
  int layers = 0;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic dataset");
  add_common(gen, common);
  gen->add_option("--spec", spec, "dataset spec file (defaults to --config)");

  auto* train = app.add_subcommand("train", "pretrain (unless --pretrained) and fine-tune");
  add_common(train, common);
  train->add_option("--regime", regime)->check(CLI::IsMember({"classical", "full", "hatl"}));
  train->add_option("--task", task)->check(CLI::IsMember({"s2t", "s2g2t"}));
  train->add_option("--pretrained", pretrained, "backbone checkpoint");
  train->add_option("--data", common.data, "dataset directory");
  train->add_flag("--single-thread", common.single_thread, "force single-threaded evaluation");

  auto* eval = app.add_subcommand("eval", "score a checkpoint on a split");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--split", split)->check(CLI::IsMember({"pretrain", "train", "dev", "test"}));
  eval->add_option("--data", common.data, "dataset directory");
  eval->add_flag("--greedy", greedy, "greedy decoding instead of beam search with the LM");
  eval->add_flag("--references-as-hypotheses", identity, "debug: score the references against themselves");
  eval->add_flag("--single-thread", common.single_thread);

  auto* dec = app.add_subcommand("decode", "write hyp.txt and ref.txt for a split");
  add_common(dec, common);
  dec->add_option("--checkpoint", checkpoint)->required();
  dec->add_option("--split", split)->check(CLI::IsMember({"pretrain", "train", "dev", "test"}));
  dec->add_option("--data", common.data, "dataset directory");
  dec->add_flag("--greedy", greedy);
  dec->add_flag("--single-thread", common.single_thread);

  auto* sim = app.add_subcommand("simulate-controller", "replay a metric trace through the controller");
  add_common(sim, common);
  sim->add_option("--trace", trace, "CSV with bleu4 (and optionally ctc_loss) per epoch")->required();
  sim->add_option("--layers", layers, "number of backbone layers (default: model.n_layers)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(common, spec);
    if (train->parsed()) return cmd_train(common, regime, task, pretrained);
    if (eval->parsed()) return cmd_eval(common, checkpoint, split, greedy, identity, false);
    if (dec->parsed()) return cmd_eval(common, checkpoint, split, greedy, false, true);
    if (sim->parsed()) return cmd_simulate(common, trace, layers);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
