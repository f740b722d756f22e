#pragma once

// Training orchestration: backbone pretraining on the source domain, then
// fine-tuning on the shifted domain under one of three regimes
//   classical  only the translation model t is trainable
//   full       every group is trainable from the first step
//   hatl       the controller releases backbone layers on plateaus
// for either task
//   s2t        text cross-entropy plus frame supervision, no CTC
//   s2g2t      adds the CTC gloss alignment loss

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hatl/checkpoint.hpp"
#include "hatl/config.hpp"
#include "hatl/controller.hpp"
#include "hatl/data.hpp"
#include "hatl/decode.hpp"
#include "hatl/losses.hpp"
#include "hatl/metrics.hpp"
#include "hatl/model.hpp"
#include "hatl/optim.hpp"

namespace hatl {

enum class Regime { Classical, Full, Hatl };
enum class Task { S2T, S2G2T };

Regime parse_regime(const std::string& s);
Task parse_task(const std::string& s);
const char* to_string(Regime r);
const char* to_string(Task t);

struct RunConfig {
  Regime regime = Regime::Hatl;
  Task task = Task::S2G2T;
  ModelConfig model;
  OptimizerConfig optim;
  ControllerConfig controller;
  double delta_bleu = 0.002;
  double delta_ctc = 0.003;
  double tau_bleu = 0.002;
  double tau_ctc = 0.003;
  losses::LossWeights weights;
  decode::BeamConfig beam;
  int lm_order = 4;
  double lm_k = 0.1;
  int max_epochs = 40;
  int batch_size = 8;
  std::uint64_t seed = 1;
  int eval_workers = 1;

  // Backbone pretraining.
  int pretrain_max_epochs = 30;
  int pretrain_patience = 3;
  double pretrain_lr = 1e-3;
  double pretrain_holdout = 0.2;

  std::string data_dir;
  std::string pretrained;

  // Reads every known key from `kv`; the caller checks for leftovers.
  static RunConfig from(KeyValues& kv);
  static RunConfig load(const std::string& path);
  void validate() const;
  // Loss weights after task rules (w_ctc = 0 for s2t).
  losses::LossWeights effective_weights() const;
  std::vector<MonitoredMetric> monitored() const;
  std::string echo() const;
};

// Sizes the model vocabularies and input width from a dataset.
void fit_model_to_data(ModelConfig& m, const data::Dataset& d);

// Loss of one padded batch. Each sample is trimmed to its unmasked frames and
// text positions. With `backward` the weighted gradients are accumulated into
// the parameters' grad fields (not zeroed first).
losses::CompositeLoss batch_loss(LayeredModel& model, const data::Batch& batch, const losses::LossWeights& w,
                                 bool backward);

struct PretrainReport {
  int epochs = 0;
  int best_epoch = 0;
  double best_accuracy = 0.0;
  std::vector<double> accuracy;  // held-out frame accuracy per epoch
};

// Fraction of frames whose backbone-head argmax equals the frame label.
double frame_accuracy(LayeredModel& model, const data::Split& split);

// Trains the backbone and its frame classifier on the pretrain split and
// returns a backbone-only checkpoint.
Checkpoint pretrain_backbone(const RunConfig& cfg, const data::Dataset& d, PretrainReport* report = nullptr);

struct EpochLog {
  int epoch = 0;
  losses::LossParts loss;
  double loss_total = 0.0;
  metrics::TranslationScores dev;
  double dev_ctc = 0.0;  // s2g2t only
  int trainable_layers = 0;
  std::size_t trainable_params = 0;
  double seconds = 0.0;
  std::string decision;
};

struct SplitReport {
  metrics::TranslationScores scores;
  std::vector<TokenSeq> hyps, refs;
  double gloss_bleu4 = -1.0;  // s2g2t: CTC gloss decode vs reference glosses
};

struct RunReport {
  RunConfig config;
  std::vector<EpochLog> epochs;
  std::vector<ControllerEvent> events;
  std::vector<int> release_epochs;  // epochs at whose start a layer became trainable
  int best_epoch = 0;
  double best_dev_bleu4 = 0.0;
  SplitReport dev, test;
  double total_seconds = 0.0;
  TrainableSet final_trainable;
  // Best-epoch parameters with the final optimizer and controller state.
  Checkpoint checkpoint;
};

struct TrainingHooks {
  // Called after every epoch with the model in its post-epoch state.
  std::function<void(int epoch, const LayeredModel&)> after_epoch;
};

// Full fine-tuning run. The model must already hold the pretrained backbone.
// On return the model holds the best-epoch parameters.
RunReport run_training(const RunConfig& cfg, const data::Dataset& d, LayeredModel& model,
                       const TrainingHooks& hooks = {});

// Builds the fine-tuning model: fresh translation model from cfg.seed plus the
// pretrained backbone.
LayeredModel initial_model(const RunConfig& cfg, const Checkpoint& backbone);

decode::NGramLM train_lm(const RunConfig& cfg, const data::Dataset& d);

// Greedy decoding of a split (per-epoch monitoring).
std::vector<TokenSeq> greedy_split(LayeredModel& model, const data::Split& split, int workers);
// Beam search with LM fusion (final reports).
std::vector<TokenSeq> beam_split(LayeredModel& model, const data::Split& split, const decode::BeamConfig& beam,
                                 const decode::NGramLM* lm, int workers);
// CTC loss of the encoder's gloss head divided by the target length,
// averaged over samples.
double split_ctc_loss(LayeredModel& model, const data::Split& split);

struct EvalOptions {
  bool beam = true;
  bool references_as_hypotheses = false;  // debug identity check
};

SplitReport evaluate(LayeredModel& model, const RunConfig& cfg, const data::Dataset& d, const std::string& split,
                     const EvalOptions& opt = {});

// Output files of a run: report.json, metrics.csv, events.tsv, timing.tsv,
// hyp.txt, ref.txt (test split). best.ckpt is written by the caller.
void write_run_outputs(const RunReport& r, const std::string& dir);
std::string metrics_csv(const RunReport& r);
std::string report_json(const RunReport& r);
void write_lines(const std::vector<TokenSeq>& seqs, const std::string& path);

// Replays a metric trace (one map per epoch) through a controller. Pending
// releases are committed at the start of the following epoch.
std::vector<ControllerEvent> simulate_controller(const ControllerConfig& cfg, const std::vector<MonitoredMetric>& m,
                                                 int n_layers, const std::vector<std::map<std::string, double>>& trace);

// Trace CSV: header row of metric names (an optional leading `epoch` column is
// ignored), one row per epoch.
std::vector<std::map<std::string, double>> read_trace_csv(const std::string& path);

}  // namespace hatl
