#include "hatl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <thread>

#include "hatl/ctc.hpp"
#include "hatl/errors.hpp"

namespace hatl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string g10(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

Eigen::Index valid_count(const losses::Mask& m) { return static_cast<Eigen::Index>(m.count()); }

// Runs fn(i) for i in [0, n) over `workers` threads; results are written by
// index so the outcome never depends on scheduling.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t k = 0; k < w; ++k)
    pool.emplace_back([&, k] {
      for (std::size_t i = k; i < n; i += w) fn(i);
    });
  for (auto& t : pool) t.join();
}

std::vector<TokenSeq> texts(const data::Split& split) {
  std::vector<TokenSeq> out;
  out.reserve(split.size());
  for (const auto& s : split) out.push_back(s.text);
  return out;
}

}  // namespace

Regime parse_regime(const std::string& s) {
  if (s == "classical") return Regime::Classical;
  if (s == "full") return Regime::Full;
  if (s == "hatl") return Regime::Hatl;
  throw ConfigError("unknown regime '" + s + "' (expected classical, full or hatl)");
}

Task parse_task(const std::string& s) {
  if (s == "s2t") return Task::S2T;
  if (s == "s2g2t") return Task::S2G2T;
  throw ConfigError("unknown task '" + s + "' (expected s2t or s2g2t)");
}

const char* to_string(Regime r) {
  switch (r) {
    case Regime::Classical: return "classical";
    case Regime::Full: return "full";
    case Regime::Hatl: return "hatl";
  }
  return "?";
}

const char* to_string(Task t) { return t == Task::S2T ? "s2t" : "s2g2t"; }

RunConfig RunConfig::from(KeyValues& kv) {
  RunConfig c;
  c.regime = parse_regime(kv.get_string("regime", to_string(c.regime)));
  c.task = parse_task(kv.get_string("task", to_string(c.task)));
  c.seed = static_cast<std::uint64_t>(kv.get_long("seed", static_cast<long>(c.seed)));
  c.max_epochs = kv.get_int("max_epochs", c.max_epochs);
  c.batch_size = kv.get_int("batch_size", c.batch_size);
  c.eval_workers = kv.get_int("eval_workers", c.eval_workers);
  c.data_dir = kv.get_string("data_dir", c.data_dir);
  c.pretrained = kv.get_string("pretrained", c.pretrained);

  ModelConfig& m = c.model;
  m.backbone_width = kv.get_int("model.backbone_width", m.backbone_width);
  m.n_layers = kv.get_int("model.n_layers", m.n_layers);
  m.hidden = kv.get_int("model.hidden", m.hidden);
  m.encoder_layers = kv.get_int("model.encoder_layers", m.encoder_layers);
  m.max_text_len = kv.get_int("model.max_text_len", m.max_text_len);
  m.init_scale = kv.get_double("model.init_scale", m.init_scale);

  OptimizerConfig& o = c.optim;
  o.beta1 = kv.get_double("optim.beta1", o.beta1);
  o.beta2 = kv.get_double("optim.beta2", o.beta2);
  o.eps = kv.get_double("optim.eps", o.eps);
  o.weight_decay = kv.get_double("optim.weight_decay", o.weight_decay);
  o.lr_backbone = kv.get_double("optim.lr_backbone", o.lr_backbone);
  o.lr_encoder = kv.get_double("optim.lr_encoder", o.lr_encoder);
  o.lr_decoder = kv.get_double("optim.lr_decoder", o.lr_decoder);
  o.llrd_alpha = kv.get_double("optim.llrd_alpha", o.llrd_alpha);
  o.warmup_min_steps = kv.get_long("optim.warmup_min_steps", o.warmup_min_steps);
  o.warmup_fraction = kv.get_double("optim.warmup_fraction", o.warmup_fraction);
  o.clip_norm = kv.get_double("optim.clip_norm", o.clip_norm);

  ControllerConfig& k = c.controller;
  k.warmup_epochs = kv.get_int("controller.warmup_epochs", k.warmup_epochs);
  k.patience = kv.get_int("controller.patience", k.patience);
  k.window = kv.get_int("controller.window", k.window);
  k.cooldown = kv.get_int("controller.cooldown", k.cooldown);
  k.early_stop = kv.get_int("controller.early_stop", k.early_stop);
  k.decay_every = kv.get_int("controller.decay_every", k.decay_every);
  k.decay_factor = kv.get_double("controller.decay_factor", k.decay_factor);
  const std::string crit = kv.get_string("controller.criterion2", "best");
  if (crit != "best" && crit != "smoothed")
    throw ConfigError("controller.criterion2 must be best or smoothed, got '" + crit + "'");
  k.criterion2_smoothed = crit == "smoothed";
  const std::string scope = kv.get_string("controller.early_stop_scope", "after_last_release");
  if (scope != "after_last_release" && scope != "always")
    throw ConfigError("controller.early_stop_scope must be after_last_release or always, got '" + scope + "'");
  k.stop_after_last_release = scope == "after_last_release";
  c.delta_bleu = kv.get_double("controller.delta_bleu", c.delta_bleu);
  c.delta_ctc = kv.get_double("controller.delta_ctc", c.delta_ctc);
  c.tau_bleu = kv.get_double("controller.tau_bleu", c.delta_bleu);
  c.tau_ctc = kv.get_double("controller.tau_ctc", c.delta_ctc);

  c.weights.ctc = kv.get_double("loss.w_ctc", c.weights.ctc);
  c.weights.ce = kv.get_double("loss.w_ce", c.weights.ce);
  c.weights.enc = kv.get_double("loss.w_enc", c.weights.enc);
  c.weights.bb = kv.get_double("loss.w_bb", c.weights.bb);

  c.beam.width = kv.get_int("decode.beam_width", c.beam.width);
  c.beam.lm_weight = kv.get_double("decode.lm_weight", c.beam.lm_weight);
  c.beam.max_len = kv.get_int("decode.max_len", c.beam.max_len);
  c.beam.blank_bias = kv.get_double("decode.blank_bias", c.beam.blank_bias);
  c.beam.temperature = kv.get_double("decode.temperature", c.beam.temperature);
  c.lm_order = kv.get_int("decode.lm_order", c.lm_order);
  c.lm_k = kv.get_double("decode.lm_k", c.lm_k);

  c.pretrain_max_epochs = kv.get_int("pretrain.max_epochs", c.pretrain_max_epochs);
  c.pretrain_patience = kv.get_int("pretrain.patience", c.pretrain_patience);
  c.pretrain_lr = kv.get_double("pretrain.lr", c.pretrain_lr);
  c.pretrain_holdout = kv.get_double("pretrain.holdout", c.pretrain_holdout);
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  KeyValues kv = KeyValues::load(path);
  RunConfig c = from(kv);
  kv.require_consumed();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_workers < 1) throw ConfigError("eval_workers must be >= 1");
  if (lm_order < 1) throw ConfigError("decode.lm_order must be >= 1");
  if (!(lm_k > 0)) throw ConfigError("decode.lm_k must be > 0");
  if (pretrain_max_epochs < 1 || pretrain_patience < 1) throw ConfigError("pretrain epochs/patience must be >= 1");
  if (!(pretrain_lr > 0)) throw ConfigError("pretrain.lr must be > 0");
  if (!(pretrain_holdout > 0 && pretrain_holdout < 1)) throw ConfigError("pretrain.holdout must lie in (0, 1)");
  if (!(delta_bleu > 0 && delta_ctc > 0 && tau_bleu > 0 && tau_ctc > 0))
    throw ConfigError("controller thresholds must be > 0");
  optim.validate();
  controller.validate();
  weights.validate();
  beam.validate();
  if (effective_weights().ce + effective_weights().ctc == 0)
    throw ConfigError("at least one of loss.w_ce and loss.w_ctc must be positive");
}

losses::LossWeights RunConfig::effective_weights() const {
  losses::LossWeights w = weights;
  if (task == Task::S2T) w.ctc = 0.0;
  return w;
}

std::vector<MonitoredMetric> RunConfig::monitored() const {
  std::vector<MonitoredMetric> m{{"bleu4", true, delta_bleu, tau_bleu}};
  if (task == Task::S2G2T) m.push_back({"ctc_loss", false, delta_ctc, tau_ctc});
  return m;
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  os << "regime = " << to_string(regime) << "\ntask = " << to_string(task) << "\nseed = " << seed
     << "\nmax_epochs = " << max_epochs << "\nbatch_size = " << batch_size << "\neval_workers = " << eval_workers
     << "\nmodel.backbone_width = " << model.backbone_width << "\nmodel.n_layers = " << model.n_layers
     << "\nmodel.hidden = " << model.hidden << "\nmodel.encoder_layers = " << model.encoder_layers
     << "\nmodel.max_text_len = " << model.max_text_len << "\nmodel.init_scale = " << g17(model.init_scale)
     << "\noptim.beta1 = " << g17(optim.beta1) << "\noptim.beta2 = " << g17(optim.beta2)
     << "\noptim.eps = " << g17(optim.eps) << "\noptim.weight_decay = " << g17(optim.weight_decay)
     << "\noptim.lr_backbone = " << g17(optim.lr_backbone) << "\noptim.lr_encoder = " << g17(optim.lr_encoder)
     << "\noptim.lr_decoder = " << g17(optim.lr_decoder) << "\noptim.llrd_alpha = " << g17(optim.llrd_alpha)
     << "\noptim.warmup_min_steps = " << optim.warmup_min_steps
     << "\noptim.warmup_fraction = " << g17(optim.warmup_fraction) << "\noptim.clip_norm = " << g17(optim.clip_norm)
     << "\ncontroller.warmup_epochs = " << controller.warmup_epochs << "\ncontroller.patience = " << controller.patience
     << "\ncontroller.window = " << controller.window << "\ncontroller.cooldown = " << controller.cooldown
     << "\ncontroller.early_stop = " << controller.early_stop << "\ncontroller.decay_every = " << controller.decay_every
     << "\ncontroller.decay_factor = " << g17(controller.decay_factor)
     << "\ncontroller.criterion2 = " << (controller.criterion2_smoothed ? "smoothed" : "best")
     << "\ncontroller.early_stop_scope = " << (controller.stop_after_last_release ? "after_last_release" : "always")
     << "\ncontroller.delta_bleu = " << g17(delta_bleu) << "\ncontroller.delta_ctc = " << g17(delta_ctc)
     << "\ncontroller.tau_bleu = " << g17(tau_bleu) << "\ncontroller.tau_ctc = " << g17(tau_ctc)
     << "\nloss.w_ctc = " << g17(weights.ctc) << "\nloss.w_ce = " << g17(weights.ce)
     << "\nloss.w_enc = " << g17(weights.enc) << "\nloss.w_bb = " << g17(weights.bb)
     << "\ndecode.beam_width = " << beam.width << "\ndecode.lm_weight = " << g17(beam.lm_weight)
     << "\ndecode.max_len = " << beam.max_len << "\ndecode.blank_bias = " << g17(beam.blank_bias)
     << "\ndecode.temperature = " << g17(beam.temperature) << "\ndecode.lm_order = " << lm_order
     << "\ndecode.lm_k = " << g17(lm_k) << "\npretrain.max_epochs = " << pretrain_max_epochs
     << "\npretrain.patience = " << pretrain_patience << "\npretrain.lr = " << g17(pretrain_lr)
     << "\npretrain.holdout = " << g17(pretrain_holdout) << "\n";
  if (!data_dir.empty()) os << "data_dir = " << data_dir << "\n";
  if (!pretrained.empty()) os << "pretrained = " << pretrained << "\n";
  return os.str();
}

void fit_model_to_data(ModelConfig& m, const data::Dataset& d) {
  if (d.train.empty() || d.pretrain.empty()) throw ConfigError("dataset: empty pretrain or train split");
  m.input_dim = static_cast<int>(d.train.front().frames.cols());
  int max_gloss = 1, max_word = kFirstWord;
  std::size_t longest = 0;
  for (const data::Split* s : {&d.pretrain, &d.train, &d.dev, &d.test})
    for (const auto& r : *s) {
      if (r.frames.cols() != m.input_dim) throw ConfigError("dataset: inconsistent feature dimension");
      for (TokenId g : r.gloss) max_gloss = std::max(max_gloss, static_cast<int>(g));
      for (TokenId g : r.frame_labels) max_gloss = std::max(max_gloss, static_cast<int>(g));
      for (TokenId w : r.text) max_word = std::max(max_word, static_cast<int>(w));
      longest = std::max(longest, r.text.size());
    }
  m.gloss_vocab = max_gloss;
  m.text_vocab = max_word + 1;
  if (static_cast<int>(longest) + 1 > m.max_text_len)
    throw ConfigError("model.max_text_len " + std::to_string(m.max_text_len) + " is shorter than the longest text + 1 (" +
                      std::to_string(longest + 1) + ")");
}

losses::CompositeLoss batch_loss(LayeredModel& model, const data::Batch& batch, const losses::LossWeights& w,
                                 bool backward) {
  const std::size_t B = batch.size();
  if (B == 0) throw std::invalid_argument("batch_loss: empty batch");
  const bool want_text = w.ce > 0;
  const bool want_ctc = w.ctc > 0;
  std::vector<ad::Tape> tapes;
  tapes.reserve(B);
  std::vector<LayeredModel::Heads> heads(B);
  std::vector<Matrix> text_logits, gloss_logits, bb_logits;
  std::vector<TokenSeq> targets, labels;
  std::vector<losses::Mask> text_valid, frame_valid;

  for (std::size_t i = 0; i < B; ++i) {
    const Eigen::Index G = valid_count(batch.frame_mask[i]);
    const Eigen::Index S = valid_count(batch.text_mask[i]);
    tapes.emplace_back(backward);
    const TokenSeq input(batch.decoder_input[i].begin(), batch.decoder_input[i].begin() + S);
    heads[i] = model.forward(tapes[i], batch.frames[i].topRows(G), want_text ? std::span<const TokenId>(input)
                                                                              : std::span<const TokenId>());
    gloss_logits.push_back(tapes[i].value(heads[i].gloss_logits));
    bb_logits.push_back(tapes[i].value(heads[i].bb_logits));
    labels.emplace_back(batch.frame_labels[i].begin(), batch.frame_labels[i].begin() + G);
    frame_valid.push_back(losses::all_valid(G));
    if (want_text) {
      text_logits.push_back(tapes[i].value(heads[i].text_logits));
      targets.emplace_back(batch.decoder_target[i].begin(), batch.decoder_target[i].begin() + S);
      text_valid.push_back(losses::all_valid(S));
    }
  }

  losses::LossParts parts;
  losses::MaskedCe ce, enc, bb;
  std::vector<Matrix> ctc_grads;
  if (want_text) {
    ce = losses::cross_entropy_text(text_logits, targets, text_valid);
    parts.ce = ce.loss;
  }
  if (w.enc > 0) {
    enc = losses::framewise_ce(gloss_logits, labels, frame_valid);
    parts.enc = enc.loss;
  }
  if (w.bb > 0) {
    bb = losses::framewise_ce(bb_logits, labels, frame_valid);
    parts.bb = bb.loss;
  }
  if (want_ctc) {
    for (std::size_t i = 0; i < B; ++i) {
      auto lg = ctc::loss_and_grad<double>(ctc::log_softmax_rows(gloss_logits[i]), batch.gloss[i]);
      parts.ctc += lg.loss / static_cast<double>(B);
      ctc_grads.push_back(lg.grad / static_cast<double>(B));
    }
  }
  const losses::CompositeLoss total = losses::composite_loss(parts, w);

  if (backward) {
    for (std::size_t i = 0; i < B; ++i) {
      ad::Tape& t = tapes[i];
      if (want_text) t.seed(heads[i].text_logits, w.ce * ce.grads[i]);
      if (w.enc > 0 || want_ctc) {
        Matrix g = Matrix::Zero(gloss_logits[i].rows(), gloss_logits[i].cols());
        if (w.enc > 0) g += w.enc * enc.grads[i];
        if (want_ctc) g += w.ctc * ctc_grads[i];
        t.seed(heads[i].gloss_logits, g);
      }
      if (w.bb > 0) t.seed(heads[i].bb_logits, w.bb * bb.grads[i]);
      t.backward();
    }
  }
  return total;
}

double frame_accuracy(LayeredModel& model, const data::Split& split) {
  long hit = 0, total = 0;
  for (const auto& s : split) {
    const ForwardResult r = model.forward(s.frames, {});
    for (Eigen::Index g = 0; g < r.bb_logits.rows(); ++g) {
      Eigen::Index best;
      r.bb_logits.row(g).maxCoeff(&best);
      hit += best == s.frame_labels[static_cast<std::size_t>(g)];
      ++total;
    }
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

Checkpoint pretrain_backbone(const RunConfig& cfg, const data::Dataset& d, PretrainReport* report) {
  cfg.validate();
  ModelConfig mc = cfg.model;
  fit_model_to_data(mc, d);
  LayeredModel model = LayeredModel::build(mc, cfg.seed ^ 0xb5ad4eceda1ce2a9ULL);

  const std::size_t n_hold =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg.pretrain_holdout * d.pretrain.size())));
  if (n_hold >= d.pretrain.size()) throw ConfigError("pretrain split too small for the hold-out fraction");
  const data::Split fit(d.pretrain.begin(), d.pretrain.end() - static_cast<long>(n_hold));
  const data::Split held(d.pretrain.end() - static_cast<long>(n_hold), d.pretrain.end());

  OptimizerConfig oc = cfg.optim;
  oc.lr_backbone = oc.lr_encoder = oc.lr_decoder = cfg.pretrain_lr;
  oc.llrd_alpha = 1.0;
  const long steps_per_epoch = static_cast<long>((fit.size() + cfg.batch_size - 1) / cfg.batch_size);
  oc.warmup_min_steps = steps_per_epoch;
  oc.warmup_fraction = 0.0;
  const TrainableSet all = TrainableSet::everything(mc.n_layers);
  AdamW opt(model.params(), all, mc.n_layers, oc);
  const WarmupSchedule warm(steps_per_epoch * cfg.pretrain_max_epochs, oc.warmup_min_steps, 0.0);
  const losses::LossWeights w{0.0, 0.0, 0.0, 1.0};

  PretrainReport rep;
  ParamSnapshot best = model.snapshot();
  long step = 0;
  int stale = 0;
  for (int epoch = 1; epoch <= cfg.pretrain_max_epochs; ++epoch) {
    for (const auto& batch : data::batch_iter(fit, cfg.batch_size, cfg.seed ^ 0x7f4a7c15ULL, epoch)) {
      model.zero_grad();
      batch_loss(model, batch, w, true);
      opt.step(model.params(), warm.multiplier(++step));
    }
    const double acc = frame_accuracy(model, held);
    rep.accuracy.push_back(acc);
    rep.epochs = epoch;
    if (acc > rep.best_accuracy + 1e-4 || epoch == 1) {
      rep.best_accuracy = std::max(acc, rep.best_accuracy);
      rep.best_epoch = epoch;
      best = model.snapshot(epoch, acc);
      stale = 0;
    } else if (++stale >= cfg.pretrain_patience) {
      break;
    }
  }
  model.restore(best);

  Checkpoint ck;
  put_model(ck, model, true);
  ck.put("meta.epoch", std::to_string(rep.best_epoch));
  ck.put("meta.pretrain_accuracy", g17(rep.best_accuracy));
  if (report) *report = rep;
  return ck;
}

LayeredModel initial_model(const RunConfig& cfg, const Checkpoint& backbone) {
  const ModelConfig stored = checkpoint_model_config(backbone);
  ModelConfig mc = cfg.model;
  mc.input_dim = stored.input_dim;
  mc.gloss_vocab = stored.gloss_vocab;
  mc.text_vocab = stored.text_vocab;
  if (mc.backbone_width != stored.backbone_width || mc.n_layers != stored.n_layers)
    throw CheckpointError("pretrained backbone has width " + std::to_string(stored.backbone_width) + " and " +
                          std::to_string(stored.n_layers) + " layers; config asks for " +
                          std::to_string(mc.backbone_width) + " and " + std::to_string(mc.n_layers));
  LayeredModel m = LayeredModel::build(mc, cfg.seed);
  m.load_backbone(checkpoint_snapshot(backbone));
  return m;
}

decode::NGramLM train_lm(const RunConfig& cfg, const data::Dataset& d) {
  if (d.train.empty()) throw ConfigError("language model: empty train split");
  int vocab = kFirstWord + 1;
  for (const data::Split* s : {&d.train, &d.dev, &d.test})
    for (const auto& r : *s)
      for (TokenId t : r.text) vocab = std::max(vocab, static_cast<int>(t) + 1);
  return decode::NGramLM::train(texts(d.train), cfg.lm_order, vocab, cfg.lm_k);
}

std::vector<TokenSeq> greedy_split(LayeredModel& model, const data::Split& split, int workers) {
  std::vector<TokenSeq> out(split.size());
  const int max_len = model.config().max_text_len - 1;
  parallel_for(split.size(), workers, [&](std::size_t i) { out[i] = decode::greedy_decode(model, split[i].frames, max_len); });
  return out;
}

std::vector<TokenSeq> beam_split(LayeredModel& model, const data::Split& split, const decode::BeamConfig& beam,
                                 const decode::NGramLM* lm, int workers) {
  std::vector<TokenSeq> out(split.size());
  parallel_for(split.size(), workers,
               [&](std::size_t i) { out[i] = decode::beam_search(model, split[i].frames, beam, lm); });
  return out;
}

double split_ctc_loss(LayeredModel& model, const data::Split& split) {
  if (split.empty()) return 0.0;
  double total = 0.0;
  for (const auto& s : split) {
    const ForwardResult r = model.forward(s.frames, {});
    total += ctc::loss<double>(ctc::log_softmax_rows(r.gloss_logits), s.gloss) / static_cast<double>(s.gloss.size());
  }
  return total / static_cast<double>(split.size());
}

SplitReport evaluate(LayeredModel& model, const RunConfig& cfg, const data::Dataset& d, const std::string& name,
                     const EvalOptions& opt) {
  const data::Split& split = d.split(name);
  if (split.empty()) throw ConfigError("evaluate: split " + name + " is empty");
  if (split.front().frames.cols() != model.config().input_dim)
    throw CheckpointError("evaluate: checkpoint expects " + std::to_string(model.config().input_dim) +
                          "-dimensional frames, split has " + std::to_string(split.front().frames.cols()));
  SplitReport r;
  r.refs = texts(split);
  if (opt.references_as_hypotheses) {
    r.hyps = r.refs;
  } else if (opt.beam) {
    const decode::NGramLM lm = train_lm(cfg, d);
    r.hyps = beam_split(model, split, cfg.beam, cfg.beam.lm_weight > 0 ? &lm : nullptr, cfg.eval_workers);
  } else {
    r.hyps = greedy_split(model, split, cfg.eval_workers);
  }
  r.scores = metrics::score_translations(r.hyps, r.refs);
  if (cfg.task == Task::S2G2T) {
    std::vector<TokenSeq> gh, gr;
    for (const auto& s : split) {
      const ForwardResult f = model.forward(s.frames, {});
      gh.push_back(decode::ctc_gloss_decode(ctc::log_softmax_rows(f.gloss_logits), cfg.beam.blank_bias,
                                            cfg.beam.temperature));
      gr.push_back(s.gloss);
    }
    r.gloss_bleu4 = metrics::corpus_bleu(gh, gr, 4).bleu;
  }
  return r;
}

RunReport run_training(const RunConfig& cfg, const data::Dataset& d, LayeredModel& model, const TrainingHooks& hooks) {
  cfg.validate();
  const auto t_start = Clock::now();
  const int n = model.config().n_layers;
  const losses::LossWeights w = cfg.effective_weights();
  if (d.train.empty() || d.dev.empty()) throw ConfigError("training needs non-empty train and dev splits");
  if (d.train.front().frames.cols() != model.config().input_dim)
    throw ConfigError("dataset feature dimension does not match the model");

  RunReport rep;
  rep.config = cfg;
  Controller ctl(cfg.controller, cfg.monitored(), n, cfg.regime == Regime::Hatl);
  model.set_trainable(cfg.regime == Regime::Full ? TrainableSet::everything(n) : TrainableSet::head_only(n));

  const long steps_per_epoch = static_cast<long>((d.train.size() + cfg.batch_size - 1) / cfg.batch_size);
  const WarmupSchedule warm(steps_per_epoch * cfg.max_epochs, cfg.optim.warmup_min_steps, cfg.optim.warmup_fraction);
  std::optional<AdamW> opt;
  opt.emplace(model.params(), model.trainable(), n, cfg.optim);
  long step = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (ctl.pending()) {
      apply_pending(ctl, model, [&](const TrainableSet& u) { opt.emplace(model.params(), u, n, cfg.optim); });
      rep.release_epochs.push_back(epoch);
    }
    const auto t_epoch = Clock::now();
    EpochLog log;
    log.epoch = epoch;
    std::size_t seen = 0;
    for (const auto& batch : data::batch_iter(d.train, cfg.batch_size, cfg.seed, epoch)) {
      model.zero_grad();
      const losses::CompositeLoss L = batch_loss(model, batch, w, true);
      opt->step(model.params(), warm.multiplier(++step));
      const double b = static_cast<double>(batch.size());
      log.loss.ctc += b * L.parts.ctc;
      log.loss.ce += b * L.parts.ce;
      log.loss.enc += b * L.parts.enc;
      log.loss.bb += b * L.parts.bb;
      log.loss_total += b * L.total;
      seen += batch.size();
    }
    const double inv = 1.0 / static_cast<double>(seen);
    log.loss.ctc *= inv;
    log.loss.ce *= inv;
    log.loss.enc *= inv;
    log.loss.bb *= inv;
    log.loss_total *= inv;
    if (!std::isfinite(log.loss_total)) throw NumericError("training loss diverged at epoch " + std::to_string(epoch));

    log.dev = metrics::score_translations(greedy_split(model, d.dev, cfg.eval_workers), texts(d.dev));
    std::map<std::string, double> observed{{"bleu4", log.dev.bleu[3]}};
    if (cfg.task == Task::S2G2T) {
      log.dev_ctc = split_ctc_loss(model, d.dev);
      observed["ctc_loss"] = log.dev_ctc;
    }
    log.trainable_layers = static_cast<int>(model.trainable().layers().size());
    log.trainable_params = 0;
    for (const auto& p : model.params())
      if (p.trainable) log.trainable_params += static_cast<std::size_t>(p.size());

    const EpochDecision dec = ctl.observe_epoch(observed);
    if (dec.new_best) {
      ctl.record_best(model.snapshot(epoch, log.dev.bleu[3]));
      rep.best_epoch = epoch;
      rep.best_dev_bleu4 = log.dev.bleu[3];
    }
    log.decision = to_string(dec.kind);
    log.seconds = seconds_since(t_epoch);
    rep.epochs.push_back(log);
    if (hooks.after_epoch) hooks.after_epoch(epoch, model);
    if (dec.kind == DecisionKind::Stop) break;
  }

  if (ctl.best_snapshot()) model.restore(*ctl.best_snapshot());
  rep.events = ctl.events();
  rep.final_trainable = model.trainable();
  rep.dev = evaluate(model, cfg, d, "dev");
  rep.test = evaluate(model, cfg, d, "test");

  put_model(rep.checkpoint, model);
  rep.checkpoint.put("meta.epoch", std::to_string(rep.best_epoch));
  rep.checkpoint.put("run.config", cfg.echo());
  put_optimizer(rep.checkpoint, *opt, model.params());
  put_controller(rep.checkpoint, ctl);
  rep.checkpoint.put("rng.seed", std::to_string(cfg.seed));
  rep.checkpoint.put("rng.epoch", std::to_string(rep.epochs.size()));
  rep.total_seconds = seconds_since(t_start);
  return rep;
}

std::string metrics_csv(const RunReport& r) {
  std::ostringstream os;
  os << "epoch,loss_total,loss_ctc,loss_ce,loss_enc,loss_bb,dev_bleu1,dev_bleu2,dev_bleu3,dev_bleu4,dev_rouge,dev_ctc,"
        "trainable_layers,trainable_params,decision\n";
  for (const auto& e : r.epochs) {
    os << e.epoch << ',' << g10(e.loss_total) << ',' << g10(e.loss.ctc) << ',' << g10(e.loss.ce) << ','
       << g10(e.loss.enc) << ',' << g10(e.loss.bb);
    for (double b : e.dev.bleu) os << ',' << g10(b);
    os << ',' << g10(e.dev.rouge) << ',' << g10(e.dev_ctc) << ',' << e.trainable_layers << ',' << e.trainable_params
       << ',' << e.decision << '\n';
  }
  return os.str();
}

namespace {

nlohmann::ordered_json scores_json(const SplitReport& s) {
  nlohmann::ordered_json j;
  for (int k = 0; k < 4; ++k) j["bleu" + std::to_string(k + 1)] = s.scores.bleu[k];
  j["rouge_l"] = s.scores.rouge;
  if (s.gloss_bleu4 >= 0) j["gloss_bleu4"] = s.gloss_bleu4;
  return j;
}

}  // namespace

std::string report_json(const RunReport& r) {
  nlohmann::ordered_json j;
  j["schema"] = "hatl-run-report/1";
  j["regime"] = to_string(r.config.regime);
  j["task"] = to_string(r.config.task);
  j["seed"] = r.config.seed;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  KeyValues kv = KeyValues::parse(r.config.echo());
  for (const auto& [k, v] : kv.entries()) cfg[k] = v;
  j["config"] = cfg;
  j["best_epoch"] = r.best_epoch;
  j["best_dev_bleu4"] = r.best_dev_bleu4;
  j["epochs_run"] = r.epochs.size();
  j["release_epochs"] = r.release_epochs;
  j["final_trainable_layers"] = r.final_trainable.layers();
  auto& epochs = j["epochs"] = nlohmann::ordered_json::array();
  for (const auto& e : r.epochs) {
    nlohmann::ordered_json x;
    x["epoch"] = e.epoch;
    x["loss"] = {{"total", e.loss_total}, {"ctc", e.loss.ctc}, {"ce", e.loss.ce}, {"enc", e.loss.enc}, {"bb", e.loss.bb}};
    x["dev"] = {{"bleu1", e.dev.bleu[0]}, {"bleu2", e.dev.bleu[1]}, {"bleu3", e.dev.bleu[2]},
                {"bleu4", e.dev.bleu[3]}, {"rouge_l", e.dev.rouge}};
    if (r.config.task == Task::S2G2T) x["dev"]["ctc_loss"] = e.dev_ctc;
    x["trainable_layers"] = e.trainable_layers;
    x["trainable_params"] = e.trainable_params;
    x["decision"] = e.decision;
    epochs.push_back(x);
  }
  auto& events = j["events"] = nlohmann::ordered_json::array();
  for (const auto& e : r.events) events.push_back({{"epoch", e.epoch}, {"event", e.event}, {"detail", e.detail}});
  j["final"] = {{"dev", scores_json(r.dev)}, {"test", scores_json(r.test)}};
  return j.dump(2) + "\n";
}

void write_lines(const std::vector<TokenSeq>& seqs, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& s : seqs) {
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i];
    out << '\n';
  }
}

void write_run_outputs(const RunReport& r, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path p(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(p / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (p / name).string());
    out << text;
  };
  write("report.json", report_json(r));
  write("metrics.csv", metrics_csv(r));
  write("events.tsv", format_events(r.events));
  std::ostringstream timing;
  timing << "epoch\tseconds\n";
  for (const auto& e : r.epochs) timing << e.epoch << '\t' << g10(e.seconds) << '\n';
  timing << "total\t" << g10(r.total_seconds) << '\n';
  write("timing.tsv", timing.str());
  write_lines(r.test.hyps, (p / "hyp.txt").string());
  write_lines(r.test.refs, (p / "ref.txt").string());
}

std::vector<ControllerEvent> simulate_controller(const ControllerConfig& cfg, const std::vector<MonitoredMetric>& m,
                                                 int n_layers, const std::vector<std::map<std::string, double>>& trace) {
  Controller c(cfg, m, n_layers, true);
  for (const auto& row : trace) {
    if (c.pending()) c.commit_release();
    if (c.observe_epoch(row).kind == DecisionKind::Stop) break;
  }
  return c.events();
}

std::vector<std::map<std::string, double>> read_trace_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open trace " + path);
  std::string line;
  std::vector<std::string> header;
  std::vector<std::map<std::string, double>> out;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (header.empty()) {
      header = cells;
      continue;
    }
    if (cells.size() != header.size()) throw ParseError(path, n, "expected " + std::to_string(header.size()) + " columns");
    std::map<std::string, double> row;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (header[i] == "epoch") continue;
      char* end = nullptr;
      const double v = std::strtod(cells[i].c_str(), &end);
      if (cells[i].empty() || *end != '\0') throw ParseError(path, n, "bad number '" + cells[i] + "'");
      row[header[i]] = v;
    }
    out.push_back(std::move(row));
  }
  if (header.empty()) throw ParseError(path, n, "empty trace");
  return out;
}

}  // namespace hatl
