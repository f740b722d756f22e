#include "hatl/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "hatl/ctc.hpp"
#include "hatl/errors.hpp"

namespace hatl {

void ModelConfig::validate() const {
  if (n_layers < 2) throw ConfigError("model: n_layers must be >= 2");
  if (input_dim < 1 || backbone_width < 1 || hidden < 1)
    throw ConfigError("model: dimensions must be >= 1");
  if (encoder_layers < 0) throw ConfigError("model: encoder_layers must be >= 0");
  if (gloss_vocab < 1) throw ConfigError("model: gloss_vocab must be >= 1");
  if (text_vocab <= kFirstWord) throw ConfigError("model: text_vocab must exceed the reserved ids");
  if (max_text_len < 2) throw ConfigError("model: max_text_len must be >= 2");
  if (!(init_scale > 0)) throw ConfigError("model: init_scale must be > 0");
}

TrainableSet TrainableSet::everything(int n_layers) {
  TrainableSet u(n_layers);
  std::fill(u.flags_.begin(), u.flags_.end(), true);
  return u;
}

void TrainableSet::add(int group) {
  if (group < 0 || group >= static_cast<int>(flags_.size()))
    throw ConfigError("trainable set: unknown group " + std::to_string(group));
  flags_[group] = true;
}

int TrainableSet::size() const {
  return static_cast<int>(std::count(flags_.begin(), flags_.end(), true));
}

std::vector<int> TrainableSet::layers() const {
  std::vector<int> out;
  for (int m = 1; m < static_cast<int>(flags_.size()); ++m)
    if (flags_[m]) out.push_back(m);
  return out;
}

bool TrainableSet::subset_of(const TrainableSet& other) const {
  if (flags_.size() != other.flags_.size()) return false;
  for (std::size_t i = 0; i < flags_.size(); ++i)
    if (flags_[i] && !other.flags_[i]) return false;
  return true;
}

ad::Param& LayeredModel::add(std::string name, int group, ad::LrClass cls, Matrix init) {
  ad::Param p;
  p.name = std::move(name);
  p.group = group;
  p.lr_class = cls;
  p.value = std::move(init);
  p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
  params_.push_back(std::move(p));
  return params_.back();
}

LayeredModel LayeredModel::build(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  LayeredModel m(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index r, Eigen::Index c, double stddev) {
    Matrix out(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) out(i, j) = normal(rng) * stddev;
    return out;
  };
  auto weight = [&](Eigen::Index fan_in, Eigen::Index fan_out) {
    return gaussian(fan_in, fan_out, cfg.init_scale / std::sqrt(static_cast<double>(fan_in)));
  };
  auto zeros = [](Eigen::Index c) { return Matrix::Zero(1, c); };

  const int d = cfg.backbone_width, h = cfg.hidden, C = cfg.gloss_classes(), V = cfg.text_vocab;
  using ad::LrClass;
  m.params_.reserve(3 * cfg.n_layers + 8 * cfg.encoder_layers + 32);

  for (int l = 1; l <= cfg.n_layers; ++l) {
    const int in = cfg.input_dim, out = l == cfg.n_layers ? d : cfg.input_dim;
    const std::string p = "L" + std::to_string(l) + ".";
    // Two inputs (current and previous frame) feed each unit.
    const double s = cfg.init_scale / std::sqrt(2.0 * in);
    m.add(p + "W", l, LrClass::Backbone, gaussian(in, out, s));
    m.add(p + "U", l, LrClass::Backbone, gaussian(in, out, s));
    m.add(p + "b", l, LrClass::Backbone, zeros(out));
  }

  m.add("t.bb.W", 0, LrClass::Encoder, weight(d, C));
  m.add("t.bb.b", 0, LrClass::Encoder, zeros(C));
  m.add("t.proj.W", 0, LrClass::Encoder, weight(d, h));
  m.add("t.proj.b", 0, LrClass::Encoder, zeros(h));
  for (int k = 1; k <= cfg.encoder_layers; ++k) {
    const std::string p = "t.enc" + std::to_string(k) + ".";
    const double s = cfg.init_scale / std::sqrt(3.0 * h);
    m.add(p + "A", 0, LrClass::Encoder, gaussian(h, h, s));
    m.add(p + "B", 0, LrClass::Encoder, gaussian(h, h, s));
    m.add(p + "C", 0, LrClass::Encoder, gaussian(h, h, s));
    m.add(p + "c", 0, LrClass::Encoder, zeros(h));
  }
  m.add("t.gloss.W", 0, LrClass::Encoder, weight(h, C));
  m.add("t.gloss.b", 0, LrClass::Encoder, zeros(C));

  m.add("t.dec.emb", 0, LrClass::Decoder, gaussian(V, h, 0.5 * cfg.init_scale));
  m.add("t.dec.pos", 0, LrClass::Decoder, gaussian(cfg.max_text_len, h, 0.5 * cfg.init_scale));
  for (const char* name : {"self.q", "self.k", "self.v", "self.o", "cross.q", "cross.k", "cross.v",
                           "cross.o"})
    m.add(std::string("t.dec.") + name, 0, LrClass::Decoder, weight(h, h));
  m.add("t.dec.ff1.W", 0, LrClass::Decoder, weight(h, h));
  m.add("t.dec.ff1.b", 0, LrClass::Decoder, zeros(h));
  m.add("t.dec.ff2.W", 0, LrClass::Decoder, weight(h, h));
  m.add("t.dec.ff2.b", 0, LrClass::Decoder, zeros(h));
  m.add("t.dec.out.W", 0, LrClass::Decoder, weight(h, V));
  m.add("t.dec.out.b", 0, LrClass::Decoder, zeros(V));

  m.check_housing();
  m.set_trainable(TrainableSet::everything(cfg.n_layers));
  return m;
}

void LayeredModel::check_housing() const {
  std::vector<std::string> names;
  for (const auto& p : params_) {
    if (p.group < 0 || p.group > cfg_.n_layers)
      throw std::logic_error("parameter " + p.name + " has no layer group");
    names.push_back(p.name);
  }
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end())
    throw std::logic_error("duplicate parameter name");
}

ad::Param& LayeredModel::param(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named " + name);
}

const ad::Param& LayeredModel::param(const std::string& name) const {
  return const_cast<LayeredModel*>(this)->param(name);
}

std::size_t LayeredModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.size());
  return n;
}

std::size_t LayeredModel::parameter_count(int group) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.group == group) n += static_cast<std::size_t>(p.size());
  return n;
}

namespace {

// Fixed position code added to the encoder input.
Matrix sinusoid(Eigen::Index rows, int width) {
  Matrix pe(rows, width);
  for (Eigen::Index t = 0; t < rows; ++t)
    for (int c = 0; c < width; ++c) {
      const double rate = std::pow(1000.0, -static_cast<double>(c / 2 * 2) / width);
      pe(t, c) = c % 2 == 0 ? std::sin(static_cast<double>(t) * rate) : std::cos(static_cast<double>(t) * rate);
    }
  return pe;
}

}  // namespace

LayeredModel::Var LayeredModel::encode(ad::Tape& tape, const Matrix& frames, Heads* heads) {
  if (frames.rows() < 1) throw std::invalid_argument("forward: empty frame sequence");
  if (frames.cols() != cfg_.input_dim)
    throw std::invalid_argument("forward: frame dimension " + std::to_string(frames.cols()) +
                                " != " + std::to_string(cfg_.input_dim));

  // Parameters are laid out in build() order; walk them with a cursor.
  std::size_t cursor = 0;
  auto next = [&]() { return tape.param(params_[cursor++]); };

  Var z = tape.constant(frames);
  for (int l = 1; l <= cfg_.n_layers; ++l) {
    const Var W = next(), U = next(), b = next();
    Var a = tape.add(tape.matmul(z, W), tape.matmul(tape.shift_rows(z, 1), U));
    a = tape.tanh(tape.add_row(a, b));
    z = l == cfg_.n_layers ? a : tape.add(z, a);
  }
  const Var bbW = next(), bbb = next();
  const Var bb_logits = tape.add_row(tape.matmul(z, bbW), bbb);

  const Var pW = next(), pb = next();
  Var e = tape.add_row(tape.matmul(z, pW), pb);
  e = tape.add(e, tape.constant(sinusoid(frames.rows(), cfg_.hidden)));
  for (int k = 1; k <= cfg_.encoder_layers; ++k) {
    const Var A = next(), B = next(), Cm = next(), c = next();
    Var a = tape.add(tape.matmul(e, A), tape.matmul(tape.shift_rows(e, 1), B));
    a = tape.add(a, tape.matmul(tape.shift_rows(e, -1), Cm));
    e = tape.add(e, tape.tanh(tape.add_row(a, c)));
  }
  const Var gW = next(), gb = next();
  const Var gloss_logits = tape.add_row(tape.matmul(e, gW), gb);

  if (heads) {
    heads->backbone = z;
    heads->bb_logits = bb_logits;
    heads->encoder = e;
    heads->gloss_logits = gloss_logits;
  }
  return e;
}

LayeredModel::Var LayeredModel::decode(ad::Tape& tape, Var enc, std::span<const TokenId> input) {
  const Eigen::Index S = static_cast<Eigen::Index>(input.size());
  if (S < 1) throw std::invalid_argument("decode: empty decoder input");
  if (S > cfg_.max_text_len)
    throw std::invalid_argument("decode: decoder input longer than max_text_len");

  std::size_t cursor = static_cast<std::size_t>(3 * cfg_.n_layers + 4 + 4 * cfg_.encoder_layers + 2);
  auto next = [&]() { return tape.param(params_[cursor++]); };
  const Var emb = next(), pos = next();
  const Var sq = next(), sk = next(), sv = next(), so = next();
  const Var cq = next(), ck = next(), cv = next(), co = next();
  const Var f1W = next(), f1b = next(), f2W = next(), f2b = next();
  const Var oW = next(), ob = next();

  std::vector<int> ids(input.begin(), input.end());
  std::vector<int> positions(static_cast<std::size_t>(S));
  std::iota(positions.begin(), positions.end(), 0);
  Var x = tape.add(tape.gather_rows(emb, std::move(ids)), tape.gather_rows(pos, std::move(positions)));

  const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden));
  {
    const Var q = tape.matmul(x, sq), k = tape.matmul(x, sk), v = tape.matmul(x, sv);
    const Var att = tape.softmax_rows(tape.scale(tape.matmul_nt(q, k), inv_sqrt_h), true);
    x = tape.add(x, tape.matmul(tape.matmul(att, v), so));
  }
  {
    const Var q = tape.matmul(x, cq), k = tape.matmul(enc, ck), v = tape.matmul(enc, cv);
    const Var att = tape.softmax_rows(tape.scale(tape.matmul_nt(q, k), inv_sqrt_h), false);
    x = tape.add(x, tape.matmul(tape.matmul(att, v), co));
  }
  const Var hidden = tape.tanh(tape.add_row(tape.matmul(x, f1W), f1b));
  x = tape.add(x, tape.add_row(tape.matmul(hidden, f2W), f2b));
  return tape.add_row(tape.matmul(x, oW), ob);
}

LayeredModel::Heads LayeredModel::forward(ad::Tape& tape, const Matrix& frames,
                                          std::span<const TokenId> decoder_input) {
  Heads heads;
  const Var enc = encode(tape, frames, &heads);
  if (!decoder_input.empty()) heads.text_logits = decode(tape, enc, decoder_input);
  return heads;
}

ForwardResult LayeredModel::forward(const Matrix& frames, std::span<const TokenId> decoder_input) {
  ad::Tape tape(false);
  const Heads h = forward(tape, frames, decoder_input);
  ForwardResult r;
  r.backbone = tape.value(h.backbone);
  r.bb_logits = tape.value(h.bb_logits);
  r.gloss_logits = tape.value(h.gloss_logits);
  if (h.text_logits >= 0) r.text_logits = tape.value(h.text_logits);
  return r;
}

Matrix LayeredModel::encoder_states(const Matrix& frames) {
  ad::Tape tape(false);
  return tape.value(encode(tape, frames));
}

Vector LayeredModel::next_token_log_probs(const Matrix& enc, std::span<const TokenId> prefix) {
  ad::Tape tape(false);
  const Var e = tape.constant(enc);
  const Matrix& logits = tape.value(decode(tape, e, prefix));
  return ctc::log_softmax_rows(logits.bottomRows(1)).row(0).transpose();
}

void LayeredModel::set_trainable(const TrainableSet& u) {
  if (u.n_layers() != cfg_.n_layers) throw ConfigError("trainable set: layer count mismatch");
  if (!u.contains(0)) throw ConfigError("trainable set must contain the translation model");
  trainable_ = u;
  for (auto& p : params_) p.trainable = u.contains(p.group);
}

void LayeredModel::zero_grad() {
  for (auto& p : params_) p.grad.setZero(p.value.rows(), p.value.cols());
}

ParamSnapshot LayeredModel::snapshot(int epoch, double metric) const {
  ParamSnapshot s;
  s.epoch = epoch;
  s.metric = metric;
  s.names.reserve(params_.size());
  s.values.reserve(params_.size());
  for (const auto& p : params_) {
    s.names.push_back(p.name);
    s.values.push_back(p.value);
  }
  return s;
}

void LayeredModel::restore(const ParamSnapshot& s) {
  if (s.names.size() != params_.size()) throw CheckpointError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (s.names[i] != params_[i].name)
      throw CheckpointError("restore: expected " + params_[i].name + ", found " + s.names[i]);
    if (s.values[i].rows() != params_[i].value.rows() || s.values[i].cols() != params_[i].value.cols())
      throw CheckpointError("restore: shape mismatch for " + s.names[i]);
  }
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = s.values[i];
}

void LayeredModel::load_backbone(const ParamSnapshot& s) {
  std::size_t loaded = 0;
  for (auto& p : params_) {
    if (p.group == 0) continue;
    auto it = std::find(s.names.begin(), s.names.end(), p.name);
    if (it == s.names.end()) throw CheckpointError("load_backbone: missing " + p.name);
    const Matrix& v = s.values[static_cast<std::size_t>(it - s.names.begin())];
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols())
      throw CheckpointError("load_backbone: shape mismatch for " + p.name);
    p.value = v;
    ++loaded;
  }
  if (loaded == 0) throw CheckpointError("load_backbone: no backbone parameters");
}

}  // namespace hatl
