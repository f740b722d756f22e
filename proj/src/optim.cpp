#include "hatl/optim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hatl/errors.hpp"

namespace hatl {

void OptimizerConfig::validate() const {
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  if (!(eps > 0)) throw ConfigError("optimizer: eps must be > 0");
  if (weight_decay < 0) throw ConfigError("optimizer: weight_decay must be >= 0");
  if (!(lr_backbone > 0 && lr_encoder > 0 && lr_decoder > 0))
    throw ConfigError("optimizer: learning rates must be > 0");
  if (!(llrd_alpha > 0 && llrd_alpha <= 1)) throw ConfigError("optimizer: llrd_alpha must lie in (0, 1]");
  if (warmup_min_steps < 1) throw ConfigError("optimizer: warmup_min_steps must be >= 1");
  if (warmup_fraction < 0) throw ConfigError("optimizer: warmup_fraction must be >= 0");
  if (clip_norm < 0) throw ConfigError("optimizer: clip_norm must be >= 0");
}

WarmupSchedule::WarmupSchedule(long total_steps, long min_steps, double fraction) {
  const long scaled = static_cast<long>(std::ceil(fraction * static_cast<double>(total_steps)));
  warmup_steps_ = std::max({min_steps, scaled, 1L});
}

double WarmupSchedule::multiplier(long step_index) const {
  if (step_index >= warmup_steps_) return 1.0;
  return static_cast<double>(std::max(step_index, 1L)) / static_cast<double>(warmup_steps_);
}

double llrd_rate(double lr_backbone, double alpha, int layer, int n_layers) {
  return lr_backbone * std::pow(alpha, n_layers - layer);
}

AdamW::AdamW(const std::vector<ad::Param>& params, const TrainableSet& u, int n_layers,
             const OptimizerConfig& cfg)
    : cfg_(cfg), trainable_(u), n_layers_(n_layers) {
  cfg_.validate();
  if (u.n_layers() != n_layers) throw ConfigError("optimizer: trainable set layer count mismatch");
  if (!u.contains(0)) throw ConfigError("optimizer: trainable set must contain the translation model");
  const std::size_t n = params.size();
  active_.assign(n, false);
  rates_.assign(n, 0.0);
  m_.resize(n);
  v_.resize(n);
  access_.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const ad::Param& p = params[i];
    if (p.group < 0 || p.group > n_layers)
      throw ConfigError("optimizer: parameter " + p.name + " has unknown group");
    rates_[i] = rate(p);
    if (!u.contains(p.group)) continue;
    active_[i] = true;
    m_[i] = Matrix::Zero(p.value.rows(), p.value.cols());
    v_[i] = Matrix::Zero(p.value.rows(), p.value.cols());
  }
}

double AdamW::rate(const ad::Param& p) const {
  if (p.group >= 1) return llrd_rate(cfg_.lr_backbone, cfg_.llrd_alpha, p.group, n_layers_);
  return p.lr_class == ad::LrClass::Decoder ? cfg_.lr_decoder : cfg_.lr_encoder;
}

std::vector<AdamW::GroupRate> AdamW::group_rates() const {
  std::vector<GroupRate> out;
  for (int m = 1; m <= n_layers_; ++m)
    out.push_back({"L" + std::to_string(m), llrd_rate(cfg_.lr_backbone, cfg_.llrd_alpha, m, n_layers_)});
  out.push_back({"t.encoder", cfg_.lr_encoder});
  out.push_back({"t.decoder", cfg_.lr_decoder});
  return out;
}

void AdamW::step(std::vector<ad::Param>& params, double lr_multiplier) {
  if (params.size() != active_.size()) throw std::invalid_argument("optimizer: parameter list changed");

  double sq_norm = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!active_[i]) continue;
    const Matrix& g = params[i].grad;
    if (g.rows() != params[i].value.rows() || g.cols() != params[i].value.cols())
      throw std::invalid_argument("optimizer: missing gradient for " + params[i].name);
    if (!g.allFinite()) {
      std::ostringstream os;
      os << "non-finite gradient in " << params[i].name << " at optimizer step " << t_ + 1
         << " (|g|max=" << g.cwiseAbs().maxCoeff() << ")";
      throw NumericError(os.str());
    }
    sq_norm += g.squaredNorm();
  }
  double clip = 1.0;
  if (cfg_.clip_norm > 0) {
    const double norm = std::sqrt(sq_norm);
    if (norm > cfg_.clip_norm) clip = cfg_.clip_norm / norm;
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!active_[i]) continue;
    ++access_[i];
    ad::Param& p = params[i];
    const double lr = rates_[i] * lr_multiplier;
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * clip * p.grad;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * (clip * p.grad).cwiseAbs2();
    p.value *= 1.0 - lr * cfg_.weight_decay;
    p.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

void AdamW::set_state(long t, std::vector<Matrix> m, std::vector<Matrix> v) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw CheckpointError("optimizer: state size mismatch");
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!active_[i]) continue;
    if (m[i].rows() != m_[i].rows() || m[i].cols() != m_[i].cols() || v[i].rows() != v_[i].rows() ||
        v[i].cols() != v_[i].cols())
      throw CheckpointError("optimizer: moment shape mismatch at index " + std::to_string(i));
  }
  t_ = t;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!active_[i]) continue;
    m_[i] = std::move(m[i]);
    v_[i] = std::move(v[i]);
  }
}

}  // namespace hatl
