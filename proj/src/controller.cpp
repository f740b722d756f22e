#include "hatl/controller.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "hatl/errors.hpp"

namespace hatl {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void ControllerConfig::validate() const {
  if (warmup_epochs < 0) throw ConfigError("controller: warmup_epochs must be >= 0");
  if (patience < 1) throw ConfigError("controller: patience must be >= 1");
  if (window < 1) throw ConfigError("controller: window must be >= 1");
  if (cooldown < 0) throw ConfigError("controller: cooldown must be >= 0");
  if (early_stop < 1) throw ConfigError("controller: early_stop must be >= 1");
  if (decay_every < 1) throw ConfigError("controller: decay_every must be >= 1");
  if (!(decay_factor > 0 && decay_factor <= 1))
    throw ConfigError("controller: decay_factor must lie in (0, 1]");
}

bool MetricHistory::push(double value) {
  const bool first = values_.empty();
  const bool better = first || improvement(value) > 0.0;
  values_.push_back(value);
  if (better) best_ = value;
  return better;
}

double MetricHistory::improvement(double value) const {
  if (values_.empty()) return 0.0;
  return maximize_ ? value - best_ : best_ - value;
}

double MetricHistory::smoothed() const {
  if (values_.empty()) return 0.0;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(window_), values_.size());
  const double sum = std::accumulate(values_.end() - static_cast<long>(n), values_.end(), 0.0);
  return sum / static_cast<double>(n);
}

void MetricHistory::restore(std::vector<double> values, double best) {
  values_ = std::move(values);
  best_ = best;
}

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Warmup: return "warmup";
    case Phase::Monitoring: return "monitoring";
    case Phase::Cooldown: return "cooldown";
    case Phase::Finished: return "finished";
  }
  return "?";
}

const char* to_string(DecisionKind k) {
  switch (k) {
    case DecisionKind::Continue: return "continue";
    case DecisionKind::ScheduleRelease: return "release";
    case DecisionKind::Stop: return "stop";
  }
  return "?";
}

Controller::Controller(ControllerConfig cfg, std::vector<MonitoredMetric> metrics, int n_layers,
                       bool releases_enabled)
    : cfg_(cfg), metrics_(std::move(metrics)), n_layers_(n_layers), trainable_(n_layers) {
  cfg_.validate();
  if (metrics_.empty()) throw ConfigError("controller: at least one monitored metric required");
  if (n_layers < 1) throw ConfigError("controller: n_layers must be >= 1");
  for (const auto& m : metrics_) {
    if (!(m.delta > 0) || !(m.tau > 0))
      throw ConfigError("controller: thresholds for " + m.name + " must be > 0");
    state_.deltas.push_back(m.delta);
    state_.taus.push_back(m.tau);
    state_.histories.emplace_back(m.maximize, cfg_.window);
  }
  state_.next_layer = releases_enabled ? n_layers : 0;
}

void Controller::emit(int epoch, std::string event, std::string detail) {
  events_.push_back({epoch, std::move(event), std::move(detail)});
}

std::optional<int> Controller::pending() const {
  if (state_.pending_layer == 0) return std::nullopt;
  return state_.pending_layer;
}

int Controller::commit_release() {
  if (state_.pending_layer == 0) throw std::logic_error("commit_release: nothing pending");
  const int layer = state_.pending_layer;
  trainable_.add(layer);
  state_.pending_layer = 0;
  state_.next_layer = layer - 1;
  state_.plateau_streak = 0;
  state_.stale_epochs = 0;
  state_.cooldown_remaining = cfg_.cooldown;
  state_.phase = cfg_.cooldown > 0 ? Phase::Cooldown : Phase::Monitoring;
  emit(state_.epoch + 1, "release_applied",
       "L" + std::to_string(layer) + " trainable_groups=" + std::to_string(trainable_.size()));
  return layer;
}

void Controller::decay_thresholds() {
  if (state_.epoch > 0 && state_.epoch % cfg_.decay_every == 0)
    for (double& d : state_.deltas) d *= cfg_.decay_factor;
}

EpochDecision Controller::observe_epoch(const std::map<std::string, double>& metrics) {
  if (state_.phase == Phase::Finished) throw std::logic_error("observe_epoch: controller already stopped");
  if (state_.pending_layer != 0)
    throw std::logic_error("observe_epoch: pending release was not applied");
  for (const auto& m : metrics_) {
    auto it = metrics.find(m.name);
    if (it == metrics.end()) throw ConfigError("observe_epoch: missing metric " + m.name);
    if (!std::isfinite(it->second)) throw NumericError("observe_epoch: non-finite " + m.name);
  }

  const int e = ++state_.epoch;
  EpochDecision d;
  d.epoch = e;

  bool plateau = true;
  for (std::size_t i = 0; i < metrics_.size(); ++i) {
    const double v = metrics.at(metrics_[i].name);
    MetricHistory& h = state_.histories[i];
    const double gain = h.improvement(v);
    const bool better = h.push(v);
    const double mbar = h.smoothed();
    d.metrics[metrics_[i].name] = v;
    d.smoothed[metrics_[i].name] = mbar;
    if (i == 0 && better) {
      d.new_best = true;
      emit(e, "new_best", metrics_[i].name + "=" + fmt(v));
    }
    const bool stable = std::abs(v - mbar) <= state_.deltas[i];
    const bool small_gain = cfg_.criterion2_smoothed ? std::abs(v - mbar) <= state_.taus[i]
                                                     : gain < state_.taus[i];
    plateau = plateau && stable && small_gain;
  }
  if (d.new_best) state_.stale_epochs = 0;

  if (e <= cfg_.warmup_epochs) {
    state_.phase = Phase::Warmup;
    if (e == cfg_.warmup_epochs) emit(e, "warmup_end");
  } else if (state_.cooldown_remaining > 0) {
    state_.phase = Phase::Cooldown;
    if (--state_.cooldown_remaining == 0) {
      emit(e, "cooldown_end");
      state_.phase = Phase::Monitoring;
    }
  } else {
    state_.phase = Phase::Monitoring;
    if (!d.new_best) ++state_.stale_epochs;
    if (state_.next_layer >= 1) {
      if (plateau) {
        ++state_.plateau_streak;
        emit(e, "plateau_tick", "streak=" + std::to_string(state_.plateau_streak));
      } else {
        state_.plateau_streak = 0;
      }
      if (state_.plateau_streak >= cfg_.patience) {
        state_.pending_layer = state_.next_layer;
        d.kind = DecisionKind::ScheduleRelease;
        d.layer = state_.pending_layer;
        emit(e, "release_scheduled", "L" + std::to_string(d.layer));
      }
    }
    const bool armed = state_.next_layer < 1 || !cfg_.stop_after_last_release;
    if (d.kind == DecisionKind::Continue && armed && state_.stale_epochs >= cfg_.early_stop) {
      d.kind = DecisionKind::Stop;
      state_.phase = Phase::Finished;
      emit(e, "stop", "stale_epochs=" + std::to_string(state_.stale_epochs));
    }
  }
  if (e == cfg_.warmup_epochs && cfg_.warmup_epochs > 0) state_.phase = Phase::Monitoring;

  d.phase = state_.phase;
  d.plateau_streak = state_.plateau_streak;
  d.stale_epochs = state_.stale_epochs;
  decay_thresholds();
  return d;
}

void Controller::restore_state(ControllerState s, TrainableSet u) {
  if (s.histories.size() != metrics_.size() || s.deltas.size() != metrics_.size() ||
      s.taus.size() != metrics_.size())
    throw CheckpointError("controller: monitored metric count mismatch");
  if (u.n_layers() != n_layers_) throw CheckpointError("controller: layer count mismatch");
  state_ = std::move(s);
  trainable_ = std::move(u);
}

std::string format_events(const std::vector<ControllerEvent>& events) {
  std::ostringstream os;
  os << "epoch\tevent\tdetail\n";
  for (const auto& ev : events) os << ev.epoch << '\t' << ev.event << '\t' << ev.detail << '\n';
  return os.str();
}

}  // namespace hatl
