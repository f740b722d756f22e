#pragma once

// Performance-aware progressive unfreezing.
//
// Per epoch the controller receives validation metrics and decides whether
// to keep training, schedule the release of the next backbone layer (applied
// at the start of the following epoch), or stop. A release is scheduled after
// `patience` consecutive monitored epochs in which every metric satisfies
//   (i)  |M(e) - Mbar(e)| <= delta
//   (ii) improvement of M(e) over the best value before e < tau
// Layers are released top-down, L_n first.

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hatl/model.hpp"

namespace hatl {

struct MonitoredMetric {
  std::string name;
  bool maximize = true;
  double delta = 0.002;
  double tau = 0.002;
};

struct ControllerConfig {
  int warmup_epochs = 2;
  int patience = 4;
  int window = 3;
  int cooldown = 3;
  int early_stop = 5;
  int decay_every = 5;
  double decay_factor = 0.95;
  // false: criterion (ii) compares against the best value (default);
  // true: criterion (ii) is |M(e) - Mbar(e)| <= tau.
  bool criterion2_smoothed = false;
  // true: early stopping is armed only once no backbone layer is left to
  // release (default); false: it may stop while layers are still frozen.
  bool stop_after_last_release = true;

  void validate() const;
};

class MetricHistory {
 public:
  MetricHistory() = default;
  MetricHistory(bool maximize, int window) : maximize_(maximize), window_(window) {}

  // Appends M(e); returns true when it strictly beats the previous best.
  bool push(double value);
  // Improvement of `value` over the best recorded so far (positive is better).
  double improvement(double value) const;
  // Mean of the last min(k, e) values.
  double smoothed() const;
  double best() const { return best_; }
  bool empty() const { return values_.empty(); }
  const std::vector<double>& values() const { return values_; }
  bool maximize() const { return maximize_; }
  int window() const { return window_; }

  void restore(std::vector<double> values, double best);

 private:
  bool maximize_ = true;
  int window_ = 3;
  std::vector<double> values_;
  double best_ = 0.0;
};

enum class Phase { Warmup, Monitoring, Cooldown, Finished };
enum class DecisionKind { Continue, ScheduleRelease, Stop };

const char* to_string(Phase p);
const char* to_string(DecisionKind k);

struct ControllerEvent {
  int epoch = 0;
  std::string event;  // warmup_end, plateau_tick, release_scheduled, release_applied,
                      // cooldown_end, new_best, stop
  std::string detail;
  bool operator==(const ControllerEvent&) const = default;
};

struct EpochDecision {
  DecisionKind kind = DecisionKind::Continue;
  int layer = 0;  // for ScheduleRelease
  bool new_best = false;
  int epoch = 0;
  Phase phase = Phase::Warmup;
  std::map<std::string, double> metrics;
  std::map<std::string, double> smoothed;
  int plateau_streak = 0;
  int stale_epochs = 0;
};

struct ControllerState {
  Phase phase = Phase::Warmup;
  int epoch = 0;
  int next_layer = 0;     // next backbone layer to release; 0 when none remain
  int pending_layer = 0;  // 0 when no release is pending
  int plateau_streak = 0;
  int stale_epochs = 0;   // early-stopping counter
  int cooldown_remaining = 0;
  std::vector<double> deltas;
  std::vector<double> taus;
  std::vector<MetricHistory> histories;
};

class Controller {
 public:
  // `metrics[0]` is the primary metric (best-snapshot and early stopping).
  // With releases disabled the controller only tracks the best epoch and
  // early stopping (classical and full fine-tuning).
  Controller(ControllerConfig cfg, std::vector<MonitoredMetric> metrics, int n_layers,
             bool releases_enabled = true);

  EpochDecision observe_epoch(const std::map<std::string, double>& metrics);

  // Multiplies every delta by decay_factor when the current epoch is a
  // multiple of decay_every. Called by observe_epoch.
  void decay_thresholds();

  std::optional<int> pending() const;
  // Applies the pending release to the controller state at the start of the
  // next epoch: enters cooldown, clears the plateau and stale counters and
  // returns the released layer.
  int commit_release();

  void record_best(ParamSnapshot s) { best_ = std::move(s); }
  const std::optional<ParamSnapshot>& best_snapshot() const { return best_; }

  const TrainableSet& trainable() const { return trainable_; }
  const ControllerState& state() const { return state_; }
  void restore_state(ControllerState s, TrainableSet u);
  const ControllerConfig& config() const { return cfg_; }
  const std::vector<MonitoredMetric>& monitored() const { return metrics_; }
  const std::vector<ControllerEvent>& events() const { return events_; }
  bool finished() const { return state_.phase == Phase::Finished; }

 private:
  void emit(int epoch, std::string event, std::string detail = {});

  ControllerConfig cfg_;
  std::vector<MonitoredMetric> metrics_;
  int n_layers_;
  ControllerState state_;
  TrainableSet trainable_;
  std::optional<ParamSnapshot> best_;
  std::vector<ControllerEvent> events_;
};

// Full release at the start of an epoch: restore the best snapshot, add the
// layer to the model's trainable set, rebuild the optimizer through
// `rebuild(const TrainableSet&)`, enter cooldown. Returns the layer.
template <typename Rebuild>
int apply_pending(Controller& c, LayeredModel& model, Rebuild&& rebuild) {
  if (!c.pending()) throw std::logic_error("apply_pending: no release pending");
  if (!c.best_snapshot()) throw std::logic_error("apply_pending: no best snapshot recorded");
  model.restore(*c.best_snapshot());
  const int layer = c.commit_release();
  TrainableSet u = model.trainable();
  u.add(layer);
  model.set_trainable(u);
  rebuild(u);
  return layer;
}

// Writes `epoch<TAB>event<TAB>detail` lines with a header.
std::string format_events(const std::vector<ControllerEvent>& events);

}  // namespace hatl
