#pragma once

// AdamW with per-group learning rates. Backbone layer L_m is assigned
//   lr_m = lr_backbone * alpha^(n - m)
// so the layer next to the translation model (L_n) trains fastest. The
// translation model uses separate encoder and decoder rates.

#include <cstdint>
#include <string>
#include <vector>

#include "hatl/autodiff.hpp"
#include "hatl/model.hpp"

namespace hatl {

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double lr_backbone = 1e-5;
  double lr_encoder = 5e-5;
  double lr_decoder = 1e-4;
  double llrd_alpha = 0.5;
  long warmup_min_steps = 200;
  double warmup_fraction = 0.02;
  double clip_norm = 0.0;  // global-norm clip; 0 disables

  void validate() const;
};

// Linear ramp to 1 over max(warmup_min_steps, ceil(fraction * total_steps)),
// then constant.
class WarmupSchedule {
 public:
  WarmupSchedule() = default;
  WarmupSchedule(long total_steps, long min_steps, double fraction);

  long warmup_steps() const { return warmup_steps_; }
  // step_index counts from 1.
  double multiplier(long step_index) const;

 private:
  long warmup_steps_ = 1;
};

double llrd_rate(double lr_backbone, double alpha, int layer, int n_layers);

class AdamW {
 public:
  struct GroupRate {
    std::string group;  // "L<m>", "t.encoder" or "t.decoder"
    double lr;
  };

  // State is allocated, zeroed, for parameters whose group is in `u` only.
  AdamW(const std::vector<ad::Param>& params, const TrainableSet& u, int n_layers,
        const OptimizerConfig& cfg);

  double rate(const ad::Param& p) const;
  std::vector<GroupRate> group_rates() const;
  const TrainableSet& trainable() const { return trainable_; }

  // One update of every active parameter from its accumulated grad, with all
  // rates scaled by `lr_multiplier`. Throws NumericError on a non-finite
  // gradient, naming the parameter.
  void step(std::vector<ad::Param>& params, double lr_multiplier = 1.0);

  long steps_taken() const { return t_; }
  bool active(std::size_t index) const { return index < active_.size() && active_[index]; }
  const Matrix& first_moment(std::size_t index) const { return m_[index]; }
  const Matrix& second_moment(std::size_t index) const { return v_[index]; }
  // Per-parameter count of reads/writes performed by step().
  const std::vector<std::uint64_t>& access_counts() const { return access_; }

  // Checkpoint support.
  void set_state(long t, std::vector<Matrix> m, std::vector<Matrix> v);

 private:
  OptimizerConfig cfg_;
  TrainableSet trainable_;
  int n_layers_;
  std::vector<bool> active_;
  std::vector<double> rates_;
  std::vector<Matrix> m_, v_;
  std::vector<std::uint64_t> access_;
  long t_ = 0;
};

}  // namespace hatl
