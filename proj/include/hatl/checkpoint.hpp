#pragma once

// Binary checkpoint container. Layout (all integers little-endian):
//
//   "HATLCKPT"                 8 bytes
//   u32 version                currently 1
//   records, each:
//     u8  tag                  'A' array, 'S' string, 'E' end of file
//     u32 name length, name bytes
//     'A': u64 rows, u64 cols, rows*cols f64 in column-major order
//     'S': u64 length, bytes
//
// Record names are namespaced: "param/<name>", "adam.m/<name>",
// "adam.v/<name>", "adam.t", "ctrl.*", "model.config", "kind", ...

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hatl/config.hpp"
#include "hatl/controller.hpp"
#include "hatl/model.hpp"
#include "hatl/optim.hpp"

namespace hatl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::vector<std::pair<std::string, Matrix>> arrays;
  std::vector<std::pair<std::string, std::string>> strings;

  void put(const std::string& name, Matrix m);
  void put(const std::string& name, std::string s);
  const Matrix* array(const std::string& name) const;
  const std::string* string(const std::string& name) const;
  const Matrix& require_array(const std::string& name) const;
  const std::string& require_string(const std::string& name) const;

  void write(const std::string& path) const;
  static Checkpoint read(const std::string& path);
  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes, const std::string& source = "<memory>");
};

std::string model_config_text(const ModelConfig& c);
ModelConfig model_config_from(KeyValues& kv, ModelConfig defaults = {});

// Parameters (all, or backbone groups only) plus the model configuration.
void put_model(Checkpoint& ck, const LayeredModel& m, bool backbone_only = false);
ModelConfig checkpoint_model_config(const Checkpoint& ck);
ParamSnapshot checkpoint_snapshot(const Checkpoint& ck);
// Builds a model from the stored configuration and parameters.
LayeredModel model_from_checkpoint(const Checkpoint& ck);

void put_optimizer(Checkpoint& ck, const AdamW& opt, const std::vector<ad::Param>& params);
void get_optimizer(const Checkpoint& ck, AdamW& opt, const std::vector<ad::Param>& params);

void put_controller(Checkpoint& ck, const Controller& c);
// Restores state and trainable set into a controller built with the same
// monitored metrics.
void get_controller(const Checkpoint& ck, Controller& c);

}  // namespace hatl
