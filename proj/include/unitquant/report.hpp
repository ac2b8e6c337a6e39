#pragma once

#include <json.hpp>
#include <string>

#include "unitquant/calib.hpp"
#include "unitquant/train.hpp"

namespace uq {

/// Every knob of a run, embedded verbatim in its report so the run can be
/// reproduced from the report alone.
struct RunConfig {
  std::string command;
  std::string data_root;
  std::string model_path;
  std::string out_path;
  std::string report_path;

  int bits_w = 3;
  int bits_a = 32;
  std::string mode = "unitwise";  // rtn | layerwise | unitwise
  int unit_size = 3;
  int steps = 2000;
  int calib_size = 1024;
  std::uint64_t seed = 0;
  float lr_logits = 1e-2f;
  float lr_scale = 1e-3f;
  int pact_steps = 500;
  float t_start = 1.0f;
  float t_end = 0.01f;
  int shard_size = 32;
  std::string input_propagation = "quantized";  // quantized | float
  bool labels_from_model = false;

  int epochs = 3;
  float train_lr = 0.1f;
  float momentum = 0.9f;
  float weight_decay = 1e-4f;
  int batch = 64;
  std::int64_t train_limit = 0;

  float norm_mean = 0.5f;
  float norm_std = 0.5f;

  void validate() const;
  CalibConfig calib_config() const;
};

nlohmann::json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const CalibReport& r);

/// The quantize-run report: {config, fp_accuracy, rtn_accuracy,
/// calibrated_accuracy:{top1,top5}, per_unit:[...], mode_flags, total_seconds}.
nlohmann::json build_quantize_report(const RunConfig& cfg, double fp_accuracy,
                                     double rtn_accuracy, const Accuracy& calibrated,
                                     const CalibReport& calib, double total_seconds);

void write_json(const nlohmann::json& j, const std::string& path);

}  // namespace uq
