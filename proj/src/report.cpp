#include "unitquant/report.hpp"

#include <fstream>

namespace uq {

using nlohmann::json;

void RunConfig::validate() const {
  if (calib_size < 1) throw ParameterError("config: calibration size must be >= 1");
  if (bits_w != 2 && bits_w != 3 && bits_w != 4 && bits_w != 8)
    throw ParameterError("config: weight bits must be one of {2,3,4,8}");
  if (bits_a != 4 && bits_a != 8 && bits_a != 32)
    throw ParameterError("config: activation bits must be one of {4,8,32}");
  if (mode != "rtn" && mode != "layerwise" && mode != "unitwise")
    throw ParameterError("config: mode must be rtn, layerwise or unitwise");
  if (input_propagation != "quantized" && input_propagation != "float")
    throw ParameterError("config: input propagation must be quantized or float");
}

CalibConfig RunConfig::calib_config() const {
  CalibConfig c;
  c.bits_w = bits_w;
  c.bits_a = bits_a;
  c.unit_size = unit_size;
  c.steps = steps;
  c.lr_logits = lr_logits;
  c.lr_scale = lr_scale;
  c.pact_steps = pact_steps;
  c.t_start = t_start;
  c.t_end = t_end;
  c.shard_size = shard_size;
  c.calib_size = calib_size;
  c.seed = seed;
  c.propagate_quantized = input_propagation == "quantized";
  c.labels_from_model = labels_from_model;
  return c;
}

json to_json(const RunConfig& c) {
  return json{{"command", c.command},
              {"data_root", c.data_root},
              {"model_path", c.model_path},
              {"out_path", c.out_path},
              {"report_path", c.report_path},
              {"bits_w", c.bits_w},
              {"bits_a", c.bits_a},
              {"mode", c.mode},
              {"unit_size", c.unit_size},
              {"steps", c.steps},
              {"calib_size", c.calib_size},
              {"seed", c.seed},
              {"lr_logits", c.lr_logits},
              {"lr_scale", c.lr_scale},
              {"pact_steps", c.pact_steps},
              {"t_start", c.t_start},
              {"t_end", c.t_end},
              {"shard_size", c.shard_size},
              {"input_propagation", c.input_propagation},
              {"labels_from_model", c.labels_from_model},
              {"epochs", c.epochs},
              {"train_lr", c.train_lr},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"batch", c.batch},
              {"train_limit", c.train_limit},
              {"norm_mean", c.norm_mean},
              {"norm_std", c.norm_std}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  c.command = j.value("command", c.command);
  c.data_root = j.value("data_root", c.data_root);
  c.model_path = j.value("model_path", c.model_path);
  c.out_path = j.value("out_path", c.out_path);
  c.report_path = j.value("report_path", c.report_path);
  c.bits_w = j.value("bits_w", c.bits_w);
  c.bits_a = j.value("bits_a", c.bits_a);
  c.mode = j.value("mode", c.mode);
  c.unit_size = j.value("unit_size", c.unit_size);
  c.steps = j.value("steps", c.steps);
  c.calib_size = j.value("calib_size", c.calib_size);
  c.seed = j.value("seed", c.seed);
  c.lr_logits = j.value("lr_logits", c.lr_logits);
  c.lr_scale = j.value("lr_scale", c.lr_scale);
  c.pact_steps = j.value("pact_steps", c.pact_steps);
  c.t_start = j.value("t_start", c.t_start);
  c.t_end = j.value("t_end", c.t_end);
  c.shard_size = j.value("shard_size", c.shard_size);
  c.input_propagation = j.value("input_propagation", c.input_propagation);
  c.labels_from_model = j.value("labels_from_model", c.labels_from_model);
  c.epochs = j.value("epochs", c.epochs);
  c.train_lr = j.value("train_lr", c.train_lr);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch = j.value("batch", c.batch);
  c.train_limit = j.value("train_limit", c.train_limit);
  c.norm_mean = j.value("norm_mean", c.norm_mean);
  c.norm_std = j.value("norm_std", c.norm_std);
  return c;
}

json to_json(const CalibReport& r) {
  json units = json::array();
  for (const auto& u : r.units)
    units.push_back(json{{"index", u.index},
                         {"layers", u.layers},
                         {"obj_before", u.obj_before},
                         {"obj_after", u.obj_after},
                         {"steps", u.steps},
                         {"final_temperature", u.final_temperature},
                         {"min_max_prob", u.min_max_prob},
                         {"seconds", u.seconds}});
  return json{{"per_unit", std::move(units)},
              {"mode_flags",
               json{{"input_propagation", r.input_propagation},
                    {"fisher_labels", r.fisher_label_source},
                    {"act_quant", r.act_quant},
                    {"calib_split", "train"},
                    {"eval_split", "test"}}},
              {"seconds", r.seconds}};
}

json build_quantize_report(const RunConfig& cfg, double fp_accuracy, double rtn_accuracy,
                           const Accuracy& calibrated, const CalibReport& calib,
                           double total_seconds) {
  const json calib_json = to_json(calib);
  return json{{"config", to_json(cfg)},
              {"fp_accuracy", fp_accuracy},
              {"rtn_accuracy", rtn_accuracy},
              {"calibrated_accuracy", json{{"top1", calibrated.top1}, {"top5", calibrated.topk}}},
              {"per_unit", calib_json.at("per_unit")},
              {"mode_flags", calib_json.at("mode_flags")},
              {"total_seconds", total_seconds}};
}

void write_json(const json& j, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path);
  f << j.dump(2) << "\n";
}

}  // namespace uq
