#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>

#include "unitquant/digits.hpp"
#include "unitquant/oracle.hpp"
#include "unitquant/report.hpp"
#include "unitquant/serialize.hpp"
#include "unitquant/train.hpp"

namespace {

using namespace uq;
using nlohmann::json;

double now_seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string resolve_data_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("UNITQUANT_DATA")) return env;
  throw DataError("no dataset root: pass --data or set UNITQUANT_DATA");
}

/// First `count` samples of a seeded shuffle of the training split.
CalibData draw_calibration(const Dataset& train, int count, std::uint64_t seed) {
  std::vector<std::int64_t> order(static_cast<std::size_t>(train.images.dim(0)));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(static_cast<std::size_t>(std::min<std::int64_t>(count, train.images.dim(0))));
  CalibData data;
  data.inputs = gather_rows(train.images, order);
  data.labels.reserve(order.size());
  for (std::int64_t i : order) data.labels.push_back(train.labels[static_cast<std::size_t>(i)]);
  return data;
}

int cmd_train(const RunConfig& cfg) {
  const std::string root = resolve_data_root(cfg.data_root);
  const Dataset train = load_split(root, "train", cfg.norm_mean, cfg.norm_std);
  const Dataset test = load_split(root, "test", cfg.norm_mean, cfg.norm_std);

  ModelGraphF model = build_reference_cnn({train.images.dim(1), train.images.dim(2),
                                           train.images.dim(3)},
                                          train.classes, cfg.seed);
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.lr = cfg.train_lr;
  tc.momentum = cfg.momentum;
  tc.weight_decay = cfg.weight_decay;
  tc.batch = cfg.batch;
  tc.seed = cfg.seed;
  tc.limit = cfg.train_limit;
  tc.verbose = true;
  const TrainResult res = train_model(model, train, test, tc);
  save_model(model, cfg.out_path);
  std::printf("saved %s (test top-1 %.4f)\n", cfg.out_path.c_str(), res.test_top1);
  return 0;
}

int cmd_quantize(const RunConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string root = resolve_data_root(cfg.data_root);
  const Dataset train = load_split(root, "train", cfg.norm_mean, cfg.norm_std);
  const Dataset test = load_split(root, "test", cfg.norm_mean, cfg.norm_std);

  const ModelGraphF model = load_model(cfg.model_path);
  const ModelGraphF folded = fold_batchnorm(model);
  const CalibData calib = draw_calibration(train, cfg.calib_size, cfg.seed);
  const CalibConfig cc = cfg.calib_config();

  const double fp_acc = evaluate(folded, test).top1;
  const double rtn_acc = evaluate(calibrate_rtn(folded, calib, cc).graph, test).top1;

  CalibOutcome outcome;
  if (cfg.mode == "rtn")
    outcome = calibrate_rtn(folded, calib, cc);
  else if (cfg.mode == "layerwise")
    outcome = calibrate_layerwise(folded, calib, cc);
  else
    outcome = calibrate_unitwise(folded, calib, cc);

  const Accuracy acc = evaluate(outcome.graph, test);
  save_model(outcome.graph, cfg.out_path);

  const double total = now_seconds(t0);
  const json report = build_quantize_report(cfg, fp_acc, rtn_acc, acc, outcome.report, total);
  if (!cfg.report_path.empty()) write_json(report, cfg.report_path);

  std::printf("fp top-1 %.4f | rtn top-1 %.4f | %s W%dA%d top-1 %.4f top-5 %.4f | %.1fs\n",
              fp_acc, rtn_acc, cfg.mode.c_str(), cfg.bits_w, cfg.bits_a, acc.top1, acc.topk,
              total);
  for (const auto& u : outcome.report.units)
    std::printf("  unit %d: objective %.6g -> %.6g (%.1fs)\n", u.index, u.obj_before, u.obj_after,
                u.seconds);
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& split, int topk) {
  const std::string root = resolve_data_root(cfg.data_root);
  const Dataset data = load_split(root, split, cfg.norm_mean, cfg.norm_std);
  const ModelGraphF model = load_model(cfg.model_path);
  const Accuracy acc = evaluate(model, data, topk);
  std::printf("%s top-1 %.4f top-%d %.4f (%lld samples)\n", split.c_str(), acc.top1, topk,
              acc.topk, static_cast<long long>(data.images.dim(0)));
  return 0;
}

int cmd_probe_hessian(const RunConfig& cfg, const std::string& model_path,
                      const std::string& json_path, const std::string& csv_path, int samples) {
  ModelGraphF model;
  Dataset data;
  if (!model_path.empty()) {
    model = load_model(model_path);
    const std::string root = resolve_data_root(cfg.data_root);
    data = load_split(root, "train", cfg.norm_mean, cfg.norm_std);
    if (model.input_shape.size() == 1) data = flatten_dataset(data);
  } else {
    // self-contained probe: a small trained MLP on Gaussian blobs
    data = make_blobs(768, 16, 4, cfg.seed);
    model = build_mlp(16, 8, 4, cfg.seed);
    TrainConfig tc;
    tc.epochs = 200;
    tc.lr = 0.05f;
    tc.weight_decay = 0.0f;
    tc.batch = 64;
    tc.seed = cfg.seed;
    (void)train_model(model, data, data, tc);
  }

  const ModelGraphD dmodel = model.cast<double>();
  // finite differences need samples away from relu kinks
  const Batch<double> batch = select_smooth_batch(dmodel, data.images.cast<double>(), data.labels,
                                                  std::min<std::int64_t>(samples, data.images.dim(0)));

  const HessianBlocks blocks = hessian_all(dmodel, batch, LossKind::cross_entropy);
  const MassTable mass = tridiagonal_mass(blocks);
  const double asym = symmetry_residual(blocks);

  // Taylor remainder curve under perturbation scaling
  const GraphOracle oracle = make_graph_oracle(dmodel, batch, LossKind::cross_entropy);
  const Eigen::VectorXd w0 = pack_weights(dmodel, oracle.layout);
  Eigen::MatrixXd dense(w0.size(), w0.size());
  for (int i = 0; i < oracle.layout.layer_count(); ++i)
    for (int j = 0; j < oracle.layout.layer_count(); ++j)
      dense.block(oracle.layout.offsets[static_cast<std::size_t>(i)],
                  oracle.layout.offsets[static_cast<std::size_t>(j)], oracle.layout.layer_size(i),
                  oracle.layout.layer_size(j)) = blocks.at(i, j);
  const Eigen::VectorXd g0 = oracle.grad(w0);
  const double l0 = oracle.loss(w0);
  std::mt19937_64 rng(cfg.seed + 13);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd dw(w0.size());
  for (Eigen::Index i = 0; i < dw.size(); ++i)
    dw[i] = 0.05 * std::max(1.0, std::abs(w0[i])) * gauss(rng);

  json taylor = json::array();
  for (const double s : {1.0, 0.5, 0.25, 0.125}) {
    const Eigen::VectorXd step = s * dw;
    const double actual = oracle.loss(w0 + step) - l0;
    const double predicted = taylor_increase(step, g0, dense);
    taylor.push_back(json{{"scale", s},
                          {"actual", actual},
                          {"predicted", predicted},
                          {"abs_error", std::abs(actual - predicted)}});
  }

  json mass_rows = json::array();
  for (std::size_t d = 0; d < mass.mean_frobenius.size(); ++d)
    mass_rows.push_back(json{{"distance", d},
                             {"mean_frobenius", mass.mean_frobenius[d]},
                             {"count", mass.count[d]}});
  const json out{{"layer_count", oracle.layout.layer_count()},
                 {"weight_count", oracle.layout.total},
                 {"symmetry_residual", asym},
                 {"tridiagonal_mass", mass_rows},
                 {"taylor_remainder", taylor}};
  write_json(out, json_path);

  std::ofstream csv(csv_path);
  csv << "# tridiagonal_mass\ndistance,mean_frobenius,count\n";
  for (std::size_t d = 0; d < mass.mean_frobenius.size(); ++d)
    csv << d << "," << mass.mean_frobenius[d] << "," << mass.count[d] << "\n";
  csv << "# taylor_remainder\nscale,actual,predicted,abs_error\n";
  for (const auto& row : taylor)
    csv << row.at("scale").get<double>() << "," << row.at("actual").get<double>() << ","
        << row.at("predicted").get<double>() << "," << row.at("abs_error").get<double>() << "\n";

  std::printf("weight count %lld, symmetry residual %.3g\n",
              static_cast<long long>(oracle.layout.total), asym);
  for (std::size_t d = 0; d < mass.mean_frobenius.size(); ++d)
    std::printf("  |i-j|=%zu: mean ||H||_F = %.6g (%d blocks)\n", d, mass.mean_frobenius[d],
                mass.count[d]);
  std::printf("wrote %s and %s\n", json_path.c_str(), csv_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig cfg;

  // an optional --config JSON pre-loads defaults; explicit flags override
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") {
      std::ifstream f(argv[i + 1]);
      if (!f) {
        std::fprintf(stderr, "error: cannot open config %s\n", argv[i + 1]);
        return 1;
      }
      json j;
      f >> j;
      cfg = run_config_from_json(j.contains("config") ? j.at("config") : j);
    }
  }

  CLI::App app{"post-training quantization toolkit (unit-wise reconstruction)"};
  app.set_help_all_flag("--help-all");
  std::string config_path;
  app.add_option("--config", config_path, "JSON config file (report 'config' blocks work too)");

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--data", cfg.data_root, "dataset root (or env UNITQUANT_DATA)");
    sub->add_option("--seed", cfg.seed)->capture_default_str();
    sub->add_option("--norm-mean", cfg.norm_mean)->capture_default_str();
    sub->add_option("--norm-std", cfg.norm_std)->capture_default_str();
  };

  CLI::App* train = app.add_subcommand("train", "train the reference CNN");
  add_common(train);
  train->add_option("--out", cfg.out_path, "output model manifest (.json)");
  train->add_option("--epochs", cfg.epochs)->capture_default_str();
  train->add_option("--lr", cfg.train_lr)->capture_default_str();
  train->add_option("--momentum", cfg.momentum)->capture_default_str();
  train->add_option("--weight-decay", cfg.weight_decay)->capture_default_str();
  train->add_option("--batch", cfg.batch)->capture_default_str();
  train->add_option("--limit", cfg.train_limit, "cap on training samples (0 = all)")
      ->capture_default_str();

  CLI::App* quantize = app.add_subcommand("quantize", "quantize a trained model");
  add_common(quantize);
  quantize->add_option("--model", cfg.model_path, "float model manifest");
  quantize->add_option("--out", cfg.out_path, "output quantized manifest");
  quantize->add_option("--report", cfg.report_path, "JSON report path");
  quantize->add_option("--bits-w", cfg.bits_w, "weight bits {2,3,4}")->capture_default_str();
  quantize->add_option("--bits-a", cfg.bits_a, "activation bits {4,8,32}")->capture_default_str();
  quantize->add_option("--mode", cfg.mode, "rtn | layerwise | unitwise")->capture_default_str();
  quantize->add_option("--unit-size", cfg.unit_size)->capture_default_str();
  quantize->add_option("--steps", cfg.steps)->capture_default_str();
  quantize->add_option("--calib-size", cfg.calib_size)->capture_default_str();
  quantize->add_option("--lr-logits", cfg.lr_logits)->capture_default_str();
  quantize->add_option("--input-propagation", cfg.input_propagation, "quantized | float")
      ->capture_default_str();
  quantize->add_flag("--labels-from-model", cfg.labels_from_model,
                     "Fisher labels from the float model's predictions");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a model on a split");
  add_common(eval);
  eval->add_option("--model", cfg.model_path, "model manifest");
  std::string split = "test";
  int topk = 5;
  eval->add_option("--split", split, "train | test")->capture_default_str();
  eval->add_option("--topk", topk)->capture_default_str();

  CLI::App* probe = app.add_subcommand("probe-hessian",
                                       "finite-difference Hessian diagnostics on a tiny model");
  add_common(probe);
  std::string probe_model;
  std::string probe_json = "probe_hessian.json", probe_csv = "probe_hessian.csv";
  int probe_samples = 128;
  probe->add_option("--model", probe_model, "model manifest (default: built-in trained MLP)");
  probe->add_option("--out-json", probe_json)->capture_default_str();
  probe->add_option("--out-csv", probe_csv)->capture_default_str();
  probe->add_option("--samples", probe_samples)->capture_default_str();

  app.require_subcommand(1);
  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      cfg.command = "train";
      if (cfg.out_path.empty()) cfg.out_path = "model.json";
      return cmd_train(cfg);
    }
    if (quantize->parsed()) {
      cfg.command = "quantize";
      cfg.validate();
      if (cfg.model_path.empty()) throw ParameterError("quantize: --model is required");
      if (cfg.out_path.empty()) cfg.out_path = "model_quant.json";
      return cmd_quantize(cfg);
    }
    if (eval->parsed()) {
      cfg.command = "eval";
      if (cfg.model_path.empty()) throw ParameterError("eval: --model is required");
      return cmd_eval(cfg, split, topk);
    }
    cfg.command = "probe-hessian";
    return cmd_probe_hessian(cfg, probe_model, probe_json, probe_csv, probe_samples);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
