#include "unitquant/train.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>

#include "unitquant/calib.hpp"

namespace uq {

namespace {

TensorF he_normal(std::vector<std::int64_t> shape, std::int64_t fan_in, std::mt19937_64& rng) {
  TensorF t(std::move(shape));
  std::normal_distribution<double> gauss(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (float& v : t.data) v = static_cast<float>(gauss(rng));
  return t;
}

LayerSpec<float> conv_block(std::int64_t out_ch, std::int64_t in_ch, int k, int pad,
                            std::mt19937_64& rng) {
  return LayerSpec<float>::conv2d(he_normal({out_ch, in_ch, k, k}, in_ch * k * k, rng),
                                  TensorF({out_ch}), 1, pad);
}

LayerSpec<float> bn_block(std::int64_t ch) {
  return LayerSpec<float>::batchnorm2d(TensorF::full({ch}, 1.0f), TensorF({ch}), TensorF({ch}),
                                       TensorF::full({ch}, 1.0f), 1e-5);
}

}  // namespace

ModelGraphF build_reference_cnn(const std::vector<std::int64_t>& input_shape, int classes,
                                std::uint64_t seed) {
  if (input_shape.size() != 3) throw ParameterError("reference cnn: input shape must be C,H,W");
  const std::int64_t c = input_shape[0], h = input_shape[1];
  std::mt19937_64 rng(seed);
  ModelGraphF g;
  g.input_shape = input_shape;
  g.class_count = classes;
  auto add = [&](LayerSpec<float> l) { g.layers.push_back(std::move(l)); };

  add(conv_block(16, c, 3, 1, rng));
  add(bn_block(16));
  add(LayerSpec<float>::activation());
  add(LayerSpec<float>::pool(LayerKind::maxpool, 2, 2));
  add(conv_block(32, 16, 3, 1, rng));
  add(bn_block(32));
  add(LayerSpec<float>::activation());
  add(LayerSpec<float>::pool(LayerKind::maxpool, 2, 2));
  add(conv_block(64, 32, 3, 1, rng));
  add(bn_block(64));
  add(LayerSpec<float>::activation());
  add(conv_block(64, 64, 3, 1, rng));
  add(bn_block(64));
  add(LayerSpec<float>::activation());
  add(conv_block(64, 64, 3, 1, rng));
  add(bn_block(64));
  add(LayerSpec<float>::activation());
  const int spatial = static_cast<int>(h / 4);
  add(LayerSpec<float>::pool(LayerKind::avgpool, spatial, spatial));
  add(LayerSpec<float>::reshape());
  add(LayerSpec<float>::dense(he_normal({classes, 64}, 64, rng), TensorF({classes})));
  return g;
}

ModelGraphF build_mlp(std::int64_t in, std::int64_t hidden, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelGraphF g;
  g.input_shape = {in};
  g.class_count = classes;
  g.layers.push_back(LayerSpec<float>::dense(he_normal({hidden, in}, in, rng), TensorF({hidden})));
  g.layers.push_back(LayerSpec<float>::activation());
  g.layers.push_back(
      LayerSpec<float>::dense(he_normal({hidden, hidden}, hidden, rng), TensorF({hidden})));
  g.layers.push_back(LayerSpec<float>::activation());
  g.layers.push_back(
      LayerSpec<float>::dense(he_normal({classes, hidden}, hidden, rng), TensorF({classes})));
  return g;
}

Dataset make_blobs(std::int64_t count, std::int64_t dim, int classes, std::uint64_t seed,
                   double spread) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  TensorF centers({classes, dim});
  for (float& v : centers.data) v = static_cast<float>(gauss(rng));
  Dataset d;
  d.images = TensorF({count, dim});
  d.labels.resize(static_cast<std::size_t>(count));
  d.classes = classes;
  for (std::int64_t i = 0; i < count; ++i) {
    const int y = static_cast<int>(i % classes);
    d.labels[static_cast<std::size_t>(i)] = y;
    for (std::int64_t j = 0; j < dim; ++j)
      d.images.data[static_cast<std::size_t>(i * dim + j)] =
          centers.at(y, j) + static_cast<float>(spread * gauss(rng));
  }
  return d;
}

Dataset flatten_dataset(const Dataset& d) {
  Dataset out = d;
  out.images.shape = {d.images.dim(0), d.images.numel() / d.images.dim(0)};
  return out;
}

TrainResult train_model(ModelGraphF& g, const Dataset& train, const Dataset& test,
                        const TrainConfig& cfg) {
  const std::int64_t n = cfg.limit > 0 ? std::min(cfg.limit, train.images.dim(0))
                                       : train.images.dim(0);
  if (n < 1) throw DataError("train: empty training set");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  // momentum buffers per parametric/batchnorm layer
  struct Velocity {
    std::vector<float> w, b;
  };
  std::vector<Velocity> vel(g.layers.size());
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& l = g.layers[i];
    if (l.parametric()) {
      vel[i].w.assign(l.weight.data.size(), 0.0f);
      vel[i].b.assign(l.bias.data.size(), 0.0f);
    } else if (l.kind == LayerKind::batchnorm) {
      vel[i].w.assign(l.gamma.data.size(), 0.0f);
      vel[i].b.assign(l.beta.data.size(), 0.0f);
    }
  }
  float lr = cfg.lr;
  auto update = [&](std::vector<float>& p, const std::vector<float>& grad, std::vector<float>& v,
                    float wd) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const float gi = grad[i] + wd * p[i];
      v[i] = cfg.momentum * v[i] + gi;
      p[i] -= lr * v[i];
    }
  };

  TrainResult result;
  Grads<float> grads;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // step schedule: drop 10x for the final third of the run
    lr = (cfg.epochs >= 3 && epoch >= (2 * cfg.epochs) / 3) ? cfg.lr * 0.1f : cfg.lr;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::int64_t seen = 0;
    for (std::int64_t start = 0; start < n; start += cfg.batch) {
      const std::int64_t count = std::min<std::int64_t>(cfg.batch, n - start);
      std::vector<std::int64_t> idx(order.begin() + start, order.begin() + start + count);
      Batch<float> batch;
      batch.inputs = gather_rows(train.images, idx);
      batch.labels.resize(static_cast<std::size_t>(count));
      for (std::int64_t i = 0; i < count; ++i)
        batch.labels[static_cast<std::size_t>(i)] =
            train.labels[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
      batch.check_labels(g.class_count);
      loss_sum += backward_train(g, batch, LossKind::cross_entropy, grads) * count;
      seen += count;
      for (std::size_t i = 0; i < g.layers.size(); ++i) {
        auto& l = g.layers[i];
        if (l.parametric()) {
          update(l.weight.data, grads.layers[i].weight.data, vel[i].w, cfg.weight_decay);
          update(l.bias.data, grads.layers[i].bias.data, vel[i].b, 0.0f);
        } else if (l.kind == LayerKind::batchnorm) {
          update(l.gamma.data, grads.layers[i].gamma.data, vel[i].w, 0.0f);
          update(l.beta.data, grads.layers[i].beta.data, vel[i].b, 0.0f);
        }
      }
    }
    result.final_loss = loss_sum / static_cast<double>(seen);
    if (cfg.verbose) {
      const Accuracy acc = evaluate(g, test);
      std::printf("epoch %d: loss %.4f, test top-1 %.4f\n", epoch + 1, result.final_loss,
                  acc.top1);
    }
  }
  result.test_top1 = evaluate(g, test).top1;
  return result;
}

Accuracy evaluate(const ModelGraphF& g, const Dataset& data, int topk, int chunk) {
  const std::int64_t n = data.images.dim(0);
  if (n < 1) throw DataError("evaluate: empty dataset");
  if (data.classes != g.class_count)
    throw DataError("evaluate: model has " + std::to_string(g.class_count) +
                    " classes but dataset has " + std::to_string(data.classes));
  std::int64_t hit1 = 0, hitk = 0;
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t count = std::min<std::int64_t>(chunk, n - start);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) idx[static_cast<std::size_t>(i)] = start + i;
    const TensorF logits = forward(g, gather_rows(data.images, idx));
    const std::int64_t k = logits.dim(1);
    for (std::int64_t i = 0; i < count; ++i) {
      const float* row = logits.data.data() + i * k;
      const int label = data.labels[static_cast<std::size_t>(start + i)];
      // rank = classes strictly above the label, plus equal ones with a
      // lower index (deterministic tie rule)
      std::int64_t rank = 0;
      for (std::int64_t j = 0; j < k; ++j)
        if (row[j] > row[label] || (row[j] == row[label] && j < label)) ++rank;
      if (rank == 0) ++hit1;
      if (rank < topk) ++hitk;
    }
  }
  Accuracy acc;
  acc.top1 = static_cast<double>(hit1) / static_cast<double>(n);
  acc.topk = static_cast<double>(hitk) / static_cast<double>(n);
  acc.k = topk;
  return acc;
}

}  // namespace uq
