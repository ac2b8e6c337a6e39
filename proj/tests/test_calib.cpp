#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "unitquant/calib.hpp"
#include "unitquant/oracle.hpp"

using namespace uq;
using namespace uq::testutil;

namespace {

VecX<double> vec3(double a, double b, double c) {
  VecX<double> v(3);
  v << a, b, c;
  return v;
}

/// One 1x1 conv with explicit weights; the simplest optimizable unit.
UnitSlice<float> conv1x1_slice(const std::vector<float>& weights, std::int64_t channels_in) {
  UnitSlice<float> s;
  s.net.input_shape = {channels_in, 1, 1};
  s.net.class_count = 2;
  const std::int64_t oc = static_cast<std::int64_t>(weights.size()) / channels_in;
  s.net.layers.push_back(LayerSpec<float>::conv2d(
      TensorF({oc, channels_in, 1, 1}, weights), TensorF({oc}), 1, 0));
  s.q_local = {0};
  return s;
}

UnitContext<float> context_from(const UnitSlice<float>& slice, const TensorF& inputs,
                                float fisher_value = 1.0f) {
  UnitContext<float> ctx;
  ctx.inputs = inputs;
  ctx.targets = forward(slice.net, inputs);
  ctx.fisher = TensorF::full(ctx.targets.shape, fisher_value);
  return ctx;
}

UnitDistributions<float> grid_candidates(const UnitSlice<float>& slice, int bits) {
  UnitDistributions<float> dist;
  for (int ql : slice.q_local) {
    const TensorF& w = slice.net.layers[static_cast<std::size_t>(ql)].weight;
    const QuantParams p = weight_scale_search(w, bits);
    dist.candidates.push_back(build_candidates<float>(quantize_rtn(w, p), p, w.shape));
  }
  init_logits(dist, 0.5f);
  return dist;
}

ModelGraphF tiny_cnn(std::mt19937_64& rng) {
  ModelGraphF g;
  g.input_shape = {1, 8, 8};
  g.class_count = 3;
  g.layers.push_back(
      LayerSpec<float>::conv2d(randn_f({2, 1, 3, 3}, rng, 0.5), randn_f({2}, rng, 0.1), 1, 1));
  g.layers.push_back(LayerSpec<float>::activation());
  g.layers.push_back(LayerSpec<float>::pool(LayerKind::maxpool, 2, 2));
  g.layers.push_back(
      LayerSpec<float>::conv2d(randn_f({3, 2, 3, 3}, rng, 0.5), randn_f({3}, rng, 0.1), 1, 1));
  g.layers.push_back(LayerSpec<float>::activation());
  g.layers.push_back(LayerSpec<float>::pool(LayerKind::avgpool, 4, 4));
  g.layers.push_back(LayerSpec<float>::reshape());
  g.layers.push_back(LayerSpec<float>::dense(randn_f({3, 3}, rng, 0.6), randn_f({3}, rng, 0.1)));
  return g;
}

CalibData random_calib(std::int64_t n, const std::vector<std::int64_t>& shape, int classes,
                       std::mt19937_64& rng) {
  CalibData d;
  std::vector<std::int64_t> full = shape;
  full.insert(full.begin(), n);
  d.inputs = randn_f(full, rng);
  d.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    d.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % classes);
  return d;
}

}  // namespace

TEST_CASE("temperature softmax closed forms") {
  CHECK(softmax_temp(vec3(0, 0, 0), 1.0).isApproxToConstant(1.0 / 3.0, 1e-12));
  CHECK(softmax_temp(vec3(0, 0, 0), 0.07).isApproxToConstant(1.0 / 3.0, 1e-12));

  const double e1 = std::exp(1.0);
  const VecX<double> p1 = softmax_temp(vec3(1, 0, 0), 1.0);
  CHECK(p1[0] == doctest::Approx(e1 / (e1 + 2)).epsilon(1e-9));
  CHECK(p1[1] == doctest::Approx(1.0 / (e1 + 2)).epsilon(1e-9));
  CHECK(p1[0] == doctest::Approx(0.57612).epsilon(1e-4));

  const double e10 = std::exp(10.0);
  const VecX<double> p2 = softmax_temp(vec3(1, 0, 0), 0.1);
  CHECK(p2[0] == doctest::Approx(e10 / (e10 + 2)).epsilon(1e-9));
  CHECK(p2[1] == doctest::Approx(1.0 / (e10 + 2)).epsilon(1e-9));
  CHECK(p2[0] > 0.9999);

  CHECK_THROWS_AS(softmax_temp(vec3(1, 0, 0), 0.0), ParameterError);
  CHECK_THROWS_AS(softmax_temp(vec3(1, 0, 0), -1.0), ParameterError);
}

TEST_CASE("softmax invariances and sharpening") {
  std::mt19937_64 rng(79);
  std::normal_distribution<double> gauss(0.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<float, 3> a{static_cast<float>(gauss(rng)), static_cast<float>(gauss(rng)),
                           static_cast<float>(gauss(rng))};
    const float t = static_cast<float>(0.05 + std::abs(gauss(rng)));
    const auto p = softmax3(a, t);
    CHECK(p[0] >= 0.0f);
    CHECK(p[1] >= 0.0f);
    CHECK(p[2] >= 0.0f);
    CHECK(std::abs(p[0] + p[1] + p[2] - 1.0f) <= 1e-6f);

    // shift invariance
    const float c = static_cast<float>(gauss(rng));
    const auto ps = softmax3({a[0] + c, a[1] + c, a[2] + c}, t);
    for (int j = 0; j < 3; ++j)
      CHECK(std::abs(ps[static_cast<std::size_t>(j)] - p[static_cast<std::size_t>(j)]) <= 1e-7f);

    // temperature equivalence
    const auto pt = softmax3({a[0] / t, a[1] / t, a[2] / t}, 1.0f);
    for (int j = 0; j < 3; ++j)
      CHECK(std::abs(pt[static_cast<std::size_t>(j)] - p[static_cast<std::size_t>(j)]) <= 1e-7f);
  }

  // max probability is nondecreasing as t decreases (unique maximum)
  const std::array<float, 3> a{0.8f, 0.1f, -0.3f};
  float prev = 0;
  for (float t : {2.0f, 1.0f, 0.5f, 0.2f, 0.1f, 0.05f, 0.01f}) {
    const auto p = softmax3(a, t);
    const float mx = std::max(p[0], std::max(p[1], p[2]));
    CHECK(mx >= prev);
    prev = mx;
  }
  CHECK(prev >= 0.999f);
}

TEST_CASE("expected weight") {
  CHECK(expected_weight(vec3(-1, 0, 1), vec3(0, 1, 0)) == 0.0);
  CHECK(expected_weight(vec3(-1, 0, 1), vec3(0, 0, 1)) == 1.0);
  const double d = 0.25, alpha = 0.5;
  CHECK(expected_weight(vec3(d - alpha, d, d + alpha), vec3(1.0 / 3, 1.0 / 3, 1.0 / 3)) ==
        doctest::Approx(d).epsilon(1e-12));
  CHECK(expected_weight(vec3(-1, 0, 1), vec3(0.5, 0.25, 0.25)) == doctest::Approx(-0.25));
  const VecX<double> two = VecX<double>::Ones(2);
  CHECK_THROWS_AS(expected_weight(vec3(1, 2, 3), two), DimensionError);

  std::mt19937_64 rng(83);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::array<float, 3> v{static_cast<float>(gauss(rng)), 0.0f, 0.0f};
    v[1] = v[0] + 0.5f;
    v[2] = v[0] + 1.0f;
    const auto p = softmax3({static_cast<float>(gauss(rng)), static_cast<float>(gauss(rng)),
                             static_cast<float>(gauss(rng))},
                            0.4f);
    const float we = expected3(v, p);
    CHECK(we >= v[0] - 1e-6f);
    CHECK(we <= v[2] + 1e-6f);
  }
}

TEST_CASE("annealing schedule") {
  CHECK(anneal(0, 2000, 1.0, 0.01) == 1.0);
  CHECK(anneal(1999, 2000, 1.0, 0.01) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(anneal(1, 3, 1.0, 0.01) == doctest::Approx(0.1).epsilon(1e-12));
  double prev = 1.0;
  for (int s = 0; s < 100; ++s) {
    const double t = anneal(s, 100, 1.0, 0.01);
    CHECK(t <= prev + 1e-15);
    prev = t;
  }
}

TEST_CASE("fisher weights") {
  SUBCASE("constant-output network has zero weights at interior taps") {
    ModelGraphF g;
    g.input_shape = {2};
    g.class_count = 2;
    g.layers.push_back(LayerSpec<float>::dense(TensorF({2, 2}, {1, 2, 3, 4}), TensorF({2})));
    g.layers.push_back(LayerSpec<float>::activation());
    g.layers.push_back(LayerSpec<float>::dense(TensorF({2, 2}), TensorF({2}, {0.3f, -0.3f})));
    CalibData data;
    data.inputs = TensorF({3, 2}, {1, 2, -1, 0.5f, 0.25f, -2});
    data.labels = {0, 1, 0};
    const TensorF f = fisher_weights(g, data, 0, false);
    for (float v : f.data) CHECK(v == 0.0f);
  }

  SUBCASE("single linear layer: fisher = (softmax - onehot)^2") {
    ModelGraphF g;
    g.input_shape = {2};
    g.class_count = 2;
    g.layers.push_back(
        LayerSpec<float>::dense(TensorF({2, 2}, {0.5f, -1.0f, 0.25f, 0.75f}), TensorF({2})));
    CalibData data;
    data.inputs = TensorF({1, 2}, {1.0f, 2.0f});
    data.labels = {1};
    const TensorF z = forward(g, data.inputs);
    const double e0 = std::exp(double(z.data[0])), e1 = std::exp(double(z.data[1]));
    const double p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    const TensorF f = fisher_weights(g, data, 0, false);
    CHECK(f.data[0] == doctest::Approx(p0 * p0).epsilon(1e-4));
    CHECK(f.data[1] == doctest::Approx((p1 - 1) * (p1 - 1)).epsilon(1e-4));
  }

  SUBCASE("shifting final-layer logits moves final targets, not interior fisher") {
    std::mt19937_64 rng(89);
    ModelGraphF g;
    g.input_shape = {3};
    g.class_count = 3;
    g.layers.push_back(LayerSpec<float>::dense(randn_f({4, 3}, rng), randn_f({4}, rng, 0.2)));
    g.layers.push_back(LayerSpec<float>::activation());
    g.layers.push_back(LayerSpec<float>::dense(randn_f({3, 4}, rng), randn_f({3}, rng, 0.2)));
    ModelGraphF shifted = g;
    for (float& b : shifted.layers[2].bias.data) b += 5.0f;

    CalibData data;
    data.inputs = randn_f({4, 3}, rng);
    data.labels = {0, 1, 2, 0};
    const TapReference a = compute_tap_reference(g, data, 0, false, 256);
    const TapReference b = compute_tap_reference(shifted, data, 0, false, 256);
    // softmax is shift invariant, so interior fisher only moves by rounding
    for (std::size_t i = 0; i < a.fisher.data.size(); ++i)
      CHECK(b.fisher.data[i] ==
            doctest::Approx(a.fisher.data[i]).epsilon(1e-4).scale(1e-9));
    CHECK(a.targets.data == b.targets.data);

    const TapReference fa = compute_tap_reference(g, data, 2, false, 256);
    const TapReference fb = compute_tap_reference(shifted, data, 2, false, 256);
    CHECK(fa.targets.data != fb.targets.data);  // final tap moves with the bias
  }

  SUBCASE("missing labels in labeled mode") {
    ModelGraphF g;
    g.input_shape = {2};
    g.class_count = 2;
    g.layers.push_back(LayerSpec<float>::dense(TensorF({2, 2}, {1, 0, 0, 1}), TensorF({2})));
    CalibData data;
    data.inputs = TensorF({2, 2});
    CHECK_THROWS_AS(fisher_weights(g, data, 0, false), DataError);
    CHECK_NOTHROW(fisher_weights(g, data, 0, true));
  }
}

TEST_CASE("unit objective") {
  std::mt19937_64 rng(97);

  SUBCASE("zero perturbation gives zero objective") {
    UnitSlice<float> slice = conv1x1_slice({0.7f, -0.4f}, 2);
    const UnitContext<float> ctx = context_from(slice, randn_f({5, 2, 1, 1}, rng));
    const std::vector<std::int64_t> all = all_indices(5);
    CHECK(unit_objective(slice, ctx, all) == 0.0);
  }

  SUBCASE("1x1 conv closed form: fisher * (dw * x)^2") {
    UnitSlice<float> slice = conv1x1_slice({0.5f}, 1);
    TensorF x({1, 1, 1, 1}, {2.0f});
    UnitContext<float> ctx = context_from(slice, x, 3.0f);
    const float dw = 0.25f;
    slice.net.layers[0].weight.data[0] += dw;
    const std::vector<std::int64_t> all = all_indices(1);
    CHECK(unit_objective(slice, ctx, all) ==
          doctest::Approx(3.0 * (dw * 2.0) * (dw * 2.0)).epsilon(1e-6));
  }

  SUBCASE("unit objective with unit fisher equals plain MSE") {
    UnitSlice<float> slice = conv1x1_slice({0.3f, 0.9f, -0.2f, 0.1f, 0.5f, -0.7f}, 2);
    UnitContext<float> ctx = context_from(slice, randn_f({8, 2, 1, 1}, rng), 1.0f);
    for (float& w : slice.net.layers[0].weight.data) w += 0.07f;
    const std::vector<std::int64_t> all = all_indices(8);
    const double obj = unit_objective(slice, ctx, all);
    // independent MSE route
    const TensorF zhat = forward(slice.net, ctx.inputs);
    double mse = 0;
    for (std::size_t i = 0; i < zhat.data.size(); ++i) {
      const double r = double(zhat.data[i]) - double(ctx.targets.data[i]);
      mse += r * r;
    }
    mse /= 8.0;
    CHECK(obj == doctest::Approx(mse).epsilon(1e-6));
  }

  SUBCASE("empty shard is a data error") {
    UnitSlice<float> slice = conv1x1_slice({1.0f}, 1);
    const UnitContext<float> ctx = context_from(slice, randn_f({2, 1, 1, 1}, rng));
    const std::vector<std::int64_t> none;
    CHECK_THROWS_AS(unit_objective(slice, ctx, none), DataError);
  }
}

TEST_CASE("logit gradients match finite differences") {
  std::mt19937_64 rng(101);
  UnitSlice<float> fslice = conv1x1_slice({0.43f, -0.21f, 0.66f, 0.12f}, 2);
  fslice.net.layers.push_back(LayerSpec<float>::activation());
  fslice.net.layers.push_back(
      LayerSpec<float>::conv2d(randn_f({2, 2, 1, 1}, rng, 0.6), randn_f({2}, rng, 0.1), 1, 0));
  fslice.q_local = {0, 2};

  UnitContext<float> fctx;
  fctx.inputs = randn_f({6, 2, 1, 1}, rng);
  fctx.targets = forward(fslice.net, fctx.inputs);
  fctx.fisher = randn_f(fctx.targets.shape, rng);
  for (float& v : fctx.fisher.data) v = std::abs(v);

  UnitDistributions<float> fdist = grid_candidates(fslice, 3);
  std::normal_distribution<double> gauss(0.0, 0.4);
  for (auto& layer : fdist.logits)
    for (auto& a : layer)
      for (int j = 0; j < 3; ++j) a[static_cast<std::size_t>(j)] = static_cast<float>(gauss(rng));

  // run the check in float64
  UnitSlice<double> slice = fslice.cast<double>();
  UnitContext<double> ctx = fctx.cast<double>();
  UnitDistributions<double> dist = fdist.cast<double>();
  const double t = 0.7;
  const std::vector<std::int64_t> all = all_indices(6);

  std::vector<std::vector<std::array<double, 3>>> da;
  (void)objective_with_logits(slice, dist, t, ctx, all, &da);

  double worst = 0;
  for (std::size_t l = 0; l < dist.logits.size(); ++l)
    for (std::size_t e = 0; e < dist.logits[l].size(); ++e)
      for (int j = 0; j < 3; ++j) {
        const double a0 = dist.logits[l][e][static_cast<std::size_t>(j)];
        const double h = 1e-4;
        dist.logits[l][e][static_cast<std::size_t>(j)] = a0 + h;
        const double lp = objective_with_logits(slice, dist, t, ctx, all);
        dist.logits[l][e][static_cast<std::size_t>(j)] = a0 - h;
        const double lm = objective_with_logits(slice, dist, t, ctx, all);
        dist.logits[l][e][static_cast<std::size_t>(j)] = a0;
        const double fd = (lp - lm) / (2 * h);
        worst = std::max(worst, std::abs(da[l][e][static_cast<std::size_t>(j)] - fd) /
                                    std::max(std::abs(fd), 1e-6));
      }
  CHECK(worst < 1e-3);
}

TEST_CASE("optimize_unit behaviour") {
  std::mt19937_64 rng(103);

  SUBCASE("single weight converges to the strictly best candidate") {
    UnitSlice<float> slice = conv1x1_slice({0.5f}, 1);
    UnitDistributions<float> dist = grid_candidates(slice, 3);
    // make the lowest candidate the target
    const float target_w = dist.candidates[0].values[0][0];
    UnitContext<float> ctx;
    ctx.inputs = randn_f({16, 1, 1, 1}, rng);
    UnitSlice<float> target = slice;
    target.net.layers[0].weight.data[0] = target_w;
    ctx.targets = forward(target.net, ctx.inputs);
    ctx.fisher = TensorF::full(ctx.targets.shape, 1.0f);

    CalibConfig cfg;
    cfg.steps = 500;
    cfg.shard_size = 16;
    const OptimizeResult res = optimize_unit(slice, dist, ctx, cfg);
    CHECK(res.selection[0][0] == 0);
  }

  SUBCASE("zero learning rate keeps the initialization argmax (RTN)") {
    UnitSlice<float> slice = conv1x1_slice({0.41f, -0.17f, 0.88f}, 3);
    UnitDistributions<float> dist = grid_candidates(slice, 3);
    UnitContext<float> ctx = context_from(slice, randn_f({8, 3, 1, 1}, rng));
    CalibConfig cfg;
    cfg.steps = 50;
    cfg.lr_logits = 0.0f;
    const OptimizeResult res = optimize_unit(slice, dist, ctx, cfg);
    for (int s : res.selection[0]) CHECK(s == 1);
  }

  SUBCASE("non-finite objective aborts with the unit and step named") {
    UnitSlice<float> slice = conv1x1_slice({1.0f}, 1);
    UnitDistributions<float> dist = grid_candidates(slice, 3);
    UnitContext<float> ctx = context_from(slice, TensorF({1, 1, 1, 1}, {1.0f}));
    ctx.fisher.data[0] = std::numeric_limits<float>::infinity();
    ctx.targets.data[0] = -1.0f;  // nonzero residual so inf propagates
    CalibConfig cfg;
    cfg.steps = 3;
    CHECK_THROWS_WITH_AS(optimize_unit(slice, dist, ctx, cfg, 7), doctest::Contains("unit 7"),
                         Error);
  }

  SUBCASE("annealed search lands within 1% of brute force in at least 18/20 trials") {
    int good = 0;
    for (int trial = 0; trial < 20; ++trial) {
      std::mt19937_64 trng(200 + trial);
      const std::int64_t cin = 2, cout = 1 + trial % 3;
      std::vector<float> w(static_cast<std::size_t>(cin * cout));
      std::normal_distribution<double> gauss(0.0, 0.5);
      for (float& v : w) v = static_cast<float>(gauss(trng));
      UnitSlice<float> slice = conv1x1_slice(w, cin);
      UnitDistributions<float> dist = grid_candidates(slice, 3);

      UnitContext<float> ctx;
      ctx.inputs = randn_f({12, cin, 1, 1}, trng);
      UnitSlice<float> noisy = slice;
      for (float& v : noisy.net.layers[0].weight.data)
        v += static_cast<float>(gauss(trng)) * 0.2f;
      ctx.targets = forward(noisy.net, ctx.inputs);
      ctx.fisher = randn_f(ctx.targets.shape, trng);
      for (float& v : ctx.fisher.data) v = 0.1f + std::abs(v);

      CalibConfig cfg;
      cfg.steps = 2000;
      cfg.shard_size = 12;
      UnitSlice<float> opt_slice = slice;
      UnitDistributions<float> opt_dist = dist;
      const OptimizeResult res = optimize_unit(opt_slice, opt_dist, ctx, cfg);
      const std::vector<std::int64_t> all = all_indices(12);
      const double got = objective_at_selection(opt_slice, opt_dist, res.selection, ctx, all);

      UnitSlice<float> bf_slice = slice;
      const BruteForceResult best = brute_force_unit(bf_slice, dist, ctx);
      CHECK(got >= best.objective - 1e-9);  // the exhaustive minimum is a lower bound
      if (got <= best.objective * 1.01 + 1e-12) ++good;
    }
    CHECK(good >= 18);
  }
}

TEST_CASE("calibration drivers") {
  std::mt19937_64 rng(107);
  const ModelGraphF net = tiny_cnn(rng);
  const CalibData data = random_calib(32, {1, 8, 8}, 3, rng);

  SUBCASE("steps=0 path equals pure RTN") {
    CalibConfig cfg;
    cfg.bits_w = 3;
    cfg.steps = 0;
    const CalibOutcome a = calibrate_unitwise(net, data, cfg);
    const CalibOutcome b = calibrate_rtn(net, data, cfg);
    for (std::size_t i = 0; i < a.graph.layers.size(); ++i)
      CHECK(a.graph.layers[i].weight.data == b.graph.layers[i].weight.data);
  }

  SUBCASE("objective never gets worse and commits stay on the grid") {
    CalibConfig cfg;
    cfg.bits_w = 3;
    cfg.steps = 300;
    cfg.shard_size = 16;
    const CalibOutcome out = calibrate_unitwise(net, data, cfg);
    REQUIRE(out.report.units.size() == 1);  // 3 quantizable layers, u=3
    for (const auto& u : out.report.units) CHECK(u.obj_after <= u.obj_before + 1e-12);
    for (const auto& l : out.graph.layers) {
      if (!l.quantizable()) continue;
      const std::int64_t per_ch = l.weight.numel() / l.weight.dim(0);
      for (std::int64_t e = 0; e < l.weight.numel(); ++e)
        CHECK(l.weight.data[static_cast<std::size_t>(e)] ==
              l.qscales.data[static_cast<std::size_t>(e / per_ch)] *
                  static_cast<float>(l.qcodes[static_cast<std::size_t>(e)]));
    }
  }

  SUBCASE("one-layer network: layerwise and unitwise agree under one seed") {
    ModelGraphF one;
    one.input_shape = {4};
    one.class_count = 2;
    one.layers.push_back(LayerSpec<float>::dense(randn_f({2, 4}, rng, 0.5), TensorF({2})));
    CalibData d;
    d.inputs = randn_f({16, 4}, rng);
    d.labels.assign(16, 0);
    for (int i = 0; i < 16; ++i) d.labels[static_cast<std::size_t>(i)] = i % 2;
    CalibConfig cfg;
    cfg.steps = 200;
    cfg.shard_size = 8;
    const CalibOutcome lw = calibrate_layerwise(one, d, cfg);
    const CalibOutcome uw = calibrate_unitwise(one, d, cfg);
    CHECK(lw.graph.layers[0].weight.data == uw.graph.layers[0].weight.data);
  }

  SUBCASE("pass counts: layerwise L, unitwise L-u+1") {
    // five quantizable layers
    ModelGraphF g;
    g.input_shape = {4};
    g.class_count = 4;
    for (int i = 0; i < 5; ++i) {
      g.layers.push_back(LayerSpec<float>::dense(randn_f({4, 4}, rng, 0.5), TensorF({4})));
      if (i < 4) g.layers.push_back(LayerSpec<float>::activation());
    }
    CalibData d;
    d.inputs = randn_f({8, 4}, rng);
    d.labels = {0, 1, 2, 3, 0, 1, 2, 3};
    CalibConfig cfg;
    cfg.steps = 10;
    cfg.shard_size = 8;
    CHECK(calibrate_layerwise(g, d, cfg).report.units.size() == 5);
    CHECK(calibrate_unitwise(g, d, cfg).report.units.size() == 3);
  }

  SUBCASE("calibration is deterministic") {
    CalibConfig cfg;
    cfg.bits_w = 3;
    cfg.steps = 100;
    const CalibOutcome a = calibrate_unitwise(net, data, cfg);
    const CalibOutcome b = calibrate_unitwise(net, data, cfg);
    for (std::size_t i = 0; i < a.graph.layers.size(); ++i)
      CHECK(a.graph.layers[i].weight.data == b.graph.layers[i].weight.data);
  }

  SUBCASE("32-bit activation mode carries no activation quantizers") {
    CalibConfig cfg;
    cfg.steps = 5;
    const CalibOutcome out = calibrate_unitwise(net, data, cfg);
    CHECK_FALSE(out.report.act_quant);
    for (const auto& l : out.graph.layers) CHECK(l.kind != LayerKind::actquant);
  }

  SUBCASE("activation quantization inserts calibrated scales") {
    CalibConfig cfg;
    cfg.bits_a = 8;
    cfg.steps = 20;
    cfg.pact_steps = 10;
    const CalibOutcome out = calibrate_unitwise(net, data, cfg);
    CHECK(out.report.act_quant);
    int fq = 0;
    for (const auto& l : out.graph.layers)
      if (l.kind == LayerKind::actquant) {
        ++fq;
        CHECK(l.act_scale > 0.0f);
      }
    CHECK(fq == 3);  // input + two relus
  }

  SUBCASE("final distributions sharpen past 0.999 under the default schedule") {
    CalibConfig cfg;
    cfg.bits_w = 3;  // defaults: steps=2000, t 1.0 -> 0.01
    const CalibOutcome out = calibrate_unitwise(net, data, cfg);
    for (const auto& u : out.report.units) CHECK(u.min_max_prob >= 0.999);
  }
}

TEST_CASE("PACT scale learning") {
  SUBCASE("on-grid activations inside the range are a fixed point") {
    ModelGraphF g;
    g.input_shape = {1, 1, 1};
    g.class_count = 2;
    g.layers.push_back(LayerSpec<float>::act_quant(8));
    g.layers[0].act_scale = 0.25f;
    g.layers.push_back(
        LayerSpec<float>::conv2d(TensorF({1, 1, 1, 1}, {1.0f}), TensorF({1}), 1, 0));
    Unit unit;
    unit.span_begin = 0;
    unit.tap = 1;
    unit.layers = {0, 1};
    unit.q_layers = {1};

    UnitContext<float> ctx;
    ctx.inputs = TensorF({4, 1, 1, 1}, {0.25f, -0.5f, 0.75f, 0.0f});  // on-grid
    ctx.targets = forward(g, ctx.inputs);  // quantization is exact here
    ctx.fisher = TensorF::full(ctx.targets.shape, 1.0f);
    CalibConfig cfg;
    cfg.pact_steps = 50;
    CHECK(pact_learn_scales(g, unit, ctx, cfg) == 1);
    CHECK(g.layers[0].act_scale == 0.25f);
  }

  SUBCASE("an extreme outlier is clipped and beats the max-abs scale") {
    std::mt19937_64 rng(109);
    ModelGraphF g;
    g.input_shape = {1, 1, 1};
    g.class_count = 2;
    g.layers.push_back(LayerSpec<float>::act_quant(4));
    g.layers.push_back(
        LayerSpec<float>::conv2d(TensorF({1, 1, 1, 1}, {1.0f}), TensorF({1}), 1, 0));
    Unit unit;
    unit.span_begin = 0;
    unit.tap = 1;
    unit.layers = {0, 1};
    unit.q_layers = {1};

    const std::int64_t n = 2048;
    TensorF inputs({n, 1, 1, 1});
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (float& v : inputs.data) v = static_cast<float>(uni(rng));
    inputs.data[13] = 10.0f;  // the outlier

    UnitContext<float> ctx;
    ctx.inputs = inputs;
    ctx.targets = inputs;  // float reference passes activations through
    ctx.fisher = TensorF::full(inputs.shape, 1.0f);

    // percentile initialization, then PACT
    ensure_act_scales(g, inputs, 1);
    CalibConfig cfg;
    cfg.pact_steps = 200;
    cfg.shard_size = 64;
    pact_learn_scales(g, unit, ctx, cfg);
    const float learned = g.layers[0].act_scale;
    const float clip = learned * 7.0f;  // max code at 4 bits
    CHECK(clip < 10.0f);

    const std::vector<std::int64_t> all = all_indices(n);
    UnitSlice<float> learned_slice = make_unit_slice(g, unit);
    const double obj_learned = unit_objective(learned_slice, ctx, all);
    g.layers[0].act_scale = 10.0f / 7.0f;  // max-abs baseline clips at the outlier
    UnitSlice<float> maxabs_slice = make_unit_slice(g, unit);
    const double obj_maxabs = unit_objective(maxabs_slice, ctx, all);
    CHECK(obj_learned < obj_maxabs);
  }
}

TEST_CASE("shard indices cycle round-robin") {
  CHECK(shard_indices(0, 4, 10) == std::vector<std::int64_t>{0, 1, 2, 3});
  CHECK(shard_indices(1, 4, 10) == std::vector<std::int64_t>{4, 5, 6, 7});
  CHECK(shard_indices(2, 4, 10) == std::vector<std::int64_t>{8, 9, 0, 1});
  CHECK(shard_indices(0, 8, 3) == std::vector<std::int64_t>{0, 1, 2});
}

TEST_CASE("config validation") {
  CalibConfig cfg;
  cfg.steps = -1;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = CalibConfig{};
  cfg.t_end = 2.0f;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
  cfg = CalibConfig{};
  cfg.unit_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}
