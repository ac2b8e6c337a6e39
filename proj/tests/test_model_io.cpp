#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "test_util.hpp"
#include "unitquant/quant.hpp"
#include "unitquant/serialize.hpp"

using namespace uq;
using namespace uq::testutil;
namespace fs = std::filesystem;

namespace {

ModelGraphF tiny_bn_net(std::mt19937_64& rng) {
  ModelGraphF g;
  g.input_shape = {2, 6, 6};
  g.class_count = 3;
  g.layers.push_back(
      LayerSpec<float>::conv2d(randn_f({4, 2, 3, 3}, rng, 0.5), randn_f({4}, rng, 0.2), 1, 1));
  TensorF var = randn_f({4}, rng, 0.3);
  for (float& v : var.data) v = 0.5f + std::abs(v);
  g.layers.push_back(LayerSpec<float>::batchnorm2d(randn_f({4}, rng, 0.5), randn_f({4}, rng, 0.3),
                                                   randn_f({4}, rng, 0.4), var, 1e-5));
  g.layers.push_back(LayerSpec<float>::activation());
  g.layers.push_back(LayerSpec<float>::pool(LayerKind::maxpool, 2, 2));
  g.layers.push_back(LayerSpec<float>::reshape());
  g.layers.push_back(LayerSpec<float>::dense(randn_f({3, 36}, rng, 0.3), randn_f({3}, rng, 0.1)));
  return g;
}

ModelGraphF chain_of_linears(int L) {
  ModelGraphF g;
  g.input_shape = {2};
  g.class_count = 2;
  for (int i = 0; i < L; ++i) {
    g.layers.push_back(LayerSpec<float>::dense(TensorF({2, 2}, {1, 0, 0, 1}), TensorF({2})));
    if (i + 1 < L) g.layers.push_back(LayerSpec<float>::activation());
  }
  return g;
}

}  // namespace

TEST_CASE("identity batchnorm folds to unchanged weights") {
  ModelGraphF g;
  g.input_shape = {1, 2, 2};
  g.class_count = 2;
  g.layers.push_back(LayerSpec<float>::conv2d(TensorF({1, 1, 1, 1}, {2.5f}),
                                              TensorF({1}, {0.5f}), 1, 0));
  g.layers.push_back(LayerSpec<float>::batchnorm2d(TensorF::full({1}, 1.0f), TensorF({1}),
                                                   TensorF({1}), TensorF::full({1}, 1.0f), 0.0));
  const ModelGraphF folded = fold_batchnorm(g);
  REQUIRE(folded.layers.size() == 1);
  CHECK(folded.layers[0].weight.data[0] == 2.5f);
  CHECK(folded.layers[0].bias.data[0] == 0.5f);
}

TEST_CASE("batchnorm folding formula") {
  // W=2, b=0, gamma=3, beta=1, mu=2, var=4, eps=0 -> W'=3, b'=-2
  ModelGraphF g;
  g.input_shape = {1, 1, 1};
  g.class_count = 1;
  g.layers.push_back(
      LayerSpec<float>::conv2d(TensorF({1, 1, 1, 1}, {2.0f}), TensorF({1}), 1, 0));
  g.layers.push_back(LayerSpec<float>::batchnorm2d(TensorF({1}, {3.0f}), TensorF({1}, {1.0f}),
                                                   TensorF({1}, {2.0f}), TensorF({1}, {4.0f}),
                                                   0.0));
  const ModelGraphF folded = fold_batchnorm(g);
  CHECK(folded.layers[0].weight.data[0] == doctest::Approx(3.0f));
  CHECK(folded.layers[0].bias.data[0] == doctest::Approx(-2.0f));
}

TEST_CASE("folding preserves the network function") {
  std::mt19937_64 rng(41);
  const ModelGraphF g = tiny_bn_net(rng);
  const ModelGraphF folded = fold_batchnorm(g);
  for (const auto& l : folded.layers) CHECK(l.kind != LayerKind::batchnorm);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const TensorF x = randn_f({2, 2, 6, 6}, rng);
    const TensorF a = forward(g, x);
    const TensorF b = forward(folded, x);
    for (std::size_t i = 0; i < a.data.size(); ++i)
      worst = std::max(worst, std::abs(double(a.data[i]) - double(b.data[i])));
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("batchnorm without a preceding parametric layer is a structure error") {
  ModelGraphF g;
  g.input_shape = {1, 2, 2};
  g.class_count = 2;
  g.layers.push_back(LayerSpec<float>::batchnorm2d(TensorF::full({1}, 1.0f), TensorF({1}),
                                                   TensorF({1}), TensorF::full({1}, 1.0f), 1e-5));
  CHECK_THROWS_AS(fold_batchnorm(g), StructureError);

  ModelGraphF g2;
  g2.input_shape = {1, 2, 2};
  g2.class_count = 2;
  g2.layers.push_back(
      LayerSpec<float>::conv2d(TensorF({1, 1, 1, 1}, {1.0f}), TensorF({1}), 1, 0));
  g2.layers.push_back(LayerSpec<float>::activation());
  g2.layers.push_back(LayerSpec<float>::batchnorm2d(TensorF::full({1}, 1.0f), TensorF({1}),
                                                    TensorF({1}), TensorF::full({1}, 1.0f), 1e-5));
  CHECK_THROWS_AS(fold_batchnorm(g2), StructureError);
}

TEST_CASE("unit partition counts and overlap") {
  SUBCASE("L=5, u=3 gives L-2 units") {
    const ModelGraphF g = chain_of_linears(5);
    const std::vector<Unit> units = partition_units(g, 3);
    REQUIRE(units.size() == 3);
    const std::vector<int> q = g.quantizable_indices();
    for (int i = 0; i < 3; ++i) {
      CHECK(units[static_cast<std::size_t>(i)].q_layers ==
            std::vector<int>{q[static_cast<std::size_t>(i)], q[static_cast<std::size_t>(i + 1)],
                             q[static_cast<std::size_t>(i + 2)]});
    }
    // consecutive units share u-1 quantizable layers
    for (int i = 0; i + 1 < 3; ++i) {
      const auto& a = units[static_cast<std::size_t>(i)].q_layers;
      const auto& b = units[static_cast<std::size_t>(i + 1)].q_layers;
      CHECK(std::vector<int>(a.begin() + 1, a.end()) ==
            std::vector<int>(b.begin(), b.end() - 1));
    }
  }
  SUBCASE("L=3, u=3 gives one unit") {
    const std::vector<Unit> units = partition_units(chain_of_linears(3), 3);
    REQUIRE(units.size() == 1);
    CHECK(units[0].q_layers.size() == 3);
  }
  SUBCASE("L=2, u=3 degenerates to one unit with both layers") {
    const std::vector<Unit> units = partition_units(chain_of_linears(2), 3);
    REQUIRE(units.size() == 1);
    CHECK(units[0].q_layers.size() == 2);
  }
  SUBCASE("membership count is min(j, u, L-j+1, L-u+1)") {
    const int L = 6, u = 3;
    const ModelGraphF g = chain_of_linears(L);
    const std::vector<Unit> units = partition_units(g, u);
    const std::vector<int> q = g.quantizable_indices();
    for (int j = 1; j <= L; ++j) {
      int count = 0;
      for (const Unit& unit : units)
        count += std::count(unit.q_layers.begin(), unit.q_layers.end(),
                            q[static_cast<std::size_t>(j - 1)]);
      CHECK(count == std::min({j, u, L - j + 1, L - u + 1}));
    }
  }
  SUBCASE("invalid unit size") { CHECK_THROWS_AS(partition_units(chain_of_linears(2), 0), ParameterError); }
}

TEST_CASE("model container round trip is bit exact") {
  std::mt19937_64 rng(43);
  const ModelGraphF g = tiny_bn_net(rng);
  const std::string path = (fs::temp_directory_path() / "uq_roundtrip.json").string();
  save_model(g, path);
  const ModelGraphF r = load_model(path);
  REQUIRE(r.layers.size() == g.layers.size());
  CHECK(r.input_shape == g.input_shape);
  CHECK(r.class_count == g.class_count);
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    CHECK(r.layers[i].kind == g.layers[i].kind);
    CHECK(r.layers[i].weight.data == g.layers[i].weight.data);
    CHECK(r.layers[i].bias.data == g.layers[i].bias.data);
    CHECK(r.layers[i].gamma.data == g.layers[i].gamma.data);
    CHECK(r.layers[i].running_var.data == g.layers[i].running_var.data);
    CHECK(r.layers[i].stride == g.layers[i].stride);
    CHECK(r.layers[i].pad == g.layers[i].pad);
  }
}

TEST_CASE("quantized model round trip keeps codes, scales and weights") {
  std::mt19937_64 rng(47);
  ModelGraphF g = fold_batchnorm(tiny_bn_net(rng));
  quantize_graph_rtn(g, 3);
  ModelGraphF q = insert_act_quant(g, 8);
  for (auto& l : q.layers)
    if (l.kind == LayerKind::actquant) l.act_scale = 0.123f;
  const std::string path = (fs::temp_directory_path() / "uq_roundtrip_q.json").string();
  save_model(q, path);
  const ModelGraphF r = load_model(path);
  REQUIRE(r.layers.size() == q.layers.size());
  for (std::size_t i = 0; i < q.layers.size(); ++i) {
    CHECK(r.layers[i].qbits == q.layers[i].qbits);
    CHECK(r.layers[i].qcodes == q.layers[i].qcodes);
    CHECK(r.layers[i].qscales.data == q.layers[i].qscales.data);
    CHECK(r.layers[i].weight.data == q.layers[i].weight.data);
    CHECK(r.layers[i].act_scale == q.layers[i].act_scale);
  }
}

TEST_CASE("container errors are named distinctly") {
  std::mt19937_64 rng(53);
  const ModelGraphF g = tiny_bn_net(rng);
  const std::string path = (fs::temp_directory_path() / "uq_badblob.json").string();
  save_model(g, path);

  nlohmann::json manifest;
  {
    std::ifstream f(path);
    f >> manifest;
  }

  SUBCASE("blob length mismatch") {
    // declare more elements than the blob holds for the first weight tensor
    auto& shape = manifest["layers"][0]["tensors"][0]["shape"];
    shape[0] = shape[0].get<int>() + 7;
    std::ofstream f(path);
    f << manifest.dump();
    f.close();
    CHECK_THROWS_AS(load_model(path), BlobLengthError);
  }

  SUBCASE("unknown layer kind lists the supported kinds") {
    manifest["layers"][2]["kind"] = "gelu";
    std::ofstream f(path);
    f << manifest.dump();
    f.close();
    CHECK_THROWS_WITH_AS(load_model(path), doctest::Contains("supported kinds"),
                         UnknownKindError);
  }

  SUBCASE("malformed manifest") {
    std::ofstream f(path);
    f << "this is not json";
    f.close();
    CHECK_THROWS_AS(load_model(path), ManifestError);
  }

  SUBCASE("missing tensor record") {
    manifest["layers"][0]["tensors"].erase(1);  // drop the bias
    std::ofstream f(path);
    f << manifest.dump();
    f.close();
    CHECK_THROWS_AS(load_model(path), ManifestError);
  }
}
