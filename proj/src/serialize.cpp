#include "unitquant/serialize.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "unitquant/quant.hpp"

namespace uq {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kFormatVersion = 1;

std::string blob_path_for(const std::string& manifest_path) {
  fs::path p(manifest_path);
  p.replace_extension(".bin");
  return p.string();
}

struct BlobWriter {
  std::vector<char> bytes;

  json add_f32(const std::string& name, const std::vector<std::int64_t>& shape,
               const std::vector<float>& data) {
    json rec;
    rec["name"] = name;
    rec["shape"] = shape;
    rec["dtype"] = "f32";
    rec["offset"] = bytes.size();
    rec["byte_length"] = data.size() * sizeof(float);
    const char* p = reinterpret_cast<const char*>(data.data());
    bytes.insert(bytes.end(), p, p + data.size() * sizeof(float));
    return rec;
  }
  json add_i8(const std::string& name, const std::vector<std::int64_t>& shape,
              const std::vector<std::int8_t>& data) {
    json rec;
    rec["name"] = name;
    rec["shape"] = shape;
    rec["dtype"] = "i8";
    rec["offset"] = bytes.size();
    rec["byte_length"] = data.size();
    const char* p = reinterpret_cast<const char*>(data.data());
    bytes.insert(bytes.end(), p, p + data.size());
    return rec;
  }
};

struct BlobReader {
  std::vector<char> bytes;

  void check(const json& rec, std::size_t elem_size) const {
    const std::int64_t count = numel_of(rec.at("shape").get<std::vector<std::int64_t>>());
    const std::size_t offset = rec.at("offset").get<std::size_t>();
    const std::size_t len = rec.at("byte_length").get<std::size_t>();
    if (len != static_cast<std::size_t>(count) * elem_size)
      throw BlobLengthError("tensor '" + rec.at("name").get<std::string>() + "' declares " +
                            std::to_string(count) + " elements but " + std::to_string(len) +
                            " bytes");
    if (offset + len > bytes.size())
      throw BlobLengthError("tensor '" + rec.at("name").get<std::string>() + "' spans [" +
                            std::to_string(offset) + "," + std::to_string(offset + len) +
                            ") past the blob end " + std::to_string(bytes.size()));
  }
  TensorF read_f32(const json& rec) const {
    check(rec, sizeof(float));
    const auto shape = rec.at("shape").get<std::vector<std::int64_t>>();
    std::vector<float> data(static_cast<std::size_t>(numel_of(shape)));
    std::memcpy(data.data(), bytes.data() + rec.at("offset").get<std::size_t>(),
                data.size() * sizeof(float));
    return TensorF(shape, std::move(data));
  }
  std::vector<std::int8_t> read_i8(const json& rec, std::vector<std::int64_t>* shape_out) const {
    check(rec, 1);
    const auto shape = rec.at("shape").get<std::vector<std::int64_t>>();
    std::vector<std::int8_t> data(static_cast<std::size_t>(numel_of(shape)));
    std::memcpy(data.data(), bytes.data() + rec.at("offset").get<std::size_t>(), data.size());
    if (shape_out) *shape_out = shape;
    return data;
  }
};

const json& require_tensor(const json& layer, const std::string& name) {
  if (layer.contains("tensors"))
    for (const auto& rec : layer.at("tensors"))
      if (rec.at("name").get<std::string>() == name) return rec;
  throw ManifestError("layer '" + layer.at("kind").get<std::string>() + "' is missing tensor '" +
                      name + "'");
}

LayerKind parse_kind(const std::string& kind) {
  static const std::pair<const char*, LayerKind> kinds[] = {
      {"conv", LayerKind::conv},           {"linear", LayerKind::linear},
      {"batchnorm", LayerKind::batchnorm}, {"relu", LayerKind::relu},
      {"maxpool", LayerKind::maxpool},     {"avgpool", LayerKind::avgpool},
      {"flatten", LayerKind::flatten},     {"actquant", LayerKind::actquant}};
  for (const auto& [name, k] : kinds)
    if (kind == name) return k;
  throw UnknownKindError(
      "unknown layer kind '" + kind +
      "'; supported kinds: conv, linear, batchnorm, relu, maxpool, avgpool, flatten, actquant");
}

}  // namespace

void save_model(const ModelGraphF& g, const std::string& manifest_path) {
  json manifest;
  manifest["format_version"] = kFormatVersion;
  manifest["input_shape"] = g.input_shape;
  manifest["class_count"] = g.class_count;
  BlobWriter blob;
  json layers = json::array();
  for (const auto& l : g.layers) {
    json rec;
    rec["kind"] = layer_kind_name(l.kind);
    json tensors = json::array();
    switch (l.kind) {
      case LayerKind::conv:
        rec["stride"] = l.stride;
        rec["pad"] = l.pad;
        rec["kernel"] = l.kernel;
        [[fallthrough]];
      case LayerKind::linear:
        if (l.qbits > 0) {
          rec["bits"] = l.qbits;
          tensors.push_back(blob.add_i8("codes", l.weight.shape, l.qcodes));
          tensors.push_back(blob.add_f32("scales", l.qscales.shape, l.qscales.data));
        } else {
          tensors.push_back(blob.add_f32("weight", l.weight.shape, l.weight.data));
        }
        tensors.push_back(blob.add_f32("bias", l.bias.shape, l.bias.data));
        break;
      case LayerKind::batchnorm:
        rec["eps"] = l.eps;
        tensors.push_back(blob.add_f32("gamma", l.gamma.shape, l.gamma.data));
        tensors.push_back(blob.add_f32("beta", l.beta.shape, l.beta.data));
        tensors.push_back(blob.add_f32("mean", l.running_mean.shape, l.running_mean.data));
        tensors.push_back(blob.add_f32("var", l.running_var.shape, l.running_var.data));
        break;
      case LayerKind::maxpool:
      case LayerKind::avgpool:
        rec["kernel"] = l.kernel;
        rec["stride"] = l.stride;
        break;
      case LayerKind::actquant:
        rec["bits"] = l.act_bits;
        tensors.push_back(blob.add_f32("scale", {1}, {l.act_scale}));
        break;
      case LayerKind::relu:
      case LayerKind::flatten:
        break;
    }
    if (!tensors.empty()) rec["tensors"] = std::move(tensors);
    layers.push_back(std::move(rec));
  }
  manifest["layers"] = std::move(layers);
  const std::string blob_path = blob_path_for(manifest_path);
  manifest["blob"] = fs::path(blob_path).filename().string();

  std::ofstream mf(manifest_path);
  if (!mf) throw DataError("cannot write manifest " + manifest_path);
  mf << manifest.dump(2) << "\n";
  std::ofstream bf(blob_path, std::ios::binary);
  if (!bf) throw DataError("cannot write blob " + blob_path);
  bf.write(blob.bytes.data(), static_cast<std::streamsize>(blob.bytes.size()));
}

ModelGraphF load_model(const std::string& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw DataError("cannot open manifest " + manifest_path);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw ManifestError(std::string("manifest is not valid JSON: ") + e.what());
  }

  ModelGraphF g;
  try {
    if (manifest.at("format_version").get<int>() != kFormatVersion)
      throw ManifestError("unsupported format version " +
                          manifest.at("format_version").dump());
    g.input_shape = manifest.at("input_shape").get<std::vector<std::int64_t>>();
    g.class_count = manifest.at("class_count").get<int>();

    BlobReader blob;
    const fs::path blob_path =
        fs::path(manifest_path).parent_path() / manifest.at("blob").get<std::string>();
    std::ifstream bf(blob_path, std::ios::binary);
    if (!bf) throw DataError("cannot open blob " + blob_path.string());
    blob.bytes.assign(std::istreambuf_iterator<char>(bf), std::istreambuf_iterator<char>());

    for (const auto& rec : manifest.at("layers")) {
      LayerSpec<float> l;
      l.kind = parse_kind(rec.at("kind").get<std::string>());
      switch (l.kind) {
        case LayerKind::conv:
          l.stride = rec.at("stride").get<int>();
          l.pad = rec.at("pad").get<int>();
          l.kernel = rec.at("kernel").get<int>();
          [[fallthrough]];
        case LayerKind::linear: {
          if (rec.contains("bits")) {
            l.qbits = rec.at("bits").get<int>();
            std::vector<std::int64_t> wshape;
            l.qcodes = blob.read_i8(require_tensor(rec, "codes"), &wshape);
            l.qscales = blob.read_f32(require_tensor(rec, "scales"));
            QuantParams params;
            params.bits = l.qbits;
            params.scales = l.qscales.data;
            l.weight = dequantize(l.qcodes, params, wshape);
          } else {
            l.weight = blob.read_f32(require_tensor(rec, "weight"));
          }
          l.bias = blob.read_f32(require_tensor(rec, "bias"));
          if (l.kind == LayerKind::conv && l.weight.ndim() != 4)
            throw ManifestError("conv weight must be 4-d, got " + shape_str(l.weight.shape));
          if (l.kind == LayerKind::linear && l.weight.ndim() != 2)
            throw ManifestError("linear weight must be 2-d, got " + shape_str(l.weight.shape));
          break;
        }
        case LayerKind::batchnorm:
          l.eps = rec.at("eps").get<double>();
          l.gamma = blob.read_f32(require_tensor(rec, "gamma"));
          l.beta = blob.read_f32(require_tensor(rec, "beta"));
          l.running_mean = blob.read_f32(require_tensor(rec, "mean"));
          l.running_var = blob.read_f32(require_tensor(rec, "var"));
          for (float v : l.running_var.data)
            if (!(static_cast<double>(v) + l.eps > 0))
              throw ManifestError("batchnorm variance + eps must be positive");
          break;
        case LayerKind::maxpool:
        case LayerKind::avgpool:
          l.kernel = rec.at("kernel").get<int>();
          l.stride = rec.at("stride").get<int>();
          break;
        case LayerKind::actquant:
          l.act_bits = rec.at("bits").get<int>();
          l.act_scale = blob.read_f32(require_tensor(rec, "scale")).data.at(0);
          break;
        case LayerKind::relu:
        case LayerKind::flatten:
          break;
      }
      g.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw ManifestError(std::string("malformed manifest: ") + e.what());
  }
  return g;
}

}  // namespace uq
