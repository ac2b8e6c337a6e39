#pragma once

#include <string>

#include "unitquant/model.hpp"

namespace uq {

// Model container: a JSON manifest plus one little-endian binary blob.
// save_model("m.json") writes m.json and m.bin; load(save(g)) reproduces g
// bit-exactly, including quantization codes and scales.

void save_model(const ModelGraphF& g, const std::string& manifest_path);
ModelGraphF load_model(const std::string& manifest_path);

}  // namespace uq
