#include "unitquant/idx.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace uq {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open dataset file " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>());
}

std::uint32_t read_u32be(const std::vector<std::uint8_t>& bytes, std::size_t off) {
  return (std::uint32_t(bytes[off]) << 24) | (std::uint32_t(bytes[off + 1]) << 16) |
         (std::uint32_t(bytes[off + 2]) << 8) | std::uint32_t(bytes[off + 3]);
}

void write_u32be(std::ofstream& f, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  f.write(b, 4);
}

std::string hex_magic(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "0x%08x", v);
  return buf;
}

}  // namespace

RawImages load_idx_images(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() < 16)
    throw TruncationError("image file " + path + " has only " + std::to_string(bytes.size()) +
                          " bytes, need at least 16 for the header");
  const std::uint32_t magic = read_u32be(bytes, 0);
  if (magic != kImageMagic)
    throw BadMagicError("image file " + path + " has magic " + hex_magic(magic) + ", expected " +
                        hex_magic(kImageMagic));
  RawImages out;
  out.count = read_u32be(bytes, 4);
  out.rows = read_u32be(bytes, 8);
  out.cols = read_u32be(bytes, 12);
  const std::size_t expected = 16 + static_cast<std::size_t>(out.count * out.rows * out.cols);
  if (bytes.size() < expected)
    throw TruncationError("image file " + path + ": expected " + std::to_string(expected) +
                          " bytes for " + std::to_string(out.count) + " images, got " +
                          std::to_string(bytes.size()));
  out.pixels.assign(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(expected));
  return out;
}

std::vector<std::uint8_t> load_idx_labels(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  if (bytes.size() < 8)
    throw TruncationError("label file " + path + " has only " + std::to_string(bytes.size()) +
                          " bytes, need at least 8 for the header");
  const std::uint32_t magic = read_u32be(bytes, 0);
  if (magic != kLabelMagic)
    throw BadMagicError("label file " + path + " has magic " + hex_magic(magic) + ", expected " +
                        hex_magic(kLabelMagic));
  const std::uint32_t count = read_u32be(bytes, 4);
  const std::size_t expected = 8 + count;
  if (bytes.size() < expected)
    throw TruncationError("label file " + path + ": expected " + std::to_string(expected) +
                          " bytes for " + std::to_string(count) + " labels, got " +
                          std::to_string(bytes.size()));
  return std::vector<std::uint8_t>(bytes.begin() + 8,
                                   bytes.begin() + static_cast<std::ptrdiff_t>(expected));
}

void save_idx_images(const std::string& path, const RawImages& images) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  write_u32be(f, kImageMagic);
  write_u32be(f, static_cast<std::uint32_t>(images.count));
  write_u32be(f, static_cast<std::uint32_t>(images.rows));
  write_u32be(f, static_cast<std::uint32_t>(images.cols));
  f.write(reinterpret_cast<const char*>(images.pixels.data()),
          static_cast<std::streamsize>(images.pixels.size()));
}

void save_idx_labels(const std::string& path, const std::vector<std::uint8_t>& labels) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  write_u32be(f, kLabelMagic);
  write_u32be(f, static_cast<std::uint32_t>(labels.size()));
  f.write(reinterpret_cast<const char*>(labels.data()),
          static_cast<std::streamsize>(labels.size()));
}

Dataset load_dataset(const std::string& images_path, const std::string& labels_path,
                     float norm_mean, float norm_std) {
  const RawImages raw = load_idx_images(images_path);
  const std::vector<std::uint8_t> labels = load_idx_labels(labels_path);
  if (static_cast<std::int64_t>(labels.size()) != raw.count)
    throw DataError("dataset mismatch: " + std::to_string(raw.count) + " images vs " +
                    std::to_string(labels.size()) + " labels");
  Dataset d;
  d.images = TensorF({raw.count, 1, raw.rows, raw.cols});
  const float inv = 1.0f / (255.0f * norm_std);
  const float shift = norm_mean / norm_std;
  for (std::size_t i = 0; i < raw.pixels.size(); ++i)
    d.images.data[i] = static_cast<float>(raw.pixels[i]) * inv - shift;
  d.labels.assign(labels.begin(), labels.end());
  d.classes = d.labels.empty() ? 0 : *std::max_element(d.labels.begin(), d.labels.end()) + 1;
  return d;
}

Dataset load_split(const std::string& root, const std::string& split, float norm_mean,
                   float norm_std) {
  namespace fs = std::filesystem;
  const std::string prefix = split == "train" ? "train" : "t10k";
  const fs::path images = fs::path(root) / (prefix + "-images-idx3-ubyte");
  const fs::path labels = fs::path(root) / (prefix + "-labels-idx1-ubyte");
  if (!fs::exists(images) || !fs::exists(labels))
    throw DataError("dataset split '" + split + "' not found under " + root + " (looked for " +
                    images.string() + ")");
  return load_dataset(images.string(), labels.string(), norm_mean, norm_std);
}

Dataset take(const Dataset& d, std::int64_t count) {
  count = std::min<std::int64_t>(count, d.images.dim(0));
  Dataset out;
  std::vector<std::int64_t> shape = d.images.shape;
  shape[0] = count;
  const std::int64_t row = d.images.numel() / d.images.dim(0);
  out.images = TensorF(shape);
  std::copy_n(d.images.data.begin(), static_cast<std::size_t>(count * row),
              out.images.data.begin());
  out.labels.assign(d.labels.begin(), d.labels.begin() + count);
  out.classes = d.classes;
  return out;
}

}  // namespace uq
