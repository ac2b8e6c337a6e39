// Writes a deterministic synthetic digit dataset in IDX format.

#include <CLI11.hpp>
#include <cstdio>

#include "unitquant/digits.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic handwritten-style digit dataset generator (IDX output)"};
  std::string out = "data";
  std::int64_t train = 12000, test = 2000;
  std::uint64_t seed = 7;
  app.add_option("--out", out, "output directory")->capture_default_str();
  app.add_option("--train", train, "training sample count")->capture_default_str();
  app.add_option("--test", test, "test sample count")->capture_default_str();
  app.add_option("--seed", seed, "generator seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  try {
    uq::write_digit_dataset(out, train, test, seed);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  std::printf("wrote %lld train / %lld test images to %s\n", static_cast<long long>(train),
              static_cast<long long>(test), out.c_str());
  return 0;
}
