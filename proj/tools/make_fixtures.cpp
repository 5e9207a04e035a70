// Writes synthetic phantom corpora for smoke runs and tests.

#include <iostream>

#include "CLI11.hpp"
#include "brainfusion/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic MRI phantom corpus generator"};
  std::string kind = "classification";
  std::string out;
  int count = 8;
  int size = 256;
  std::uint64_t seed = 42;
  app.add_option("kind", kind, "classification or detection")->check(CLI::IsMember({"classification", "detection"}));
  app.add_option("--out", out, "Output root")->required();
  app.add_option("--count", count, "Images per class (classification) or in total (detection)")
      ->check(CLI::PositiveNumber);
  app.add_option("--size", size, "Square image side in pixels")->check(CLI::Range(16, 4096));
  app.add_option("--seed", seed, "Generator seed");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (kind == "classification") {
      brainfusion::synthetic::write_classification_corpus(out, count, size, seed);
    } else {
      brainfusion::synthetic::write_detection_corpus(out, count, size, seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
