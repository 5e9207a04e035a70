#pragma once

#include <cstdint>
#include <filesystem>
#include <random>

#include "brainfusion/box.hpp"
#include "brainfusion/image.hpp"
#include "brainfusion/labels.hpp"

namespace brainfusion::synthetic {

/// Procedural axial-slice phantom: skull ring, brain parenchyma with noise,
/// and a class-specific lesion (ring-enhancing mass for glioma, bright
/// peripheral dural mass for meningioma, small sellar mass for pituitary,
/// none for no_tumor). Values in [0,1].
struct Phantom {
  ImageTensor image;
  /// Lesion box; for no_tumor it encloses the brain.
  Box box;
};

Phantom make_phantom(ClassLabel label, int size, std::mt19937_64& rng);

/// Writes `per_class` PNGs per class as <root>/<class_name>/<class>_<k>.png.
void write_classification_corpus(const std::filesystem::path& root, int per_class, int size,
                                 std::uint64_t seed);

/// Writes <root>/images/*.png with YOLO labels in <root>/labels/*.txt,
/// cycling classes over `count` images.
void write_detection_corpus(const std::filesystem::path& root, int count, int size,
                            std::uint64_t seed);

}  // namespace brainfusion::synthetic
