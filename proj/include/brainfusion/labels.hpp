#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

namespace brainfusion {

/// Tumor class. Integer ids are stable: they appear in YOLO label files,
/// confusion matrices and serialized manifests.
enum class ClassLabel : int { glioma = 0, meningioma = 1, no_tumor = 2, pituitary = 3 };

inline constexpr std::size_t kNumClasses = 4;

inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::glioma, ClassLabel::meningioma, ClassLabel::no_tumor, ClassLabel::pituitary};

constexpr int to_index(ClassLabel c) noexcept { return static_cast<int>(c); }

/// Machine name: "glioma", "meningioma", "no_tumor", "pituitary".
std::string_view class_name(ClassLabel c) noexcept;

/// Report name: "Glioma", "Meningioma", "No Tumor", "Pituitary".
std::string_view display_name(ClassLabel c) noexcept;

std::optional<ClassLabel> label_from_index(long id) noexcept;

/// Accepts machine names plus the directory spellings used by the public
/// datasets ("notumor", "No Tumor", case-insensitive).
std::optional<ClassLabel> label_from_string(std::string_view name) noexcept;

}  // namespace brainfusion
