#include "brainfusion/labels.hpp"

#include <algorithm>
#include <cctype>

namespace brainfusion {

std::string_view class_name(ClassLabel c) noexcept {
  switch (c) {
    case ClassLabel::glioma: return "glioma";
    case ClassLabel::meningioma: return "meningioma";
    case ClassLabel::no_tumor: return "no_tumor";
    case ClassLabel::pituitary: return "pituitary";
  }
  return "unknown";
}

std::string_view display_name(ClassLabel c) noexcept {
  switch (c) {
    case ClassLabel::glioma: return "Glioma";
    case ClassLabel::meningioma: return "Meningioma";
    case ClassLabel::no_tumor: return "No Tumor";
    case ClassLabel::pituitary: return "Pituitary";
  }
  return "Unknown";
}

std::optional<ClassLabel> label_from_index(long id) noexcept {
  if (id < 0 || id >= static_cast<long>(kNumClasses)) return std::nullopt;
  return static_cast<ClassLabel>(id);
}

std::optional<ClassLabel> label_from_string(std::string_view name) noexcept {
  std::string key;
  for (char ch : name) {
    if (ch == ' ' || ch == '_' || ch == '-') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  if (key == "glioma" || key == "gliomatumor") return ClassLabel::glioma;
  if (key == "meningioma" || key == "meningiomatumor") return ClassLabel::meningioma;
  if (key == "notumor" || key == "notumour" || key == "none") return ClassLabel::no_tumor;
  if (key == "pituitary" || key == "pituitarytumor") return ClassLabel::pituitary;
  return std::nullopt;
}

}  // namespace brainfusion
