#include "brainfusion/yolo_label.hpp"

#include <fmt/format.h>

#include <charconv>
#include <fstream>
#include <sstream>

#include "brainfusion/error.hpp"

namespace brainfusion {
namespace {

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) tokens.push_back(line.substr(i, j - i));
    i = j;
  }
  return tokens;
}

double parse_fraction(std::string_view token, const char* field, int line_number) {
  double value = 0.0;
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ParseError(fmt::format("non-numeric {} '{}'", field, token), line_number);
  }
  return value;
}

}  // namespace

Box parse_yolo_label_line(std::string_view line, int line_number) {
  const auto tokens = split_whitespace(line);
  if (tokens.size() != 5) {
    throw ParseError(fmt::format("expected 5 tokens, found {}", tokens.size()), line_number);
  }
  long id = 0;
  {
    const auto& t = tokens[0];
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), id);
    if (ec != std::errc() || ptr != t.data() + t.size()) {
      throw ParseError(fmt::format("non-integer class id '{}'", t), line_number);
    }
  }
  const auto label = label_from_index(id);
  if (!label) throw ParseError(fmt::format("class id {} not in 0..3", id), line_number);

  Box b;
  b.class_id = *label;
  b.cx = parse_fraction(tokens[1], "x_center", line_number);
  b.cy = parse_fraction(tokens[2], "y_center", line_number);
  b.w = parse_fraction(tokens[3], "width", line_number);
  b.h = parse_fraction(tokens[4], "height", line_number);
  if (!is_valid(b)) {
    throw ParseError(fmt::format("coordinates out of range ({} {} {} {})", b.cx, b.cy, b.w, b.h),
                     line_number);
  }
  const double tol = kBoxOverflowTolerance;
  if (b.x1() < -tol || b.y1() < -tol || b.x2() > 1.0 + tol || b.y2() > 1.0 + tol) {
    throw ParseError("box extent exceeds the image", line_number);
  }
  return clip(b);
}

std::string serialize_yolo_label(const Box& box) {
  return fmt::format("{} {:.6f} {:.6f} {:.6f} {:.6f}\n", to_index(box.class_id), box.cx, box.cy,
                     box.w, box.h);
}

std::vector<Box> parse_yolo_label_text(std::string_view text) {
  std::vector<Box> boxes;
  int line_number = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_number;
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto first = line.find_first_not_of(" \t");
    if (first != std::string_view::npos && line[first] != '#') {
      boxes.push_back(parse_yolo_label_line(line, line_number));
    }
    start = end + 1;
  }
  return boxes;
}

std::vector<Box> read_yolo_label_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open label file " + path.string(), 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_yolo_label_text(ss.str());
  } catch (const ParseError& e) {
    throw e.with_context(path.string());
  }
}

void write_yolo_label_file(const std::filesystem::path& path, const std::vector<Box>& boxes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write label file " + path.string());
  for (const auto& b : boxes) out << serialize_yolo_label(b);
}

}  // namespace brainfusion
