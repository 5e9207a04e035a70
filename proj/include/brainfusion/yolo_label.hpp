#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "brainfusion/box.hpp"

namespace brainfusion {

/// Extent overflow beyond [0,1] that is clipped instead of rejected.
inline constexpr double kBoxOverflowTolerance = 1e-3;

/// Parses "<class> <cx> <cy> <w> <h>". Throws ParseError naming `line_number`
/// on a wrong token count, a non-numeric token, an unknown class id or an
/// out-of-range coordinate.
Box parse_yolo_label_line(std::string_view line, int line_number = 0);

/// One line, six-decimal fixed precision, newline-terminated.
std::string serialize_yolo_label(const Box& box);

/// Parses a whole label file. Blank lines and '#' comments are skipped.
std::vector<Box> parse_yolo_label_text(std::string_view text);
std::vector<Box> read_yolo_label_file(const std::filesystem::path& path);
void write_yolo_label_file(const std::filesystem::path& path, const std::vector<Box>& boxes);

}  // namespace brainfusion
