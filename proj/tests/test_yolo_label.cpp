#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "brainfusion/error.hpp"
#include "brainfusion/yolo_label.hpp"
#include "test_util.hpp"

using namespace brainfusion;

TEST(YoloLabel, ParsesFieldsInOrder) {
  const Box b = parse_yolo_label_line("1 0.5 0.5 0.2 0.3");
  EXPECT_EQ(b.class_id, ClassLabel::meningioma);
  EXPECT_DOUBLE_EQ(b.cx, 0.5);
  EXPECT_DOUBLE_EQ(b.cy, 0.5);
  EXPECT_DOUBLE_EQ(b.w, 0.2);
  EXPECT_DOUBLE_EQ(b.h, 0.3);
  EXPECT_FALSE(b.confidence.has_value());
}

TEST(YoloLabel, FullImageBox) {
  const Box b = parse_yolo_label_line("0 0.5 0.5 1.0 1.0");
  EXPECT_EQ(b.class_id, ClassLabel::glioma);
  EXPECT_DOUBLE_EQ(b.x1(), 0.0);
  EXPECT_DOUBLE_EQ(b.x2(), 1.0);
}

TEST(YoloLabel, RejectsOutOfRangeCenter) {
  EXPECT_THROW(parse_yolo_label_line("2 1.5 0.5 0.2 0.2"), ParseError);
}

TEST(YoloLabel, ErrorsNameTheLine) {
  try {
    parse_yolo_label_text("0 0.5 0.5 0.1 0.1\n# comment\n\n1 0.5 0.5 0.1\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
  }
}

TEST(YoloLabel, RejectsMalformedTokens) {
  EXPECT_THROW(parse_yolo_label_line("x 0.5 0.5 0.2 0.2"), ParseError);
  EXPECT_THROW(parse_yolo_label_line("1.0 0.5 0.5 0.2 0.2"), ParseError);
  EXPECT_THROW(parse_yolo_label_line("4 0.5 0.5 0.2 0.2"), ParseError);
  EXPECT_THROW(parse_yolo_label_line("-1 0.5 0.5 0.2 0.2"), ParseError);
  EXPECT_THROW(parse_yolo_label_line("1 0.5 abc 0.2 0.2"), ParseError);
  EXPECT_THROW(parse_yolo_label_line("1 0.5 0.5 0 0.2"), ParseError);
  EXPECT_THROW(parse_yolo_label_line("1 0.5 0.5 0.2 0.2 0.9"), ParseError);
  EXPECT_THROW(parse_yolo_label_line(""), ParseError);
}

TEST(YoloLabel, ClipsSmallOverflowRejectsLarge) {
  const Box b = parse_yolo_label_line("3 0.9 0.5 0.2005 0.2");
  EXPECT_NEAR(b.x2(), 1.0, 1e-12);
  EXPECT_TRUE(is_valid(b));
  EXPECT_THROW(parse_yolo_label_line("3 0.95 0.5 0.2 0.2"), ParseError);
}

TEST(YoloLabel, ToleratesTrailingWhitespaceAndComments) {
  const auto boxes = parse_yolo_label_text("# header\r\n1 0.5 0.5 0.2 0.3   \r\n\n  # x\n");
  ASSERT_EQ(boxes.size(), 1u);
  EXPECT_EQ(boxes[0].class_id, ClassLabel::meningioma);
}

TEST(YoloLabel, SerializerIsBitExact) {
  Box b{ClassLabel::meningioma, 0.5, 0.5, 0.2, 0.3, std::nullopt};
  EXPECT_EQ(serialize_yolo_label(b), "1 0.500000 0.500000 0.200000 0.300000\n");
}

namespace {

Box random_quantized_box(std::mt19937_64& rng) {
  std::uniform_int_distribution<long> cls(0, 3);
  std::uniform_int_distribution<long> size(1, 1000000);
  const auto q = [](long k) { return static_cast<double>(k) / 1e6; };
  Box b;
  b.class_id = static_cast<ClassLabel>(cls(rng));
  const long w = size(rng);
  const long h = size(rng);
  std::uniform_int_distribution<long> cx(w / 2 + 1, 1000000 - w / 2 - 1);
  std::uniform_int_distribution<long> cy(h / 2 + 1, 1000000 - h / 2 - 1);
  b.w = q(w);
  b.h = q(h);
  b.cx = q(cx(rng));
  b.cy = q(cy(rng));
  return b;
}

}  // namespace

TEST(YoloLabelProperty, ParseOfSerializeIsIdentity) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 5000; ++i) {
    const Box b = random_quantized_box(rng);
    ASSERT_EQ(parse_yolo_label_line(serialize_yolo_label(b)), b) << serialize_yolo_label(b);
  }
}

TEST(YoloLabelProperty, SerializeOfParseIsIdentityOnCanonicalLines) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 5000; ++i) {
    const std::string line = serialize_yolo_label(random_quantized_box(rng));
    ASSERT_EQ(serialize_yolo_label(parse_yolo_label_line(line)), line);
  }
}

TEST(YoloLabel, FileRoundTrip) {
  bf_test::TempDir dir;
  const std::vector<Box> boxes = {{ClassLabel::glioma, 0.25, 0.25, 0.1, 0.1, std::nullopt},
                                  {ClassLabel::pituitary, 0.75, 0.6, 0.2, 0.1, std::nullopt}};
  write_yolo_label_file(dir / "a.txt", boxes);
  EXPECT_EQ(read_yolo_label_file(dir / "a.txt"), boxes);
}
