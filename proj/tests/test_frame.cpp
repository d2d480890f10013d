#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "bware/cframe.hpp"
#include "bware/frame.hpp"

using namespace bware;

namespace {

TypedColumn strs(std::vector<std::string> v) { return TypedColumn::strings(std::move(v)); }

ValueType detect(std::vector<std::string> cells) {
  Frame f({"a"}, {strs(std::move(cells))});
  return detect_schema(f, 1.0)[0].type;
}

}  // namespace

TEST(Frame, DetectsNarrowestType) {
  EXPECT_EQ(detect({"1", "0", "7"}), ValueType::INT32);
  EXPECT_EQ(detect({"1.5", "x", "2"}), ValueType::STRING);
  EXPECT_EQ(detect({"bcdef123", "00ff00aa"}), ValueType::HEX);
  EXPECT_EQ(detect({"true", "false"}), ValueType::BOOLEAN);
  EXPECT_EQ(detect({"1", "5000000000"}), ValueType::INT64);
  EXPECT_EQ(detect({"1.5", "2.25"}), ValueType::FP32);
  EXPECT_EQ(detect({"0.1", "2"}), ValueType::FP64);
  EXPECT_EQ(detect({"a", "b"}), ValueType::CHAR);
  EXPECT_EQ(detect({"", ""}), ValueType::STRING);
}

TEST(Frame, ApplySchemaFallsBackOnCastError) {
  Frame f({"a", "b"}, {strs({"1", "0"}), strs({"1", "oops"})});
  Schema s{{ValueType::INT32}, {ValueType::INT32}};
  Frame g = apply_schema(f, s);
  EXPECT_EQ(g.column(0).type(), ValueType::INT32);
  EXPECT_EQ(g.column(0).values<std::int32_t>(), (std::vector<std::int32_t>{1, 0}));
  EXPECT_EQ(g.column(1).type(), ValueType::STRING);
  EXPECT_EQ(apply_schema(g, s), g);
}

TEST(Frame, EmptyCellsBecomeZeroAndNullable) {
  Frame f({"a"}, {strs({"3", "", "4"})});
  auto s = detect_schema(f, 1.0);
  EXPECT_EQ(s[0].type, ValueType::INT32);
  EXPECT_TRUE(s[0].nullable);
  Frame g = apply_schema(f, s);
  EXPECT_EQ(g.column(0).values<std::int32_t>()[1], 0);
}

TEST(Frame, CsvParsing) {
  Frame f = parse_csv("a,b\n1,2\n");
  EXPECT_EQ(f.nrows(), 1u);
  EXPECT_EQ(f.names(), (std::vector<std::string>{"a", "b"}));
  Frame g = parse_csv("x;y\n1;\"q;r\"\n", CsvOptions{.header = true, .delimiter = ';', .schema = std::nullopt});
  EXPECT_EQ(g.column(1).to_string(0), "q;r");
  EXPECT_EQ(parse_csv("").ncols(), 0u);
  try {
    parse_csv("a,b\n1,2\n3\n");
    FAIL() << "ragged row accepted";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row"), std::string::npos);
  }
  EXPECT_THROW(read_csv("/nonexistent/file.csv"), IoError);
}

TEST(Frame, CsvRoundTrip) {
  auto path = std::filesystem::temp_directory_path() / "bware_frame_rt.csv";
  Frame f({"s", "n"}, {strs({"a,b", "", "say \"hi\""}), strs({"1", "2", "3"})});
  write_csv(f, path.string());
  EXPECT_EQ(read_csv(path.string()), f);
  std::filesystem::remove(path);
}

TEST(Frame, DuplicateLabelsRejected) {
  EXPECT_THROW(Frame({"a", "a"}, {strs({"1"}), strs({"2"})}), Error);
  EXPECT_THROW(Frame({"a", "b"}, {strs({"1"}), strs({"2", "3"})}), ShapeError);
}

TEST(Frame, SampleIsDeterministicAndSorted) {
  auto a = sample_rows(10000, 0.05, 3);
  auto b = sample_rows(10000, 0.05, 3);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.size(), 500u);
  EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
  EXPECT_DOUBLE_EQ(default_sample_fraction(100), 1.0);
  EXPECT_DOUBLE_EQ(default_sample_fraction(1000000), 0.01);
}

TEST(MapWidth, Thresholds) {
  EXPECT_EQ(map_width_for(1), MapWidth::W0);
  EXPECT_EQ(map_width_for(2), MapWidth::W1bit);
  EXPECT_EQ(map_width_for(3), MapWidth::W1B);
  EXPECT_EQ(map_width_for(200), MapWidth::W1B);
  EXPECT_EQ(map_width_for(256), MapWidth::W1B);
  EXPECT_EQ(map_width_for(257), MapWidth::W2B);
  EXPECT_EQ(map_width_for(1u << 16), MapWidth::W2B);
  EXPECT_EQ(map_width_for((1u << 16) + 1), MapWidth::W3B);
  EXPECT_EQ(map_width_for(1u << 24), MapWidth::W3B);
  EXPECT_EQ(map_width_for((1u << 24) + 1), MapWidth::W4B);
  EXPECT_EQ(map_width_for(1ull << 31), MapWidth::W4B);
  EXPECT_THROW(map_width_for((1ull << 31) + 1), UnsupportedError);
  EXPECT_THROW(map_width_for(0), BoundsError);
}

TEST(MapVector, SetGetRoundTrip) {
  for (MapWidth w : {MapWidth::W1bit, MapWidth::W1B, MapWidth::W2B, MapWidth::W3B, MapWidth::W4B}) {
    std::uint64_t cap = capacity(w);
    MapVector m(w, 37);
    std::vector<std::uint32_t> expect(37);
    for (std::size_t r = 0; r < 37; ++r) {
      expect[r] = static_cast<std::uint32_t>((r * 2654435761u) % cap);
      m.set(r, expect[r]);
    }
    EXPECT_EQ(m.decode(), expect) << to_string(w);
    EXPECT_EQ(MapVector::pack(expect, w), m);
    EXPECT_THROW(m.set(0, static_cast<std::uint32_t>(std::min<std::uint64_t>(cap, 0xffffffffu))), BoundsError);
    std::vector<std::uint32_t> sl(expect.begin() + 3, expect.begin() + 20);
    EXPECT_EQ(m.slice(3, 20).decode(), sl);
  }
  EXPECT_EQ(MapVector::payload_bytes(MapWidth::W1bit, 1000), 125u);
  EXPECT_EQ(MapVector(MapWidth::W0, 10).get(9), 0u);
}

TEST(CFrame, FirstOccurrenceDictionary) {
  Frame f({"c"}, {strs({"Hi", "Lo", "Lo", "Hi"})});
  CompressedFrame cf = compress_frame(f, CompressOptions{.sample_fraction = 1.0, .max_dict_ratio = 1.0, .seed = 7});
  const auto& c = cf.column(0);
  ASSERT_TRUE(c.is_compressed());
  EXPECT_EQ(c.dict()->values<std::string>(), (std::vector<std::string>{"Hi", "Lo"}));
  EXPECT_EQ(c.map()->decode(), (std::vector<std::uint32_t>{0, 1, 1, 0}));
  EXPECT_EQ(c.map()->width(), MapWidth::W1bit);
}

TEST(CFrame, BooleanAlwaysCompressedAndDistinctFallsBack) {
  std::vector<std::string> b(10, "true");
  b[3] = "false";
  std::vector<std::string> u(1000);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = std::to_string(i) + ".5";
  CompressedFrame cf = compress_frame(Frame({"b"}, {strs(b)}));
  EXPECT_TRUE(cf.column(0).is_compressed());
  EXPECT_EQ(cf.column(0).type(), ValueType::BOOLEAN);
  CompressedFrame cu = compress_frame(Frame({"u"}, {strs(u)}));
  EXPECT_FALSE(cu.column(0).is_compressed());
  EXPECT_EQ(cu.column(0).type(), ValueType::FP32);
}

TEST(CFrame, RoundTripMatchesFullDetection) {
  Frame f({"a", "b", "c", "d"},
          {strs({"1", "2", "1", "2", "1", "1"}), strs({"x", "y", "x", "x", "x", "x"}),
           strs({"0.1", "0.1", "0.2", "0.1", "0.1", "0.1"}), strs({"7", "7", "7", "7", "7", "7"})});
  CompressedFrame cf = compress_frame(f);
  Frame expect = apply_schema(f, detect_schema(f, 1.0));
  EXPECT_EQ(decompress_frame(cf), expect);
  EXPECT_EQ(cf.column(3).map()->width(), MapWidth::W0);
}

TEST(CFrame, LateCastFailureRedetects) {
  // 20k rows: the default sample misses the single non-numeric row.
  std::vector<std::string> v(20000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::to_string(i % 7);
  v[13579] = "oops";
  Frame f({"a"}, {strs(v)});
  CompressedFrame cf = compress_frame(f);
  EXPECT_EQ(cf.column(0).type(), ValueType::STRING);
  EXPECT_EQ(decompress_frame(cf), f);
}

TEST(CFrame, MemoryEstimate) {
  std::vector<std::int32_t> v(1000);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::int32_t>(i % 200);
  CompressedFrame cf = compress_frame(Frame({"a"}, {TypedColumn::int32(v)}));
  ASSERT_TRUE(cf.column(0).is_compressed());
  EXPECT_EQ(frame_memory_estimate(cf), 1000u + 800u + kColumnOverhead);
}
