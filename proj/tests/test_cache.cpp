#include <gtest/gtest.h>

#include <cstring>
#include <sstream>

#include "ehrfuse/cache.hpp"
#include "ehrfuse/random.hpp"
#include "support.hpp"

namespace ehrfuse {
namespace {

using testing::TempDir;

CellEmbeddingMatrix random_matrix(Rng& rng, std::uint64_t n, std::uint32_t m, std::uint32_t d) {
  CellEmbeddingMatrix x;
  x.rows = n;
  x.columns = m;
  x.dim = d;
  x.provider_id = 1;
  x.provider_seed = rng.below(1000);
  x.schema_hash = rng.below(1ULL << 62);
  for (std::size_t k = 0; k < n * m * d; ++k) x.values.push_back(static_cast<float>(rng.normal()));
  return x;
}

std::string expect_data_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  ADD_FAILURE() << "no DataError";
  return {};
}

/// Independent little-endian writer, as an external exporter would produce.
struct ByteWriter {
  std::string bytes;
  void u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) bytes.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void f32(float f) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    u32(u);
  }
};

TEST(Cache, RoundTripSmall) {
  TempDir dir;
  Rng rng(1);
  const auto x = random_matrix(rng, 2, 3, 8);
  write_cache(x, dir / "c.cemb");
  const auto y = read_cache(dir / "c.cemb");
  EXPECT_EQ(x, y);
  EXPECT_EQ(std::filesystem::file_size(dir / "c.cemb"), 44u + 2 * 3 * 8 * 4);
}

TEST(Cache, RoundTripProperty) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    const auto x = random_matrix(rng, 1 + rng.below(10), 1 + static_cast<std::uint32_t>(rng.below(6)),
                                 1 + static_cast<std::uint32_t>(rng.below(20)));
    const auto bytes = encode_cache(x);
    ASSERT_EQ(decode_cache(bytes), x);
    ASSERT_EQ(encode_cache(decode_cache(bytes)), bytes);
  }
}

TEST(Cache, HeaderLayout) {
  Rng rng(3);
  auto x = random_matrix(rng, 5, 2, 3);
  x.provider_id = 0x102;
  x.provider_seed = 0x0102030405060708ULL;
  const auto b = encode_cache(x);
  ByteWriter w;
  w.bytes = "CEMB";
  w.u32(1);
  w.u64(5);
  w.u32(2);
  w.u32(3);
  w.u32(0x102);
  w.u64(0x0102030405060708ULL);
  w.u64(x.schema_hash);
  EXPECT_EQ(b.substr(0, 44), w.bytes);
}

TEST(Cache, TruncatedPayload) {
  Rng rng(4);
  auto bytes = encode_cache(random_matrix(rng, 2, 3, 8));
  bytes.resize(bytes.size() - 4);
  EXPECT_NE(expect_data_error([&] { decode_cache(bytes); }).find("corrupt cache"), std::string::npos);
}

TEST(Cache, TruncatedHeader) {
  Rng rng(4);
  auto bytes = encode_cache(random_matrix(rng, 2, 3, 8));
  bytes.resize(20);
  EXPECT_NE(expect_data_error([&] { decode_cache(bytes); }).find("corrupt cache"), std::string::npos);
}

TEST(Cache, BadMagicOrVersion) {
  Rng rng(5);
  auto bytes = encode_cache(random_matrix(rng, 1, 1, 2));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_NE(expect_data_error([&] { decode_cache(bad_magic); }).find("incompatible cache"), std::string::npos);
  auto bad_version = bytes;
  bad_version[4] = 2;
  EXPECT_NE(expect_data_error([&] { decode_cache(bad_version); }).find("incompatible cache"), std::string::npos);
}

TEST(Cache, NonFinitePayloadRejected) {
  Rng rng(6);
  auto x = random_matrix(rng, 1, 1, 4);
  auto bytes = encode_cache(x);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 44 + 4, &nan, 4);
  EXPECT_NE(expect_data_error([&] { decode_cache(bytes); }).find("corrupt cache"), std::string::npos);
}

TEST(Cache, SchemaMismatch) {
  Rng rng(7);
  const auto x = random_matrix(rng, 2, 2, 4);
  CacheExpectation want;
  want.schema_hash = x.schema_hash + 1;
  EXPECT_EQ(expect_data_error([&] { check_cache(x, want); }), "cache built for different schema");
}

TEST(Cache, DimensionMismatch) {
  TempDir dir;
  Rng rng(8);
  write_cache(random_matrix(rng, 1, 2, 768), dir / "big.cemb");
  CacheExpectation want;
  want.dim = 32;
  EXPECT_NE(expect_data_error([&] { read_cache(dir / "big.cemb", want); }).find("dimension mismatch"), std::string::npos);
}

TEST(Cache, RenderModeChecked) {
  Rng rng(9);
  auto x = random_matrix(rng, 1, 1, 2);
  x.provider_id = provider_field(ProviderId::hashing, RenderMode::raw);
  CacheExpectation want;
  want.render_mode = RenderMode::prompts;
  EXPECT_THROW(check_cache(x, want), DataError);
  want.render_mode = RenderMode::raw;
  EXPECT_NO_THROW(check_cache(x, want));
}

TEST(Cache, AcceptsExternallyWrittenFile) {
  // 2 x 3 cells at d=768 from an outside encoder, identical text in cells (0,0) and (1,2).
  TempDir dir;
  ByteWriter w;
  w.bytes = "CEMB";
  w.u32(1);
  w.u64(2);
  w.u32(3);
  w.u32(768);
  w.u32(3);
  w.u64(0);
  w.u64(0xfeedfacecafebeefULL);
  Rng rng(10);
  std::vector<float> shared(768);
  for (auto& v : shared) v = static_cast<float>(rng.normal());
  for (int cell = 0; cell < 6; ++cell) {
    for (int k = 0; k < 768; ++k) w.f32(cell == 0 || cell == 5 ? shared[k] : static_cast<float>(rng.normal()));
  }
  testing::write_text(dir / "ext.cemb", w.bytes);
  CacheExpectation want;
  want.rows = 2;
  want.columns = 3;
  want.dim = 768;
  want.schema_hash = 0xfeedfacecafebeefULL;
  const auto m = read_cache(dir / "ext.cemb", want);
  EXPECT_EQ(provider_of(m.provider_id), ProviderId::external);
  const auto a = m.cell(0, 0);
  const auto b = m.cell(1, 2);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  EXPECT_TRUE(std::equal(a.begin(), a.end(), shared.begin()));
  EXPECT_EQ(encode_cache(m), w.bytes);
}

Dataset two_by_three() {
  using testing::feature;
  const auto s = testing::make_schema({feature("age", FeatureKind::numerical), feature("smoker", FeatureKind::binary),
                                       feature("note", FeatureKind::freetext)});
  return testing::make_dataset(s,
                               {{34.0, true, std::string("Caf\xc3\xa9 \"quoted\"\nline")},
                                {61.5, false, std::string(kMissingTextSentinel)}},
                               {0, 1});
}

TEST(DumpPrompts, HeaderThenOneRecordPerCell) {
  const auto ds = two_by_three();
  std::stringstream out;
  EXPECT_EQ(dump_prompts(ds, RenderMode::prompts, out), 6u);
  std::string line;
  std::getline(out, line);
  const auto header = nlohmann::json::parse(line);
  EXPECT_EQ(header["format"], "ehrfuse-prompts");
  EXPECT_EQ(header["N"], 2);
  EXPECT_EQ(header["m"], 3);
  EXPECT_EQ(header["render"], "prompts");
  EXPECT_EQ(header["schema_hash"], hex64(schema_hash(ds.schema)));
  std::size_t count = 0;
  while (std::getline(out, line)) {
    const auto rec = nlohmann::json::parse(line);
    const std::size_t i = rec["i"], j = rec["j"];
    EXPECT_EQ(i, count / 3);
    EXPECT_EQ(j, count % 3);
    EXPECT_EQ(rec["text"].get<std::string>(), render_prompt(ds.schema.features[j], ds.rows[i][j]).text);
    ++count;
  }
  EXPECT_EQ(count, 6u);
}

TEST(DumpPrompts, RawMode) {
  std::stringstream out;
  dump_prompts(two_by_three(), RenderMode::raw, out);
  std::string line;
  std::getline(out, line);
  EXPECT_EQ(nlohmann::json::parse(line)["render"], "raw");
  std::getline(out, line);
  EXPECT_EQ(nlohmann::json::parse(line)["text"], "34");
}

}  // namespace
}  // namespace ehrfuse
