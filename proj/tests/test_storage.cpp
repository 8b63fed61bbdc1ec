#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "support.hpp"
#include "unem/storage.hpp"

using namespace unem;
using namespace unem::testing;

namespace {

StorageErrc code_of(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_bundle(bytes);
  } catch (const StorageError& e) {
    return e.code();
  }
  FAIL("bundle was accepted");
  return StorageErrc::io;
}

// Rewrites the JSON header inside an encoded bundle.
std::vector<std::uint8_t> with_header(const std::vector<std::uint8_t>& bytes, const std::string& from,
                                      const std::string& to) {
  const std::uint32_t len = bytes[8] | bytes[9] << 8 | bytes[10] << 16 | static_cast<std::uint32_t>(bytes[11]) << 24;
  std::string header(bytes.begin() + 12, bytes.begin() + 12 + len);
  const auto pos = header.find(from);
  REQUIRE(pos != std::string::npos);
  header.replace(pos, from.size(), to);
  std::vector<std::uint8_t> out(bytes.begin(), bytes.begin() + 8);
  const auto n = static_cast<std::uint32_t>(header.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), bytes.begin() + 12 + len, bytes.end());
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("unem_test_" + name)).string();
}

}  // namespace

TEST_CASE("bundle round trip") {
  for (WorldKind k : {WorldKind::gmm, WorldKind::dirichlet_mixture}) {
    const FeatureBundle b = small_bundle(k, 3);
    const std::string path = temp_path("bundle.bin");
    write_bundle(b, path);
    CHECK(read_bundle(path) == b);
    std::filesystem::remove(path);
  }
}

TEST_CASE("bundle layout is little-endian") {
  FeatureBundle b;
  b.n_samples = 1;
  b.dim = 1;
  b.n_classes = 2;
  b.features = {1.0f};
  b.labels = {1};
  const auto bytes = encode_bundle(b);
  CHECK(std::string(bytes.begin(), bytes.begin() + 8) == "UNEMFB01");
  const std::size_t payload = bytes.size() - 8;
  // 1.0f = 0x3f800000, label 1
  CHECK(bytes[payload + 0] == 0x00);
  CHECK(bytes[payload + 3] == 0x3f);
  CHECK(bytes[payload + 2] == 0x80);
  CHECK(bytes[payload + 4] == 0x01);
  CHECK(bytes[payload + 7] == 0x00);
}

TEST_CASE("bundle error codes") {
  const FeatureBundle good = small_bundle(WorldKind::dirichlet_mixture, 4);
  const auto bytes = encode_bundle(good);

  auto bad_magic = bytes;
  bad_magic[7] = '2';
  CHECK(code_of(bad_magic) == StorageErrc::magic_mismatch);
  CHECK(code_of({}) == StorageErrc::magic_mismatch);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 4);
  CHECK(code_of(truncated) == StorageErrc::truncated_payload);

  auto label = bytes;
  const auto n_classes = static_cast<std::uint32_t>(good.n_classes);
  for (int i = 0; i < 4; ++i) label[label.size() - 4 + i] = static_cast<std::uint8_t>(n_classes >> (8 * i));
  CHECK(code_of(label) == StorageErrc::label_out_of_range);

  auto off_simplex = bytes;
  const std::size_t first_value = bytes.size() - 4 * good.n_samples - 4 * good.features.size();
  off_simplex[first_value + 3] = 0x40;  // first feature becomes >= 2
  CHECK(code_of(off_simplex) == StorageErrc::simplex_violation);

  CHECK(code_of(with_header(bytes, "\"simplex\"", "\"dense\"")) == StorageErrc::header_invalid);
  auto garbled = bytes;
  garbled[12] = '[';
  CHECK(code_of(garbled) == StorageErrc::header_invalid);

  try {
    read_bundle(temp_path("does_not_exist.bin"));
    FAIL("missing file accepted");
  } catch (const StorageError& e) {
    CHECK(e.code() == StorageErrc::io);
  }

  FeatureBundle shape = good;
  shape.labels.pop_back();
  CHECK_THROWS_AS(encode_bundle(shape), StorageError);
}

TEST_CASE("schedule round trip is exact") {
  std::mt19937_64 rng(8);
  for (Model m : {Model::gaussian, Model::dirichlet}) {
    const ScheduleFile f{random_schedule(m, 10, 75, rng), {1234, config_hash("cfg"), 80}};
    const std::string path = temp_path("schedule.json");
    write_schedule(f, path);
    const ScheduleFile g = read_schedule(path);
    CHECK(g == f);
    for (int l = 0; l < 10; ++l) {
      CHECK(std::abs(g.schedule.lambda(l) - f.schedule.lambda(l)) <= 1e-15 * f.schedule.lambda(l));
      CHECK(std::abs(g.schedule.temp(l) - f.schedule.temp(l)) <= 1e-15 * f.schedule.temp(l));
    }
    std::filesystem::remove(path);
  }
}

TEST_CASE("schedule lengths") {
  HyperSchedule fixed = make_schedule(Model::gaussian, 10, 75.0, 1.0, 1.0, false);
  const std::string text = encode_schedule({fixed, {}});
  const ScheduleFile back = decode_schedule(text);
  CHECK(back.schedule.a.size() == 1);
  for (int l = 0; l < 10; ++l) CHECK(back.schedule.lambda(l) == doctest::Approx(75.0));

  HyperSchedule adaptive = make_schedule(Model::gaussian, 10, 75.0, 1.0, 1.0, true);
  std::string bad = encode_schedule({adaptive, {}});
  bad.replace(bad.find("\"L\": 10"), 7, "\"L\": 11");
  try {
    decode_schedule(bad);
    FAIL("length mismatch accepted");
  } catch (const StorageError& e) {
    CHECK(e.code() == StorageErrc::length_mismatch);
  }
  try {
    decode_schedule("{\"model\": \"gaussian\"");
    FAIL("broken JSON accepted");
  } catch (const StorageError& e) {
    CHECK(e.code() == StorageErrc::header_invalid);
  }
}

TEST_CASE("report tables") {
  const Table t = eval_table({1.0, 0.8}, {0.0, 0.25});
  CHECK(table_to_string(t) == "task_id,accuracy,loss\n0,1,0\n1,0.8,0.25\n");
  const Table s = schedule_table(make_schedule(Model::gaussian, 2, 75.0, 1.0, 1.0));
  CHECK(s.columns == std::vector<std::string>{"layer", "a", "b", "lambda", "T"});
  CHECK(s.rows.size() == 2);
  CHECK(s.rows[0][3] == "75");
  Table w{{"x"}, {}};
  CHECK_THROWS(w.add_row({"1", "2"}));
}
