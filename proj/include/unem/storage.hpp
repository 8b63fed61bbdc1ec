#pragma once
// File formats: binary feature bundles, JSON hyperparameter schedules and
// delimiter-separated report tables.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "unem/bundle.hpp"
#include "unem/schedule.hpp"
#include "unem/task_engine.hpp"
#include "unem/unroll.hpp"

namespace unem {

enum class StorageErrc {
  io = 1,
  magic_mismatch,
  truncated_payload,
  label_out_of_range,
  simplex_violation,
  header_invalid,
  length_mismatch,
};

std::string_view storage_errc_name(StorageErrc c) noexcept;

class StorageError : public std::runtime_error {
 public:
  StorageError(StorageErrc code, const std::string& what);
  StorageErrc code() const noexcept { return code_; }

 private:
  StorageErrc code_;
};

inline constexpr char kBundleMagic[8] = {'U', 'N', 'E', 'M', 'F', 'B', '0', '1'};
inline constexpr double kSimplexRowTolerance = 1e-5;

std::vector<std::uint8_t> encode_bundle(const FeatureBundle& bundle);
FeatureBundle decode_bundle(const std::vector<std::uint8_t>& bytes);
void write_bundle(const FeatureBundle& bundle, const std::string& path);
FeatureBundle read_bundle(const std::string& path);

struct Provenance {
  std::uint64_t seed = 0;
  std::string config_hash;
  int epochs = 0;

  bool operator==(const Provenance&) const = default;
};

struct ScheduleFile {
  HyperSchedule schedule;
  Provenance provenance;

  bool operator==(const ScheduleFile&) const = default;
};

// 64-bit FNV-1a of `text`, as 16 hex digits.
std::string config_hash(const std::string& text);

std::string encode_schedule(const ScheduleFile& file);
ScheduleFile decode_schedule(const std::string& text);
void write_schedule(const ScheduleFile& file, const std::string& path);
ScheduleFile read_schedule(const std::string& path);

// A report table. Numbers are formatted by the builders below so that the
// output is byte-stable.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
};

std::string format_number(double v);
void write_table(std::ostream& os, const Table& table, char delimiter = ',');
void write_table(const std::string& path, const Table& table, char delimiter = ',');
std::string table_to_string(const Table& table, char delimiter = ',');

// task_id, accuracy, loss
Table eval_table(const std::vector<double>& accuracy, const std::vector<double>& loss);
// epoch, loss, accuracy
Table train_table(const TrainReport& report);
// layer, a, b, lambda, T
Table schedule_table(const HyperSchedule& schedule);

}  // namespace unem
