#include "unem/storage.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <ostream>
#include <sstream>

#include "unem/error.hpp"

namespace unem {

std::string_view storage_errc_name(StorageErrc c) noexcept {
  switch (c) {
    case StorageErrc::io: return "io";
    case StorageErrc::magic_mismatch: return "magic_mismatch";
    case StorageErrc::truncated_payload: return "truncated_payload";
    case StorageErrc::label_out_of_range: return "label_out_of_range";
    case StorageErrc::simplex_violation: return "simplex_violation";
    case StorageErrc::header_invalid: return "header_invalid";
    case StorageErrc::length_mismatch: return "length_mismatch";
  }
  return "unknown";
}

StorageError::StorageError(StorageErrc code, const std::string& what)
    : std::runtime_error(std::string(storage_errc_name(code)) + ": " + what), code_(code) {}

namespace {

using json = nlohmann::json;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError(StorageErrc::io, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw StorageError(StorageErrc::io, "read failed: " + path);
  return bytes;
}

void write_file(const std::string& path, const char* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StorageError(StorageErrc::io, "cannot open " + path + " for writing");
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) throw StorageError(StorageErrc::io, "write failed: " + path);
}

std::string_view kind_name(FeatureKind k) { return k == FeatureKind::simplex ? "simplex" : "raw"; }

void check_simplex_rows(const FeatureBundle& b) {
  if (b.kind != FeatureKind::simplex) return;
  for (std::size_t i = 0; i < b.n_samples; ++i) {
    double total = 0.0;
    bool nonneg = true;
    for (float v : b.row(i)) {
      total += v;
      nonneg = nonneg && v >= 0.0f;
    }
    if (!nonneg || std::abs(total - 1.0) > kSimplexRowTolerance)
      throw StorageError(StorageErrc::simplex_violation, "row " + std::to_string(i) + " is not on the simplex");
  }
}

void check_labels(const FeatureBundle& b) {
  for (std::size_t i = 0; i < b.labels.size(); ++i)
    if (b.labels[i] >= b.n_classes)
      throw StorageError(StorageErrc::label_out_of_range,
                         "label " + std::to_string(b.labels[i]) + " at sample " + std::to_string(i));
}

void check_shape(const FeatureBundle& b) {
  if (b.features.size() != b.n_samples * b.dim || b.labels.size() != b.n_samples)
    throw StorageError(StorageErrc::length_mismatch, "feature or label count disagrees with the declared shape");
  if (!b.class_names.empty() && b.class_names.size() != b.n_classes)
    throw StorageError(StorageErrc::header_invalid, "class_names length differs from n_classes");
  for (const auto& s : b.splits)
    if (s.begin > s.end || s.end > b.n_samples)
      throw StorageError(StorageErrc::header_invalid, "split '" + s.tag + "' out of range");
}

}  // namespace

std::vector<std::uint8_t> encode_bundle(const FeatureBundle& bundle) {
  check_shape(bundle);
  check_labels(bundle);
  check_simplex_rows(bundle);
  json header;
  header["n_samples"] = bundle.n_samples;
  header["dim"] = bundle.dim;
  header["n_classes"] = bundle.n_classes;
  header["class_names"] = bundle.class_names;
  header["splits"] = json::array();
  for (const auto& s : bundle.splits) header["splits"].push_back({{"begin", s.begin}, {"end", s.end}, {"tag", s.tag}});
  header["feature_kind"] = kind_name(bundle.kind);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kBundleMagic), std::end(kBundleMagic));
  out.reserve(12 + text.size() + 4 * bundle.features.size() + 4 * bundle.labels.size());
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (float v : bundle.features) put_u32(out, std::bit_cast<std::uint32_t>(v));
  for (std::uint32_t v : bundle.labels) put_u32(out, v);
  return out;
}

FeatureBundle decode_bundle(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kBundleMagic || std::memcmp(bytes.data(), kBundleMagic, sizeof kBundleMagic) != 0)
    throw StorageError(StorageErrc::magic_mismatch, "not a feature bundle");
  if (bytes.size() < 12) throw StorageError(StorageErrc::header_invalid, "missing header length");
  const std::size_t header_len = get_u32(bytes.data() + 8);
  if (bytes.size() < 12 + header_len) throw StorageError(StorageErrc::header_invalid, "header truncated");

  FeatureBundle b;
  try {
    const json h = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
    b.n_samples = h.at("n_samples").get<std::size_t>();
    b.dim = h.at("dim").get<std::size_t>();
    b.n_classes = h.at("n_classes").get<std::size_t>();
    b.class_names = h.value("class_names", std::vector<std::string>{});
    for (const auto& s : h.value("splits", json::array()))
      b.splits.push_back({s.at("begin").get<std::size_t>(), s.at("end").get<std::size_t>(), s.at("tag").get<std::string>()});
    const std::string kind = h.at("feature_kind").get<std::string>();
    if (kind == "raw") {
      b.kind = FeatureKind::raw;
    } else if (kind == "simplex") {
      b.kind = FeatureKind::simplex;
    } else {
      throw StorageError(StorageErrc::header_invalid, "unknown feature_kind '" + kind + "'");
    }
  } catch (const json::exception& e) {
    throw StorageError(StorageErrc::header_invalid, e.what());
  }
  if (b.dim != 0 && b.n_samples > (SIZE_MAX / 4) / b.dim)
    throw StorageError(StorageErrc::header_invalid, "declared shape overflows");

  const std::size_t values = b.n_samples * b.dim;
  const std::size_t expected = 12 + header_len + 4 * values + 4 * b.n_samples;
  if (bytes.size() != expected)
    throw StorageError(StorageErrc::truncated_payload, "expected " + std::to_string(expected) + " bytes, found " +
                                                           std::to_string(bytes.size()));
  const std::uint8_t* p = bytes.data() + 12 + header_len;
  b.features.resize(values);
  for (std::size_t i = 0; i < values; ++i, p += 4) b.features[i] = std::bit_cast<float>(get_u32(p));
  b.labels.resize(b.n_samples);
  for (std::size_t i = 0; i < b.n_samples; ++i, p += 4) b.labels[i] = get_u32(p);

  check_shape(b);
  check_labels(b);
  check_simplex_rows(b);
  return b;
}

void write_bundle(const FeatureBundle& bundle, const std::string& path) {
  const auto bytes = encode_bundle(bundle);
  write_file(path, reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

FeatureBundle read_bundle(const std::string& path) { return decode_bundle(read_file(path)); }

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::string exact(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string exact_array(const std::vector<double>& xs) {
  std::string s = "[";
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? ", " : "") + exact(xs[i]);
  return s + "]";
}

}  // namespace

// Written by hand so that every double carries 17 significant digits.
std::string encode_schedule(const ScheduleFile& file) {
  const HyperSchedule& s = file.schedule;
  s.validate();
  std::ostringstream os;
  os << "{\n"
     << "  \"model\": " << json(std::string(model_name(s.model))).dump() << ",\n"
     << "  \"L\": " << s.layers << ",\n"
     << "  \"adaptive\": " << (s.adaptive ? "true" : "false") << ",\n"
     << "  \"temperature\": " << (s.temperature ? "true" : "false") << ",\n"
     << "  \"a\": " << exact_array(s.a) << ",\n"
     << "  \"b\": " << exact_array(s.b) << ",\n"
     << "  \"t_z_raw\": " << exact(s.t_z_raw) << ",\n"
     << "  \"feature_mode\": " << json(std::string(feature_mode_name(s.feature_mode))).dump() << ",\n"
     << "  \"provenance\": {\"seed\": " << file.provenance.seed
     << ", \"config_hash\": " << json(file.provenance.config_hash).dump()
     << ", \"epochs\": " << file.provenance.epochs << "}\n"
     << "}\n";
  return os.str();
}

ScheduleFile decode_schedule(const std::string& text) {
  ScheduleFile f;
  HyperSchedule& s = f.schedule;
  try {
    const json j = json::parse(text);
    s.model = parse_model(j.at("model").get<std::string>());
    s.layers = j.at("L").get<int>();
    s.adaptive = j.at("adaptive").get<bool>();
    s.temperature = j.value("temperature", true);
    s.a = j.at("a").get<std::vector<double>>();
    s.b = j.at("b").get<std::vector<double>>();
    s.t_z_raw = j.at("t_z_raw").get<double>();
    s.feature_mode = j.contains("feature_mode") ? parse_feature_mode(j.at("feature_mode").get<std::string>())
                                                 : default_feature_mode(s.model);
    if (j.contains("provenance")) {
      const json& p = j.at("provenance");
      f.provenance.seed = p.value("seed", std::uint64_t{0});
      f.provenance.config_hash = p.value("config_hash", std::string{});
      f.provenance.epochs = p.value("epochs", 0);
    }
  } catch (const json::exception& e) {
    throw StorageError(StorageErrc::header_invalid, e.what());
  } catch (const ConfigError& e) {
    throw StorageError(StorageErrc::header_invalid, e.what());
  }
  if (s.layers < 1) throw StorageError(StorageErrc::header_invalid, "L must be >= 1");
  const auto L = static_cast<std::size_t>(s.layers);
  for (const auto* arr : {&s.a, &s.b}) {
    const bool ok = s.adaptive ? arr->size() == L : (arr->size() == 1 || arr->size() == L);
    if (!ok)
      throw StorageError(StorageErrc::length_mismatch, "parameter array of length " + std::to_string(arr->size()) +
                                                           " for L = " + std::to_string(L));
  }
  // A non-adaptive schedule stores one shared value.
  if (!s.adaptive && s.a.size() == L && L != 1) {
    for (const auto* arr : {&s.a, &s.b})
      for (double v : *arr)
        if (v != (*arr)[0]) throw StorageError(StorageErrc::length_mismatch, "non-adaptive schedule with distinct layers");
    s.a.resize(1);
    s.b.resize(1);
  }
  try {
    s.validate();
  } catch (const ConfigError& e) {
    throw StorageError(StorageErrc::header_invalid, e.what());
  }
  return f;
}

void write_schedule(const ScheduleFile& file, const std::string& path) {
  const std::string text = encode_schedule(file);
  write_file(path, text.data(), text.size());
}

ScheduleFile read_schedule(const std::string& path) {
  const auto bytes = read_file(path);
  return decode_schedule(std::string(bytes.begin(), bytes.end()));
}

void Table::add_row(std::vector<std::string> row) {
  if (row.size() != columns.size()) throw ConfigError("table row width differs from the header");
  rows.push_back(std::move(row));
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_table(std::ostream& os, const Table& table, char delimiter) {
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) os << delimiter;
      os << cells[i];
    }
    os << '\n';
  };
  line(table.columns);
  for (const auto& r : table.rows) line(r);
}

std::string table_to_string(const Table& table, char delimiter) {
  std::ostringstream os;
  write_table(os, table, delimiter);
  return os.str();
}

void write_table(const std::string& path, const Table& table, char delimiter) {
  const std::string text = table_to_string(table, delimiter);
  write_file(path, text.data(), text.size());
}

Table eval_table(const std::vector<double>& accuracy, const std::vector<double>& loss) {
  if (accuracy.size() != loss.size()) throw ConfigError("eval_table: column lengths differ");
  Table t{{"task_id", "accuracy", "loss"}, {}};
  for (std::size_t i = 0; i < accuracy.size(); ++i)
    t.add_row({std::to_string(i), format_number(accuracy[i]), format_number(loss[i])});
  return t;
}

Table train_table(const TrainReport& report) {
  Table t{{"epoch", "loss", "accuracy"}, {}};
  for (std::size_t i = 0; i < report.epoch_loss.size(); ++i)
    t.add_row({std::to_string(i), format_number(report.epoch_loss[i]), format_number(report.epoch_accuracy[i])});
  return t;
}

Table schedule_table(const HyperSchedule& schedule) {
  Table t{{"layer", "a", "b", "lambda", "T"}, {}};
  for (int l = 0; l < schedule.layers; ++l) {
    const std::size_t slot = schedule.adaptive ? static_cast<std::size_t>(l) : 0;
    t.add_row({std::to_string(l), exact(schedule.a[slot]), exact(schedule.b[slot]), format_number(schedule.lambda(l)),
               format_number(schedule.temp(l))});
  }
  return t;
}

}  // namespace unem
