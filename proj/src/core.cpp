#include "qecascade/core.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace qecascade {

using nlohmann::json;

ParseError::ParseError(std::size_t line, const std::string& what)
    : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

MissingColumnError::MissingColumnError(std::string record_id, std::string column)
    : Error("record '" + record_id + "' is missing column '" + column + "'"),
      record_id_(std::move(record_id)),
      column_(std::move(column)) {}

namespace {

constexpr std::string_view kBuiltinScores[] = {"qe_small",      "qe_large",      "quality_small",
                                               "quality_large", "logprob_small"};
constexpr std::string_view kStringFields[] = {"id", "lang_pair", "source", "hyp_small",
                                              "hyp_large"};
constexpr std::string_view kCountFields[] = {"hyp_token_len", "src_token_len"};

template <typename Range>
bool contains(const Range& range, std::string_view name) {
  for (auto v : range) {
    if (v == name) return true;
  }
  return false;
}

std::optional<double>* builtin_slot(TranslationRecord& r, std::string_view column) {
  if (column == "qe_small") return &r.qe_small;
  if (column == "qe_large") return &r.qe_large;
  if (column == "quality_small") return &r.quality_small;
  if (column == "quality_large") return &r.quality_large;
  if (column == "logprob_small") return &r.logprob_small;
  return nullptr;
}

const std::optional<double>* builtin_slot(const TranslationRecord& r, std::string_view column) {
  return builtin_slot(const_cast<TranslationRecord&>(r), column);
}

double finite_number(const json& value, std::string_view field, std::size_t line) {
  if (!value.is_number()) {
    throw ParseError(line, "field '" + std::string(field) + "' must be a number");
  }
  double v = value.get<double>();
  if (!std::isfinite(v)) {
    throw ParseError(line, "field '" + std::string(field) + "' is not finite");
  }
  return v;
}

std::int64_t count_value(const json& value, std::string_view field, std::size_t line) {
  if (value.is_number_integer()) return value.get<std::int64_t>();
  if (value.is_number_float()) {
    double v = value.get<double>();
    if (std::isfinite(v) && v == std::floor(v) && std::fabs(v) < 9e15) {
      return static_cast<std::int64_t>(v);
    }
  }
  throw ParseError(line, "field '" + std::string(field) + "' must be an integer");
}

}  // namespace

std::optional<double> TranslationRecord::score(std::string_view column) const {
  if (auto slot = builtin_slot(*this, column)) return *slot;
  if (auto it = extra_scores.find(std::string(column)); it != extra_scores.end()) {
    return it->second;
  }
  return std::nullopt;
}

double TranslationRecord::require_score(std::string_view column) const {
  auto v = score(column);
  if (!v) throw MissingColumnError(id, std::string(column));
  return *v;
}

void TranslationRecord::set_score(std::string_view column, double value) {
  if (auto slot = builtin_slot(*this, column)) {
    *slot = value;
  } else {
    extra_scores[std::string(column)] = value;
  }
}

QualityColumns QualityColumns::family(std::string_view name) {
  std::string base(name);
  return QualityColumns{base + "_small", base + "_large"};
}

bool is_score_column(std::string_view column) {
  return !contains(kStringFields, column) && !contains(kCountFields, column) && !column.empty();
}

TranslationRecord parse_record(std::string_view line, std::size_t line_number) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::exception& e) {
    throw ParseError(line_number, std::string("malformed JSON: ") + e.what());
  }
  if (!obj.is_object()) throw ParseError(line_number, "record must be a JSON object");

  TranslationRecord r;
  bool have_id = false;
  for (const auto& [key, value] : obj.items()) {
    if (contains(kStringFields, key)) {
      if (!value.is_string()) throw ParseError(line_number, "field '" + key + "' must be a string");
      auto s = value.get<std::string>();
      if (key == "id") {
        r.id = std::move(s);
        have_id = true;
      } else if (key == "lang_pair") {
        r.lang_pair = std::move(s);
      } else if (key == "source") {
        r.source = std::move(s);
      } else if (key == "hyp_small") {
        r.hyp_small = std::move(s);
      } else {
        r.hyp_large = std::move(s);
      }
    } else if (contains(kCountFields, key)) {
      auto n = count_value(value, key, line_number);
      (key == "hyp_token_len" ? r.hyp_token_len : r.src_token_len) = n;
    } else if (value.is_number()) {
      r.set_score(key, finite_number(value, key, line_number));
    } else if (value.is_null()) {
      // Explicit null is the same as omitting the field.
    } else {
      throw ParseError(line_number, "unknown non-numeric field '" + key + "'");
    }
  }
  if (!have_id) throw ParseError(line_number, "record has no 'id'");
  return r;
}

void validate_record(const TranslationRecord& r) {
  auto fail = [&](const std::string& msg) {
    throw ValidationError("record '" + r.id + "': " + msg);
  };
  if (r.id.empty()) throw ValidationError("record with empty id");
  if (r.hyp_token_len && *r.hyp_token_len < 1) fail("hyp_token_len must be >= 1");
  if (r.src_token_len && *r.src_token_len < 1) fail("src_token_len must be >= 1");
  if (r.logprob_small) {
    if (!r.hyp_token_len) fail("logprob_small present without hyp_token_len");
    if (*r.logprob_small > 0.0) fail("logprob_small must be <= 0");
  }
  if (r.source.empty() && !r.src_token_len) fail("empty source requires src_token_len");
  for (auto column : kBuiltinScores) {
    if (auto v = r.score(column); v && !std::isfinite(*v)) fail(std::string(column) + " is not finite");
  }
  for (const auto& [column, v] : r.extra_scores) {
    if (!std::isfinite(v)) fail(column + " is not finite");
  }
}

Batch parse_batch(std::string_view text, std::span<const ScoreOrientation> orientations,
                  std::string name) {
  for (const auto& o : orientations) {
    if (!is_score_column(o.column) || o.column == "logprob_small") {
      throw ValidationError("column '" + o.column + "' cannot carry a score orientation");
    }
  }

  Batch batch;
  batch.name = std::move(name);
  std::set<std::string> seen;
  std::size_t line_number = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;

    auto record = parse_record(line, line_number);
    if (!seen.insert(record.id).second) {
      throw ValidationError("duplicate record id '" + record.id + "' at line " +
                            std::to_string(line_number));
    }
    validate_record(record);
    for (const auto& o : orientations) {
      if (o.direction != Direction::lower_better) continue;
      if (auto v = record.score(o.column)) record.set_score(o.column, -*v);
    }
    batch.records.push_back(std::move(record));
  }
  return batch;
}

Batch load_batch(const std::filesystem::path& path, std::span<const ScoreOrientation> orientations) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open batch file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_batch(buf.str(), orientations, path.stem().string());
}

std::string serialize_record(const TranslationRecord& r) {
  // ordered_json keeps schema order: identity, text, scores, lengths, extras.
  nlohmann::ordered_json obj;
  obj["id"] = r.id;
  if (!r.lang_pair.empty()) obj["lang_pair"] = r.lang_pair;
  obj["source"] = r.source;
  if (r.hyp_small) obj["hyp_small"] = *r.hyp_small;
  if (r.hyp_large) obj["hyp_large"] = *r.hyp_large;
  for (auto column : kBuiltinScores) {
    if (auto v = r.score(column)) obj[std::string(column)] = *v;
  }
  if (r.hyp_token_len) obj["hyp_token_len"] = *r.hyp_token_len;
  if (r.src_token_len) obj["src_token_len"] = *r.src_token_len;
  for (const auto& [column, v] : r.extra_scores) obj[column] = v;
  return obj.dump();
}

std::string serialize_batch(const Batch& batch) {
  std::string out;
  for (const auto& r : batch.records) {
    out += serialize_record(r);
    out += '\n';
  }
  return out;
}

void write_batch(const Batch& batch, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write batch file '" + path.string() + "'");
  out << serialize_batch(batch);
}

}  // namespace qecascade
