#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qecascade {

// Error hierarchy. Everything the library throws derives from Error so the
// CLI can map failures onto exit codes in one place.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A JSONL line could not be parsed. `line()` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Out-of-domain numeric argument (negative batch size, eta outside [0, 1]...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A record lacks a score column an operation needs.
class MissingColumnError : public Error {
 public:
  MissingColumnError(std::string record_id, std::string column);
  const std::string& record_id() const noexcept { return record_id_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::string record_id_;
  std::string column_;
};

/// One source segment with its small/large hypotheses and every score known
/// about it. All score columns are stored higher-is-better.
struct TranslationRecord {
  std::string id;
  std::string lang_pair;
  std::string source;
  std::optional<std::string> hyp_small;
  std::optional<std::string> hyp_large;
  std::optional<double> qe_small;
  std::optional<double> qe_large;
  std::optional<double> quality_small;
  std::optional<double> quality_large;
  std::optional<double> logprob_small;
  std::optional<std::int64_t> hyp_token_len;
  std::optional<std::int64_t> src_token_len;
  // Any further numeric field (e.g. human_small / human_large) is an extra
  // score column, addressable by name like the built-in ones.
  std::map<std::string, double> extra_scores;

  /// Looks up a real-valued score column by name (built-in or extra).
  std::optional<double> score(std::string_view column) const;
  /// Throws MissingColumnError if absent.
  double require_score(std::string_view column) const;
  /// Sets a score column, routing built-in names to their fields.
  void set_score(std::string_view column, double value);

  bool operator==(const TranslationRecord&) const = default;
};

struct Batch {
  std::string name;
  std::vector<TranslationRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }

  bool operator==(const Batch&) const = default;
};

enum class Direction { higher_better, lower_better };

struct ScoreOrientation {
  std::string column;
  Direction direction = Direction::higher_better;
};

/// A pair of score columns describing the same metric on the small and large
/// hypotheses, e.g. {"quality_small", "quality_large"}.
struct QualityColumns {
  std::string small = "quality_small";
  std::string large = "quality_large";

  /// "quality" -> quality_small / quality_large, "human" -> human_small / ...
  static QualityColumns family(std::string_view name);
  bool operator==(const QualityColumns&) const = default;
};

/// True for columns holding real-valued scores that may be oriented/negated.
bool is_score_column(std::string_view column);

// --- JSONL ingestion -------------------------------------------------------

/// Parses one JSONL line into a record (no orientation applied).
TranslationRecord parse_record(std::string_view line, std::size_t line_number);

/// Parses a whole JSONL document. Blank lines are skipped.
Batch parse_batch(std::string_view text, std::span<const ScoreOrientation> orientations = {},
                  std::string name = {});

/// Reads `path`, negates every declared lower-better column and validates.
/// Throws ParseError (with line number) or ValidationError.
Batch load_batch(const std::filesystem::path& path,
                 std::span<const ScoreOrientation> orientations = {});

/// One record per line, schema field names verbatim, absent fields omitted.
std::string serialize_record(const TranslationRecord& record);
std::string serialize_batch(const Batch& batch);
void write_batch(const Batch& batch, const std::filesystem::path& path);

/// Checks record-level invariants; throws ValidationError.
void validate_record(const TranslationRecord& record);

}  // namespace qecascade
