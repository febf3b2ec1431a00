#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mwpkd/expr.hpp"

namespace mwpkd {

// Universal 12-tag inventory. Indices are stable and used as class labels.
enum class PosTag : std::uint8_t { NOUN, VERB, NUM, ADJ, ADV, PRON, DET, ADP, CONJ, PART, PUNCT, X };

inline constexpr int kPosTagCount = 12;
inline constexpr std::array<std::string_view, kPosTagCount> kPosTagNames = {
    "NOUN", "VERB", "NUM", "ADJ", "ADV", "PRON", "DET", "ADP", "CONJ", "PART", "PUNCT", "X"};

std::string_view pos_name(PosTag tag);
std::optional<PosTag> parse_pos(std::string_view name);

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string to_string() const;  // "3", "-5/2"

  // Accepts "7", "2.5", "-1/4".
  static Rational parse(std::string_view text);
  static Rational from_double(double v);  // exact for values with <= 9 decimal places
  friend bool operator==(const Rational&, const Rational&) = default;
};

Rational normalized(std::int64_t num, std::int64_t den);

struct MwpRecord {
  std::string id;
  std::string text;
  std::vector<std::string> tokens;
  std::vector<std::int64_t> token_ids;
  std::vector<int> quantity_indices;
  std::vector<Rational> quantity_values;
  std::vector<PosTag> pos_tags;
  std::vector<std::string> equation_prefix;
  double answer = 0.0;
  int relation_label = 0;

  std::vector<double> quantity_doubles() const;
  ExprTree equation() const;  // parse of equation_prefix

  friend bool operator==(const MwpRecord&, const MwpRecord&) = default;
};

// Throws Validation (with the record id) when an invariant does not hold.
void validate_record(const MwpRecord& r);

// JSONL with exactly the fields id, text, tokens, token_ids, quantity_indices,
// quantity_values, pos_tags, equation_prefix, answer, relation_label.
MwpRecord record_from_json_line(std::string_view line);
std::string record_to_json_line(const MwpRecord& r);

std::vector<MwpRecord> load_dataset(const std::filesystem::path& path);
std::vector<MwpRecord> parse_dataset(std::string_view jsonl);
std::string serialize_dataset(const std::vector<MwpRecord>& records);
void save_dataset(const std::vector<MwpRecord>& records, const std::filesystem::path& path);

struct SplitFractions {
  double train = 0.8;
  double dev = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  std::vector<MwpRecord> train, dev, test;
};

// Contiguous split in file order; fractions must be non-negative and sum to 1.
DatasetSplit split_dataset(const std::vector<MwpRecord>& records, SplitFractions fractions);

}  // namespace mwpkd
