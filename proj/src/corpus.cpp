#include "mwpkd/corpus.hpp"

#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mwpkd/binary_io.hpp"
#include "mwpkd/error.hpp"

namespace mwpkd {

using nlohmann::json;

std::string_view pos_name(PosTag tag) { return kPosTagNames[static_cast<int>(tag)]; }

std::optional<PosTag> parse_pos(std::string_view name) {
  for (int i = 0; i < kPosTagCount; ++i)
    if (kPosTagNames[i] == name) return static_cast<PosTag>(i);
  return std::nullopt;
}

Rational normalized(std::int64_t num, std::int64_t den) {
  if (den == 0) fail(ErrorKind::Validation, "rational with zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const auto g = std::gcd(num < 0 ? -num : num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  return {num, den};
}

std::string Rational::to_string() const {
  if (den == 1) return std::to_string(num);
  return std::to_string(num) + "/" + std::to_string(den);
}

namespace {

std::int64_t parse_int(std::string_view s, std::string_view whole) {
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    fail(ErrorKind::Schema, "bad rational '" + std::string(whole) + "'");
  }
  return v;
}

}  // namespace

Rational Rational::parse(std::string_view text) {
  if (auto slash = text.find('/'); slash != std::string_view::npos) {
    return normalized(parse_int(text.substr(0, slash), text), parse_int(text.substr(slash + 1), text));
  }
  if (auto dot = text.find('.'); dot != std::string_view::npos) {
    const auto frac = text.substr(dot + 1);
    if (frac.size() > 12) fail(ErrorKind::Schema, "too many decimals in '" + std::string(text) + "'");
    const bool neg = !text.empty() && text[0] == '-';
    auto int_part = text.substr(0, dot);
    std::int64_t ip = (int_part.empty() || int_part == "-") ? 0 : parse_int(int_part, text);
    std::int64_t fp = frac.empty() ? 0 : parse_int(frac, text);
    std::int64_t den = 1;
    for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
    std::int64_t num = (ip < 0 ? -ip : ip) * den + fp;
    return normalized(neg ? -num : num, den);
  }
  return {parse_int(text, text), 1};
}

Rational Rational::from_double(double v) {
  if (!std::isfinite(v)) fail(ErrorKind::Schema, "non-finite quantity value");
  std::int64_t den = 1;
  for (int i = 0; i <= 9; ++i) {
    const double scaled = v * static_cast<double>(den);
    if (std::abs(scaled - std::round(scaled)) < 1e-9 * std::max(1.0, std::abs(scaled))) {
      return normalized(static_cast<std::int64_t>(std::llround(scaled)), den);
    }
    den *= 10;
  }
  fail(ErrorKind::Schema, "quantity value has too many decimal places to be a rational");
}

std::vector<double> MwpRecord::quantity_doubles() const {
  std::vector<double> out;
  out.reserve(quantity_values.size());
  for (const auto& q : quantity_values) out.push_back(q.to_double());
  return out;
}

ExprTree MwpRecord::equation() const { return ExprTree::parse_prefix(equation_prefix); }

void validate_record(const MwpRecord& r) {
  auto bad = [&](const std::string& why) {
    fail(ErrorKind::Validation, "record '" + r.id + "': " + why);
  };
  if (r.id.empty()) bad("empty id");
  if (r.pos_tags.size() != r.tokens.size() || r.token_ids.size() != r.tokens.size()) {
    bad("tokens, token_ids and pos_tags lengths differ (" + std::to_string(r.tokens.size()) + ", " +
        std::to_string(r.token_ids.size()) + ", " + std::to_string(r.pos_tags.size()) + ")");
  }
  for (auto id : r.token_ids)
    if (id < 0) bad("negative token id");
  if (r.quantity_indices.size() != r.quantity_values.size()) {
    bad("quantity_indices and quantity_values lengths differ");
  }
  for (int qi : r.quantity_indices) {
    if (qi < 0 || static_cast<std::size_t>(qi) >= r.tokens.size()) {
      bad("quantity index " + std::to_string(qi) + " outside [0, " +
          std::to_string(r.tokens.size()) + ")");
    }
  }
  if (r.relation_label != 0 && r.relation_label != 1) bad("relation_label must be 0 or 1");
  if (!std::isfinite(r.answer)) bad("non-finite answer");
  ExprTree tree;
  try {
    tree = r.equation();
    tree.validate(static_cast<int>(r.quantity_values.size()));
  } catch (const Error& e) {
    bad(std::string("equation: ") + e.what());
  }
  double value = 0.0;
  try {
    value = eval_expr(tree, r.quantity_doubles());
  } catch (const Error& e) {
    bad(std::string("equation does not evaluate: ") + e.what());
  }
  if (std::abs(value - r.answer) > 1e-6 * std::max(1.0, std::abs(r.answer))) {
    std::ostringstream os;
    os.precision(17);
    os << "equation evaluates to " << value << " but answer is " << r.answer;
    bad(os.str());
  }
}

namespace {

constexpr std::array<std::string_view, 10> kFields = {
    "id", "text", "tokens", "token_ids", "quantity_indices",
    "quantity_values", "pos_tags", "equation_prefix", "answer", "relation_label"};

const json& field(const json& j, std::string_view name) {
  auto it = j.find(name);
  if (it == j.end()) fail(ErrorKind::Schema, "missing field '" + std::string(name) + "'");
  return *it;
}

[[noreturn]] void wrong_type(std::string_view name, std::string_view expected) {
  fail(ErrorKind::Schema, "field '" + std::string(name) + "' must be " + std::string(expected));
}

std::vector<std::string> string_list(const json& j, std::string_view name) {
  const auto& v = field(j, name);
  if (!v.is_array()) wrong_type(name, "an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) wrong_type(name, "an array of strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

template <typename Int>
std::vector<Int> int_list(const json& j, std::string_view name) {
  const auto& v = field(j, name);
  if (!v.is_array()) wrong_type(name, "an array of integers");
  std::vector<Int> out;
  for (const auto& e : v) {
    if (!e.is_number_integer()) wrong_type(name, "an array of integers");
    out.push_back(e.get<Int>());
  }
  return out;
}

nlohmann::ordered_json quantity_json(const Rational& q) {
  if (q.den == 1) return q.num;
  return q.to_string();
}

}  // namespace

MwpRecord record_from_json_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::Schema, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) fail(ErrorKind::Schema, "record must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(kFields.begin(), kFields.end(), key) == kFields.end()) {
      fail(ErrorKind::Schema, "unexpected field '" + key + "'");
    }
  }
  MwpRecord r;
  const auto& id = field(j, "id");
  if (!id.is_string()) wrong_type("id", "a string");
  r.id = id.get<std::string>();
  const auto& text = field(j, "text");
  if (!text.is_string()) wrong_type("text", "a string");
  r.text = text.get<std::string>();
  r.tokens = string_list(j, "tokens");
  r.token_ids = int_list<std::int64_t>(j, "token_ids");
  r.quantity_indices = int_list<int>(j, "quantity_indices");

  const auto& qv = field(j, "quantity_values");
  if (!qv.is_array()) wrong_type("quantity_values", "an array");
  for (const auto& e : qv) {
    if (e.is_number_integer()) {
      r.quantity_values.push_back({e.get<std::int64_t>(), 1});
    } else if (e.is_number_float()) {
      r.quantity_values.push_back(Rational::from_double(e.get<double>()));
    } else if (e.is_string()) {
      r.quantity_values.push_back(Rational::parse(e.get<std::string>()));
    } else {
      wrong_type("quantity_values", "numbers or rational strings");
    }
  }

  for (const auto& tag : string_list(j, "pos_tags")) {
    auto t = parse_pos(tag);
    if (!t) fail(ErrorKind::Schema, "field 'pos_tags' has unknown tag '" + tag + "'");
    r.pos_tags.push_back(*t);
  }
  r.equation_prefix = string_list(j, "equation_prefix");

  const auto& ans = field(j, "answer");
  if (ans.is_number()) {
    r.answer = ans.get<double>();
  } else if (ans.is_string()) {
    const auto s = ans.get<std::string>();
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), r.answer);
    if (ec != std::errc() || ptr != s.data() + s.size()) wrong_type("answer", "a decimal");
  } else {
    wrong_type("answer", "a number");
  }

  const auto& rl = field(j, "relation_label");
  if (!rl.is_number_integer()) wrong_type("relation_label", "an integer");
  r.relation_label = rl.get<int>();
  return r;
}

std::string record_to_json_line(const MwpRecord& r) {
  // ordered_json keeps the documented field order stable on disk
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["text"] = r.text;
  j["tokens"] = r.tokens;
  j["token_ids"] = r.token_ids;
  j["quantity_indices"] = r.quantity_indices;
  auto qv = nlohmann::ordered_json::array();
  for (const auto& q : r.quantity_values) qv.push_back(quantity_json(q));
  j["quantity_values"] = qv;
  auto tags = nlohmann::ordered_json::array();
  for (auto t : r.pos_tags) tags.push_back(std::string(pos_name(t)));
  j["pos_tags"] = tags;
  j["equation_prefix"] = r.equation_prefix;
  j["answer"] = r.answer;
  j["relation_label"] = r.relation_label;
  return j.dump();
}

std::vector<MwpRecord> parse_dataset(std::string_view jsonl) {
  std::vector<MwpRecord> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < jsonl.size()) {
    auto end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    auto line = jsonl.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    try {
      out.push_back(record_from_json_line(line));
      validate_record(out.back());
    } catch (const Error& e) {
      fail(e.kind(), "line " + std::to_string(line_no) + ": " +
                         std::string(e.what()).substr(to_string(e.kind()).size() + 2));
    }
  }
  return out;
}

std::vector<MwpRecord> load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "no such file: " + path.string());
  return parse_dataset(read_file(path));
}

std::string serialize_dataset(const std::vector<MwpRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += record_to_json_line(r);
    out += '\n';
  }
  return out;
}

void save_dataset(const std::vector<MwpRecord>& records, const std::filesystem::path& path) {
  for (const auto& r : records) validate_record(r);
  atomic_write(path, serialize_dataset(records));
}

DatasetSplit split_dataset(const std::vector<MwpRecord>& records, SplitFractions f) {
  if (f.train < 0 || f.dev < 0 || f.test < 0 || std::abs(f.train + f.dev + f.test - 1.0) > 1e-9) {
    fail(ErrorKind::Param, "split fractions must be non-negative and sum to 1");
  }
  const auto n = records.size();
  const auto n_train = static_cast<std::size_t>(std::floor(f.train * n + 1e-9));
  const auto n_dev = std::min(n - n_train, static_cast<std::size_t>(std::floor(f.dev * n + 1e-9)));
  DatasetSplit s;
  s.train.assign(records.begin(), records.begin() + n_train);
  s.dev.assign(records.begin() + n_train, records.begin() + n_train + n_dev);
  s.test.assign(records.begin() + n_train + n_dev, records.end());
  return s;
}

}  // namespace mwpkd
