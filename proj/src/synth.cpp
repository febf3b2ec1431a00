#include "mwpkd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "mwpkd/error.hpp"
#include "mwpkd/rng.hpp"

namespace mwpkd {

namespace {

// Template body syntax: "word/TAG" literals, "{name}", "{pron}", "{item}",
// "{unit}", and quantity slots "{qN:kind}" with kind one of
//   big  integer 40..99
//   amt  integer 2..30, or a half-decimal 1.5..15.5 (one draw in four)
//   cnt  integer 2..9
//   sml  integer 1..3
//   mult descriptive multiplier (double, twice, triple)
//   frac descriptive fraction (half, quarter)
struct TemplateSpec {
  std::string name;
  std::string body;
  std::string equation;
  int relation_label;
};

constexpr const char* kTailHave =
    " How/ADV many/ADJ {unit} of/ADP {item} does/VERB {pron} have/VERB to/PART use/VERB now/ADV ?/PUNCT";
constexpr const char* kTailBox =
    " How/ADV many/ADJ {unit} does/VERB {pron} need/VERB to/PART put/VERB in/ADP each/DET box/NOUN ?/PUNCT";

const std::vector<TemplateSpec>& template_specs() {
  static const std::vector<TemplateSpec> specs = [] {
    auto cat = [](const char* a, const char* b) { return std::string(a) + b; };
    return std::vector<TemplateSpec>{
        {"add",
         cat("{name} has/VERB {q0:amt} {unit} of/ADP {item} and/CONJ buys/VERB {q1:amt} {unit} "
             "more/ADV at/ADP the/DET shop/NOUN ./PUNCT", kTailHave),
         "+ N0 N1", 0},
        {"sub",
         cat("{name} has/VERB {q0:big} {unit} of/ADP {item} and/CONJ gives/VERB {q1:amt} {unit} "
             "to/ADP the/DET neighbor/NOUN ./PUNCT", kTailHave),
         "- N0 N1", 0},
        {"mul",
         cat("{name} buys/VERB {q0:cnt} bags/NOUN and/CONJ the/DET shop/NOUN puts/VERB {q1:amt} "
             "{unit} of/ADP {item} in/ADP each/DET bag/NOUN ./PUNCT", kTailHave),
         "* N0 N1", 0},
        {"div",
         cat("{name} and/CONJ the/DET team/NOUN pack/VERB {q0:big} {unit} of/ADP {item} into/ADP "
             "{q1:cnt} boxes/NOUN equally/ADV ./PUNCT", kTailBox),
         "/ N0 N1", 0},
        {"add3",
         cat("{name} has/VERB {q0:amt} {unit} of/ADP {item} ,/PUNCT buys/VERB {q1:amt} {unit} "
             "on/ADP Monday/NOUN and/CONJ {q2:amt} {unit} on/ADP the/DET weekend/NOUN ./PUNCT",
             kTailHave),
         "+ + N0 N1 N2", 0},
        {"mul_sub",
         cat("{name} buys/VERB {q0:cnt} bags/NOUN with/ADP {q1:amt} {unit} of/ADP {item} in/ADP "
             "each/DET bag/NOUN and/CONJ uses/VERB {q2:sml} {unit} at/ADP the/DET party/NOUN ./PUNCT",
             kTailHave),
         "- * N0 N1 N2", 0},
        {"add_div",
         cat("{name} has/VERB {q0:amt} {unit} of/ADP {item} and/CONJ gets/VERB {q1:amt} {unit} "
             "more/ADV ,/PUNCT then/ADV packs/VERB the/DET lot/NOUN into/ADP {q2:cnt} boxes/NOUN "
             "equally/ADV ./PUNCT", kTailBox),
         "/ + N0 N1 N2", 0},
        {"add_sub_sub",
         cat("{name} has/VERB {q0:big} {unit} of/ADP {item} and/CONJ buys/VERB {q1:amt} {unit} "
             ",/PUNCT then/ADV gives/VERB {q2:cnt} {unit} to/ADP a/DET friend/NOUN and/CONJ "
             "{q3:cnt} {unit} to/ADP the/DET cook/NOUN ./PUNCT", kTailHave),
         "- - + N0 N1 N2 N3", 0},
        {"two_products",
         cat("{name} buys/VERB {q0:cnt} bags/NOUN of/ADP {item} with/ADP {q1:amt} {unit} in/ADP "
             "each/DET bag/NOUN and/CONJ {q2:cnt} boxes/NOUN with/ADP {q3:amt} {unit} in/ADP "
             "the/DET box/NOUN ./PUNCT", kTailHave),
         "+ * N0 N1 * N2 N3", 0},
        {"multiple_of",
         "{name} has/VERB {q0:amt} {unit} of/ADP {item} and/CONJ the/DET neighbor/NOUN has/VERB "
         "{q1:mult} what/PRON {pron} has/VERB ./PUNCT How/ADV many/ADJ {unit} of/ADP {item} "
         "does/VERB the/DET neighbor/NOUN have/VERB to/PART use/VERB ?/PUNCT",
         "* N0 N1", 1},
        {"fraction_used",
         cat("{name} has/VERB {q0:amt} {unit} of/ADP {item} and/CONJ uses/VERB {q1:frac} of/ADP "
             "it/PRON for/ADP the/DET cake/NOUN ./PUNCT",
             " How/ADV many/ADJ {unit} does/VERB {pron} need/VERB to/PART use/VERB ?/PUNCT"),
         "* N0 N1", 1},
        {"fraction_left",
         cat("{name} has/VERB {q0:amt} {unit} of/ADP {item} and/CONJ gives/VERB {q1:frac} of/ADP "
             "it/PRON to/ADP the/DET neighbor/NOUN ./PUNCT", kTailHave),
         "- N0 * N0 N1", 1},
        {"fraction_packs",
         cat("{name} has/VERB {q0:amt} {unit} of/ADP {item} and/CONJ buys/VERB {q1:cnt} packs/NOUN "
             "that/PRON each/DET hold/VERB {q2:frac} a/DET {unit} ./PUNCT", kTailHave),
         "+ N0 * N1 N2", 1},
        {"multiple_of_total",
         "{name} has/VERB {q0:amt} {unit} of/ADP {item} and/CONJ buys/VERB {q1:amt} {unit} "
         "more/ADV ,/PUNCT and/CONJ the/DET neighbor/NOUN has/VERB {q2:mult} that/DET total/NOUN "
         "./PUNCT How/ADV many/ADJ {unit} does/VERB the/DET neighbor/NOUN have/VERB to/PART "
         "give/VERB {pron} ?/PUNCT",
         "* + N0 N1 N2", 1},
    };
  }();
  return specs;
}

struct Person {
  std::string_view name, pronoun;
};
constexpr Person kPeople[] = {{"Tom", "he"},   {"Jack", "he"},  {"Ben", "he"},
                              {"Mary", "she"}, {"Lily", "she"}, {"Anna", "she"}};

struct Item {
  std::string_view item, unit;
};
constexpr Item kItems[] = {{"rice", "kg"},  {"flour", "kg"}, {"sugar", "kg"},
                           {"ribbon", "cm"}, {"milk", "ml"},  {"wire", "m"}};

const std::vector<DescriptiveQuantity> kMultipliers = {
    {"double", {2, 1}}, {"twice", {2, 1}}, {"triple", {3, 1}}};
const std::vector<DescriptiveQuantity> kFractions = {{"half", {1, 2}}, {"quarter", {1, 4}}};

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream is{std::string(s)};
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

struct Quantity {
  std::string surface;
  Rational value;
};

std::string decimal_surface(std::int64_t halves) {
  // halves = 2k+1 -> "k.5"
  return std::to_string(halves / 2) + ".5";
}

Quantity draw_quantity(std::string_view kind, Rng& rng) {
  if (kind == "big") {
    const auto v = rng.uniform_int(40, 99);
    return {std::to_string(v), {v, 1}};
  }
  if (kind == "amt") {
    if (rng.uniform() < 0.25) {
      const auto halves = 2 * rng.uniform_int(1, 15) + 1;
      return {decimal_surface(halves), normalized(halves, 2)};
    }
    const auto v = rng.uniform_int(2, 30);
    return {std::to_string(v), {v, 1}};
  }
  if (kind == "cnt") {
    const auto v = rng.uniform_int(2, 9);
    return {std::to_string(v), {v, 1}};
  }
  if (kind == "sml") {
    const auto v = rng.uniform_int(1, 3);
    return {std::to_string(v), {v, 1}};
  }
  const auto& lex = kind == "mult" ? kMultipliers : kFractions;
  const auto& d = lex[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(lex.size()) - 1))];
  return {std::string(d.word), d.value};
}

struct Piece {
  enum class Kind { Word, Name, Pron, Item, Unit, Quantity } kind;
  std::string word;
  PosTag tag = PosTag::X;
  int slot = 0;
  std::string qkind;
};

std::vector<Piece> parse_body(const std::string& body) {
  std::vector<Piece> out;
  for (const auto& w : split_ws(body)) {
    Piece p;
    if (w == "{name}") {
      p.kind = Piece::Kind::Name;
      p.tag = PosTag::NOUN;
    } else if (w == "{pron}") {
      p.kind = Piece::Kind::Pron;
      p.tag = PosTag::PRON;
    } else if (w == "{item}") {
      p.kind = Piece::Kind::Item;
      p.tag = PosTag::NOUN;
    } else if (w == "{unit}") {
      p.kind = Piece::Kind::Unit;
      p.tag = PosTag::X;
    } else if (w.size() > 4 && w[0] == '{' && w[1] == 'q') {
      p.kind = Piece::Kind::Quantity;
      p.tag = PosTag::NUM;
      p.slot = w[2] - '0';
      p.qkind = w.substr(4, w.size() - 5);
    } else {
      const auto slash = w.rfind('/');
      p.kind = Piece::Kind::Word;
      p.word = w.substr(0, slash);
      p.tag = *parse_pos(w.substr(slash + 1));
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct CompiledTemplate {
  SynthTemplateInfo info;
  std::vector<Piece> pieces;
};

const std::vector<CompiledTemplate>& compiled() {
  static const std::vector<CompiledTemplate> all = [] {
    std::vector<CompiledTemplate> out;
    for (const auto& def : template_specs()) {
      CompiledTemplate t;
      t.info.name = def.name;
      t.info.equation_prefix = split_ws(def.equation);
      t.info.relation_label = def.relation_label;
      t.pieces = parse_body(def.body);
      for (const auto& p : t.pieces)
        if (p.kind == Piece::Kind::Quantity) t.info.quantity_count = std::max(t.info.quantity_count, p.slot + 1);
      out.push_back(std::move(t));
    }
    return out;
  }();
  return all;
}

}  // namespace

const std::vector<SynthTemplateInfo>& synth_templates() {
  static const std::vector<SynthTemplateInfo> infos = [] {
    std::vector<SynthTemplateInfo> out;
    for (const auto& t : compiled()) out.push_back(t.info);
    return out;
  }();
  return infos;
}

const std::vector<DescriptiveQuantity>& descriptive_lexicon() {
  static const std::vector<DescriptiveQuantity> all = [] {
    auto out = kMultipliers;
    out.insert(out.end(), kFractions.begin(), kFractions.end());
    return out;
  }();
  return all;
}

const std::vector<std::string>& synth_vocab() {
  static const std::vector<std::string> vocab = [] {
    std::vector<std::string> v{"[PAD]", "[UNK]"};
    auto add = [&](std::string_view w) {
      if (std::find(v.begin(), v.end(), w) == v.end()) v.emplace_back(w);
    };
    for (const auto& t : compiled())
      for (const auto& p : t.pieces)
        if (p.kind == Piece::Kind::Word) add(p.word);
    for (const auto& p : kPeople) {
      add(p.name);
      add(p.pronoun);
    }
    for (const auto& i : kItems) {
      add(i.item);
      add(i.unit);
    }
    for (const auto& d : descriptive_lexicon()) add(d.word);
    for (int i = 1; i <= 99; ++i) add(std::to_string(i));
    for (int h = 3; h <= 31; h += 2) add(decimal_surface(h));
    return v;
  }();
  return vocab;
}

std::int64_t synth_token_id(std::string_view token) {
  static const std::unordered_map<std::string, std::int64_t> index = [] {
    std::unordered_map<std::string, std::int64_t> m;
    const auto& v = synth_vocab();
    for (std::size_t i = 0; i < v.size(); ++i) m.emplace(v[i], static_cast<std::int64_t>(i));
    return m;
  }();
  auto it = index.find(std::string(token));
  return it == index.end() ? 1 : it->second;
}

std::vector<double> uniform_mix() { return std::vector<double>(compiled().size(), 1.0); }

std::vector<MwpRecord> synth_generate(std::int64_t n, std::uint64_t seed,
                                      const std::vector<double>& mix) {
  if (n < 0) fail(ErrorKind::Param, "n must be non-negative");
  if (mix.empty()) fail(ErrorKind::Param, "template mix is empty");
  if (mix.size() != compiled().size()) {
    fail(ErrorKind::Param, "template mix has " + std::to_string(mix.size()) + " weights, expected " +
                               std::to_string(compiled().size()));
  }
  double total = 0.0;
  for (double w : mix) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorKind::Param, "mix weights must be non-negative");
    total += w;
  }
  if (n > 0 && total <= 0.0) fail(ErrorKind::Param, "mix weights are all zero");

  Rng rng(seed);
  std::vector<MwpRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const auto& t = compiled()[rng.weighted(mix)];
    const auto& person = kPeople[rng.uniform_int(0, std::size(kPeople) - 1)];
    const auto& item = kItems[rng.uniform_int(0, std::size(kItems) - 1)];

    std::vector<Quantity> qs(static_cast<std::size_t>(t.info.quantity_count));
    for (const auto& p : t.pieces)
      if (p.kind == Piece::Kind::Quantity) qs[p.slot] = draw_quantity(p.qkind, rng);

    MwpRecord r;
    r.id = "synth-" + std::to_string(seed) + "-" + std::to_string(i);
    for (const auto& p : t.pieces) {
      std::string tok;
      switch (p.kind) {
        case Piece::Kind::Word: tok = p.word; break;
        case Piece::Kind::Name: tok = person.name; break;
        case Piece::Kind::Pron: tok = person.pronoun; break;
        case Piece::Kind::Item: tok = item.item; break;
        case Piece::Kind::Unit: tok = item.unit; break;
        case Piece::Kind::Quantity:
          tok = qs[p.slot].surface;
          r.quantity_indices.push_back(static_cast<int>(r.tokens.size()));
          r.quantity_values.push_back(qs[p.slot].value);
          break;
      }
      r.tokens.push_back(tok);
      r.token_ids.push_back(synth_token_id(tok));
      r.pos_tags.push_back(p.tag);
    }
    for (std::size_t k = 0; k < r.tokens.size(); ++k) {
      if (k) r.text += ' ';
      r.text += r.tokens[k];
    }
    r.equation_prefix = t.info.equation_prefix;
    r.relation_label = t.info.relation_label;
    r.answer = eval_expr(r.equation(), r.quantity_doubles());
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mwpkd
