#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "mwpkd/corpus.hpp"

namespace mwpkd {

struct SynthTemplateInfo {
  std::string name;
  std::vector<std::string> equation_prefix;
  int quantity_count = 0;
  int relation_label = 0;
};

// Templates in mix-weight order.
const std::vector<SynthTemplateInfo>& synth_templates();

// Fixed token inventory; a token's id is its index. Id 0 is [PAD], 1 is [UNK].
const std::vector<std::string>& synth_vocab();
std::int64_t synth_token_id(std::string_view token);

struct DescriptiveQuantity {
  std::string_view word;
  Rational value;
};
// Descriptive quantity words and their values ("half" -> 1/2, "double" -> 2, ...).
const std::vector<DescriptiveQuantity>& descriptive_lexicon();

// Deterministic for fixed (n, seed, mix). An empty `mix` is a ParamError; use
// uniform_mix() for equal template weights.
std::vector<MwpRecord> synth_generate(std::int64_t n, std::uint64_t seed,
                                      const std::vector<double>& mix);
std::vector<double> uniform_mix();

}  // namespace mwpkd
