#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mwpkd/corpus.hpp"
#include "mwpkd/embeddings.hpp"

namespace mwpkd {

// Stand-in teacher: each token vector is row token_id of a fixed N(0, 1)
// matrix (a random linear map of the one-hot id), plus `positional_scale`
// times a fixed random vector per position.
EmbeddingSet toy_teacher(const std::vector<MwpRecord>& records, int dim, std::int64_t vocab_size,
                         std::uint64_t seed, double positional_scale = 0.0, const std::string& source_tag = "toy");

}  // namespace mwpkd
