#include "mwpkd/toy.hpp"

#include <algorithm>

#include "mwpkd/error.hpp"
#include "mwpkd/rng.hpp"

namespace mwpkd {

EmbeddingSet toy_teacher(const std::vector<MwpRecord>& records, int dim, std::int64_t vocab_size,
                         std::uint64_t seed, double positional_scale, const std::string& source_tag) {
  if (dim < 1 || vocab_size < 1) fail(ErrorKind::Param, "toy teacher needs positive dim and vocab");
  Rng rng(seed);
  Eigen::MatrixXf map(vocab_size, dim);
  for (Eigen::Index i = 0; i < map.rows(); ++i)
    for (Eigen::Index j = 0; j < dim; ++j) map(i, j) = static_cast<float>(rng.normal());
  std::size_t max_len = 0;
  for (const auto& r : records) max_len = std::max(max_len, r.token_ids.size());
  Eigen::MatrixXf pos(static_cast<Eigen::Index>(max_len), dim);
  for (Eigen::Index i = 0; i < pos.rows(); ++i)
    for (Eigen::Index j = 0; j < dim; ++j) pos(i, j) = static_cast<float>(positional_scale * rng.normal());

  EmbeddingSet set;
  set.dim = static_cast<std::uint32_t>(dim);
  set.vocab_size = vocab_size;
  set.source_tag = source_tag;
  for (const auto& r : records) {
    ProblemEmbedding p;
    p.id = r.id;
    p.tokens = r.tokens;
    p.token_ids = r.token_ids;
    p.matrix.resize(static_cast<Eigen::Index>(r.token_ids.size()), dim);
    for (std::size_t i = 0; i < r.token_ids.size(); ++i) {
      const auto id = r.token_ids[i];
      if (id < 0 || id >= vocab_size) fail(ErrorKind::TokenRange, "token id outside toy vocabulary");
      p.matrix.row(static_cast<Eigen::Index>(i)) = map.row(id) + pos.row(static_cast<Eigen::Index>(i));
    }
    set.problems.push_back(std::move(p));
  }
  return set;
}

}  // namespace mwpkd
