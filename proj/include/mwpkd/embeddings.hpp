#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "mwpkd/corpus.hpp"

namespace mwpkd {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ProblemEmbedding {
  std::string id;
  RowMatrixF matrix;  // seq_len x dim
  std::vector<std::string> tokens;
  std::vector<std::int64_t> token_ids;
  std::vector<bool> special;  // optional: true for tokens excluded from losses

  friend bool operator==(const ProblemEmbedding&, const ProblemEmbedding&) = default;
};

// Token vectors for a corpus, one matrix per problem.
struct EmbeddingSet {
  std::uint32_t dim = 0;
  std::int64_t vocab_size = 0;
  std::string source_tag;
  std::vector<ProblemEmbedding> problems;

  // Throws Validation on a column-count mismatch or duplicate ids.
  void validate() const;
  const ProblemEmbedding* find(std::string_view id) const;
  std::size_t token_count() const;
  // All token rows stacked in problem order.
  Eigen::MatrixXd stacked() const;
  // Row mean per problem.
  Eigen::MatrixXd pooled() const;

  friend bool operator==(const EmbeddingSet&, const EmbeddingSet&) = default;
};

struct Emb1Header {
  std::uint32_t version = 1;
  std::uint32_t dim = 0;
  std::uint32_t problem_count = 0;
  std::vector<std::uint32_t> seq_lens;
};

inline constexpr std::size_t kEmb1HeaderBytes = 16;

// EMB1 body: magic "EMB1", u32 version=1, u32 dim, u32 problem_count, then per
// problem u32 seq_len + seq_len*dim f32, little-endian.
std::string encode_emb1(const EmbeddingSet& set);
// Decodes the body only; metadata fields are left default.
EmbeddingSet decode_emb1(std::string_view bytes);
Emb1Header read_emb1_header(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& emb_path);
std::string encode_sidecar(const EmbeddingSet& set);
void apply_sidecar(EmbeddingSet& set, std::string_view sidecar_json);

// Binary file plus "<basename>.meta.json" sidecar.
EmbeddingSet read_embeddings(const std::filesystem::path& path);
void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);

// Every record id must resolve to a problem with seq_len == token count.
// Returns the problem index per record; throws Alignment otherwise.
std::vector<std::size_t> align(const EmbeddingSet& set, const std::vector<MwpRecord>& records);

}  // namespace mwpkd
