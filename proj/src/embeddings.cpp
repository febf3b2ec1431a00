#include "mwpkd/embeddings.hpp"

#include <cstring>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "mwpkd/binary_io.hpp"
#include "mwpkd/error.hpp"

namespace mwpkd {

using nlohmann::json;

void EmbeddingSet::validate() const {
  if (dim == 0) fail(ErrorKind::Validation, "embedding dim must be positive");
  std::unordered_set<std::string> seen;
  for (const auto& p : problems) {
    if (p.matrix.cols() != static_cast<Eigen::Index>(dim)) {
      fail(ErrorKind::Validation, "problem '" + p.id + "' has " + std::to_string(p.matrix.cols()) +
                                      " columns, expected " + std::to_string(dim));
    }
    if (!seen.insert(p.id).second) fail(ErrorKind::Validation, "duplicate problem id '" + p.id + "'");
    const auto n = static_cast<std::size_t>(p.matrix.rows());
    if ((!p.tokens.empty() && p.tokens.size() != n) ||
        (!p.token_ids.empty() && p.token_ids.size() != n) ||
        (!p.special.empty() && p.special.size() != n)) {
      fail(ErrorKind::Validation, "problem '" + p.id + "' token metadata does not match seq_len");
    }
  }
}

const ProblemEmbedding* EmbeddingSet::find(std::string_view id) const {
  for (const auto& p : problems)
    if (p.id == id) return &p;
  return nullptr;
}

std::size_t EmbeddingSet::token_count() const {
  std::size_t n = 0;
  for (const auto& p : problems) n += static_cast<std::size_t>(p.matrix.rows());
  return n;
}

Eigen::MatrixXd EmbeddingSet::stacked() const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(token_count()), dim);
  Eigen::Index row = 0;
  for (const auto& p : problems) {
    out.middleRows(row, p.matrix.rows()) = p.matrix.cast<double>();
    row += p.matrix.rows();
  }
  return out;
}

Eigen::MatrixXd EmbeddingSet::pooled() const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(problems.size()), dim);
  for (std::size_t i = 0; i < problems.size(); ++i) {
    if (problems[i].matrix.rows() > 0) {
      out.row(static_cast<Eigen::Index>(i)) = problems[i].matrix.cast<double>().colwise().mean();
    }
  }
  return out;
}

std::string encode_emb1(const EmbeddingSet& set) {
  set.validate();
  ByteWriter w;
  w.bytes("EMB1");
  w.u32(1);
  w.u32(set.dim);
  w.u32(static_cast<std::uint32_t>(set.problems.size()));
  for (const auto& p : set.problems) {
    w.u32(static_cast<std::uint32_t>(p.matrix.rows()));
    // RowMatrixF is row-major, so its storage is already the on-disk order.
    w.bytes(std::string_view(reinterpret_cast<const char*>(p.matrix.data()),
                             static_cast<std::size_t>(p.matrix.size()) * sizeof(float)));
  }
  return w.data();
}

namespace {

void read_magic_and_version(ByteReader& r) {
  if (r.bytes(4) != "EMB1") {
    fail(ErrorKind::Format, "bad magic (expected EMB1) at byte offset 0");
  }
  const auto version_offset = r.offset();
  const auto version = r.u32();
  if (version != 1) {
    fail(ErrorKind::Format, "unsupported EMB1 version " + std::to_string(version) +
                                " at byte offset " + std::to_string(version_offset));
  }
}

}  // namespace

EmbeddingSet decode_emb1(std::string_view bytes) {
  ByteReader r(bytes);
  read_magic_and_version(r);
  EmbeddingSet set;
  set.dim = r.u32();
  if (set.dim == 0) r.fail_at("dim must be positive");
  const auto count = r.u32();
  set.problems.reserve(std::min<std::size_t>(count, r.remaining() / 4 + 1));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto seq_len = r.u32();
    const std::uint64_t n_bytes = std::uint64_t{seq_len} * set.dim * 4;
    if (n_bytes > r.remaining()) {
      r.fail_at("truncated matrix for problem " + std::to_string(i) + " (need " +
                std::to_string(n_bytes) + " bytes, have " + std::to_string(r.remaining()) + ")");
    }
    ProblemEmbedding p;
    p.id = "p" + std::to_string(i);
    p.matrix.resize(seq_len, set.dim);
    const auto payload = r.bytes(static_cast<std::size_t>(n_bytes));
    std::memcpy(p.matrix.data(), payload.data(), payload.size());
    set.problems.push_back(std::move(p));
  }
  if (!r.at_end()) {
    r.fail_at("problem count mismatch: " + std::to_string(r.remaining()) + " trailing bytes");
  }
  return set;
}

Emb1Header read_emb1_header(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  ByteReader r(bytes);
  read_magic_and_version(r);
  Emb1Header h;
  h.dim = r.u32();
  h.problem_count = r.u32();
  for (std::uint32_t i = 0; i < h.problem_count; ++i) {
    const auto seq_len = r.u32();
    const std::uint64_t n_bytes = std::uint64_t{seq_len} * h.dim * 4;
    if (n_bytes > r.remaining()) r.fail_at("truncated matrix for problem " + std::to_string(i));
    r.bytes(static_cast<std::size_t>(n_bytes));
    h.seq_lens.push_back(seq_len);
  }
  if (!r.at_end()) r.fail_at("problem count mismatch");
  return h;
}

std::filesystem::path sidecar_path(const std::filesystem::path& emb_path) {
  auto p = emb_path;
  p.replace_extension(".meta.json");
  return p;
}

std::string encode_sidecar(const EmbeddingSet& set) {
  nlohmann::ordered_json j;
  j["vocab_size"] = set.vocab_size;
  j["source_tag"] = set.source_tag;
  auto problems = nlohmann::ordered_json::array();
  for (const auto& p : set.problems) {
    nlohmann::ordered_json e;
    e["id"] = p.id;
    e["tokens"] = p.tokens;
    e["token_ids"] = p.token_ids;
    if (!p.special.empty()) {
      std::vector<int> flags(p.special.begin(), p.special.end());
      e["special"] = flags;
    }
    problems.push_back(std::move(e));
  }
  j["problems"] = std::move(problems);
  return j.dump(1) + "\n";
}

void apply_sidecar(EmbeddingSet& set, std::string_view sidecar_json) {
  json j;
  try {
    j = json::parse(sidecar_json);
    set.vocab_size = j.at("vocab_size").get<std::int64_t>();
    set.source_tag = j.at("source_tag").get<std::string>();
    const auto& problems = j.at("problems");
    if (!problems.is_array() || problems.size() != set.problems.size()) {
      fail(ErrorKind::Format, "sidecar lists " + std::to_string(problems.size()) +
                                  " problems but the embedding file has " +
                                  std::to_string(set.problems.size()));
    }
    for (std::size_t i = 0; i < problems.size(); ++i) {
      auto& p = set.problems[i];
      const auto& e = problems[i];
      p.id = e.at("id").get<std::string>();
      p.tokens = e.at("tokens").get<std::vector<std::string>>();
      p.token_ids = e.at("token_ids").get<std::vector<std::int64_t>>();
      if (auto it = e.find("special"); it != e.end()) {
        for (const auto& f : *it) p.special.push_back(f.get<int>() != 0);
      }
      const auto n = static_cast<std::size_t>(p.matrix.rows());
      if (p.tokens.size() != n || p.token_ids.size() != n) {
        fail(ErrorKind::Format, "sidecar token count for '" + p.id + "' is " +
                                    std::to_string(p.tokens.size()) + " but seq_len is " +
                                    std::to_string(n));
      }
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::Format, std::string("bad sidecar: ") + e.what());
  }
  if (set.vocab_size <= 0) fail(ErrorKind::Format, "sidecar vocab_size must be positive");
  set.validate();
}

EmbeddingSet read_embeddings(const std::filesystem::path& path) {
  auto set = decode_emb1(read_file(path));
  const auto meta = sidecar_path(path);
  if (!std::filesystem::exists(meta)) {
    fail(ErrorKind::Format, "missing sidecar " + meta.string());
  }
  apply_sidecar(set, read_file(meta));
  return set;
}

void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& path) {
  if (set.vocab_size <= 0) fail(ErrorKind::Validation, "vocab_size must be positive");
  const auto body = encode_emb1(set);
  const auto meta = encode_sidecar(set);
  atomic_write(sidecar_path(path), meta);
  atomic_write(path, body);
}

std::vector<std::size_t> align(const EmbeddingSet& set, const std::vector<MwpRecord>& records) {
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < set.problems.size(); ++i) index.emplace(set.problems[i].id, i);
  std::vector<std::size_t> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = index.find(r.id);
    if (it == index.end()) fail(ErrorKind::Alignment, "no embedding for problem '" + r.id + "'");
    const auto rows = static_cast<std::size_t>(set.problems[it->second].matrix.rows());
    if (rows != r.tokens.size()) {
      fail(ErrorKind::Alignment, "problem '" + r.id + "' has " + std::to_string(r.tokens.size()) +
                                     " tokens but " + std::to_string(rows) + " embedding rows");
    }
    out.push_back(it->second);
  }
  return out;
}

}  // namespace mwpkd
