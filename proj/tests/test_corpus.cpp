#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "mwpkd/binary_io.hpp"
#include "mwpkd/corpus.hpp"
#include "mwpkd/embeddings.hpp"
#include "mwpkd/error.hpp"
#include "mwpkd/synth.hpp"
#include "test_util.hpp"

namespace mwpkd {
namespace {

const char* kGoodLine =
    R"({"id":"p1","text":"3 apples and 5 apples","tokens":["3","apples","and","5"],)"
    R"("token_ids":[10,11,12,13],"quantity_indices":[0,3],"quantity_values":[3,5],)"
    R"("pos_tags":["NUM","NOUN","CONJ","NUM"],"equation_prefix":["+","N0","N1"],)"
    R"("answer":8,"relation_label":0})";

TEST(Dataset, LoadsConsistentRecord) {
  const auto records = parse_dataset(kGoodLine);
  ASSERT_EQ(records.size(), 1u);
  EXPECT_EQ(records[0].id, "p1");
  EXPECT_DOUBLE_EQ(records[0].answer, 8.0);
  EXPECT_EQ(records[0].quantity_values[1], (Rational{5, 1}));
}

TEST(Dataset, MissingFieldIsSchemaErrorNamingField) {
  std::string line = kGoodLine;
  const auto pos = line.find(R"("tokens":["3","apples","and","5"],)");
  line.erase(pos, std::string(R"("tokens":["3","apples","and","5"],)").size());
  try {
    parse_dataset(line);
    FAIL() << "expected SchemaError";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Schema);
    EXPECT_NE(std::string(e.what()).find("tokens"), std::string::npos);
  }
}

TEST(Dataset, ExtraFieldIsSchemaError) {
  std::string line = kGoodLine;
  line.insert(1, R"("bogus":1,)");
  EXPECT_THROW_KIND(parse_dataset(line), ErrorKind::Schema);
}

TEST(Dataset, QuantityIndexOutOfRangeIsValidationError) {
  std::string line = kGoodLine;
  line.replace(line.find("[0,3]"), 5, "[9,3]");
  EXPECT_THROW_KIND(parse_dataset(line), ErrorKind::Validation);
}

TEST(Dataset, WrongAnswerIsValidationError) {
  std::string line = kGoodLine;
  line.replace(line.find("\"answer\":8"), 10, "\"answer\":9");
  EXPECT_THROW_KIND(parse_dataset(line), ErrorKind::Validation);
}

TEST(Dataset, MalformedPrefixIsValidationError) {
  std::string line = kGoodLine;
  line.replace(line.find(R"(["+","N0","N1"])"), 15, R"(["+","N0","N1","N0"])");
  EXPECT_THROW_KIND(parse_dataset(line), ErrorKind::Validation);
}

TEST(Dataset, RationalSurfaceForms) {
  EXPECT_EQ(Rational::parse("2.5"), (Rational{5, 2}));
  EXPECT_EQ(Rational::parse("-1/4"), (Rational{-1, 4}));
  EXPECT_EQ(Rational::parse("6/4"), (Rational{3, 2}));
  EXPECT_EQ(Rational::from_double(0.25), (Rational{1, 4}));
  EXPECT_THROW_KIND(Rational::parse("x"), ErrorKind::Schema);
}

TEST(Dataset, RoundTripOfSyntheticRecords) {
  const auto records = synth_generate(60, 3, uniform_mix());
  EXPECT_EQ(parse_dataset(serialize_dataset(records)), records);
}

TEST(Dataset, SplitHonoursFractions) {
  const auto records = synth_generate(10, 1, uniform_mix());
  const auto s = split_dataset(records, {0.6, 0.2, 0.2});
  EXPECT_EQ(s.train.size(), 6u);
  EXPECT_EQ(s.dev.size(), 2u);
  EXPECT_EQ(s.test.size(), 2u);
  EXPECT_THROW_KIND(split_dataset(records, {0.5, 0.2, 0.2}), ErrorKind::Param);
}

TEST(Synth, DeterministicForFixedSeed) {
  EXPECT_EQ(synth_generate(10, 7, uniform_mix()), synth_generate(10, 7, uniform_mix()));
  EXPECT_NE(synth_generate(10, 7, uniform_mix()), synth_generate(10, 8, uniform_mix()));
}

TEST(Synth, ZeroCountIsEmpty) { EXPECT_TRUE(synth_generate(0, 1, uniform_mix()).empty()); }

TEST(Synth, ParameterErrors) {
  EXPECT_THROW_KIND(synth_generate(-1, 1, uniform_mix()), ErrorKind::Param);
  EXPECT_THROW_KIND(synth_generate(5, 1, {}), ErrorKind::Param);
  EXPECT_THROW_KIND(synth_generate(5, 1, std::vector<double>(uniform_mix().size(), 0.0)),
                    ErrorKind::Param);
}

// Answers are checked against a direct evaluation of the stored prefix.
TEST(Synth, EveryRecordValidatesAndEvaluatesToItsAnswer) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    for (const auto& r : synth_generate(200, seed, uniform_mix())) {
      EXPECT_NO_THROW(validate_record(r)) << r.id;
      EXPECT_NEAR(eval_expr(r.equation(), r.quantity_doubles()), r.answer,
                  1e-9 * std::max(1.0, std::abs(r.answer)));
      EXPECT_EQ(r.tokens[r.quantity_indices[0]].empty(), false);
    }
  }
}

TEST(Synth, EachTemplateCoversAllTwelveTags) {
  auto mix = uniform_mix();
  for (std::size_t t = 0; t < mix.size(); ++t) {
    std::vector<double> one(mix.size(), 0.0);
    one[t] = 1.0;
    const auto r = synth_generate(1, 11, one).front();
    std::set<PosTag> tags(r.pos_tags.begin(), r.pos_tags.end());
    EXPECT_EQ(tags.size(), static_cast<std::size_t>(kPosTagCount)) << synth_templates()[t].name;
  }
}

TEST(Synth, FiftyRecordSamplesCoverOperatorsLabelsAndSurfaceForms) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto records = synth_generate(50, seed, uniform_mix());
    std::set<std::string> ops;
    std::set<int> labels, quantity_counts, op_counts;
    bool decimal = false, word = false, integer = false;
    for (const auto& r : records) {
      int n_ops = 0;
      for (const auto& t : r.equation_prefix)
        if (is_operator_token(t)) {
          ops.insert(t);
          ++n_ops;
        }
      op_counts.insert(n_ops);
      quantity_counts.insert(static_cast<int>(r.quantity_indices.size()));
      labels.insert(r.relation_label);
      for (int qi : r.quantity_indices) {
        const auto& s = r.tokens[qi];
        if (s.find('.') != std::string::npos) decimal = true;
        else if (std::isalpha(static_cast<unsigned char>(s[0]))) word = true;
        else integer = true;
      }
    }
    EXPECT_EQ(ops, (std::set<std::string>{"+", "-", "*", "/"})) << seed;
    EXPECT_EQ(labels, (std::set<int>{0, 1})) << seed;
    EXPECT_EQ(*quantity_counts.begin(), 2);
    EXPECT_EQ(*quantity_counts.rbegin(), 4);
    EXPECT_EQ(*op_counts.begin(), 1);
    EXPECT_EQ(*op_counts.rbegin(), 3);
    EXPECT_TRUE(decimal && word && integer) << seed;
  }
}

TEST(Synth, RelationLabelTracksDescriptiveQuantities) {
  for (const auto& r : synth_generate(300, 5, uniform_mix())) {
    bool descriptive = false;
    for (int qi : r.quantity_indices)
      for (const auto& d : descriptive_lexicon())
        if (r.tokens[qi] == d.word) descriptive = true;
    EXPECT_EQ(descriptive, r.relation_label == 1) << r.text;
  }
}

TEST(Synth, TokenIdsIndexTheVocabulary) {
  const auto& vocab = synth_vocab();
  for (const auto& r : synth_generate(100, 9, uniform_mix()))
    for (std::size_t i = 0; i < r.tokens.size(); ++i) {
      ASSERT_LT(r.token_ids[i], static_cast<std::int64_t>(vocab.size()));
      EXPECT_EQ(vocab[r.token_ids[i]], r.tokens[i]);
    }
}

EmbeddingSet random_set(std::mt19937_64& gen) {
  std::uniform_int_distribution<int> dim_d(1, 9), count_d(0, 5), len_d(0, 7);
  std::uniform_int_distribution<std::uint32_t> bits;
  EmbeddingSet s;
  s.dim = static_cast<std::uint32_t>(dim_d(gen));
  s.vocab_size = 50;
  s.source_tag = "teacher-base";
  const int count = count_d(gen);
  for (int p = 0; p < count; ++p) {
    ProblemEmbedding e;
    e.id = "q" + std::to_string(p);
    const int len = len_d(gen);
    e.matrix.resize(len, s.dim);
    for (Eigen::Index i = 0; i < e.matrix.size(); ++i) {
      // arbitrary bit patterns, NaN payloads included
      const std::uint32_t b = bits(gen);
      std::memcpy(e.matrix.data() + i, &b, 4);
    }
    for (int t = 0; t < len; ++t) {
      e.tokens.push_back("t" + std::to_string(t));
      e.token_ids.push_back(t);
    }
    s.problems.push_back(std::move(e));
  }
  return s;
}

bool bit_identical(const EmbeddingSet& a, const EmbeddingSet& b) {
  if (a.dim != b.dim || a.vocab_size != b.vocab_size || a.source_tag != b.source_tag ||
      a.problems.size() != b.problems.size())
    return false;
  for (std::size_t i = 0; i < a.problems.size(); ++i) {
    const auto& x = a.problems[i];
    const auto& y = b.problems[i];
    if (x.id != y.id || x.tokens != y.tokens || x.token_ids != y.token_ids ||
        x.matrix.rows() != y.matrix.rows())
      return false;
    if (std::memcmp(x.matrix.data(), y.matrix.data(), x.matrix.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

TEST(Embeddings, RoundTripIsBitExactOnRandomSets) {
  TempDir dir;
  std::mt19937_64 gen(42);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_set(gen);
    const auto path = dir.path() / "set.emb";
    write_embeddings(s, path);
    EXPECT_TRUE(bit_identical(s, read_embeddings(path))) << trial;
  }
}

TEST(Embeddings, FileSizeMatchesFieldLayout) {
  EmbeddingSet s;
  s.dim = 2;
  s.vocab_size = 4;
  s.source_tag = "x";
  ProblemEmbedding p;
  p.id = "a";
  p.matrix.resize(3, 2);
  p.matrix << 1, 2, 3, 4, 5, 6;
  p.tokens = {"a", "b", "c"};
  p.token_ids = {1, 2, 3};
  s.problems.push_back(p);
  EXPECT_EQ(encode_emb1(s).size(), 44u);
}

TEST(Embeddings, TruncationReportsOffset) {
  EmbeddingSet s;
  s.dim = 2;
  s.vocab_size = 4;
  ProblemEmbedding p;
  p.id = "a";
  p.matrix = RowMatrixF::Ones(3, 2);
  s.problems.push_back(p);
  const auto bytes = encode_emb1(s);
  try {
    decode_emb1(std::string_view(bytes).substr(0, 30));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
    EXPECT_NE(std::string(e.what()).find("byte offset 20"), std::string::npos) << e.what();
  }
}

TEST(Embeddings, BadMagicAndCountMismatch) {
  EXPECT_THROW_KIND(decode_emb1("EMB2\x01\0\0\0"), ErrorKind::Format);
  std::string bytes("EMB1", 4);
  ByteWriter w;
  w.u32(1);
  w.u32(2);
  w.u32(0);
  w.u32(99);  // trailing data: count says zero problems
  bytes += w.data();
  EXPECT_THROW_KIND(decode_emb1(bytes), ErrorKind::Format);
}

TEST(Embeddings, AlignmentAgainstDataset) {
  const auto records = synth_generate(3, 4, uniform_mix());
  EmbeddingSet s;
  s.dim = 2;
  s.vocab_size = 10;
  for (const auto& r : records) {
    ProblemEmbedding p;
    p.id = r.id;
    p.matrix = RowMatrixF::Zero(static_cast<Eigen::Index>(r.tokens.size()), 2);
    s.problems.push_back(p);
  }
  EXPECT_EQ(align(s, records), (std::vector<std::size_t>{0, 1, 2}));
  s.problems[1].matrix = RowMatrixF::Zero(1, 2);
  EXPECT_THROW_KIND(align(s, records), ErrorKind::Alignment);
}

}  // namespace
}  // namespace mwpkd
