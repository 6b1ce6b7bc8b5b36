#include <gtest/gtest.h>

#include <random>

#include "decoysh/metrics/hallucination.hpp"
#include "decoysh/metrics/report.hpp"
#include "decoysh/metrics/similarity.hpp"
#include "decoysh/metrics/text.hpp"
#include "oracles.hpp"

namespace dm = decoysh::metrics;

TEST(ExactMatch, NormalizesTrailingWhitespace) {
  EXPECT_TRUE(dm::exact_match("abc", "abc"));
  EXPECT_TRUE(dm::exact_match("abc\n", "abc"));
  EXPECT_TRUE(dm::exact_match("a  \nb\t\r\n\n\n", "a\nb"));
  EXPECT_FALSE(dm::exact_match("abc", "abd"));
  EXPECT_FALSE(dm::exact_match(" abc", "abc"));
}

TEST(Tokenize, WordsAndPunctuation) {
  EXPECT_EQ(dm::tokenize("total 4"), (std::vector<std::string>{"total", "4"}));
  EXPECT_EQ(dm::tokenize("drwxr-xr-x."),
            (std::vector<std::string>{"drwxr", "-", "xr", "-", "x", "."}));
  EXPECT_TRUE(dm::tokenize("").empty());
  EXPECT_EQ(dm::tokenize("Caf\xC3\x89 OK"), (std::vector<std::string>{"caf\xC3\xA9", "ok"}));
}

TEST(TokenAccuracy, BoundaryRules) {
  EXPECT_DOUBLE_EQ(dm::token_accuracy("ls -la", "ls -la"), 1.0);
  EXPECT_DOUBLE_EQ(dm::token_accuracy("a b c", "a b d"), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(dm::token_accuracy("", "x"), 0.0);
  EXPECT_DOUBLE_EQ(dm::token_accuracy("", ""), 1.0);
  // multiset: one "a" in expected only matches once
  EXPECT_DOUBLE_EQ(dm::token_accuracy("a b", "a a"), 0.5);
}

TEST(CosineTfidf, NamedCases) {
  EXPECT_DOUBLE_EQ(dm::cosine_tfidf("hello world", "hello world"), 1.0);
  EXPECT_DOUBLE_EQ(dm::cosine_tfidf("alpha beta", "gamma delta"), 0.0);
  EXPECT_DOUBLE_EQ(dm::cosine_tfidf("a b c", "a b c"), 0.0);  // no term of length >= 2
  // oracle: both terms shared, idf = 1, vectors (2,1) and (1,1): 3/sqrt(10)
  EXPECT_NEAR(dm::cosine_tfidf("hello world hello", "hello world"), 0.9486832980505138, 1e-12);
  EXPECT_NEAR(oracle::cosine_tfidf("hello world hello", "hello world"), 0.9486832980505138, 1e-12);
}

TEST(JaroWinkler, NamedCases) {
  EXPECT_NEAR(dm::jaro_winkler("MARTHA", "MARHTA"), 0.9611, 1e-4);
  EXPECT_DOUBLE_EQ(dm::jaro_winkler("abc", "abc"), 1.0);
  EXPECT_DOUBLE_EQ(dm::jaro_winkler("abc", "xyz"), 0.0);
  EXPECT_DOUBLE_EQ(dm::jaro_winkler("", ""), 1.0);
  EXPECT_DOUBLE_EQ(dm::jaro_winkler("", "a"), 0.0);
  EXPECT_NEAR(dm::jaro_winkler("DIXON", "DICKSONX"), 0.8133, 1e-4);
}

TEST(Levenshtein, NamedCases) {
  EXPECT_EQ(dm::levenshtein_distance("kitten", "sitting"), 3u);
  EXPECT_NEAR(dm::levenshtein_ratio("kitten", "sitting"), 1.0 - 3.0 / 7.0, 1e-12);
  EXPECT_DOUBLE_EQ(dm::levenshtein_ratio("same", "same"), 1.0);
  EXPECT_DOUBLE_EQ(dm::levenshtein_ratio("", "abc"), 0.0);
  EXPECT_DOUBLE_EQ(dm::levenshtein_ratio("", ""), 1.0);
  // code points, not bytes
  EXPECT_EQ(dm::levenshtein_distance("caf\xC3\xA9", "cafe"), 1u);
}

TEST(SequenceRatio, NamedCases) {
  EXPECT_DOUBLE_EQ(dm::sequence_ratio("abcd", "bcde"), 0.75);
  EXPECT_DOUBLE_EQ(dm::sequence_ratio("xyz", "xyz"), 1.0);
  EXPECT_DOUBLE_EQ(dm::sequence_ratio("abc", ""), 0.0);
  EXPECT_DOUBLE_EQ(dm::sequence_ratio("", ""), 1.0);
}

TEST(Bleu4, NamedCases) {
  EXPECT_DOUBLE_EQ(dm::bleu4("the quick brown fox", "the quick brown fox"), 1.0);
  EXPECT_DOUBLE_EQ(dm::bleu4("anything", ""), 0.0);
  // p = (1, 3/4, 1/3, 0.1/2), BP = exp(1 - 6/5)
  EXPECT_NEAR(dm::bleu4("the cat sat on the mat", "the cat on the mat"), 0.27375912675347264,
              1e-12);
  EXPECT_NEAR(oracle::bleu4("the cat sat on the mat", "the cat on the mat"), 0.27375912675347264,
              1e-12);
}

TEST(SuccessFlag, StrictThreshold) {
  EXPECT_TRUE(dm::success_flag(0.5, 0.0));
  EXPECT_FALSE(dm::success_flag(0.4, 0.4));
  EXPECT_TRUE(dm::success_flag(0.0, 0.41));
  dm::MetricReport r;
  r.cosine_tfidf = 0.41;
  r.bleu4 = 0.0;
  r.exact = false;
  EXPECT_TRUE(dm::success_flag(r));
}

TEST(Hallucination, Rules) {
  EXPECT_TRUE(dm::hallucination_flag("ls", "ls\ntotal 0"));
  EXPECT_FALSE(dm::hallucination_flag("echo hi", "hi"));
  EXPECT_FALSE(dm::hallucination_flag("echo hi", "echo hi"));
  EXPECT_FALSE(dm::hallucination_flag("df -h", "Filesystem Size Used Avail Use% Mounted on"));
  EXPECT_TRUE(dm::hallucination_flag("df -h", "$ df -h\nFilesystem Size"));
  EXPECT_FALSE(dm::hallucination_flag("ls", "tools\nfalls"));
  EXPECT_FALSE(dm::hallucination_flag("id", "uid=0(root) gid=0(root) groups=0(root)"));
  EXPECT_TRUE(dm::hallucination_flag("uptime", "As an AI language model I cannot run commands"));
  EXPECT_TRUE(dm::hallucination_flag("uptime", "I\xE2\x80\x99m sorry, but no."));
  EXPECT_TRUE(dm::hallucination_flag("uptime", "```\nup 3 days\n```\n```\nmore\n```"));
  EXPECT_FALSE(dm::hallucination_flag("uptime", "```bash\n 10:00:00 up 3 days\n```"));
}

TEST(StripFences, OuterPairOnly) {
  EXPECT_EQ(dm::strip_fences("```\ntotal 0\n```"), "total 0");
  EXPECT_EQ(dm::strip_fences("\n\n```text\na\nb\n```\n\n"), "a\nb");
  EXPECT_EQ(dm::strip_fences("plain\r\noutput\r\n"), "plain\noutput");
  EXPECT_EQ(dm::strip_fences(""), "");
}

TEST(Utf8, InvalidBytesBecomeReplacement) {
  EXPECT_EQ(dm::decode_utf8("a\xFF" "b"), (std::u32string{U'a', 0xFFFD, U'b'}));
  EXPECT_EQ(dm::decode_utf8("\xC0\xAF"), (std::u32string{0xFFFD}));  // overlong
  EXPECT_EQ(dm::decode_utf8("\xE2\x82"), (std::u32string{0xFFFD}));  // truncated
}

class OracleAgreement : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(OracleAgreement, RandomPairs) {
  oracle::PairCorpus corpus(GetParam());
  for (int i = 0; i < 50; ++i) {
    const auto [a, b] = corpus.next();
    SCOPED_TRACE(::testing::Message() << "a=[" << a << "] b=[" << b << "]");
    EXPECT_NEAR(dm::token_accuracy(a, b), oracle::token_accuracy(a, b), 1e-9);
    EXPECT_NEAR(dm::cosine_tfidf(a, b), oracle::cosine_tfidf(a, b), 1e-9);
    EXPECT_NEAR(dm::jaro_winkler(a, b), oracle::jaro_winkler(a, b), 1e-9);
    EXPECT_NEAR(dm::levenshtein_ratio(a, b), oracle::levenshtein_ratio(a, b), 1e-9);
    EXPECT_NEAR(dm::sequence_ratio(a, b), oracle::sequence_ratio(a, b), 1e-9);
    EXPECT_NEAR(dm::bleu4(a, b), oracle::bleu4(a, b), 1e-6);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, OracleAgreement, ::testing::Values(1u, 7u, 42u, 1234u));

TEST(MetricProperties, SymmetryAndRangeOnRandomBytes) {
  std::mt19937_64 gen(99);
  std::uniform_int_distribution<int> len(0, 40);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int i = 0; i < 300; ++i) {
    std::string a(static_cast<std::size_t>(len(gen)), '\0');
    std::string b(static_cast<std::size_t>(len(gen)), '\0');
    for (auto& c : a) c = static_cast<char>(byte(gen));
    for (auto& c : b) c = static_cast<char>(i % 3 == 0 ? 'a' + byte(gen) % 3 : byte(gen));
    for (double v : {dm::token_accuracy(a, b), dm::cosine_tfidf(a, b), dm::jaro_winkler(a, b),
                     dm::levenshtein_ratio(a, b), dm::sequence_ratio(a, b), dm::bleu4(a, b)}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_NEAR(dm::cosine_tfidf(a, b), dm::cosine_tfidf(b, a), 1e-12);
    EXPECT_NEAR(dm::jaro_winkler(a, b), dm::jaro_winkler(b, a), 1e-12);
    EXPECT_DOUBLE_EQ(dm::levenshtein_ratio(a, b), dm::levenshtein_ratio(b, a));
  }
}

TEST(SequenceRatio, TieBreakingMakesItOrderDependent) {
  // "ab" vs "ba": both single characters tie; the block earliest in the first
  // argument wins, so the two orders recurse differently only on longer input.
  EXPECT_DOUBLE_EQ(dm::sequence_ratio("ab", "ba"), 0.5);
  EXPECT_DOUBLE_EQ(oracle::sequence_ratio("abxcd", "cdxab"), dm::sequence_ratio("abxcd", "cdxab"));
  EXPECT_DOUBLE_EQ(oracle::sequence_ratio("cdxab", "abxcd"), dm::sequence_ratio("cdxab", "abxcd"));
}

TEST(MetricProperties, IdentityOnIdenticalInputs) {
  oracle::PairCorpus corpus(5);
  for (int i = 0; i < 100; ++i) {
    const std::string a = corpus.next().first + " zz";
    const auto r = dm::score("cmd", a, a);
    EXPECT_TRUE(r.exact);
    EXPECT_DOUBLE_EQ(r.token_accuracy, 1.0);
    EXPECT_DOUBLE_EQ(r.cosine_tfidf, 1.0);
    EXPECT_DOUBLE_EQ(r.jaro_winkler, 1.0);
    EXPECT_DOUBLE_EQ(r.levenshtein_ratio, 1.0);
    EXPECT_DOUBLE_EQ(r.sequence_ratio, 1.0);
    if (dm::tokenize(a).size() >= 4) EXPECT_DOUBLE_EQ(r.bleu4, 1.0);
  }
}
