#include <regex>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "npd/detail/random.hpp"
#include "npd/ingest.hpp"
#include "npd/pipeline.hpp"

using namespace npd;

namespace {

std::unordered_set<std::string> shipped_stopwords() {
  return parse_stopwords(pipeline::read_file(std::string(NPD_SOURCE_DIR) + "/data/stopwords.txt"));
}

const char* kDataset =
    "tweet_id,airline_sentiment,negativereason,airline,text\n"
    "1,negative,Late Flight,United,\"@united my flight was late, again!\"\n"
    "2,neutral,,Delta,what time does boarding start? http://t.co/x\n"
    "3,Positive,,Virgin America,\"Great crew, \"\"thanks\"\"!\"\n";

}  // namespace

TEST(ParseDataset, ReadsRecordsAndOptionalColumns) {
  const auto records = parse_dataset(kDataset);
  ASSERT_EQ(records.size(), 3u);
  EXPECT_EQ(records[0].tweet_id, "1");
  EXPECT_EQ(records[0].sentiment, Sentiment::Negative);
  EXPECT_EQ(records[0].negative_reason, "Late Flight");
  EXPECT_EQ(records[1].negative_reason, std::nullopt);
  EXPECT_EQ(records[2].sentiment, Sentiment::Positive);
  EXPECT_EQ(records[2].text, "Great crew, \"thanks\"!");
  EXPECT_EQ(records[2].airline, "Virgin America");
}

TEST(ParseDataset, MissingColumnNamesTheColumn) {
  try {
    parse_dataset("tweet_id,text\n1,hello\n");
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.column(), "airline_sentiment");
  }
}

TEST(ParseDataset, BadSentimentReportsRow) {
  try {
    parse_dataset("tweet_id,airline_sentiment,text\n1,negative,a\n2,angry,b\n");
    FAIL();
  } catch (const RowError& e) {
    EXPECT_EQ(e.row(), 1u);
  }
}

TEST(ParseDataset, DuplicateIdsAreRejected) {
  EXPECT_THROW(parse_dataset("tweet_id,airline_sentiment,text\n1,negative,a\n1,neutral,b\n"), DuplicateIdError);
}

TEST(ParseDataset, ReasonOnPositiveTweetIsRejected) {
  EXPECT_THROW(parse_dataset("tweet_id,airline_sentiment,negativereason,text\n1,positive,Late Flight,a\n"), RowError);
}

TEST(ParseDataset, SerializeRoundTripsRandomRecords) {
  npd::detail::Rng rng(5);
  const std::string alphabet = "abc XYZ,\"\n@#!09";
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<TweetRecord> records;
    const auto n = 1 + rng.index(10);
    for (std::size_t i = 0; i < n; ++i) {
      TweetRecord r;
      r.tweet_id = std::to_string(trial * 100 + static_cast<int>(i));
      r.sentiment = static_cast<Sentiment>(rng.index(3));
      for (std::size_t k = rng.index(20); k > 0; --k) r.text.push_back(alphabet[rng.index(alphabet.size())]);
      if (r.sentiment == Sentiment::Negative && rng.index(2)) r.negative_reason = "Bad Flight";
      r.airline = rng.index(2) ? "United" : "";
      records.push_back(r);
    }
    ASSERT_EQ(parse_dataset(serialize_dataset(records)), records) << "trial " << trial;
  }
}

TEST(OpinionLabels, HeaderIsOptional) {
  const auto records = parse_dataset(kDataset);
  EXPECT_EQ(parse_opinion_labels("tweet_id,opinion\n1,yes\n2,no\n", records).size(), 2u);
  const auto bare = parse_opinion_labels("1,YES\n3,no\n", records);
  ASSERT_EQ(bare.size(), 2u);
  EXPECT_TRUE(bare[0].has_opinion);
  EXPECT_FALSE(bare[1].has_opinion);
}

TEST(OpinionLabels, Errors) {
  const auto records = parse_dataset(kDataset);
  EXPECT_THROW(parse_opinion_labels("id,opinion\n1,maybe\n", records), ValueError);
  EXPECT_THROW(parse_opinion_labels("id,opinion\n99,yes\n", records), UnknownIdError);
  EXPECT_THROW(parse_opinion_labels("id,opinion\n1,yes\n1,no\n", records), DuplicateIdError);
}

TEST(Preprocess, DropsMentionsLinksPunctuationAndStopwords) {
  const auto stop = shipped_stopwords();
  EXPECT_EQ(preprocess("@united my flight was LATE, again!!", stop), (std::vector<std::string>{"flight", "late"}));
  EXPECT_EQ(preprocess("Check www.example.com and https://t.co/abc now", stop),
            (std::vector<std::string>{"check"}));
  EXPECT_EQ(preprocess("gate A12 -> delayed 45min :(", stop),
            (std::vector<std::string>{"gate", "a12", "delayed", "45min"}));
  EXPECT_TRUE(preprocess("", stop).empty());
  EXPECT_TRUE(preprocess("@a @b http://x", stop).empty());
}

TEST(Preprocess, RandomTextYieldsOnlyCleanNonStopwordTokens) {
  const auto stop = shipped_stopwords();
  const std::regex clean("[a-z0-9]+");
  const std::string alphabet = "abcdefghijklmnopqrstuvwxyzABCXYZ0123456789 \t\n@#:/.,!?'\"-_ht\xC3\xA9";
  const std::vector<std::string> fragments = {"the ", "http", "www", " @x ", " and ", "Flight "};
  npd::detail::Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    std::string text;
    for (std::size_t k = rng.index(60); k > 0; --k) {
      if (rng.index(6) == 0) text += fragments[rng.index(fragments.size())];
      else text.push_back(alphabet[rng.index(alphabet.size())]);
    }
    for (const auto& t : preprocess(text, stop)) {
      ASSERT_TRUE(std::regex_match(t, clean)) << "token '" << t << "' from '" << text << "'";
      ASSERT_FALSE(stop.contains(t)) << t;
    }
  }
}

TEST(Stopwords, CommentsAndBlanksIgnored) {
  const auto s = parse_stopwords("# header\nThe\n\n  a  \n");
  EXPECT_EQ(s, (std::unordered_set<std::string>{"the", "a"}));
}

TEST(TokenizedJsonl, RoundTrip) {
  const std::vector<TokenizedDoc> docs = {{"1", {"late", "flight"}}, {"2", {}}, {"x\"y", {"caf\xC3\xA9"}}};
  EXPECT_EQ(read_tokenized_jsonl(write_tokenized_jsonl(docs)), docs);
  EXPECT_THROW(read_tokenized_jsonl("{\"id\":1}\n"), FormatError);
}

TEST(Split, FullDatasetSizes) {
  const auto s = split_sizes(14640);
  EXPECT_EQ(s.test, 4392u);
  EXPECT_EQ(s.val, 2049u);
  EXPECT_EQ(s.train, 8199u);
}

TEST(Split, PartitionsTenIds) {
  std::vector<std::string> ids;
  for (int i = 0; i < 10; ++i) ids.push_back("t" + std::to_string(i));
  for (std::uint64_t seed : {0ull, 1ull, 77ull}) {
    const auto a = split(ids, seed);
    std::vector<std::string> all = a.train_ids;
    all.insert(all.end(), a.val_ids.begin(), a.val_ids.end());
    all.insert(all.end(), a.test_ids.begin(), a.test_ids.end());
    std::sort(all.begin(), all.end());
    auto expected = ids;
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(all, expected);
    EXPECT_EQ(a.test_ids.size(), 3u);
    EXPECT_EQ(a.val_ids.size(), 1u);
  }
}

TEST(Split, Deterministic) {
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back(std::to_string(i));
  EXPECT_EQ(split(ids, 7), split(ids, 7));
  EXPECT_NE(split(ids, 7).test_ids, split(ids, 8).test_ids);
}

TEST(Split, DisjointAndExhaustiveForManySizesAndSeeds) {
  npd::detail::Rng rng(3);
  for (std::size_t n = 5; n <= 200; n += 13) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
    for (int s = 0; s < 5; ++s) {
      const auto seed = rng.next();
      const auto a = split(ids, seed);
      const auto sizes = split_sizes(n);
      ASSERT_EQ(a.train_ids.size(), sizes.train);
      ASSERT_EQ(a.val_ids.size(), sizes.val);
      ASSERT_EQ(a.test_ids.size(), sizes.test);
      std::unordered_set<std::string> seen;
      for (const auto* part : {&a.train_ids, &a.val_ids, &a.test_ids})
        for (const auto& id : *part) ASSERT_TRUE(seen.insert(id).second) << id;
      ASSERT_EQ(seen.size(), n);
    }
  }
}

TEST(Split, Errors) {
  EXPECT_THROW(split({}, 1), ValueError);
  const std::vector<std::string> dup = {"a", "b", "a"};
  EXPECT_THROW(split(dup, 1), DuplicateIdError);
}

TEST(Split, JsonRoundTrip) {
  std::vector<std::string> ids = {"a", "b", "c", "d", "e", "f"};
  const auto a = split(ids, 4);
  EXPECT_EQ(split_from_json(to_json(a)), a);
}
