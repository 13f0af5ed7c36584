#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "npd/csv.hpp"
#include "npd/detail/random.hpp"
#include "npd/error.hpp"

namespace npd {

enum class Sentiment : int { Negative = 0, Neutral = 1, Positive = 2 };

inline constexpr int kSentimentClasses = 3;
inline constexpr std::array<std::string_view, 3> kSentimentNames = {"negative", "neutral", "positive"};

inline std::string_view to_string(Sentiment s) { return kSentimentNames[static_cast<int>(s)]; }
inline int class_index(Sentiment s) { return static_cast<int>(s); }

namespace detail {

inline std::string ascii_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  constexpr std::string_view ws = " \t\r\n\v\f";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

}  // namespace detail

inline std::optional<Sentiment> parse_sentiment(std::string_view s) {
  const auto lower = detail::ascii_lower(detail::trim(s));
  for (int i = 0; i < kSentimentClasses; ++i) {
    if (lower == kSentimentNames[i]) return static_cast<Sentiment>(i);
  }
  return std::nullopt;
}

struct TweetRecord {
  std::string tweet_id;
  std::string text;
  Sentiment sentiment = Sentiment::Neutral;
  std::optional<std::string> negative_reason;
  std::string airline;

  friend bool operator==(const TweetRecord&, const TweetRecord&) = default;
};

struct OpinionLabel {
  std::string tweet_id;
  bool has_opinion = false;

  friend bool operator==(const OpinionLabel&, const OpinionLabel&) = default;
};

struct TokenizedDoc {
  std::string tweet_id;
  std::vector<std::string> tokens;

  friend bool operator==(const TokenizedDoc&, const TokenizedDoc&) = default;
};

struct SplitAssignment {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
  std::uint64_t seed = 0;

  friend bool operator==(const SplitAssignment&, const SplitAssignment&) = default;
};

/// Parse the tweet dataset CSV. Required columns: `tweet_id`, `text`,
/// `airline_sentiment`; `negativereason` and `airline` are read when present.
/// Header names are matched case-insensitively.
inline std::vector<TweetRecord> parse_dataset(std::string_view csv_bytes) {
  const auto rows = csv::parse(csv_bytes);
  if (rows.empty()) throw SchemaError("tweet_id");

  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < rows[0].size(); ++c) {
    column.emplace(detail::ascii_lower(detail::trim(rows[0][c])), c);
  }
  auto required = [&](const char* name) {
    auto it = column.find(name);
    if (it == column.end()) throw SchemaError(name);
    return it->second;
  };
  auto optional = [&](const char* name) -> std::optional<std::size_t> {
    auto it = column.find(name);
    if (it == column.end()) return std::nullopt;
    return it->second;
  };
  const auto id_col = required("tweet_id");
  const auto text_col = required("text");
  const auto sentiment_col = required("airline_sentiment");
  const auto reason_col = optional("negativereason");
  const auto airline_col = optional("airline");

  std::vector<TweetRecord> records;
  records.reserve(rows.size() - 1);
  std::unordered_set<std::string> seen;
  seen.reserve(rows.size());

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::size_t index = r - 1;
    auto cell = [&](std::size_t c) -> const std::string& {
      if (c >= row.size()) {
        throw RowError(index, "expected at least " + std::to_string(c + 1) + " fields, found " +
                                  std::to_string(row.size()));
      }
      return row[c];
    };

    TweetRecord rec;
    rec.tweet_id = std::string(detail::trim(cell(id_col)));
    if (rec.tweet_id.empty()) throw RowError(index, "empty tweet_id");
    rec.text = cell(text_col);
    const auto sentiment = parse_sentiment(cell(sentiment_col));
    if (!sentiment) throw RowError(index, "unknown sentiment '" + cell(sentiment_col) + "'");
    rec.sentiment = *sentiment;
    if (reason_col && *reason_col < row.size()) {
      const auto reason = detail::trim(row[*reason_col]);
      if (!reason.empty()) {
        if (rec.sentiment != Sentiment::Negative) {
          throw RowError(index, "negative reason on a non-negative tweet");
        }
        rec.negative_reason = std::string(reason);
      }
    }
    if (airline_col && *airline_col < row.size()) rec.airline = row[*airline_col];

    if (!seen.insert(rec.tweet_id).second) throw DuplicateIdError(rec.tweet_id);
    records.push_back(std::move(rec));
  }
  return records;
}

/// Inverse of parse_dataset for the columns a TweetRecord carries.
inline std::string serialize_dataset(std::span<const TweetRecord> records) {
  std::vector<csv::Row> rows;
  rows.reserve(records.size() + 1);
  rows.push_back({"tweet_id", "airline_sentiment", "negativereason", "airline", "text"});
  for (const auto& r : records) {
    rows.push_back({r.tweet_id, std::string(to_string(r.sentiment)), r.negative_reason.value_or(""),
                    r.airline, r.text});
  }
  return csv::write(rows);
}

/// Parse the two-column opinion sidecar (tweet_id, yes|no). A first row whose
/// value column is neither yes nor no is treated as a header.
inline std::vector<OpinionLabel> parse_opinion_labels(std::string_view csv_bytes,
                                                      std::span<const TweetRecord> dataset) {
  std::unordered_set<std::string_view> known;
  known.reserve(dataset.size());
  for (const auto& r : dataset) known.insert(r.tweet_id);

  const auto rows = csv::parse(csv_bytes);
  std::vector<OpinionLabel> labels;
  labels.reserve(rows.size());
  std::unordered_set<std::string> seen;

  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() < 2) throw RowError(r, "expected 2 fields, found " + std::to_string(row.size()));
    const auto value = detail::ascii_lower(detail::trim(row[1]));
    if (r == 0 && value != "yes" && value != "no") continue;  // header
    if (value != "yes" && value != "no") {
      throw ValueError("row " + std::to_string(r) + ": opinion value '" + row[1] +
                       "' is not yes/no");
    }
    std::string id(detail::trim(row[0]));
    if (!known.contains(id)) throw UnknownIdError(id);
    if (!seen.insert(id).second) throw DuplicateIdError(id);
    labels.push_back({std::move(id), value == "yes"});
  }
  return labels;
}

/// One word per line; blank lines and lines starting with '#' are ignored.
inline std::unordered_set<std::string> parse_stopwords(std::string_view text) {
  std::unordered_set<std::string> words;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = detail::trim(text.substr(pos, nl - pos));
    if (!line.empty() && line.front() != '#') words.insert(detail::ascii_lower(line));
    pos = nl + 1;
  }
  return words;
}

/// Normalize a tweet into tokens: lowercase, drop @mentions and links, keep
/// only [a-z0-9] and whitespace, split, drop stopwords.
inline std::vector<std::string> preprocess(std::string_view text,
                                           const std::unordered_set<std::string>& stopwords) {
  const std::string lower = detail::ascii_lower(text);

  std::string kept;
  kept.reserve(lower.size());
  std::size_t i = 0;
  while (i < lower.size()) {
    if (detail::is_space(lower[i])) {
      kept.push_back(' ');
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < lower.size() && !detail::is_space(lower[j])) ++j;
    const std::string_view word(lower.data() + i, j - i);
    if (!(word.starts_with('@') || word.starts_with("http") || word.starts_with("www"))) {
      for (char c : word) {
        if ((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9')) kept.push_back(c);
      }
    }
    kept.push_back(' ');
    i = j;
  }

  std::vector<std::string> tokens;
  std::size_t p = 0;
  while (p < kept.size()) {
    while (p < kept.size() && kept[p] == ' ') ++p;
    std::size_t q = p;
    while (q < kept.size() && kept[q] != ' ') ++q;
    if (q > p) {
      std::string token = kept.substr(p, q - p);
      if (!stopwords.contains(token)) tokens.push_back(std::move(token));
    }
    p = q;
  }
  return tokens;
}

inline std::vector<TokenizedDoc> tokenize(std::span<const TweetRecord> records,
                                          const std::unordered_set<std::string>& stopwords) {
  std::vector<TokenizedDoc> docs;
  docs.reserve(records.size());
  for (const auto& r : records) docs.push_back({r.tweet_id, preprocess(r.text, stopwords)});
  return docs;
}

inline std::string write_tokenized_jsonl(std::span<const TokenizedDoc> docs) {
  std::string out;
  for (const auto& d : docs) {
    out += nlohmann::json{{"id", d.tweet_id}, {"tokens", d.tokens}}.dump();
    out.push_back('\n');
  }
  return out;
}

inline std::vector<TokenizedDoc> read_tokenized_jsonl(std::string_view text) {
  std::vector<TokenizedDoc> docs;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = detail::trim(text.substr(pos, nl - pos));
    if (!line.empty()) {
      try {
        const auto j = nlohmann::json::parse(line);
        docs.push_back({j.at("id").get<std::string>(), j.at("tokens").get<std::vector<std::string>>()});
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(pos, "line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    pos = nl + 1;
    ++line_no;
  }
  return docs;
}

/// Sizes of the held-out sets for n ids: test = round(test_ratio * n),
/// val = floor(val_ratio * (n - test)).
struct SplitSizes {
  std::size_t train, val, test;
};

inline SplitSizes split_sizes(std::size_t n, double test_ratio = 0.30, double val_ratio = 0.20) {
  const auto test = static_cast<std::size_t>(std::llround(test_ratio * static_cast<double>(n)));
  const auto rest = n - std::min(test, n);
  // Guard against products like 0.2 * 5 landing a hair under an integer.
  const auto val = static_cast<std::size_t>(std::floor(val_ratio * static_cast<double>(rest) + 1e-9));
  return {rest - val, val, std::min(test, n)};
}

/// Deterministic seeded shuffle, then the tail goes to test and the tail of
/// what remains goes to validation. Each output list keeps input order.
inline SplitAssignment split(std::span<const std::string> ids, std::uint64_t seed,
                             double test_ratio = 0.30, double val_ratio = 0.20) {
  if (ids.empty()) throw ValueError("split: empty id list");
  if (!(test_ratio > 0 && test_ratio < 1) || !(val_ratio >= 0 && val_ratio < 1)) {
    throw ValueError("split: ratios must lie in (0,1)");
  }
  {
    std::unordered_set<std::string_view> unique(ids.begin(), ids.end());
    if (unique.size() != ids.size()) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!unique.erase(ids[i])) throw DuplicateIdError(ids[i]);
      }
    }
  }

  std::vector<std::size_t> order(ids.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  detail::Rng rng(seed);
  rng.shuffle(std::span(order));

  const auto sizes = split_sizes(ids.size(), test_ratio, val_ratio);
  // 0 = train, 1 = val, 2 = test
  std::vector<int> bucket(ids.size(), 0);
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k >= sizes.train + sizes.val) bucket[order[k]] = 2;
    else if (k >= sizes.train) bucket[order[k]] = 1;
  }

  SplitAssignment out;
  out.seed = seed;
  out.train_ids.reserve(sizes.train);
  out.val_ids.reserve(sizes.val);
  out.test_ids.reserve(sizes.test);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    (bucket[i] == 0 ? out.train_ids : bucket[i] == 1 ? out.val_ids : out.test_ids).push_back(ids[i]);
  }
  return out;
}

inline nlohmann::json to_json(const SplitAssignment& s) {
  return {{"seed", s.seed}, {"train", s.train_ids}, {"val", s.val_ids}, {"test", s.test_ids}};
}

inline SplitAssignment split_from_json(const nlohmann::json& j) {
  SplitAssignment s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train_ids = j.at("train").get<std::vector<std::string>>();
  s.val_ids = j.at("val").get<std::vector<std::string>>();
  s.test_ids = j.at("test").get<std::vector<std::string>>();
  return s;
}

}  // namespace npd
