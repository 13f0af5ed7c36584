#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "npd/detail/binary_io.hpp"
#include "npd/error.hpp"

namespace npd {

/// Pretrained token vectors. Rows are stored contiguously in insertion order.
class WordVectorTable {
 public:
  WordVectorTable() = default;
  explicit WordVectorTable(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw ValueError("word vector dimension must be positive");
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return words_.size(); }
  bool empty() const noexcept { return words_.empty(); }

  /// Appends an entry; returns false (and changes nothing) if the token already exists.
  bool add(std::string token, std::span<const float> vector) {
    if (vector.size() != dim_) {
      throw ValueError("vector for '" + token + "' has length " + std::to_string(vector.size()) +
                       ", expected " + std::to_string(dim_));
    }
    if (index_.contains(token)) return false;
    index_.emplace(token, words_.size());
    words_.push_back(std::move(token));
    values_.insert(values_.end(), vector.begin(), vector.end());
    return true;
  }

  const float* find(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? nullptr : values_.data() + it->second * dim_;
  }

  const std::string& word(std::size_t i) const { return words_[i]; }
  std::span<const float> vector(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }

  friend bool operator==(const WordVectorTable& a, const WordVectorTable& b) {
    return a.dim_ == b.dim_ && a.words_ == b.words_ && a.values_ == b.values_;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> words_;
  std::vector<float> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline bool is_vec_space(int c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r'; }

}  // namespace detail

/// Read the classic binary vector layout: ASCII header "<count> <dim>\n",
/// then per entry a space-terminated token followed by `dim` little-endian
/// float32 values. A newline between entries is optional. When `keep` is
/// given, only those tokens are retained, though every entry is still validated.
inline WordVectorTable load_word_vectors(std::istream& in,
                                         const std::unordered_set<std::string>* keep = nullptr) {
  std::size_t offset = 0;
  std::string header;
  for (int c; (c = in.get()) != EOF;) {
    ++offset;
    if (c == '\n') break;
    header.push_back(static_cast<char>(c));
  }
  long long count = 0, dim = 0;
  {
    std::istringstream hs(header);
    if (!(hs >> count >> dim)) throw FormatError(0, "malformed header '" + header + "'");
  }
  if (count <= 0 || dim <= 0) {
    throw FormatError(0, "header counts must be positive, got '" + header + "'");
  }

  WordVectorTable table(static_cast<std::size_t>(dim));
  std::unordered_set<std::string> seen;
  std::vector<float> vec(static_cast<std::size_t>(dim));
  std::string raw(static_cast<std::size_t>(dim) * sizeof(float), '\0');
  std::string token;

  for (long long e = 0; e < count; ++e) {
    int c = in.get();
    while (c != EOF && detail::is_vec_space(c)) {
      ++offset;
      c = in.get();
    }
    if (c == EOF) {
      throw FormatError(offset, "truncated: expected " + std::to_string(count) + " entries, found " +
                                    std::to_string(e));
    }
    token.clear();
    const std::size_t token_start = offset;
    while (c != EOF && c != ' ' && c != '\t' && c != '\n') {
      token.push_back(static_cast<char>(c));
      ++offset;
      c = in.get();
    }
    if (c == EOF) throw FormatError(offset, "truncated inside entry " + std::to_string(e));
    ++offset;  // terminator
    in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
    const auto got = static_cast<std::size_t>(in.gcount());
    if (got != raw.size()) {
      throw FormatError(offset + got, "truncated vector for entry " + std::to_string(e) + " ('" +
                                          token + "')");
    }
    offset += got;
    if (!seen.insert(token).second) throw FormatError(token_start, "duplicate token '" + token + "'");
    if (keep && !keep->contains(token)) continue;
    detail::ByteReader reader(raw);
    for (auto& v : vec) v = reader.get<float>();
    table.add(token, vec);
  }
  return table;
}

inline WordVectorTable load_word_vectors(std::string_view bytes,
                                         const std::unordered_set<std::string>* keep = nullptr) {
  std::istringstream in{std::string(bytes)};
  return load_word_vectors(in, keep);
}

/// Canonical writer: "<count> <dim>\n", then "token " + floats + "\n" per entry.
inline std::string write_word_vectors(const WordVectorTable& table) {
  if (table.empty()) throw ValueError("cannot write an empty word vector table");
  detail::ByteWriter w;
  w.put_bytes(std::to_string(table.size()) + " " + std::to_string(table.dim()) + "\n");
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& word = table.word(i);
    if (word.empty() || word.find_first_of(" \t\n\r") != std::string::npos) {
      throw ValueError("token '" + word + "' cannot be written in the binary format");
    }
    w.put_bytes(word);
    w.put_bytes(" ");
    for (float v : table.vector(i)) w.put(v);
    w.put_bytes("\n");
  }
  return w.take();
}

struct DocEmbedding {
  std::string tweet_id;
  std::vector<float> vector;
  double coverage = 0.0;
};

/// Mean of the in-vocabulary token vectors, accumulated in double. All-OOV
/// (or empty) documents map to the zero vector with coverage 0.
inline DocEmbedding embed_document(std::span<const std::string> tokens, const WordVectorTable& table) {
  if (table.empty()) throw ValueError("embed_document: empty word vector table");
  std::vector<double> sum(table.dim(), 0.0);
  std::size_t found = 0;
  for (const auto& t : tokens) {
    const float* v = table.find(t);
    if (!v) continue;
    ++found;
    for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += v[k];
  }
  DocEmbedding out;
  out.vector.assign(table.dim(), 0.0f);
  if (found) {
    for (std::size_t k = 0; k < sum.size(); ++k) {
      out.vector[k] = static_cast<float>(sum[k] / static_cast<double>(found));
    }
  }
  out.coverage = tokens.empty() ? 0.0 : static_cast<double>(found) / static_cast<double>(tokens.size());
  return out;
}

// ---------------------------------------------------------------------------
// Embedding Exchange Format: "EEF1 <count> <dim>\n" then "<id>\t<f> <f> ...\n".

struct EmbeddingSet {
  std::size_t dim = 0;
  std::vector<std::string> ids;
  std::vector<float> values;  // ids.size() x dim, row-major
  std::unordered_map<std::string, std::size_t> index;

  std::size_t size() const noexcept { return ids.size(); }
  std::span<const float> row(std::size_t i) const { return {values.data() + i * dim, dim}; }
  const float* find(std::string_view id) const {
    auto it = index.find(std::string(id));
    return it == index.end() ? nullptr : values.data() + it->second * dim;
  }
  void add(std::string id, std::span<const float> v) {
    if (v.size() != dim) throw ValueError("embedding for '" + id + "' has the wrong dimension");
    if (!index.emplace(id, ids.size()).second) throw DuplicateIdError(id);
    ids.push_back(std::move(id));
    values.insert(values.end(), v.begin(), v.end());
  }
};

/// Floats are written in shortest round-trip form, so load(write(x)) is bit-exact.
inline std::string write_eef(const EmbeddingSet& set) {
  std::string out = "EEF1 " + std::to_string(set.size()) + " " + std::to_string(set.dim) + "\n";
  char buf[32];
  for (std::size_t i = 0; i < set.size(); ++i) {
    out += set.ids[i];
    out.push_back('\t');
    const auto r = set.row(i);
    for (std::size_t k = 0; k < r.size(); ++k) {
      if (k) out.push_back(' ');
      const auto res = std::to_chars(buf, buf + sizeof buf, r[k]);
      out.append(buf, res.ptr);
    }
    out.push_back('\n');
  }
  return out;
}

inline EmbeddingSet load_precomputed_embeddings(std::string_view text) {
  auto next_line = [&](std::size_t& pos) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    auto line = text.substr(pos, nl - pos);
    if (line.ends_with('\r')) line.remove_suffix(1);
    pos = nl + 1;
    return line;
  };

  std::size_t pos = 0;
  const auto header = next_line(pos);
  long long count = -1, dim = 0;
  {
    std::istringstream hs{std::string(header)};
    std::string magic;
    if (!(hs >> magic >> count >> dim) || magic != "EEF1") {
      throw FormatError(0, "expected header 'EEF1 <count> <dim>'");
    }
  }
  if (count < 0 || dim <= 0) throw FormatError(0, "invalid EEF header counts");

  EmbeddingSet set;
  set.dim = static_cast<std::size_t>(dim);
  set.ids.reserve(static_cast<std::size_t>(count));
  set.values.reserve(static_cast<std::size_t>(count) * set.dim);
  std::vector<float> row(set.dim);

  while (pos < text.size()) {
    const std::size_t line_start = pos;
    const auto line = next_line(pos);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) throw FormatError(line_start, "record without a tab separator");
    std::string id(line.substr(0, tab));
    const char* p = line.data() + tab + 1;
    const char* end = line.data() + line.size();
    std::size_t k = 0;
    for (;;) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      float v;
      const auto res = std::from_chars(p, end, v);
      if (res.ec != std::errc{}) {
        throw FormatError(line_start + static_cast<std::size_t>(p - line.data()),
                          "bad float in record '" + id + "'");
      }
      if (k < set.dim) row[k] = v;
      ++k;
      p = res.ptr;
    }
    if (k != set.dim) {
      throw FormatError(line_start, "record '" + id + "' has " + std::to_string(k) +
                                        " values, header says " + std::to_string(set.dim));
    }
    if (set.index.contains(id)) throw FormatError(line_start, "duplicate tweet_id '" + id + "'");
    set.add(std::move(id), row);
  }
  if (set.size() != static_cast<std::size_t>(count)) {
    throw FormatError(text.size(), "header declares " + std::to_string(count) + " records, found " +
                                       std::to_string(set.size()));
  }
  return set;
}

}  // namespace npd
