#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "npd/error.hpp"
#include "npd/ingest.hpp"

namespace npd::wordgraph {

/// A tweet entering the graph stage: its tokens, sentiment, the opinion
/// model's probability, and the manual label when one exists.
struct OpinionCandidate {
  std::string tweet_id;
  Sentiment sentiment = Sentiment::Neutral;
  std::vector<std::string> tokens;
  double opinion_probability = 0.0;
  std::optional<bool> gold;
};

/// Keep tweets with probability >= threshold; a manual label overrides the model.
inline std::vector<OpinionCandidate> filter_opinionated(std::span<const OpinionCandidate> tweets, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ValueError("filter_opinionated: threshold must lie in (0,1)");
  std::vector<OpinionCandidate> kept;
  for (const auto& t : tweets) {
    const bool keep = t.gold ? *t.gold : t.opinion_probability >= threshold;
    if (keep) kept.push_back(t);
  }
  return kept;
}

struct SentimentGroups {
  std::vector<OpinionCandidate> positive_neutral;
  std::vector<OpinionCandidate> negative;
};

inline SentimentGroups partition_by_sentiment(std::span<const OpinionCandidate> tweets) {
  SentimentGroups g;
  for (const auto& t : tweets) (t.sentiment == Sentiment::Negative ? g.negative : g.positive_neutral).push_back(t);
  return g;
}

/// Term-by-document TF-IDF, stored sparsely: rows[t] lists (doc, weight) for
/// the documents where the weight is nonzero, in ascending doc order.
struct TfidfMatrix {
  std::vector<std::string> terms;  // lexicographic
  std::vector<std::string> docs;
  std::vector<std::vector<std::pair<std::uint32_t, double>>> rows;

  double weight(std::size_t term, std::size_t doc) const {
    const auto& row = rows[term];
    auto it = std::lower_bound(row.begin(), row.end(), doc,
                               [](const auto& e, std::size_t d) { return e.first < d; });
    return it != row.end() && it->first == doc ? it->second : 0.0;
  }
  double total(std::size_t term) const {
    double s = 0;
    for (const auto& [d, w] : rows[term]) s += w;
    return s;
  }
  std::optional<std::size_t> find(std::string_view term) const {
    auto it = std::lower_bound(terms.begin(), terms.end(), term);
    if (it == terms.end() || *it != term) return std::nullopt;
    return static_cast<std::size_t>(it - terms.begin());
  }
};

/// weight(t, d) = count(t, d) * ln(D / df(t)).
inline TfidfMatrix tfidf(std::span<const TokenizedDoc> docs) {
  if (docs.empty()) throw ValueError("tfidf: no documents");
  std::map<std::string, std::vector<std::pair<std::uint32_t, std::uint32_t>>> postings;  // term -> (doc, count)
  bool any = false;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    std::map<std::string_view, std::uint32_t> counts;
    for (const auto& t : docs[d].tokens) ++counts[t];
    any = any || !counts.empty();
    for (const auto& [t, c] : counts) postings[std::string(t)].emplace_back(static_cast<std::uint32_t>(d), c);
  }
  if (!any) throw ValueError("tfidf: all documents are empty");

  TfidfMatrix m;
  const double D = static_cast<double>(docs.size());
  for (const auto& d : docs) m.docs.push_back(d.tweet_id);
  m.terms.reserve(postings.size());
  m.rows.reserve(postings.size());
  for (auto& [term, list] : postings) {
    m.terms.push_back(term);
    auto& row = m.rows.emplace_back();
    const double idf = std::log(D / static_cast<double>(list.size()));
    if (idf > 0.0) {
      row.reserve(list.size());
      for (const auto& [d, c] : list) row.emplace_back(d, c * idf);
    }
  }
  return m;
}

struct Node {
  std::string term;
  double importance = 0.0;
  int cluster = -1;
  friend bool operator==(const Node&, const Node&) = default;
};

/// Undirected edge between node indices, source < target.
struct Edge {
  std::uint32_t source = 0;
  std::uint32_t target = 0;
  double similarity = 0.0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

struct RankedCluster {
  int cluster = 0;
  double share = 0.0;  // percent of total node importance
  std::vector<std::string> words;  // descending importance
  friend bool operator==(const RankedCluster&, const RankedCluster&) = default;
};

struct WordGraph {
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::vector<RankedCluster> ranking;
  double edge_threshold = 0.0;
  friend bool operator==(const WordGraph&, const WordGraph&) = default;
};

namespace detail {

inline double sparse_dot(const std::vector<std::pair<std::uint32_t, double>>& a,
                         const std::vector<std::pair<std::uint32_t, double>>& b) {
  double s = 0;
  auto i = a.begin(), j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (i->first < j->first) ++i;
    else if (j->first < i->first) ++j;
    else s += (i++)->second * (j++)->second;
  }
  return s;
}

}  // namespace detail

/// Cosine similarity of two nonnegative rows, 0 when either has zero norm.
inline double cosine(const std::vector<std::pair<std::uint32_t, double>>& a,
                     const std::vector<std::pair<std::uint32_t, double>>& b) {
  const double na = std::sqrt(detail::sparse_dot(a, a)), nb = std::sqrt(detail::sparse_dot(b, b));
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(detail::sparse_dot(a, b) / (na * nb), 0.0, 1.0);
}

/// Nodes: the top_terms terms of positive total weight, ordered by descending
/// total (ties lexicographic). Edges join pairs whose cosine similarity is
/// positive and at least edge_threshold.
inline WordGraph similarity_graph(const TfidfMatrix& m, double edge_threshold, std::size_t top_terms) {
  if (!(edge_threshold >= 0.0 && edge_threshold <= 1.0)) {
    throw ValueError("similarity_graph: edge_threshold must lie in [0,1]");
  }
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t t = 0; t < m.terms.size(); ++t) {
    const double total = m.total(t);
    if (total > 0.0) ranked.emplace_back(total, t);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  if (ranked.size() > top_terms) ranked.resize(top_terms);

  WordGraph g;
  g.edge_threshold = edge_threshold;
  for (const auto& [total, t] : ranked) g.nodes.push_back({m.terms[t], total, -1});
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    for (std::size_t j = i + 1; j < ranked.size(); ++j) {
      const double s = cosine(m.rows[ranked[i].second], m.rows[ranked[j].second]);
      if (s > 0.0 && s >= edge_threshold) {
        g.edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j), s});
      }
    }
  }
  return g;
}

/// Newman modularity of a node-to-cluster assignment over similarity weights.
inline double modularity(std::size_t n_nodes, std::span<const Edge> edges, std::span<const int> cluster) {
  if (cluster.size() != n_nodes) throw ValueError("modularity: assignment size mismatch");
  double m = 0;
  std::vector<double> degree(n_nodes, 0.0);
  for (const auto& e : edges) {
    m += e.similarity;
    degree[e.source] += e.similarity;
    degree[e.target] += e.similarity;
  }
  if (m == 0.0) return 0.0;
  std::map<int, double> internal, degree_sum;
  for (const auto& e : edges) {
    if (cluster[e.source] == cluster[e.target]) internal[cluster[e.source]] += e.similarity;
  }
  for (std::size_t i = 0; i < n_nodes; ++i) degree_sum[cluster[i]] += degree[i];
  double q = 0;
  for (const auto& [c, k] : degree_sum) {
    const double a = k / (2.0 * m);
    q += internal[c] / m - a * a;
  }
  return q;
}

inline double modularity(const WordGraph& g) {
  std::vector<int> assignment;
  for (const auto& n : g.nodes) assignment.push_back(n.cluster);
  return modularity(g.nodes.size(), g.edges, assignment);
}

/// Agglomerative greedy modularity maximization: repeatedly merge the pair of
/// connected clusters with the largest modularity gain while that gain is
/// positive. Ties go to the pair whose lexicographically smallest terms come
/// first. Cluster ids are numbered in order of each cluster's smallest term.
inline WordGraph detect_clusters(WordGraph g) {
  const std::size_t n = g.nodes.size();
  g.ranking.clear();
  if (n == 0) return g;

  // Communities are indexed by their founding node's lexicographic rank; a
  // merge keeps the smaller index, which is then the union's smallest term.
  std::vector<std::size_t> lex(n);
  std::iota(lex.begin(), lex.end(), std::size_t{0});
  std::sort(lex.begin(), lex.end(), [&](std::size_t a, std::size_t b) { return g.nodes[a].term < g.nodes[b].term; });
  std::vector<std::size_t> rank_of(n);
  for (std::size_t r = 0; r < n; ++r) rank_of[lex[r]] = r;

  double m = 0;
  for (const auto& e : g.edges) m += e.similarity;

  std::vector<int> community(n);
  for (std::size_t i = 0; i < n; ++i) community[i] = static_cast<int>(rank_of[i]);

  if (m > 0.0) {
    std::vector<std::map<std::size_t, double>> links(n);  // inter-community weight
    std::vector<double> a(n, 0.0);
    std::vector<bool> alive(n, true);
    for (const auto& e : g.edges) {
      const auto u = rank_of[e.source], v = rank_of[e.target];
      links[u][v] += e.similarity;
      links[v][u] += e.similarity;
      a[u] += e.similarity / (2.0 * m);
      a[v] += e.similarity / (2.0 * m);
    }
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), std::size_t{0});

    for (;;) {
      double best = 0.0;
      std::size_t bi = 0, bj = 0;
      bool found = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (!alive[i]) continue;
        for (const auto& [j, w] : links[i]) {
          if (j <= i) continue;
          const double gain = 2.0 * (w / (2.0 * m) - a[i] * a[j]);
          if (gain > 1e-12 && (!found || gain > best + 1e-12)) {
            best = gain;
            bi = i;
            bj = j;
            found = true;
          }
        }
      }
      if (!found) break;
      // Merge bj into bi.
      for (const auto& [k, w] : links[bj]) {
        if (k == bi) continue;
        links[bi][k] += w;
        links[k].erase(bj);
        links[k][bi] += w;
      }
      links[bi].erase(bj);
      links[bj].clear();
      a[bi] += a[bj];
      alive[bj] = false;
      parent[bj] = bi;
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t c = rank_of[i];
      while (parent[c] != c) c = parent[c];
      community[i] = static_cast<int>(c);
    }
  }

  // Renumber 0..k-1 in order of smallest member term.
  std::map<int, int> renumber;
  for (std::size_t r = 0; r < n; ++r) {
    const int c = community[lex[r]];
    if (!renumber.contains(c)) {
      const int next = static_cast<int>(renumber.size());
      renumber.emplace(c, next);
    }
  }
  for (std::size_t i = 0; i < n; ++i) g.nodes[i].cluster = renumber.at(community[i]);
  return g;
}

/// Cluster share = its importance mass over the total, in percent; clusters
/// by descending share (ties by id), words by descending importance (ties lexicographic).
inline WordGraph rank_clusters(WordGraph g) {
  g.ranking.clear();
  double total = 0;
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (g.nodes[i].cluster < 0) throw ValueError("rank_clusters: graph has unclustered nodes");
    members[g.nodes[i].cluster].push_back(i);
    total += g.nodes[i].importance;
  }
  if (total <= 0.0) {
    for (auto& [c, idx] : members) g.ranking.push_back({c, 0.0, {}});
    return g;
  }
  for (auto& [c, idx] : members) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (g.nodes[a].importance != g.nodes[b].importance) return g.nodes[a].importance > g.nodes[b].importance;
      return g.nodes[a].term < g.nodes[b].term;
    });
    RankedCluster rc;
    rc.cluster = c;
    double mass = 0;
    for (auto i : idx) {
      mass += g.nodes[i].importance;
      rc.words.push_back(g.nodes[i].term);
    }
    rc.share = mass / total * 100.0;
    g.ranking.push_back(std::move(rc));
  }
  std::stable_sort(g.ranking.begin(), g.ranking.end(),
                   [](const RankedCluster& a, const RankedCluster& b) { return a.share > b.share; });
  return g;
}

// ---------------------------------------------------------------------------
// Export

enum class Format { GraphML, Dot, Json };

inline std::optional<Format> parse_format(std::string_view s) {
  if (s == "graphml") return Format::GraphML;
  if (s == "dot") return Format::Dot;
  if (s == "json") return Format::Json;
  return std::nullopt;
}

namespace detail {

inline std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

inline std::string dot_quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  return out + "\"";
}

inline std::string number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline nlohmann::json to_json(const WordGraph& g) {
  nlohmann::json nodes = nlohmann::json::array(), edges = nlohmann::json::array(), clusters = nlohmann::json::array();
  for (const auto& n : g.nodes) nodes.push_back({{"id", n.term}, {"importance", n.importance}, {"cluster", n.cluster}});
  for (const auto& e : g.edges) {
    edges.push_back({{"source", g.nodes[e.source].term}, {"target", g.nodes[e.target].term}, {"similarity", e.similarity}});
  }
  for (const auto& c : g.ranking) clusters.push_back({{"cluster", c.cluster}, {"share", c.share}, {"words", c.words}});
  return {{"edge_threshold", g.edge_threshold}, {"nodes", nodes}, {"edges", edges}, {"clusters", clusters}};
}

inline WordGraph graph_from_json(const nlohmann::json& j) {
  WordGraph g;
  g.edge_threshold = j.at("edge_threshold").get<double>();
  std::unordered_map<std::string, std::uint32_t> index;
  for (const auto& n : j.at("nodes")) {
    Node node{n.at("id").get<std::string>(), n.at("importance").get<double>(), n.at("cluster").get<int>()};
    if (!index.emplace(node.term, static_cast<std::uint32_t>(g.nodes.size())).second) {
      throw DuplicateIdError(node.term);
    }
    g.nodes.push_back(std::move(node));
  }
  for (const auto& e : j.at("edges")) {
    const auto s = e.at("source").get<std::string>(), t = e.at("target").get<std::string>();
    if (!index.contains(s)) throw UnknownIdError(s);
    if (!index.contains(t)) throw UnknownIdError(t);
    g.edges.push_back({index.at(s), index.at(t), e.at("similarity").get<double>()});
  }
  for (const auto& c : j.at("clusters")) {
    g.ranking.push_back({c.at("cluster").get<int>(), c.at("share").get<double>(), c.at("words").get<std::vector<std::string>>()});
  }
  return g;
}

inline std::string export_graph(const WordGraph& g, Format format) {
  switch (format) {
    case Format::Json:
      return to_json(g).dump(2) + "\n";
    case Format::GraphML: {
      std::string out =
          "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
          "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\"\n"
          "         xmlns:xsi=\"http://www.w3.org/2001/XMLSchema-instance\"\n"
          "         xsi:schemaLocation=\"http://graphml.graphdrawing.org/xmlns "
          "http://graphml.graphdrawing.org/xmlns/1.0/graphml.xsd\">\n"
          "  <key id=\"label\" for=\"node\" attr.name=\"label\" attr.type=\"string\"/>\n"
          "  <key id=\"importance\" for=\"node\" attr.name=\"importance\" attr.type=\"double\"/>\n"
          "  <key id=\"cluster\" for=\"node\" attr.name=\"cluster\" attr.type=\"int\"/>\n"
          "  <key id=\"weight\" for=\"edge\" attr.name=\"weight\" attr.type=\"double\"/>\n"
          "  <graph id=\"G\" edgedefault=\"undirected\">\n";
      for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        const auto& n = g.nodes[i];
        out += "    <node id=\"n" + std::to_string(i) + "\">\n";
        out += "      <data key=\"label\">" + detail::xml_escape(n.term) + "</data>\n";
        out += "      <data key=\"importance\">" + detail::number(n.importance) + "</data>\n";
        out += "      <data key=\"cluster\">" + std::to_string(n.cluster) + "</data>\n";
        out += "    </node>\n";
      }
      for (std::size_t i = 0; i < g.edges.size(); ++i) {
        const auto& e = g.edges[i];
        out += "    <edge id=\"e" + std::to_string(i) + "\" source=\"n" + std::to_string(e.source) + "\" target=\"n" +
               std::to_string(e.target) + "\">\n";
        out += "      <data key=\"weight\">" + detail::number(e.similarity) + "</data>\n";
        out += "    </edge>\n";
      }
      out += "  </graph>\n</graphml>\n";
      return out;
    }
    case Format::Dot: {
      std::string out = "graph wordgraph {\n";
      std::map<int, std::vector<std::size_t>> by_cluster;
      for (std::size_t i = 0; i < g.nodes.size(); ++i) by_cluster[g.nodes[i].cluster].push_back(i);
      std::map<int, double> shares;
      for (const auto& c : g.ranking) shares[c.cluster] = c.share;
      auto node_line = [&](std::size_t i, const char* indent) {
        const auto& n = g.nodes[i];
        return std::string(indent) + detail::dot_quote(n.term) + " [importance=" + detail::number(n.importance) +
               ", cluster=" + std::to_string(n.cluster) + "];\n";
      };
      for (const auto& [c, idx] : by_cluster) {
        if (c < 0) {
          for (auto i : idx) out += node_line(i, "  ");
          continue;
        }
        out += "  subgraph cluster_" + std::to_string(c) + " {\n";
        std::string label = "cluster " + std::to_string(c);
        if (shares.contains(c)) {
          char buf[32];
          std::snprintf(buf, sizeof buf, " (%.2f%%)", shares[c]);
          label += buf;
        }
        out += "    label=" + detail::dot_quote(label) + ";\n";
        for (auto i : idx) out += node_line(i, "    ");
        out += "  }\n";
      }
      for (const auto& e : g.edges) {
        out += "  " + detail::dot_quote(g.nodes[e.source].term) + " -- " + detail::dot_quote(g.nodes[e.target].term) +
               " [weight=" + detail::number(e.similarity) + "];\n";
      }
      out += "}\n";
      return out;
    }
  }
  throw ValueError("export_graph: unknown format");
}

inline std::string export_graph(const WordGraph& g, std::string_view format) {
  const auto f = parse_format(format);
  if (!f) throw ValueError("export_graph: unknown format '" + std::string(format) + "'");
  return export_graph(g, *f);
}

}  // namespace npd::wordgraph
