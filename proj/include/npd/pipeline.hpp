#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <openssl/evp.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "npd/brf.hpp"
#include "npd/embed.hpp"
#include "npd/error.hpp"
#include "npd/eval.hpp"
#include "npd/features.hpp"
#include "npd/ingest.hpp"
#include "npd/mlp.hpp"
#include "npd/wordgraph.hpp"

namespace npd::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

/// Invalid run configuration; lists every violated field.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> issues) : Error(join(issues)), issues_(std::move(issues)) {}
  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& issues) {
    std::string s = "invalid configuration:";
    for (const auto& i : issues) s += "\n  - " + i;
    return s;
  }
  std::vector<std::string> issues_;
};

/// A required upstream checkpoint is missing or no longer matches the manifest.
class ManifestError : public Error {
 public:
  ManifestError(std::string stage, const std::string& what)
      : Error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// ---------------------------------------------------------------------------
// Files and hashing

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256 failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Write via a temporary sibling and rename, so readers never see partial files.
inline void write_file_atomic(const fs::path& path, std::string_view bytes) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

/// Exclusive lock on an output directory for the lifetime of the object.
class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".npd.lock") {
    fs::create_directories(dir);
    std::FILE* f = std::fopen(path_.c_str(), "wx");
    if (!f) throw Error("output directory '" + dir.string() + "' is locked by another run (" + path_.string() + ")");
    std::fprintf(f, "%d\n", static_cast<int>(::getpid()));
    std::fclose(f);
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;
  ~DirectoryLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }

 private:
  fs::path path_;
};

// ---------------------------------------------------------------------------
// Configuration

inline json default_config() {
  return {
      {"dataset", ""},
      {"opinion_labels", ""},
      {"stopwords", ""},
      {"vectors", ""},
      {"precomputed", ""},
      {"output_dir", "out"},
      {"seed", 42},
      {"threads", 0},
      {"split", {{"test", 0.30}, {"val", 0.20}}},
      {"model", "brf"},
      {"embedding", "wordvec"},
      {"embedding_label", ""},
      {"brf", {{"n_trees", 100}, {"max_depth", nullptr}, {"min_samples_leaf", 1}, {"features_per_split", 0}}},
      {"mlp",
       {{"hidden", {64, 32}},
        {"dropout", 0.2},
        {"learning_rate", 0.01},
        {"batch_size", 64},
        {"epochs", 100},
        {"opinion_loss_weight", 1.0}}},
      {"search",
       {{"n_iter", 10},
        {"n_trees", {100, 500}},
        {"max_depth", {4, 24}},
        {"allow_unlimited_depth", true},
        {"min_samples_leaf", {1, 8}},
        {"features_per_split", nullptr}}},
      {"wordgraph",
       {{"opinion_threshold", 0.5},
        {"edge_threshold", 0.2},
        {"top_terms", 150},
        {"formats", {"graphml", "dot", "json"}}}},
      {"eval", {{"rank_by", "macro"}}},
  };
}

struct RunConfig {
  json raw;  // fully resolved, defaults merged, paths absolute
  fs::path dataset, opinion_labels, stopwords, vectors, precomputed, output_dir;
  std::uint64_t seed = 42;
  unsigned threads = 1;
  double test_ratio = 0.30, val_ratio = 0.20;
  std::string model = "brf", embedding = "wordvec", embedding_label;
  brf::BrfParams brf_params;  // features_per_split 0 means round(sqrt(d))
  mlp::Architecture mlp_arch;
  mlp::TrainConfig mlp_train;
  int search_iter = 10;
  brf::SearchSpace search_space;
  eval::F1Variant rank_by = eval::F1Variant::Macro;
  double opinion_threshold = 0.5, edge_threshold = 0.2;
  std::size_t top_terms = 150;
  std::vector<std::string> graph_formats;

  std::string combo() const { return model + "_" + embedding; }

  /// Resolved configuration minus fields that cannot change any output:
  /// where results go and how many threads compute them.
  json hashed() const {
    json j = raw;
    j.erase("output_dir");
    j.erase("threads");
    return j;
  }
  std::string hash() const { return sha256_hex(hashed().dump()); }
};

namespace detail {

inline void merge_into(json& base, const json& overlay) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object()) {
      merge_into(base[it.key()], *it);
    } else {
      base[it.key()] = *it;
    }
  }
}

inline std::string model_display(std::string_view model) {
  return model == "brf" ? "Balanced Random Forest" : "Deep Learning";
}

}  // namespace detail

/// Apply "a.b.c=value" overrides; the value is parsed as JSON when possible, else taken as a string.
inline void apply_override(json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ValidationError({"--set expects key=value, got '" + std::string(assignment) + "'"});
  }
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &config;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

/// Merge `user` over the defaults, resolve relative paths against `base_dir`,
/// and validate. Every violation is collected before throwing.
inline RunConfig resolve_config(const json& user, const fs::path& base_dir) {
  std::vector<std::string> issues;
  if (!user.is_object()) throw ValidationError({"configuration must be a JSON object"});
  json raw = default_config();
  const json defaults = raw;
  for (auto it = user.begin(); it != user.end(); ++it) {
    if (!defaults.contains(it.key())) issues.push_back("unknown field '" + it.key() + "'");
  }
  detail::merge_into(raw, user);

  RunConfig c;
  auto path_field = [&](const char* name) -> fs::path {
    const auto& v = raw[name];
    if (!v.is_string()) {
      issues.push_back(std::string(name) + ": must be a string path");
      return {};
    }
    const auto s = v.get<std::string>();
    if (s.empty()) return {};
    fs::path p(s);
    if (p.is_relative()) p = base_dir / p;
    p = p.lexically_normal();
    raw[name] = p.string();
    return p;
  };
  c.dataset = path_field("dataset");
  c.opinion_labels = path_field("opinion_labels");
  c.stopwords = path_field("stopwords");
  c.vectors = path_field("vectors");
  c.precomputed = path_field("precomputed");
  c.output_dir = path_field("output_dir");
  if (c.output_dir.empty()) issues.push_back("output_dir: must not be empty");

  auto number = [&](const json& parent, const std::string& path, const char* key, auto& out, auto check,
                    const char* rule) {
    using T = std::remove_reference_t<decltype(out)>;
    const auto& v = parent.contains(key) ? parent.at(key) : json();
    bool ok = false;
    if constexpr (std::is_floating_point_v<T>) {
      ok = v.is_number();
      if (ok) out = v.get<T>();
    } else {
      ok = v.is_number_integer() || v.is_number_unsigned();
      if (ok) {
        if (v.is_number_integer() && v.get<long long>() < 0 && std::is_unsigned_v<T>) ok = false;
        else out = v.get<T>();
      }
    }
    if (!ok || !check(out)) issues.push_back(path + key + ": " + rule);
  };

  number(raw, "", "seed", c.seed, [](auto) { return true; }, "must be a non-negative integer");
  long long threads = 0;
  number(raw, "", "threads", threads, [](auto t) { return t >= 0 && t <= 1024; }, "must be an integer in [0,1024]");
  c.threads = threads > 0 ? static_cast<unsigned>(threads) : std::max(1u, std::thread::hardware_concurrency());

  const auto& split = raw["split"];
  number(split, "split.", "test", c.test_ratio, [](double r) { return r > 0 && r < 1; }, "must lie in (0,1)");
  number(split, "split.", "val", c.val_ratio, [](double r) { return r > 0 && r < 1; }, "must lie in (0,1)");

  auto choice = [&](const char* key, std::initializer_list<const char*> allowed, std::string& out) {
    const auto& v = raw[key];
    if (v.is_string()) {
      out = v.get<std::string>();
      for (auto a : allowed)
        if (out == a) return;
    }
    std::string list;
    for (auto a : allowed) list += (list.empty() ? "" : "|") + std::string(a);
    issues.push_back(std::string(key) + ": must be one of " + list);
  };
  choice("model", {"brf", "mlp"}, c.model);
  choice("embedding", {"wordvec", "precomputed"}, c.embedding);
  if (raw["embedding_label"].is_string() && !raw["embedding_label"].get<std::string>().empty()) {
    c.embedding_label = raw["embedding_label"].get<std::string>();
  } else {
    c.embedding_label = c.embedding == "wordvec" ? "Word2Vec" : "Precomputed";
  }

  const auto& b = raw["brf"];
  number(b, "brf.", "n_trees", c.brf_params.n_trees, [](int v) { return v >= 1; }, "must be >= 1");
  number(b, "brf.", "min_samples_leaf", c.brf_params.min_samples_leaf, [](int v) { return v >= 1; }, "must be >= 1");
  number(b, "brf.", "features_per_split", c.brf_params.features_per_split, [](int v) { return v >= 0; },
         "must be >= 0 (0 = round(sqrt(d)))");
  if (b.contains("max_depth") && !b["max_depth"].is_null()) {
    int depth = 0;
    number(b, "brf.", "max_depth", depth, [](int v) { return v >= 1; }, "must be >= 1 or null");
    c.brf_params.max_depth = depth;
  }

  const auto& m = raw["mlp"];
  if (!m["hidden"].is_array() || m["hidden"].size() != 2 || !m["hidden"][0].is_number_integer() ||
      !m["hidden"][1].is_number_integer() || m["hidden"][0].get<int>() < 1 || m["hidden"][1].get<int>() < 1) {
    issues.push_back("mlp.hidden: must be two positive integers");
  } else {
    c.mlp_arch.hidden = {m["hidden"][0].get<int>(), m["hidden"][1].get<int>()};
  }
  number(m, "mlp.", "dropout", c.mlp_arch.dropout_rate, [](double v) { return v >= 0 && v < 1; }, "must lie in [0,1)");
  number(m, "mlp.", "learning_rate", c.mlp_train.learning_rate, [](double v) { return v > 0; }, "must be > 0");
  number(m, "mlp.", "batch_size", c.mlp_train.batch_size, [](int v) { return v >= 1; }, "must be >= 1");
  number(m, "mlp.", "epochs", c.mlp_train.epochs, [](int v) { return v >= 1; }, "must be >= 1");
  number(m, "mlp.", "opinion_loss_weight", c.mlp_train.opinion_loss_weight, [](double v) { return v >= 0; },
         "must be >= 0");

  const auto& s = raw["search"];
  number(s, "search.", "n_iter", c.search_iter, [](int v) { return v >= 1; }, "must be >= 1");
  auto range = [&](const char* key, brf::IntRange& out, int min) {
    const auto& v = s[key];
    if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer() ||
        v[0].get<int>() > v[1].get<int>() || v[0].get<int>() < min) {
      issues.push_back(std::string("search.") + key + ": must be [lo, hi] with " + std::to_string(min) +
                       " <= lo <= hi");
      return;
    }
    out = {v[0].get<int>(), v[1].get<int>()};
  };
  range("n_trees", c.search_space.n_trees, 1);
  range("max_depth", c.search_space.max_depth, 1);
  range("min_samples_leaf", c.search_space.min_samples_leaf, 1);
  if (!s["allow_unlimited_depth"].is_boolean()) issues.push_back("search.allow_unlimited_depth: must be a boolean");
  else c.search_space.allow_unlimited_depth = s["allow_unlimited_depth"].get<bool>();
  if (!s["features_per_split"].is_null()) {
    const auto& v = s["features_per_split"];
    bool ok = v.is_array() && !v.empty();
    std::vector<int> values;
    if (ok) {
      for (const auto& e : v) {
        if (!e.is_number_integer() || e.get<int>() < 1) ok = false;
        else values.push_back(e.get<int>());
      }
    }
    if (!ok) issues.push_back("search.features_per_split: must be null or a non-empty list of positive integers");
    else c.search_space.features_per_split = values;
  }

  const auto& w = raw["wordgraph"];
  number(w, "wordgraph.", "opinion_threshold", c.opinion_threshold, [](double v) { return v > 0 && v < 1; },
         "must lie in (0,1)");
  number(w, "wordgraph.", "edge_threshold", c.edge_threshold, [](double v) { return v >= 0 && v <= 1; },
         "must lie in [0,1]");
  number(w, "wordgraph.", "top_terms", c.top_terms, [](std::size_t v) { return v >= 1; }, "must be >= 1");
  if (!w["formats"].is_array() || w["formats"].empty()) {
    issues.push_back("wordgraph.formats: must be a non-empty list");
  } else {
    for (const auto& f : w["formats"]) {
      if (!f.is_string() || !wordgraph::parse_format(f.get<std::string>())) {
        issues.push_back("wordgraph.formats: unknown format " + f.dump());
      } else {
        c.graph_formats.push_back(f.get<std::string>());
      }
    }
  }

  const auto& e = raw["eval"];
  if (e["rank_by"] == "macro") c.rank_by = eval::F1Variant::Macro;
  else if (e["rank_by"] == "weighted") c.rank_by = eval::F1Variant::Weighted;
  else issues.push_back("eval.rank_by: must be macro|weighted");

  if (!issues.empty()) throw ValidationError(std::move(issues));
  c.raw = std::move(raw);
  return c;
}

inline RunConfig load_config(const fs::path& file, const std::vector<std::string>& overrides = {},
                             std::optional<std::uint64_t> seed = std::nullopt) {
  json user;
  try {
    user = json::parse(read_file(file));
  } catch (const json::parse_error& e) {
    throw ValidationError({"config '" + file.string() + "' is not valid JSON: " + e.what()});
  } catch (const Error& e) {
    throw ValidationError({e.what()});
  }
  for (const auto& o : overrides) apply_override(user, o);
  if (seed) user["seed"] = *seed;
  return resolve_config(user, fs::absolute(file).parent_path());
}

inline void require_files(const RunConfig&, std::initializer_list<std::pair<const char*, const fs::path*>> files) {
  std::vector<std::string> issues;
  for (const auto& [name, path] : files) {
    if (path->empty()) issues.push_back(std::string(name) + ": required for this command");
    else if (!fs::is_regular_file(*path)) issues.push_back(std::string(name) + ": file not found '" + path->string() + "'");
  }
  if (!issues.empty()) throw ValidationError(std::move(issues));
}

// ---------------------------------------------------------------------------
// Manifest: one record per stage with input and output hashes, the config
// hash, and the record hashes of the upstream stages it consumed.

class Manifest {
 public:
  explicit Manifest(fs::path dir) : dir_(std::move(dir)) {
    const auto file = dir_ / "manifest.json";
    if (fs::exists(file)) {
      try {
        data_ = json::parse(read_file(file));
      } catch (const json::parse_error& e) {
        throw ManifestError("manifest", std::string("unreadable manifest: ") + e.what());
      }
    }
    if (!data_.is_object()) data_ = json::object();
    data_["format"] = "npd-manifest-1";
    if (!data_.contains("stages")) data_["stages"] = json::object();
    if (!data_.contains("configs")) data_["configs"] = json::object();
  }

  const fs::path& dir() const noexcept { return dir_; }
  const json& data() const noexcept { return data_; }

  static std::string record_hash(json record) {
    record.erase("record_hash");
    return sha256_hex(record.dump());
  }

  /// Check that `stage` exists, that its outputs on disk still hash to the
  /// recorded values, and that every upstream record it names is unchanged.
  std::string verify(const std::string& stage) const {
    const auto& stages = data_["stages"];
    if (!stages.contains(stage)) throw ManifestError(stage, "checkpoint missing; run that stage first");
    const auto& rec = stages[stage];
    if (record_hash(rec) != rec.value("record_hash", "")) throw ManifestError(stage, "manifest record was modified");
    for (const auto& [name, hash] : rec["outputs"].items()) {
      const auto path = dir_ / name;
      if (!fs::is_regular_file(path)) throw ManifestError(stage, "output '" + name + "' is missing");
      if (sha256_hex(read_file(path)) != hash.get<std::string>()) {
        throw ManifestError(stage, "output '" + name + "' is stale (hash mismatch)");
      }
    }
    for (const auto& [up, hash] : rec["upstream"].items()) {
      if (verify(up) != hash.get<std::string>()) {
        throw ManifestError(stage, "upstream stage '" + up + "' changed since this stage ran");
      }
    }
    return rec["record_hash"].get<std::string>();
  }

  void record(const std::string& stage, const RunConfig& config, const std::map<std::string, std::string>& inputs,
              const std::vector<std::string>& outputs, const std::vector<std::string>& upstream) {
    json rec;
    rec["config_hash"] = config.hash();
    rec["inputs"] = json::object();
    for (const auto& [k, path] : inputs) rec["inputs"][k] = {{"path", path}, {"sha256", sha256_hex(read_file(path))}};
    rec["outputs"] = json::object();
    for (const auto& name : outputs) rec["outputs"][name] = sha256_hex(read_file(dir_ / name));
    rec["upstream"] = json::object();
    for (const auto& up : upstream) rec["upstream"][up] = data_["stages"][up]["record_hash"];
    rec["record_hash"] = record_hash(rec);
    data_["stages"][stage] = std::move(rec);
    data_["configs"][config.hash()] = config.hashed();
    write_file_atomic(dir_ / "manifest.json", data_.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  json data_;
};

// ---------------------------------------------------------------------------
// Stage helpers

struct LabelRow {
  std::string id;
  Sentiment sentiment;
  std::optional<bool> opinion;
};

inline std::string write_labels_jsonl(const std::vector<LabelRow>& rows) {
  std::string out;
  for (const auto& r : rows) {
    json j{{"id", r.id}, {"sentiment", std::string(to_string(r.sentiment))}};
    j["opinion"] = r.opinion ? json(*r.opinion) : json(nullptr);
    out += j.dump() + "\n";
  }
  return out;
}

inline std::vector<LabelRow> read_labels_jsonl(std::string_view text) {
  std::vector<LabelRow> rows;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    LabelRow r{j.at("id").get<std::string>(), *parse_sentiment(j.at("sentiment").get<std::string>()), std::nullopt};
    if (!j.at("opinion").is_null()) r.opinion = j.at("opinion").get<bool>();
    rows.push_back(std::move(r));
  }
  return rows;
}

struct StageContext {
  RunConfig config;
  Manifest manifest;
  fs::path out;

  explicit StageContext(RunConfig c) : config(std::move(c)), manifest(config.output_dir), out(config.output_dir) {}

  std::string read(const std::string& name) const { return read_file(out / name); }
  void write(const std::string& name, std::string_view bytes) const { write_file_atomic(out / name, bytes); }
};

inline std::string embed_stage(const RunConfig& c) { return "embed:" + c.embedding; }
inline std::string train_stage(const RunConfig& c) { return "train:" + c.combo(); }
inline std::string embeddings_file(const RunConfig& c) { return "embeddings_" + c.embedding + ".eef"; }

/// Feature rows for `ids`, in order.
inline FeatureMatrix gather(const EmbeddingSet& set, std::span<const std::string> ids) {
  FeatureMatrix X(ids.size(), set.dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const float* v = set.find(ids[i]);
    if (!v) throw Error("no embedding for tweet '" + ids[i] + "'");
    for (std::size_t k = 0; k < set.dim; ++k) X(i, k) = v[k];
  }
  return X;
}

struct LabeledSubset {
  std::vector<std::string> ids;
  std::vector<int> labels;
};

inline LabeledSubset sentiment_subset(std::span<const std::string> ids,
                                      const std::unordered_map<std::string, LabelRow>& labels) {
  LabeledSubset s;
  for (const auto& id : ids) {
    s.ids.push_back(id);
    s.labels.push_back(class_index(labels.at(id).sentiment));
  }
  return s;
}

inline LabeledSubset opinion_subset(std::span<const std::string> ids,
                                    const std::unordered_map<std::string, LabelRow>& labels) {
  LabeledSubset s;
  for (const auto& id : ids) {
    const auto& l = labels.at(id);
    if (!l.opinion) continue;
    s.ids.push_back(id);
    s.labels.push_back(*l.opinion ? 1 : 0);
  }
  return s;
}

inline bool has_all_classes(std::span<const int> labels, int k) {
  std::vector<bool> seen(static_cast<std::size_t>(k), false);
  for (int y : labels) seen[static_cast<std::size_t>(y)] = true;
  return std::all_of(seen.begin(), seen.end(), [](bool b) { return b; });
}

inline brf::BrfParams resolve_params(brf::BrfParams p, std::size_t dim) {
  if (p.features_per_split == 0) p.features_per_split = brf::default_features_per_split(dim).front();
  p.features_per_split = std::min<int>(p.features_per_split, static_cast<int>(dim));
  return p;
}

inline json params_json(const brf::BrfParams& p) {
  return {{"n_trees", p.n_trees},
          {"max_depth", p.max_depth ? json(*p.max_depth) : json(nullptr)},
          {"min_samples_leaf", p.min_samples_leaf},
          {"features_per_split", p.features_per_split}};
}

struct LoadedInputs {
  std::vector<LabelRow> label_rows;
  std::unordered_map<std::string, LabelRow> labels;
  SplitAssignment split;
  EmbeddingSet embeddings;
};

inline LoadedInputs load_inputs(const StageContext& ctx, bool with_embeddings = true) {
  LoadedInputs in;
  in.label_rows = read_labels_jsonl(ctx.read("labels.jsonl"));
  for (const auto& r : in.label_rows) in.labels.emplace(r.id, r);
  in.split = split_from_json(json::parse(ctx.read("split.json")));
  if (with_embeddings) in.embeddings = load_precomputed_embeddings(ctx.read(embeddings_file(ctx.config)));
  return in;
}

// ---------------------------------------------------------------------------
// Commands

inline void cmd_ingest(const RunConfig& config) {
  require_files(config, {{"dataset", &config.dataset}, {"stopwords", &config.stopwords}});
  if (!config.opinion_labels.empty()) require_files(config, {{"opinion_labels", &config.opinion_labels}});
  DirectoryLock lock(config.output_dir);
  StageContext ctx(config);

  const auto records = parse_dataset(read_file(config.dataset));
  if (records.empty()) throw Error("dataset '" + config.dataset.string() + "' has no rows");
  std::vector<OpinionLabel> opinions;
  if (!config.opinion_labels.empty()) opinions = parse_opinion_labels(read_file(config.opinion_labels), records);
  const auto stopwords = parse_stopwords(read_file(config.stopwords));
  const auto docs = tokenize(records, stopwords);

  std::unordered_map<std::string, bool> gold;
  for (const auto& o : opinions) gold.emplace(o.tweet_id, o.has_opinion);
  std::vector<LabelRow> rows;
  std::vector<std::string> ids;
  std::array<std::size_t, 3> counts{};
  for (const auto& r : records) {
    auto it = gold.find(r.tweet_id);
    rows.push_back({r.tweet_id, r.sentiment, it == gold.end() ? std::nullopt : std::optional<bool>(it->second)});
    ids.push_back(r.tweet_id);
    ++counts[static_cast<std::size_t>(class_index(r.sentiment))];
  }
  const auto assignment = split(ids, config.seed, config.test_ratio, config.val_ratio);

  std::size_t yes = 0;
  for (const auto& o : opinions) yes += o.has_opinion;
  const json stats{{"records", records.size()},
                   {"sentiment_counts", {{"negative", counts[0]}, {"neutral", counts[1]}, {"positive", counts[2]}}},
                   {"opinion_labels", opinions.size()},
                   {"opinion_yes", yes},
                   {"split", {{"train", assignment.train_ids.size()}, {"val", assignment.val_ids.size()}, {"test", assignment.test_ids.size()}}}};

  ctx.write("tokens.jsonl", write_tokenized_jsonl(docs));
  ctx.write("labels.jsonl", write_labels_jsonl(rows));
  ctx.write("split.json", to_json(assignment).dump() + "\n");
  ctx.write("ingest_stats.json", stats.dump(2) + "\n");

  std::map<std::string, std::string> inputs{{"dataset", config.dataset.string()}, {"stopwords", config.stopwords.string()}};
  if (!config.opinion_labels.empty()) inputs["opinion_labels"] = config.opinion_labels.string();
  ctx.manifest.record("ingest", config, inputs, {"tokens.jsonl", "labels.jsonl", "split.json", "ingest_stats.json"}, {});
  std::cout << "ingest: " << records.size() << " records, " << opinions.size() << " opinion labels, split "
            << assignment.train_ids.size() << "/" << assignment.val_ids.size() << "/" << assignment.test_ids.size()
            << "\n";
}

inline void cmd_embed(const RunConfig& config) {
  if (config.embedding == "wordvec") require_files(config, {{"vectors", &config.vectors}});
  else require_files(config, {{"precomputed", &config.precomputed}});
  DirectoryLock lock(config.output_dir);
  StageContext ctx(config);
  ctx.manifest.verify("ingest");

  const auto docs = read_tokenized_jsonl(ctx.read("tokens.jsonl"));
  EmbeddingSet out;
  json stats;
  std::map<std::string, std::string> inputs;
  if (config.embedding == "wordvec") {
    std::unordered_set<std::string> vocab;
    for (const auto& d : docs) vocab.insert(d.tokens.begin(), d.tokens.end());
    std::ifstream in(config.vectors, std::ios::binary);
    if (!in) throw Error("cannot open '" + config.vectors.string() + "'");
    const auto table = load_word_vectors(in, &vocab);
    if (table.empty()) throw Error("no corpus token appears in '" + config.vectors.string() + "'");
    out.dim = table.dim();
    double coverage = 0;
    std::size_t all_oov = 0;
    for (const auto& d : docs) {
      auto e = embed_document(d.tokens, table);
      coverage += e.coverage;
      all_oov += e.coverage == 0.0;
      out.add(d.tweet_id, e.vector);
    }
    stats = {{"documents", docs.size()},
             {"dim", out.dim},
             {"vocabulary_hits", table.size()},
             {"mean_coverage", docs.empty() ? 0.0 : coverage / static_cast<double>(docs.size())},
             {"all_oov_documents", all_oov}};
    inputs["vectors"] = config.vectors.string();
  } else {
    const auto pre = load_precomputed_embeddings(read_file(config.precomputed));
    out.dim = pre.dim;
    for (const auto& d : docs) {
      const float* v = pre.find(d.tweet_id);
      if (!v) throw Error("precomputed embeddings have no vector for tweet '" + d.tweet_id + "'");
      out.add(d.tweet_id, std::span<const float>(v, pre.dim));
    }
    stats = {{"documents", docs.size()}, {"dim", out.dim}, {"source_records", pre.size()}};
    inputs["precomputed"] = config.precomputed.string();
  }
  const auto file = embeddings_file(config);
  const auto stats_file = "embed_" + config.embedding + "_stats.json";
  ctx.write(file, write_eef(out));
  ctx.write(stats_file, stats.dump(2) + "\n");
  ctx.manifest.record(embed_stage(config), config, inputs, {file, stats_file}, {"ingest"});
  std::cout << "embed(" << config.embedding << "): " << out.size() << " documents, dim " << out.dim << "\n";
}

struct TrainedModels {
  std::optional<brf::BrfModel> sentiment_brf, opinion_brf;
  std::optional<mlp::MlpModel> mlp;
};

inline std::vector<std::string> model_files(const RunConfig& c) {
  if (c.model == "brf") return {"model_" + c.combo() + ".sentiment.brf", "model_" + c.combo() + ".opinion.brf"};
  return {"model_" + c.combo() + ".mlp"};
}

inline void cmd_train(const RunConfig& config) {
  DirectoryLock lock(config.output_dir);
  StageContext ctx(config);
  ctx.manifest.verify(embed_stage(config));
  const auto in = load_inputs(ctx);
  const auto sent = sentiment_subset(in.split.train_ids, in.labels);
  const auto op = opinion_subset(in.split.train_ids, in.labels);
  json log{{"model", config.model}, {"embedding", config.embedding}, {"train_rows", sent.ids.size()},
           {"opinion_rows", op.ids.size()}, {"seed", config.seed}};
  std::vector<std::string> outputs;

  if (config.model == "brf") {
    const auto params = resolve_params(config.brf_params, in.embeddings.dim);
    const brf::TrainOptions opts{config.threads, brf::Bootstrap::Balanced};
    const auto X = gather(in.embeddings, sent.ids);
    const auto sentiment = brf::train_brf(X, sent.labels, kSentimentClasses, params, config.seed, opts);
    const auto files = model_files(config);
    ctx.write(files[0], brf::save(sentiment));
    outputs.push_back(files[0]);
    log["params"] = params_json(params);
    if (!op.ids.empty() && has_all_classes(op.labels, 2)) {
      const auto Xo = gather(in.embeddings, op.ids);
      const auto opinion = brf::train_brf(Xo, op.labels, 2, params, npd::detail::sub_seed(config.seed, 1), opts);
      ctx.write(files[1], brf::save(opinion));
      outputs.push_back(files[1]);
      log["opinion_model"] = true;
    } else {
      log["opinion_model"] = false;
    }
  } else {
    const auto X = gather(in.embeddings, sent.ids);
    std::unordered_map<std::string, int> op_label;
    for (std::size_t i = 0; i < op.ids.size(); ++i) op_label.emplace(op.ids[i], op.labels[i]);
    std::vector<int> y_op;
    for (const auto& id : sent.ids) {
      auto it = op_label.find(id);
      y_op.push_back(it == op_label.end() ? mlp::kNoLabel : it->second);
    }
    auto arch = config.mlp_arch;
    arch.input_dim = static_cast<int>(in.embeddings.dim);
    std::vector<double> history;
    const auto model = mlp::train_mlp(X, sent.labels, y_op, arch, config.mlp_train, config.seed, &history);
    const auto file = model_files(config)[0];
    ctx.write(file, mlp::save(model));
    outputs.push_back(file);
    log["epoch_loss"] = history;
    log["hidden"] = arch.hidden;
  }
  const auto log_file = "train_" + config.combo() + "_log.json";
  ctx.write(log_file, log.dump(2) + "\n");
  outputs.push_back(log_file);
  ctx.manifest.record(train_stage(config), config, {}, outputs, {"ingest", embed_stage(config)});
  std::cout << "train(" << config.combo() << "): " << sent.ids.size() << " rows, " << op.ids.size()
            << " with opinion labels\n";
}

inline TrainedModels load_models(const StageContext& ctx) {
  TrainedModels m;
  const auto files = model_files(ctx.config);
  if (ctx.config.model == "brf") {
    m.sentiment_brf = brf::load(ctx.read(files[0]));
    if (fs::exists(ctx.out / files[1]) && ctx.manifest.data()["stages"][train_stage(ctx.config)]["outputs"].contains(files[1])) {
      m.opinion_brf = brf::load(ctx.read(files[1]));
    }
  } else {
    m.mlp = mlp::load(ctx.read(files[0]));
  }
  return m;
}

inline brf::Scorer metric_for(eval::F1Variant v, int k) {
  return [v, k](std::span<const int> p, std::span<const int> t) {
    return eval::f1_of(eval::scores(eval::confusion(p, t, k)), v);
  };
}

inline void cmd_tune(const RunConfig& config) {
  DirectoryLock lock(config.output_dir);
  StageContext ctx(config);
  ctx.manifest.verify(embed_stage(config));
  const auto in = load_inputs(ctx);
  const brf::TrainOptions opts{config.threads, brf::Bootstrap::Balanced};

  json best = json::object(), trace = json::object();
  auto run = [&](const char* task, const LabeledSubset& train, const LabeledSubset& val, int k) {
    if (train.ids.empty() || val.ids.empty() || !has_all_classes(train.labels, k)) {
      best[task] = nullptr;
      return;
    }
    const auto Xt = gather(in.embeddings, train.ids), Xv = gather(in.embeddings, val.ids);
    const auto result = brf::random_search(config.search_space, config.search_iter, Xt, train.labels, Xv, val.labels, k,
                                           config.seed, metric_for(config.rank_by, k), opts);
    best[task] = {{"params", params_json(result.best)}, {"score", result.best_score}, {"index", result.best_index}};
    auto& t = trace[task] = json::array();
    for (const auto& [p, s] : result.trace) t.push_back({{"params", params_json(p)}, {"score", s}});
  };
  run("sentiment", sentiment_subset(in.split.train_ids, in.labels), sentiment_subset(in.split.val_ids, in.labels),
      kSentimentClasses);
  run("opinion", opinion_subset(in.split.train_ids, in.labels), opinion_subset(in.split.val_ids, in.labels), 2);

  const std::string best_file = "tune_" + config.embedding + "_best.json";
  const std::string trace_file = "tune_" + config.embedding + "_trace.json";
  best["metric"] = config.rank_by == eval::F1Variant::Macro ? "macro_f1" : "weighted_f1";
  ctx.write(best_file, best.dump(2) + "\n");
  ctx.write(trace_file, trace.dump(2) + "\n");
  ctx.manifest.record("tune:" + config.embedding, config, {}, {best_file, trace_file}, {"ingest", embed_stage(config)});
  std::cout << "tune(" << config.embedding << "): " << config.search_iter << " configurations per task\n";
}

/// Per-row sentiment class and opinion probability for `ids`.
struct Predictions {
  std::vector<int> sentiment;
  std::vector<double> opinion;  // empty when no opinion model exists
};

inline Predictions predict(const TrainedModels& m, const FeatureMatrix& X) {
  Predictions p;
  if (m.mlp) {
    const auto out = mlp::predict(*m.mlp, X);
    for (Eigen::Index r = 0; r < out.sentiment.rows(); ++r) {
      Eigen::Index best;
      out.sentiment.row(r).maxCoeff(&best);
      p.sentiment.push_back(static_cast<int>(best));
      p.opinion.push_back(out.opinion(r));
    }
    return p;
  }
  p.sentiment = brf::predict_classes(*m.sentiment_brf, X);
  if (m.opinion_brf) {
    for (std::size_t i = 0; i < X.rows(); ++i) p.opinion.push_back(brf::predict_brf(*m.opinion_brf, X.row(i))[1]);
  }
  return p;
}

inline void write_report_tables(const StageContext& ctx) {
  std::vector<eval::EvalReport> sentiment, opinion;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(ctx.out)) {
    const auto name = entry.path().filename().string();
    if (name.starts_with("report_") && name.ends_with(".json")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const auto j = json::parse(read_file(f));
    sentiment.push_back(eval::report_from_json(j.at("sentiment")));
    if (!j.at("opinion").is_null()) opinion.push_back(eval::report_from_json(j.at("opinion")));
  }
  const auto variant = ctx.config.rank_by;
  json out{{"rank_by", variant == eval::F1Variant::Macro ? "macro_f1" : "weighted_f1"},
           {"sentiment", json::array()},
           {"opinion", json::array()}};
  std::string text;
  if (!sentiment.empty()) {
    const auto ranked = eval::rank_reports(sentiment, variant);
    text += eval::render_table("Sentiment Analysis Results", ranked, variant) + "\n";
    for (const auto& r : ranked) out["sentiment"].push_back(eval::to_json(r));
  }
  if (!opinion.empty()) {
    const auto ranked = eval::rank_reports(opinion, variant);
    text += eval::render_table("Opinion Detection Results", ranked, variant);
    for (const auto& r : ranked) out["opinion"].push_back(eval::to_json(r));
  }
  ctx.write("report.txt", text);
  ctx.write("report.json", out.dump(2) + "\n");
}

inline void cmd_evaluate(const RunConfig& config) {
  DirectoryLock lock(config.output_dir);
  StageContext ctx(config);
  ctx.manifest.verify(train_stage(config));
  const auto in = load_inputs(ctx);
  const auto models = load_models(ctx);

  const auto sent = sentiment_subset(in.split.test_ids, in.labels);
  const auto preds = predict(models, gather(in.embeddings, sent.ids));
  std::vector<std::string> names(kSentimentNames.begin(), kSentimentNames.end());
  const auto cm = eval::confusion(preds.sentiment, sent.labels, kSentimentClasses, names);
  auto report = eval::scores(cm);
  report.model_tag = detail::model_display(config.model);
  report.embedding_tag = config.embedding_label;
  json out{{"sentiment", eval::to_json(report)}, {"sentiment_confusion", eval::to_json(cm)}, {"opinion", nullptr}};

  const auto op = opinion_subset(in.split.test_ids, in.labels);
  if (!op.ids.empty() && (models.opinion_brf || models.mlp)) {
    const auto op_preds = predict(models, gather(in.embeddings, op.ids));
    std::vector<int> yes_no;
    for (double p : op_preds.opinion) yes_no.push_back(p >= 0.5 ? 1 : 0);
    const auto ocm = eval::confusion(yes_no, op.labels, 2, {"no", "yes"});
    auto orep = eval::scores(ocm);
    orep.model_tag = report.model_tag;
    orep.embedding_tag = report.embedding_tag;
    out["opinion"] = eval::to_json(orep);
    out["opinion_confusion"] = eval::to_json(ocm);
  }
  const auto file = "report_" + config.combo() + ".json";
  ctx.write(file, out.dump(2) + "\n");
  write_report_tables(ctx);
  ctx.manifest.record("evaluate:" + config.combo(), config, {}, {file, "report.txt", "report.json"},
                      {train_stage(config)});
  std::cout << "evaluate(" << config.combo() << "): sentiment macro-F1 " << report.macro_f1 << ", accuracy "
            << report.accuracy << "\n";
}

/// Word graph for one sentiment group; groups with no tokens give an empty graph.
inline wordgraph::WordGraph build_group_graph(std::span<const wordgraph::OpinionCandidate> group, const RunConfig& c) {
  std::vector<TokenizedDoc> docs;
  bool any = false;
  for (const auto& t : group) {
    docs.push_back({t.tweet_id, t.tokens});
    any = any || !t.tokens.empty();
  }
  wordgraph::WordGraph g;
  g.edge_threshold = c.edge_threshold;
  if (!any) return g;
  const auto m = wordgraph::tfidf(docs);
  return wordgraph::rank_clusters(wordgraph::detect_clusters(wordgraph::similarity_graph(m, c.edge_threshold, c.top_terms)));
}

inline std::string render_clusters(const std::string& title, const wordgraph::WordGraph& g, std::size_t words = 10) {
  std::string out = title + "\n";
  char buf[64];
  std::size_t rank = 1;
  for (const auto& c : g.ranking) {
    std::snprintf(buf, sizeof buf, "  %zu. cluster %d  %.2f%%  ", rank++, c.cluster, c.share);
    out += buf;
    for (std::size_t i = 0; i < std::min(words, c.words.size()); ++i) out += (i ? ", " : "") + c.words[i];
    out += "\n";
  }
  if (g.ranking.empty()) out += "  (no terms)\n";
  return out;
}

inline void cmd_graph(const RunConfig& config) {
  DirectoryLock lock(config.output_dir);
  StageContext ctx(config);
  ctx.manifest.verify(train_stage(config));
  const auto in = load_inputs(ctx);
  const auto models = load_models(ctx);
  const auto docs = read_tokenized_jsonl(ctx.read("tokens.jsonl"));

  std::vector<std::string> ids;
  for (const auto& d : docs) ids.push_back(d.tweet_id);
  const auto preds = predict(models, gather(in.embeddings, ids));

  std::vector<wordgraph::OpinionCandidate> candidates;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const auto& l = in.labels.at(docs[i].tweet_id);
    candidates.push_back({docs[i].tweet_id, l.sentiment, docs[i].tokens, preds.opinion.empty() ? 0.0 : preds.opinion[i],
                          l.opinion});
  }
  const auto kept = wordgraph::filter_opinionated(candidates, config.opinion_threshold);
  const auto groups = wordgraph::partition_by_sentiment(kept);
  const auto pos = build_group_graph(groups.positive_neutral, config);
  const auto neg = build_group_graph(groups.negative, config);

  std::vector<std::string> outputs;
  const std::string stem = "graph_" + config.combo();
  for (const auto& fmt : config.graph_formats) {
    const std::string ext = fmt == "json" ? "json" : fmt;
    for (const auto& [suffix, g] : {std::pair{"posneu", &pos}, std::pair{"neg", &neg}}) {
      const auto name = stem + "_" + suffix + "." + ext;
      ctx.write(name, wordgraph::export_graph(*g, fmt));
      outputs.push_back(name);
    }
  }
  json summary{{"opinionated", kept.size()},
               {"positive_neutral", {{"tweets", groups.positive_neutral.size()}, {"clusters", wordgraph::to_json(pos)["clusters"]}}},
               {"negative", {{"tweets", groups.negative.size()}, {"clusters", wordgraph::to_json(neg)["clusters"]}}}};
  const auto text = "Opinionated tweets: " + std::to_string(kept.size()) + "\n\n" +
                    render_clusters("Positive + neutral (" + std::to_string(groups.positive_neutral.size()) + " tweets)", pos) +
                    "\n" + render_clusters("Negative (" + std::to_string(groups.negative.size()) + " tweets)", neg);
  const auto txt = "clusters_" + config.combo() + ".txt", js = "clusters_" + config.combo() + ".json";
  ctx.write(txt, text);
  ctx.write(js, summary.dump(2) + "\n");
  outputs.push_back(txt);
  outputs.push_back(js);
  ctx.manifest.record("graph:" + config.combo(), config, {}, outputs, {"ingest", train_stage(config)});
  std::cout << "graph(" << config.combo() << "): " << kept.size() << " opinionated tweets, " << pos.nodes.size() << "/"
            << neg.nodes.size() << " nodes\n";
}

inline void run_command(std::string_view command, const RunConfig& config) {
  if (command == "ingest") cmd_ingest(config);
  else if (command == "embed") cmd_embed(config);
  else if (command == "train") cmd_train(config);
  else if (command == "tune") cmd_tune(config);
  else if (command == "evaluate") cmd_evaluate(config);
  else if (command == "graph") cmd_graph(config);
  else throw ValidationError({"unknown command '" + std::string(command) + "'"});
}

}  // namespace npd::pipeline
