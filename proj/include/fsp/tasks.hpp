#pragma once

#include <algorithm>
#include <cstdint>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fsp/ops.hpp"
#include "fsp/rng.hpp"

namespace fsp {

// Four special tokens appended after the task tokens: BOS, SEP, EQ, EOS.
struct Specials {
  TokenId bos, sep, eq, eos;
  static Specials after(int n_task_tokens) {
    const TokenId b = static_cast<TokenId>(n_task_tokens);
    return {b, static_cast<TokenId>(b + 1), static_cast<TokenId>(b + 2),
            static_cast<TokenId>(b + 3)};
  }
};
inline constexpr int kNumSpecials = 4;

// One encoded training/eval example. loss positions are [answer_start,
// answer_end): position p is supervised to predict tokens[p+1].
struct TaskInstance {
  std::vector<TokenId> tokens;
  int32_t answer_start = 0;
  int32_t answer_end = 0;  // exclusive

  int32_t length() const { return static_cast<int32_t>(tokens.size()); }
};

// ---------------------------------------------------------------------------
// Path-star graphs G(d, l): d node-disjoint arms of l nodes each hanging off
// a central start node. The model sees the shuffled adjacency list and the
// (start, end) query, and must emit the full path to the end node.
// ---------------------------------------------------------------------------

struct PathStarParams {
  int degree = 2;     // d: arms out of the start node
  int path_len = 5;   // l: nodes per arm, excluding the start node
  int n_nodes = 50;   // node universe size

  int nodes_per_instance() const { return 1 + degree * path_len; }
  int vocab_size() const { return n_nodes + kNumSpecials; }
  Specials specials() const { return Specials::after(n_nodes); }
  // [BOS] 2*d*l edge tokens [SEP] start end [EQ] path(l+1) [EOS]
  int encoded_length() const { return 2 * degree * path_len + path_len + 7; }

  void validate() const {
    FSP_CHECK_ARG(degree >= 1 && path_len >= 1, "path-star: degree/path_len must be >= 1");
    FSP_CHECK_ARG(nodes_per_instance() <= n_nodes, "path-star: need ",
                  nodes_per_instance(), " nodes but universe has ", n_nodes);
  }
};

struct PathStarInstance {
  std::vector<std::pair<TokenId, TokenId>> edges;  // shuffled (u -> v) pairs
  TokenId start = 0;
  TokenId end = 0;
  std::vector<TokenId> path;  // start plus the l nodes of the target arm
};

inline PathStarInstance gen_path_star_instance(const PathStarParams& p, Rng& rng) {
  const int m = p.nodes_per_instance();
  // sample m distinct nodes: partial Fisher-Yates over the universe
  std::vector<TokenId> pool(static_cast<size_t>(p.n_nodes));
  for (int i = 0; i < p.n_nodes; ++i) pool[static_cast<size_t>(i)] = static_cast<TokenId>(i);
  for (int i = 0; i < m; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(p.n_nodes - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }

  PathStarInstance inst;
  inst.start = pool[0];
  std::vector<std::vector<TokenId>> arms(static_cast<size_t>(p.degree));
  int next = 1;
  for (int a = 0; a < p.degree; ++a) {
    arms[static_cast<size_t>(a)].assign(pool.begin() + next, pool.begin() + next + p.path_len);
    next += p.path_len;
    inst.edges.emplace_back(inst.start, arms[static_cast<size_t>(a)][0]);
    for (int i = 0; i + 1 < p.path_len; ++i)
      inst.edges.emplace_back(arms[static_cast<size_t>(a)][static_cast<size_t>(i)],
                              arms[static_cast<size_t>(a)][static_cast<size_t>(i + 1)]);
  }
  rng.shuffle(inst.edges);

  const int target = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(p.degree)));
  const auto& arm = arms[static_cast<size_t>(target)];
  inst.end = arm.back();
  inst.path.push_back(inst.start);
  inst.path.insert(inst.path.end(), arm.begin(), arm.end());
  return inst;
}

// Independent structural validator (test oracle and gen-data check): arms are
// node-disjoint, the start node is the only branching point, and the answer
// path follows unique out-edges. This is exactly the shortcut structure the
// task depends on: after the first step every next node is a single
// adjacency lookup, while the start node has `degree` successors.
inline void validate_path_star(const PathStarInstance& inst, const PathStarParams& p) {
  FSP_CHECK_ARG(static_cast<int>(inst.edges.size()) == p.degree * p.path_len,
                "path-star: expected ", p.degree * p.path_len, " edges, got ",
                inst.edges.size());
  FSP_CHECK_ARG(static_cast<int>(inst.path.size()) == p.path_len + 1,
                "path-star: target path must have ", p.path_len + 1, " tokens");

  std::unordered_set<TokenId> nodes;
  std::unordered_map<TokenId, std::vector<TokenId>> adj;
  for (auto [u, v] : inst.edges) {
    FSP_CHECK_ARG(u >= 0 && u < p.n_nodes && v >= 0 && v < p.n_nodes,
                  "path-star: node id outside universe");
    nodes.insert(u);
    nodes.insert(v);
    adj[u].push_back(v);
  }
  FSP_CHECK_ARG(static_cast<int>(nodes.size()) == p.nodes_per_instance(),
                "path-star: expected ", p.nodes_per_instance(), " distinct nodes, got ",
                nodes.size());
  FSP_CHECK_ARG(adj[inst.start].size() == static_cast<size_t>(p.degree),
                "path-star: start out-degree ", adj[inst.start].size(), " != ", p.degree);
  int terminals = 0;
  for (TokenId n : nodes) {
    if (n == inst.start) continue;
    const size_t deg = adj.count(n) ? adj[n].size() : 0;
    FSP_CHECK_ARG(deg <= 1, "path-star: node ", n, " has out-degree ", deg);
    if (deg == 0) ++terminals;
  }
  FSP_CHECK_ARG(terminals == p.degree, "path-star: expected ", p.degree,
                " terminal nodes, got ", terminals);
  FSP_CHECK_ARG(inst.path.front() == inst.start && inst.path.back() == inst.end,
                "path-star: path endpoints wrong");
  const auto end_in = std::count_if(inst.edges.begin(), inst.edges.end(),
                                    [&](auto e) { return e.second == inst.end; });
  FSP_CHECK_ARG(end_in == 1, "path-star: end node must terminate exactly one arm");
  for (size_t i = 0; i + 1 < inst.path.size(); ++i) {
    const auto& out = adj[inst.path[i]];
    FSP_CHECK_ARG(std::find(out.begin(), out.end(), inst.path[i + 1]) != out.end(),
                  "path-star: path step ", i, " not in edge list");
  }
}

inline std::vector<PathStarInstance> gen_path_star(const PathStarParams& p, int n,
                                                   uint64_t seed) {
  p.validate();
  FSP_CHECK_ARG(n >= 1, "path-star: n must be >= 1");
  std::vector<PathStarInstance> out;
  out.reserve(static_cast<size_t>(n));
  Rng base(seed);
  for (int i = 0; i < n; ++i) {
    Rng rng = base.fork(static_cast<uint64_t>(i));
    out.push_back(gen_path_star_instance(p, rng));
  }
  return out;
}

inline TaskInstance encode_path_star(const PathStarInstance& inst, const PathStarParams& p) {
  const Specials sp = p.specials();
  TaskInstance t;
  t.tokens.reserve(static_cast<size_t>(p.encoded_length()));
  t.tokens.push_back(sp.bos);
  for (auto [u, v] : inst.edges) {
    t.tokens.push_back(u);
    t.tokens.push_back(v);
  }
  t.tokens.push_back(sp.sep);
  t.tokens.push_back(inst.start);
  t.tokens.push_back(inst.end);
  t.tokens.push_back(sp.eq);
  t.answer_start = static_cast<int32_t>(t.tokens.size()) - 1;  // EQ predicts path[0]
  t.tokens.insert(t.tokens.end(), inst.path.begin(), inst.path.end());
  t.answer_end = static_cast<int32_t>(t.tokens.size());  // last path token predicts EOS
  t.tokens.push_back(sp.eos);
  return t;
}

// Inverse of the prefix encoding (round-trip check): edge multiset and query.
inline std::pair<std::vector<std::pair<TokenId, TokenId>>, std::pair<TokenId, TokenId>>
decode_path_star_prefix(const TaskInstance& t, const PathStarParams& p) {
  const Specials sp = p.specials();
  FSP_CHECK_ARG(!t.tokens.empty() && t.tokens[0] == sp.bos, "decode: missing BOS");
  std::vector<std::pair<TokenId, TokenId>> edges;
  size_t i = 1;
  while (i < t.tokens.size() && t.tokens[i] != sp.sep) {
    FSP_CHECK_ARG(i + 1 < t.tokens.size() && t.tokens[i + 1] != sp.sep,
                  "decode: dangling edge token");
    edges.emplace_back(t.tokens[i], t.tokens[i + 1]);
    i += 2;
  }
  FSP_CHECK_ARG(i + 3 < t.tokens.size() && t.tokens[i] == sp.sep, "decode: missing SEP");
  const TokenId start = t.tokens[i + 1];
  const TokenId end = t.tokens[i + 2];
  FSP_CHECK_ARG(t.tokens[i + 3] == sp.eq, "decode: missing EQ");
  return {std::move(edges), {start, end}};
}

// ---------------------------------------------------------------------------
// Modified sibling discovery: K independent components, each a block of three
// child tokens followed by their parent. Child slot supports are disjoint
// across all slots and components.
// ---------------------------------------------------------------------------

struct SiblingParams {
  int k = 2;           // number of components
  int n_values = 100;  // support size per child slot

  int block_width() const { return 4; }  // S1 S2 S3 P
  int tokens_per_component() const { return 3 * n_values + 1; }
  int n_task_tokens() const { return k * tokens_per_component(); }
  int vocab_size() const { return n_task_tokens() + kNumSpecials; }
  Specials specials() const { return Specials::after(n_task_tokens()); }
  int encoded_length() const { return 1 + k * block_width(); }  // BOS + blocks

  void validate() const {
    FSP_CHECK_ARG(k >= 1 && n_values >= 1, "sibling: k/n_values must be >= 1");
    FSP_CHECK_ARG(vocab_size() <= 65535, "sibling: vocabulary overflows u16 token ids");
  }

  // Deterministic token layout. Component i owns a contiguous id range:
  // parent first, then the three slot supports.
  TokenId parent(int comp) const {
    return static_cast<TokenId>(comp * tokens_per_component());
  }
  TokenId support_begin(int comp, int slot) const {
    return static_cast<TokenId>(comp * tokens_per_component() + 1 + slot * n_values);
  }
  bool in_support(int comp, int slot, TokenId t) const {
    const TokenId b = support_begin(comp, slot);
    return t >= b && t < b + n_values;
  }
};

struct SiblingInstance {
  std::vector<TokenId> tokens;  // k * 4 task tokens, no specials
};

inline std::vector<SiblingInstance> gen_sibling(const SiblingParams& p, int n, uint64_t seed) {
  p.validate();
  FSP_CHECK_ARG(n >= 1, "sibling: n must be >= 1");
  std::vector<SiblingInstance> out;
  out.reserve(static_cast<size_t>(n));
  Rng base(seed);
  for (int i = 0; i < n; ++i) {
    Rng rng = base.fork(static_cast<uint64_t>(i));
    SiblingInstance inst;
    inst.tokens.reserve(static_cast<size_t>(p.k * 4));
    for (int c = 0; c < p.k; ++c) {  // components in fixed canonical order
      for (int s = 0; s < 3; ++s)
        inst.tokens.push_back(static_cast<TokenId>(
            p.support_begin(c, s) + static_cast<TokenId>(rng.uniform_int(
                                        static_cast<uint64_t>(p.n_values)))));
      inst.tokens.push_back(p.parent(c));
    }
    out.push_back(std::move(inst));
  }
  return out;
}

inline TaskInstance encode_sibling(const SiblingInstance& inst, const SiblingParams& p) {
  TaskInstance t;
  t.tokens.reserve(static_cast<size_t>(p.encoded_length()));
  t.tokens.push_back(p.specials().bos);
  t.tokens.insert(t.tokens.end(), inst.tokens.begin(), inst.tokens.end());
  // whole sequence supervised (minus the final position)
  t.answer_start = 0;
  t.answer_end = static_cast<int32_t>(t.tokens.size()) - 1;
  return t;
}

enum class SiblingViolation {
  None,
  WrongLength,
  ChildOutOfSupport,
  WrongParent,
};

struct SiblingCheck {
  SiblingViolation kind = SiblingViolation::None;
  int block = -1;  // first offending block, -1 when coherent or length mismatch

  bool coherent() const { return kind == SiblingViolation::None; }
};

// Checks a generated sequence (task tokens only, BOS stripped) block by
// block and reports the first violation.
inline SiblingCheck validate_sibling_sequence(const std::vector<TokenId>& tokens,
                                              const SiblingParams& p) {
  if (static_cast<int>(tokens.size()) != p.k * p.block_width())
    return {SiblingViolation::WrongLength, -1};
  for (int c = 0; c < p.k; ++c) {
    for (int s = 0; s < 3; ++s) {
      if (!p.in_support(c, s, tokens[static_cast<size_t>(c * 4 + s)]))
        return {SiblingViolation::ChildOutOfSupport, c};
    }
    if (tokens[static_cast<size_t>(c * 4 + 3)] != p.parent(c))
      return {SiblingViolation::WrongParent, c};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Train/test split with instance-level disjointness (hash-checked).
// ---------------------------------------------------------------------------

inline uint64_t token_hash(const std::vector<TokenId>& tokens) {
  return fnv1a64_bytes(tokens.data(), tokens.size() * sizeof(TokenId));
}

// Draws instances via `make(rng)` until `n` distinct-by-token-hash ones are
// collected that also avoid `taken`. Per-instance derived streams keep the
// result independent of generation order.
template <class MakeFn>
std::vector<TaskInstance> draw_distinct(MakeFn make, int n, uint64_t seed,
                                        std::unordered_set<uint64_t>& taken,
                                        uint64_t salt) {
  std::vector<TaskInstance> out;
  out.reserve(static_cast<size_t>(n));
  Rng base = Rng(seed).fork(salt);
  for (int i = 0; i < n; ++i) {
    for (uint64_t attempt = 0;; ++attempt) {
      FSP_CHECK_ARG(attempt < 1000, "dataset: cannot draw a fresh instance (space exhausted?)");
      Rng rng = base.fork(static_cast<uint64_t>(i)).fork(attempt);
      TaskInstance cand = make(rng);
      const uint64_t h = token_hash(cand.tokens);
      if (taken.insert(h).second) {
        out.push_back(std::move(cand));
        break;
      }
    }
  }
  return out;
}

}  // namespace fsp
