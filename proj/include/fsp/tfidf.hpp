#pragma once

// Per-vocabulary importance weights for the reweighted BCE objective:
//   w(i) = ln((N_docs + 1) / (df_i + 1)) + 1
// with binary term frequency (presence) and one sequence = one document.
// Tokens absent from the corpus get the maximum weight via the +1 smoothing.

#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

#include "fsp/dataset.hpp"

namespace fsp {

struct TfIdfTable {
  int64_t n_docs = 0;
  std::vector<int64_t> df;      // documents containing token i
  std::vector<double> weight;   // w(i)

  int vocab() const { return static_cast<int>(weight.size()); }
};

template <class SeqRange>
TfIdfTable tfidf_weights(const SeqRange& docs, int vocab_size) {
  FSP_CHECK_ARG(vocab_size >= 1, "tfidf: vocab_size must be >= 1");
  TfIdfTable t;
  t.df.assign(static_cast<size_t>(vocab_size), 0);
  std::vector<uint8_t> seen(static_cast<size_t>(vocab_size));
  for (const auto& doc : docs) {
    std::fill(seen.begin(), seen.end(), 0);
    for (TokenId id : doc) {
      FSP_CHECK_ARG(id >= 0 && id < vocab_size, "tfidf: token ", id, " outside vocab");
      if (!seen[static_cast<size_t>(id)]) {
        seen[static_cast<size_t>(id)] = 1;
        ++t.df[static_cast<size_t>(id)];
      }
    }
    ++t.n_docs;
  }
  FSP_CHECK_ARG(t.n_docs > 0, "tfidf: empty corpus");
  t.weight.resize(static_cast<size_t>(vocab_size));
  for (int i = 0; i < vocab_size; ++i)
    t.weight[static_cast<size_t>(i)] =
        std::log(static_cast<double>(t.n_docs + 1) /
                 static_cast<double>(t.df[static_cast<size_t>(i)] + 1)) +
        1.0;
  return t;
}

inline TfIdfTable tfidf_from_dataset(const Dataset& ds) {
  struct View {
    const std::vector<TaskInstance>& v;
    struct It {
      const TaskInstance* p;
      const std::vector<TokenId>& operator*() const { return p->tokens; }
      It& operator++() { ++p; return *this; }
      bool operator!=(const It& o) const { return p != o.p; }
    };
    It begin() const { return {v.data()}; }
    It end() const { return {v.data() + v.size()}; }
  };
  return tfidf_weights(View{ds.instances}, ds.vocab_size);
}

// Two-column CSV (token_id,weight) for inspection and reuse.
inline void save_tfidf_csv(const std::string& path, const TfIdfTable& t) {
  std::ofstream os(path, std::ios::trunc);
  FSP_CHECK(os.good(), IoError, "cannot open '", path, "' for writing");
  os << "token_id,weight\n";
  os.precision(17);
  for (int i = 0; i < t.vocab(); ++i) os << i << "," << t.weight[static_cast<size_t>(i)] << "\n";
}

inline TfIdfTable load_tfidf_csv(const std::string& path) {
  std::ifstream is(path);
  FSP_CHECK(is.good(), IoError, "cannot open tf-idf table '", path, "'");
  std::string line;
  std::getline(is, line);  // header
  TfIdfTable t;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id_s, w_s;
    std::getline(ls, id_s, ',');
    std::getline(ls, w_s, ',');
    const size_t id = static_cast<size_t>(std::stoll(id_s));
    if (t.weight.size() <= id) t.weight.resize(id + 1, 0.0);
    t.weight[id] = std::stod(w_s);
  }
  return t;
}

}  // namespace fsp
