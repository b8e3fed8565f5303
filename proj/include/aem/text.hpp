#pragma once

#include <string>
#include <vector>

#include "aem/types.hpp"

namespace aem::text {

// Frozen word-embedding table standing in for a pre-trained text encoder.
// Every word's vector is a pure function of (word, hash_seed), so unknown
// words take exactly the same path as known ones; the table is just a cache
// over `words`.
struct Vocab {
  std::vector<std::string> words;  // row order of `table`
  Matrix table;                    // |words| x dim, unit rows
  Eigen::Index dim = 0;
  uint64_t hash_seed = 0;

  bool has(const std::string& word) const;
  int row_of(const std::string& word) const;  // -1 when absent
};

// Deterministic unit vector for any word under the given seed.
RowVec word_vector(const std::string& word, Eigen::Index dim, uint64_t hash_seed);

Vocab build_vocab(const std::vector<std::string>& words, Eigen::Index dim, uint64_t hash_seed);

// Lowercased whitespace tokens.
std::vector<std::string> tokenize(const std::string& text);

// Mean of word vectors, unit-normalized. Errors on empty text.
RowVec encode(const Vocab& vocab, const std::string& text);

// Token vectors without pooling (one row per token), for prompt embedding.
Matrix token_vectors(const Vocab& vocab, const std::string& text);

}  // namespace aem::text
