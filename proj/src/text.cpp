#include "aem/text.hpp"

#include <algorithm>
#include <cctype>

#include "aem/rng.hpp"

namespace aem::text {

bool Vocab::has(const std::string& word) const { return row_of(word) >= 0; }

int Vocab::row_of(const std::string& word) const {
  auto it = std::lower_bound(words.begin(), words.end(), word);
  if (it != words.end() && *it == word) return static_cast<int>(it - words.begin());
  return -1;
}

RowVec word_vector(const std::string& word, Eigen::Index dim, uint64_t hash_seed) {
  Rng rng(derive_seed(hash_seed, "word", fnv1a(word)));
  RowVec v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.normal();
  return v / v.norm();
}

Vocab build_vocab(const std::vector<std::string>& words, Eigen::Index dim, uint64_t hash_seed) {
  Vocab v;
  v.words = words;
  std::sort(v.words.begin(), v.words.end());
  v.words.erase(std::unique(v.words.begin(), v.words.end()), v.words.end());
  v.dim = dim;
  v.hash_seed = hash_seed;
  v.table.resize(static_cast<Eigen::Index>(v.words.size()), dim);
  for (size_t i = 0; i < v.words.size(); ++i)
    v.table.row(static_cast<Eigen::Index>(i)) = word_vector(v.words[i], dim, hash_seed);
  return v;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

Matrix token_vectors(const Vocab& vocab, const std::string& text) {
  auto tokens = tokenize(text);
  if (tokens.empty()) fail(ErrKind::validation, "text encoder: empty text");
  Matrix m(static_cast<Eigen::Index>(tokens.size()), vocab.dim);
  for (size_t i = 0; i < tokens.size(); ++i) {
    int row = vocab.row_of(tokens[i]);
    if (row >= 0)
      m.row(static_cast<Eigen::Index>(i)) = vocab.table.row(row);
    else
      m.row(static_cast<Eigen::Index>(i)) = word_vector(tokens[i], vocab.dim, vocab.hash_seed);
  }
  return m;
}

RowVec encode(const Vocab& vocab, const std::string& text) {
  Matrix toks = token_vectors(vocab, text);
  RowVec mean = toks.colwise().mean();
  double n = mean.norm();
  if (n < 1e-12) fail(ErrKind::numeric, "text encoder: degenerate embedding for '" + text + "'");
  return mean / n;
}

}  // namespace aem::text
