#pragma once

#include <map>
#include <string>
#include <vector>

#include "histgen/data.hpp"

namespace histgen {

// Fixed special ids; corpus tokens start at 4.
struct Specials {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
};

struct TokenSequence {
  std::vector<int> ids;

  // Token count excluding trailing PAD.
  std::size_t unpadded_length() const;
};

// Lowercase, punctuation-separated whitespace tokenization.
std::vector<std::string> tokenize(const std::string& text);

class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary build(const std::vector<ReportRecord>& corpus, int min_freq);

  int id_of(const std::string& token) const;      // UNK for unknown tokens
  const std::string& token_of(int id) const;      // throws on out-of-range ids
  int size() const { return static_cast<int>(token_of_.size()); }
  int min_freq() const { return min_freq_; }

  TokenSequence encode(const std::string& text, int max_len) const;
  std::string decode(const TokenSequence& seq) const;

  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);

 private:
  std::map<std::string, int> id_of_;
  std::vector<std::string> token_of_;
  int min_freq_ = 1;
};

}  // namespace histgen
