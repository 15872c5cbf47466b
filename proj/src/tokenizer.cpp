#include "histgen/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace histgen {

using json = nlohmann::json;

std::size_t TokenSequence::unpadded_length() const {
  std::size_t n = ids.size();
  while (n > 0 && ids[n - 1] == Specials::kPad) --n;
  return n;
}

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (std::isspace(c)) {
      flush();
    } else {
      flush();
      out.emplace_back(1, static_cast<char>(c));
    }
  }
  flush();
  return out;
}

Vocabulary Vocabulary::build(const std::vector<ReportRecord>& corpus, int min_freq) {
  if (corpus.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, int> freq;
  for (const auto& rec : corpus)
    for (const auto& tok : tokenize(rec.text)) ++freq[tok];

  std::vector<std::pair<std::string, int>> kept;
  for (const auto& [tok, f] : freq)
    if (f >= min_freq) kept.emplace_back(tok, f);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.min_freq_ = min_freq;
  v.token_of_ = {"<pad>", "<bos>", "<eos>", "<unk>"};
  for (int i = 0; i < 4; ++i) v.id_of_[v.token_of_[static_cast<std::size_t>(i)]] = i;
  for (const auto& [tok, f] : kept) {
    v.id_of_[tok] = static_cast<int>(v.token_of_.size());
    v.token_of_.push_back(tok);
  }
  return v;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = id_of_.find(token);
  return it == id_of_.end() ? Specials::kUnk : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || id >= size())
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(size()));
  return token_of_[static_cast<std::size_t>(id)];
}

TokenSequence Vocabulary::encode(const std::string& text, int max_len) const {
  if (max_len < 3) throw std::invalid_argument("encode: max_len must be >= 3");
  TokenSequence seq;
  seq.ids.reserve(static_cast<std::size_t>(max_len));
  seq.ids.push_back(Specials::kBos);
  for (const auto& tok : tokenize(text)) {
    if (static_cast<int>(seq.ids.size()) >= max_len - 1) break;  // keep room for EOS
    seq.ids.push_back(id_of(tok));
  }
  seq.ids.push_back(Specials::kEos);
  while (static_cast<int>(seq.ids.size()) < max_len) seq.ids.push_back(Specials::kPad);
  return seq;
}

std::string Vocabulary::decode(const TokenSequence& seq) const {
  std::string out;
  for (int id : seq.ids) {
    if (id < 0 || id >= size())
      throw std::out_of_range("decode: token id " + std::to_string(id) +
                              " outside vocabulary of size " + std::to_string(size()));
    if (id <= Specials::kUnk) continue;
    if (!out.empty()) out.push_back(' ');
    out += token_of_[static_cast<std::size_t>(id)];
  }
  return out;
}

std::string Vocabulary::to_json() const {
  json j;
  j["min_freq"] = min_freq_;
  json m = json::object();
  for (const auto& [tok, id] : id_of_) m[tok] = id;
  j["token_to_id"] = std::move(m);
  return j.dump(2);
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  json j = json::parse(text);
  Vocabulary v;
  v.min_freq_ = j.at("min_freq").get<int>();
  const auto& m = j.at("token_to_id");
  v.token_of_.resize(m.size());
  for (const auto& [tok, id] : m.items()) {
    int i = id.get<int>();
    if (i < 0 || i >= static_cast<int>(v.token_of_.size()))
      throw std::runtime_error("vocabulary JSON: id out of range for '" + tok + "'");
    v.token_of_[static_cast<std::size_t>(i)] = tok;
    v.id_of_[tok] = i;
  }
  for (int i = 0; i < 4 && i < v.size(); ++i) {
    static const char* expect[] = {"<pad>", "<bos>", "<eos>", "<unk>"};
    if (v.token_of_[static_cast<std::size_t>(i)] != expect[i])
      throw std::runtime_error("vocabulary JSON: special tokens corrupted");
  }
  return v;
}

}  // namespace histgen
