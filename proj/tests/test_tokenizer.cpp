#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "histgen/rng.hpp"
#include "histgen/tokenizer.hpp"

using namespace histgen;

TEST_CASE("tokenize lowercases and splits punctuation") {
  auto toks = tokenize("Tumor present. Tumor absent.");
  CHECK(toks == std::vector<std::string>{"tumor", "present", ".", "tumor", "absent", "."});
}

TEST_CASE("build_vocab: hand-counted vocabulary for the two-sentence corpus") {
  std::vector<ReportRecord> corpus{{"w", "Tumor present. Tumor absent."}};
  Vocabulary v = Vocabulary::build(corpus, 1);
  // 4 specials + {tumor, present, absent, "."}
  CHECK(v.size() == 8);
  CHECK(v.id_of("tumor") >= 4);
  CHECK(v.id_of("present") >= 4);
  CHECK(v.id_of("absent") >= 4);
  CHECK(v.id_of(".") >= 4);
  // frequency desc, ties lexicographic: "." (2) before "tumor" (2)
  CHECK(v.id_of(".") == 4);
  CHECK(v.id_of("tumor") == 5);
  CHECK(v.id_of("absent") == 6);
  CHECK(v.id_of("present") == 7);
}

TEST_CASE("build_vocab: min_freq=2 keeps only the repeated tokens") {
  std::vector<ReportRecord> corpus{{"w", "Tumor present. Tumor absent."}};
  Vocabulary v = Vocabulary::build(corpus, 2);
  CHECK(v.size() == 6);  // specials + {".", "tumor"}
  CHECK(v.id_of("tumor") != Specials::kUnk);
  CHECK(v.id_of(".") != Specials::kUnk);
  CHECK(v.id_of("present") == Specials::kUnk);
  CHECK(v.id_of("absent") == Specials::kUnk);
}

TEST_CASE("build_vocab twice gives identical ids; empty corpus errors") {
  std::vector<ReportRecord> corpus{{"a", "one two three"}, {"b", "two three four"}};
  Vocabulary v1 = Vocabulary::build(corpus, 1);
  Vocabulary v2 = Vocabulary::build(corpus, 1);
  CHECK(v1.to_json() == v2.to_json());
  CHECK_THROWS(Vocabulary::build({}, 1));
}

TEST_CASE("encode: framing, padding, truncation, UNK") {
  std::vector<ReportRecord> corpus{{"w", "Tumor present. Tumor absent."}};
  Vocabulary v = Vocabulary::build(corpus, 1);

  TokenSequence seq = v.encode("tumor present", 6);
  CHECK(seq.ids == std::vector<int>{Specials::kBos, v.id_of("tumor"), v.id_of("present"),
                                    Specials::kEos, Specials::kPad, Specials::kPad});
  CHECK(seq.unpadded_length() == 4);

  TokenSequence unk = v.encode("tumor xenograft", 6);
  CHECK(unk.ids[2] == Specials::kUnk);

  // Truncation keeps EOS.
  TokenSequence trunc = v.encode("tumor present tumor absent tumor", 4);
  CHECK(trunc.ids.size() == 4);
  CHECK(trunc.ids.front() == Specials::kBos);
  CHECK(trunc.ids.back() == Specials::kEos);

  CHECK_THROWS(v.encode("tumor", 2));
}

TEST_CASE("decode drops specials and errors on out-of-range ids") {
  std::vector<ReportRecord> corpus{{"w", "Tumor present. Tumor absent."}};
  Vocabulary v = Vocabulary::build(corpus, 1);
  TokenSequence seq;
  seq.ids = {Specials::kBos, v.id_of("tumor"), Specials::kEos, Specials::kPad};
  CHECK(v.decode(seq) == "tumor");

  TokenSequence all_pad;
  all_pad.ids = {Specials::kPad, Specials::kPad};
  CHECK(v.decode(all_pad).empty());

  TokenSequence bad;
  bad.ids = {v.size()};
  CHECK_THROWS(v.decode(bad));
}

TEST_CASE("encode/decode round-trip on random in-vocabulary sentences") {
  std::vector<ReportRecord> corpus{
      {"a", "sections show invasive carcinoma with irregular nests"},
      {"b", "margins appear free of tumor . no invasion is identified"}};
  Vocabulary v = Vocabulary::build(corpus, 1);
  std::vector<std::string> words;
  for (const auto& rec : corpus)
    for (const auto& t : tokenize(rec.text)) words.push_back(t);

  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    int len = 1 + static_cast<int>(rng.bounded(10));
    std::string sentence;
    for (int i = 0; i < len; ++i) {
      if (!sentence.empty()) sentence += " ";
      sentence += words[rng.bounded(words.size())];
    }
    std::string roundtrip = v.decode(v.encode(sentence, 40));
    CHECK(roundtrip == sentence);
  }
}

TEST_CASE("UNK rate on the training corpus is zero at min_freq=1") {
  std::vector<ReportRecord> corpus{
      {"a", "the lesion displays solid growth"},
      {"b", "there is extensive stromal fibrosis"}};
  Vocabulary v = Vocabulary::build(corpus, 1);
  for (const auto& rec : corpus)
    for (const auto& tok : tokenize(rec.text)) CHECK(v.id_of(tok) != Specials::kUnk);
}

TEST_CASE("vocabulary JSON round-trip") {
  std::vector<ReportRecord> corpus{{"a", "alpha beta gamma alpha"}};
  Vocabulary v = Vocabulary::build(corpus, 1);
  Vocabulary loaded = Vocabulary::from_json(v.to_json());
  CHECK(loaded.size() == v.size());
  CHECK(loaded.id_of("alpha") == v.id_of("alpha"));
  CHECK(loaded.token_of(loaded.id_of("gamma")) == "gamma");
}
