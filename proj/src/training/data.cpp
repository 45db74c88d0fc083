#include "meshrt/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include "meshrt/errors.hpp"

namespace meshrt {

namespace {

constexpr std::array<const char*, 120> kLexicon = {
    "the",    "of",     "and",     "to",     "a",       "in",     "is",     "it",     "that",   "was",
    "for",    "on",     "are",     "with",   "as",      "he",     "she",    "they",   "be",     "at",
    "one",    "have",   "this",    "from",   "by",      "not",    "but",    "what",   "all",    "were",
    "when",   "we",     "there",   "can",    "an",      "your",   "which",  "their",  "said",   "if",
    "do",     "will",   "each",    "about",  "how",     "up",     "out",    "them",   "then",   "many",
    "some",   "so",     "these",   "would",  "other",   "into",   "has",    "more",   "her",    "two",
    "like",   "him",    "see",     "time",   "could",   "no",     "make",   "than",   "first",  "been",
    "its",    "who",    "now",     "people", "my",      "made",   "over",   "did",    "down",   "only",
    "way",    "find",   "use",     "may",    "water",   "long",   "little", "very",   "after",  "words",
    "called", "just",   "where",   "most",   "know",    "river",  "stone",  "garden", "light",  "house",
    "morning", "window", "road",   "winter", "market",  "letter", "village", "summer", "engine", "number",
    "quiet",  "bright", "between", "under",  "through", "across", "before", "always", "never",  "again"};

}  // namespace

std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed) {
  Rng rng(seed, 0x636f72707573ULL);
  // Zipf weights over lexicon rank.
  std::vector<double> cdf(kLexicon.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < kLexicon.size(); ++i) {
    acc += 1.0 / static_cast<double>(i + 1);
    cdf[i] = acc;
  }
  for (double& c : cdf) c /= acc;
  auto word = [&]() {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return std::string(kLexicon[std::min<std::size_t>(it - cdf.begin(), kLexicon.size() - 1)]);
  };

  std::string out;
  out.reserve(bytes + 128);
  int sentences_in_para = 0;
  while (out.size() < bytes) {
    const int n_words = 4 + static_cast<int>(rng.below(10));
    for (int w = 0; w < n_words; ++w) {
      std::string s = word();
      if (w == 0) s[0] = static_cast<char>(s[0] - 'a' + 'A');
      out += s;
      if (w + 1 < n_words) out += (rng.below(9) == 0 && w > 1) ? ", " : " ";
    }
    out += rng.below(6) == 0 ? "? " : ". ";
    if (++sentences_in_para >= 3 + static_cast<int>(rng.below(4))) {
      out.back() = '\n';
      sentences_in_para = 0;
    }
  }
  out.resize(bytes);
  return out;
}

CorpusSource::CorpusSource(std::string text, bool single_epoch) : single_epoch_(single_epoch) {
  if (text.size() < 2) throw DataError("corpus needs at least two characters");
  std::array<bool, 256> seen{};
  for (unsigned char c : text) seen[c] = true;
  std::array<std::int32_t, 256> id{};
  for (int c = 0; c < 256; ++c)
    if (seen[c]) {
      id[c] = static_cast<std::int32_t>(alphabet_.size());
      alphabet_.push_back(static_cast<char>(c));
    }
  if (alphabet_.size() < 2) throw DataError("corpus alphabet has fewer than two symbols");
  ids_.reserve(text.size());
  for (unsigned char c : text) ids_.push_back(id[c]);
}

CorpusSource CorpusSource::from_file(const std::filesystem::path& path, bool single_epoch) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return CorpusSource(ss.str(), single_epoch);
}

Batch CorpusSource::next(std::size_t batch, std::size_t seq_len) {
  if (batch == 0 || seq_len == 0) throw ConfigError("batch and seq_len must be positive");
  if (ids_.size() < seq_len + 1) throw DataError("corpus is shorter than one window");
  Batch b{batch, seq_len, {}, {}};
  b.tokens.reserve(batch * seq_len);
  b.targets.reserve(batch * seq_len);
  for (std::size_t s = 0; s < batch; ++s) {
    if (pos_ + seq_len + 1 > ids_.size()) {
      if (single_epoch_) throw DataError("corpus exhausted after one epoch");
      pos_ = 0;
    }
    for (std::size_t j = 0; j < seq_len; ++j) {
      b.tokens.push_back(ids_[pos_ + j]);
      b.targets.push_back(ids_[pos_ + j + 1]);
    }
    pos_ += seq_len;
  }
  return b;
}

std::string CorpusSource::describe() const {
  return "corpus: " + std::to_string(ids_.size()) + " chars, alphabet " + std::to_string(alphabet_.size());
}

Batch needle_task(Rng& rng, std::size_t seq_len, const NeedleVocab& v, std::size_t distance) {
  if (v.filler < 1 || v.payload < 1) throw ConfigError("needle vocab needs fillers and payloads");
  if (distance < 1 || seq_len < 4 || distance >= seq_len - 2)
    throw RangeError("needle distance " + std::to_string(distance) + " must lie in [1, seq_len - 2)");
  std::vector<std::int32_t> seq(seq_len + 1);
  for (auto& t : seq) t = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(v.filler)));
  const std::size_t q = seq_len - 1;
  const std::size_t p = q - distance;
  const auto payload = static_cast<std::int32_t>(v.filler + static_cast<int>(rng.below(static_cast<std::uint64_t>(v.payload))));
  seq[p - 1] = v.mark();
  seq[p] = payload;
  seq[q] = v.query();
  seq[q + 1] = payload;
  Batch b{1, seq_len, std::vector<std::int32_t>(seq.begin(), seq.end() - 1),
          std::vector<std::int32_t>(seq.begin() + 1, seq.end())};
  return b;
}

NeedleSource::NeedleSource(NeedleVocab vocab, std::size_t distance, std::uint64_t seed)
    : vocab_(vocab), distance_(distance), rng_(seed, 0x6e6565646c65ULL) {}

Batch NeedleSource::next(std::size_t batch, std::size_t seq_len) {
  Batch b{batch, seq_len, {}, {}};
  for (std::size_t s = 0; s < batch; ++s) {
    Batch one = needle_task(rng_, seq_len, vocab_, distance_);
    b.tokens.insert(b.tokens.end(), one.tokens.begin(), one.tokens.end());
    b.targets.insert(b.targets.end(), one.targets.begin(), one.targets.end());
  }
  return b;
}

std::string NeedleSource::describe() const {
  return "needle: filler " + std::to_string(vocab_.filler) + ", payload " + std::to_string(vocab_.payload) +
         ", distance " + std::to_string(distance_);
}

}  // namespace meshrt
