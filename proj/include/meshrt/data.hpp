#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "meshrt/rng.hpp"

namespace meshrt {

/// Row-major [batch × seq_len] token ids; targets are the next tokens.
struct Batch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> tokens;
  std::vector<std::int32_t> targets;
};

class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual Batch next(std::size_t batch, std::size_t seq_len) = 0;
  virtual int vocab() const = 0;
  virtual std::string describe() const = 0;
};

/// Deterministic English-like text of `bytes` characters: sentences drawn
/// from a fixed lexicon with Zipf-weighted word choice.
std::string synthetic_corpus(std::size_t bytes, std::uint64_t seed);

/// Character-level stream. The alphabet is the sorted set of bytes present;
/// windows advance by seq_len and wrap at the end unless `single_epoch`,
/// in which case exhaustion throws DataError.
class CorpusSource : public DataSource {
 public:
  CorpusSource(std::string text, bool single_epoch = false);
  static CorpusSource from_file(const std::filesystem::path& path, bool single_epoch = false);

  Batch next(std::size_t batch, std::size_t seq_len) override;
  int vocab() const override { return static_cast<int>(alphabet_.size()); }
  std::string describe() const override;

  const std::vector<std::int32_t>& ids() const noexcept { return ids_; }
  const std::string& alphabet() const noexcept { return alphabet_; }
  /// Resets the read position to the start.
  void rewind() noexcept { pos_ = 0; }

 private:
  std::string alphabet_;
  std::vector<std::int32_t> ids_;
  std::size_t pos_ = 0;
  bool single_epoch_;
};

/// Token layout: fillers [0, F), payloads [F, F + P), MARK = F + P,
/// QUERY = F + P + 1.
struct NeedleVocab {
  int filler = 16;
  int payload = 8;

  int mark() const noexcept { return filler + payload; }
  int query() const noexcept { return filler + payload + 1; }
  int size() const noexcept { return filler + payload + 2; }
};

/// One sequence: random fillers, MARK then a payload `distance` positions
/// before the final QUERY token, whose target is the payload. Requires
/// 1 ≤ distance < seq_len − 2. Targets elsewhere are the next token.
Batch needle_task(Rng& rng, std::size_t seq_len, const NeedleVocab& vocab, std::size_t distance);

/// Fixed-distance needle batches from a private stream.
class NeedleSource : public DataSource {
 public:
  NeedleSource(NeedleVocab vocab, std::size_t distance, std::uint64_t seed);

  Batch next(std::size_t batch, std::size_t seq_len) override;
  int vocab() const override { return vocab_.size(); }
  std::string describe() const override;

  const NeedleVocab& layout() const noexcept { return vocab_; }
  std::size_t distance() const noexcept { return distance_; }
  double chance_accuracy() const noexcept { return 1.0 / vocab_.payload; }

 private:
  NeedleVocab vocab_;
  std::size_t distance_;
  Rng rng_;
};

}  // namespace meshrt
