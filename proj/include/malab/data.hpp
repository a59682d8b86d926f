#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "malab/model.hpp"
#include "malab/tokenizer.hpp"

namespace malab {

/// Documents from a JSONL file (one object with a "text" field per line)
/// or a plain text file (one document per non-empty line). The format is
/// chosen by the .jsonl / .json extension.
std::vector<std::string> load_corpus(const std::filesystem::path& path);

/// A training window: inputs, next-token targets (ops::kIgnore where
/// masked) of identical length.
struct PackedWindow {
  std::vector<std::int32_t> inputs;
  std::vector<std::int32_t> targets;

  std::size_t unmasked() const;
};

/// Frames every document as [BOS] bytes [EOS], concatenates the frames and
/// cuts the stream into context_len windows. Targets are the inputs
/// shifted left by one inside a window, so the last position of each window
/// and every position whose successor is padding are masked. The final
/// partial window is padded with PAD.
std::vector<PackedWindow> pack_sequences(std::span<const std::string> documents,
                                         std::size_t context_len,
                                         const TokenizerOptions& opts = {});

/// Same, starting from already framed token streams.
std::vector<PackedWindow> pack_stream(std::span<const std::int32_t> stream,
                                      std::size_t context_len);

/// Concatenation of the documents' bytes, each followed by EOS, no BOS.
/// This is the stream perplexity windows are cut from.
std::vector<std::int32_t> evaluation_stream(std::span<const std::string> documents);

/// Consecutive non-overlapping chunks of `chunk_len` tokens, at most
/// `max_chunks` of them (0: all). The last chunk may be shorter.
std::vector<std::vector<std::int32_t>> chunk_stream(std::span<const std::int32_t> stream,
                                                    std::size_t chunk_len,
                                                    std::size_t max_chunks = 0);

struct TrainBatch {
  TokenBatch tokens;
  std::vector<std::int32_t> targets;
};

/// Deterministic epoch-shuffled iteration over windows. Window order for
/// epoch e is a permutation seeded by (seed, e); `cursor` counts windows
/// consumed so far and fully determines the next batch.
class BatchSampler {
 public:
  BatchSampler(const std::vector<PackedWindow>* windows, std::size_t batch_size,
               std::uint64_t seed, std::size_t cursor = 0);

  TrainBatch next();
  std::size_t cursor() const { return cursor_; }

 private:
  const std::vector<PackedWindow>& windows() const { return *windows_; }
  void build_epoch(std::size_t epoch);

  const std::vector<PackedWindow>* windows_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  std::size_t cursor_;
  std::size_t epoch_ = static_cast<std::size_t>(-1);
  std::vector<std::size_t> order_;
};

}  // namespace malab
