#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace malab {

// Byte-level vocabulary: ids 0-255 are raw bytes, then three specials.
inline constexpr std::int32_t kBos = 256;
inline constexpr std::int32_t kEos = 257;
inline constexpr std::int32_t kPad = 258;
inline constexpr std::size_t kByteVocab = 259;

struct TokenizerOptions {
  /// Use the EOS id for BOS too, as GPT-2 tokenizers do.
  bool alias_bos_eos = false;

  std::int32_t bos_id() const { return alias_bos_eos ? kEos : kBos; }
};

std::vector<std::int32_t> tokenize(std::string_view bytes);

/// Inverse of tokenize. Special ids are dropped unless `strict`, in which
/// case they raise InputError.
std::string detokenize(std::span<const std::int32_t> ids, bool strict = false);

/// [BOS] bytes [EOS]; BOS omitted when `bos` is false.
std::vector<std::int32_t> frame_document(std::string_view text, bool bos = true,
                                         const TokenizerOptions& opts = {});

bool is_special(std::int32_t id);

}  // namespace malab
