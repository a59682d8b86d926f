#include "malab/tokenizer.hpp"

#include "malab/errors.hpp"

namespace malab {

std::vector<std::int32_t> tokenize(std::string_view bytes) {
  std::vector<std::int32_t> ids;
  ids.reserve(bytes.size());
  for (char c : bytes) ids.push_back(static_cast<std::int32_t>(static_cast<unsigned char>(c)));
  return ids;
}

std::string detokenize(std::span<const std::int32_t> ids, bool strict) {
  std::string out;
  out.reserve(ids.size());
  for (std::int32_t id : ids) {
    if (id >= 0 && id < 256) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    } else if (strict || !is_special(id)) {
      throw InputError("detokenize: id " + std::to_string(id) + " is not a byte");
    }
  }
  return out;
}

std::vector<std::int32_t> frame_document(std::string_view text, bool bos,
                                         const TokenizerOptions& opts) {
  std::vector<std::int32_t> ids;
  ids.reserve(text.size() + 2);
  if (bos) ids.push_back(opts.bos_id());
  for (char c : text) ids.push_back(static_cast<std::int32_t>(static_cast<unsigned char>(c)));
  ids.push_back(kEos);
  return ids;
}

bool is_special(std::int32_t id) { return id == kBos || id == kEos || id == kPad; }

}  // namespace malab
