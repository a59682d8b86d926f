#include "malab/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

#include "malab/errors.hpp"
#include "malab/ops.hpp"

namespace malab {

std::vector<std::string> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open corpus " + path.string());
  const auto ext = path.extension().string();
  const bool jsonl = ext == ".jsonl" || ext == ".json";
  std::vector<std::string> docs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!jsonl) {
      docs.push_back(line);
      continue;
    }
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!rec.is_object() || !rec.contains("text") || !rec["text"].is_string()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": record has no string \"text\" field");
    }
    docs.push_back(rec["text"].get<std::string>());
  }
  return docs;
}

std::size_t PackedWindow::unmasked() const {
  return static_cast<std::size_t>(
      std::ranges::count_if(targets, [](std::int32_t t) { return t != ops::kIgnore; }));
}

std::vector<PackedWindow> pack_stream(std::span<const std::int32_t> stream,
                                      std::size_t context_len) {
  if (context_len < 2) throw ConfigError("pack_sequences: context_len must be >= 2");
  std::vector<PackedWindow> out;
  for (std::size_t start = 0; start < stream.size(); start += context_len) {
    const std::size_t n = std::min(context_len, stream.size() - start);
    PackedWindow w;
    w.inputs.assign(context_len, kPad);
    w.targets.assign(context_len, ops::kIgnore);
    std::copy_n(stream.begin() + static_cast<std::ptrdiff_t>(start), n, w.inputs.begin());
    for (std::size_t i = 0; i + 1 < n; ++i) w.targets[i] = w.inputs[i + 1];
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<PackedWindow> pack_sequences(std::span<const std::string> documents,
                                         std::size_t context_len, const TokenizerOptions& opts) {
  std::vector<std::int32_t> stream;
  for (const auto& doc : documents) {
    auto framed = frame_document(doc, true, opts);
    stream.insert(stream.end(), framed.begin(), framed.end());
  }
  return pack_stream(stream, context_len);
}

std::vector<std::int32_t> evaluation_stream(std::span<const std::string> documents) {
  std::vector<std::int32_t> stream;
  for (const auto& doc : documents) {
    auto ids = tokenize(doc);
    stream.insert(stream.end(), ids.begin(), ids.end());
    stream.push_back(kEos);
  }
  return stream;
}

std::vector<std::vector<std::int32_t>> chunk_stream(std::span<const std::int32_t> stream,
                                                    std::size_t chunk_len,
                                                    std::size_t max_chunks) {
  if (chunk_len == 0) throw ConfigError("chunk_stream: chunk_len must be positive");
  std::vector<std::vector<std::int32_t>> out;
  for (std::size_t start = 0; start < stream.size(); start += chunk_len) {
    if (max_chunks && out.size() == max_chunks) break;
    const std::size_t n = std::min(chunk_len, stream.size() - start);
    out.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(start),
                     stream.begin() + static_cast<std::ptrdiff_t>(start + n));
  }
  return out;
}

BatchSampler::BatchSampler(const std::vector<PackedWindow>* windows, std::size_t batch_size,
                           std::uint64_t seed, std::size_t cursor)
    : windows_(windows), batch_size_(batch_size), seed_(seed), cursor_(cursor) {
  if (!windows_ || windows_->empty()) throw DomainError("batch sampler: no training windows");
  if (batch_size_ == 0) throw ConfigError("batch sampler: batch_size must be >= 1");
}

void BatchSampler::build_epoch(std::size_t epoch) {
  order_.resize(windows().size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::mt19937_64 rng(seed_ ^ (0x9E3779B97F4A7C15ULL * (epoch + 1)));
  // Fisher-Yates with an explicit draw keeps the order independent of the
  // standard library's shuffle implementation.
  for (std::size_t i = order_.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order_[i - 1], order_[j]);
  }
  epoch_ = epoch;
}

TrainBatch BatchSampler::next() {
  const std::size_t n = windows().size();
  const std::size_t ctx = windows().front().inputs.size();
  TrainBatch b;
  b.tokens.batch = batch_size_;
  b.tokens.seq_len = ctx;
  b.tokens.ids.reserve(batch_size_ * ctx);
  b.targets.reserve(batch_size_ * ctx);
  for (std::size_t i = 0; i < batch_size_; ++i, ++cursor_) {
    const std::size_t epoch = cursor_ / n;
    if (epoch != epoch_) build_epoch(epoch);
    const auto& w = windows()[order_[cursor_ % n]];
    b.tokens.ids.insert(b.tokens.ids.end(), w.inputs.begin(), w.inputs.end());
    b.targets.insert(b.targets.end(), w.targets.begin(), w.targets.end());
  }
  return b;
}

}  // namespace malab
