#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lpattn/error.hpp"
#include "lpattn/model.hpp"
#include "lpattn/ops.hpp"
#include "lpattn/rng.hpp"

namespace lpattn {

namespace utf8 {

/// Decodes UTF-8 into code points; returns false on malformed input.
inline bool decode(std::string_view text, std::vector<char32_t>& out) {
  out.clear();
  out.reserve(text.size());
  const auto* s = reinterpret_cast<const unsigned char*>(text.data());
  const std::size_t n = text.size();
  for (std::size_t i = 0; i < n;) {
    const unsigned char c = s[i];
    std::size_t len = 0;
    char32_t cp = 0;
    if (c < 0x80) {
      len = 1, cp = c;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2, cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3, cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4, cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > n) return false;
    for (std::size_t j = 1; j < len; ++j) {
      if ((s[i + j] & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (s[i + j] & 0x3F);
    }
    static constexpr std::array<char32_t, 5> min_cp{0, 0, 0x80, 0x800, 0x10000};
    if (cp < min_cp[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    out.push_back(cp);
    i += len;
  }
  return true;
}

inline void append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out += static_cast<char>(cp);
  } else if (cp < 0x800) {
    out += static_cast<char>(0xC0 | (cp >> 6));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else if (cp < 0x10000) {
    out += static_cast<char>(0xE0 | (cp >> 12));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  } else {
    out += static_cast<char>(0xF0 | (cp >> 18));
    out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
    out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
    out += static_cast<char>(0x80 | (cp & 0x3F));
  }
}

inline std::string encode(char32_t cp) {
  std::string s;
  append(s, cp);
  return s;
}

}  // namespace utf8

struct Corpus {
  std::string text;
  std::size_t char_count = 0;
  std::size_t line_count = 0;
};

inline Corpus corpus_from_text(std::string text, const std::string& origin = "<memory>") {
  std::vector<char32_t> cps;
  if (!utf8::decode(text, cps)) throw IoError(origin + ": not valid UTF-8");
  if (cps.empty()) throw CorpusError(origin + ": corpus is empty");
  Corpus c;
  c.char_count = cps.size();
  c.line_count = static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
  if (!text.empty() && text.back() != '\n') ++c.line_count;
  c.text = std::move(text);
  return c;
}

inline Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open corpus file");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(path.string() + ": read failed");
  return corpus_from_text(std::move(text), path.string());
}

/// Character vocabulary sorted by code point.
class CharVocab {
 public:
  CharVocab() = default;

  static CharVocab from_text(std::string_view text) {
    std::vector<char32_t> cps;
    if (!utf8::decode(text, cps)) throw EncodingError("vocabulary source is not valid UTF-8");
    std::sort(cps.begin(), cps.end());
    cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
    return CharVocab(std::move(cps));
  }

  /// Rebuilds a vocabulary from its symbols in id order (e.g. a checkpoint).
  static CharVocab from_symbols(std::string_view symbols) {
    std::vector<char32_t> cps;
    if (!utf8::decode(symbols, cps)) throw EncodingError("vocabulary symbols are not valid UTF-8");
    if (!std::is_sorted(cps.begin(), cps.end()) || std::adjacent_find(cps.begin(), cps.end()) != cps.end()) {
      throw EncodingError("vocabulary symbols must be strictly increasing code points");
    }
    return CharVocab(std::move(cps));
  }

  std::size_t size() const { return symbols_.size(); }
  char32_t symbol(TokenId id) const { return symbols_.at(static_cast<std::size_t>(id)); }

  /// All symbols concatenated in id order, as UTF-8.
  std::string symbols_utf8() const {
    std::string s;
    for (char32_t cp : symbols_) utf8::append(s, cp);
    return s;
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<char32_t> cps;
    if (!utf8::decode(text, cps)) throw EncodingError("text to encode is not valid UTF-8");
    std::vector<TokenId> ids;
    ids.reserve(cps.size());
    for (std::size_t i = 0; i < cps.size(); ++i) {
      auto it = ids_.find(cps[i]);
      if (it == ids_.end()) {
        throw EncodingError("character '" + utf8::encode(cps[i]) + "' at position " + std::to_string(i) +
                            " is not in the vocabulary");
      }
      ids.push_back(it->second);
    }
    return ids;
  }

  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
        throw EncodingError("token id " + std::to_string(id) + " is outside the vocabulary");
      }
      utf8::append(out, symbols_[static_cast<std::size_t>(id)]);
    }
    return out;
  }

 private:
  explicit CharVocab(std::vector<char32_t> symbols) : symbols_(std::move(symbols)) {
    for (std::size_t i = 0; i < symbols_.size(); ++i) ids_.emplace(symbols_[i], static_cast<TokenId>(i));
  }

  std::vector<char32_t> symbols_;
  std::map<char32_t, TokenId> ids_;
};

struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

/// One fold of a contiguous K-fold split over a token stream of length n.
struct FoldPlan {
  std::size_t k = 1;
  std::size_t fold_index = 0;
  std::size_t n = 0;
  Span val;

  /// Complement of the validation span, in order; empty pieces are omitted.
  std::vector<Span> train_spans() const {
    std::vector<Span> out;
    if (val.begin > 0) out.push_back({0, val.begin});
    if (val.end < n) out.push_back({val.end, n});
    return out;
  }
};

/// Balanced contiguous partition of [0, n) into k spans; the first n % k
/// folds are one token longer. Every span must hold at least `min_span`
/// tokens (context_len + 1 for training).
inline std::vector<FoldPlan> make_folds(std::size_t n, std::size_t k, std::size_t min_span = 1) {
  if (k == 0) throw ConfigError("make_folds: k must be positive");
  if (n < k * min_span) {
    throw ConfigError("make_folds: " + std::to_string(n) + " tokens cannot form " + std::to_string(k) +
                      " folds of at least " + std::to_string(min_span) + " tokens");
  }
  const std::size_t base = n / k;
  const std::size_t rem = n % k;
  std::vector<FoldPlan> folds;
  std::size_t start = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t len = base + (i < rem ? 1 : 0);
    folds.push_back(FoldPlan{k, i, n, {start, start + len}});
    start += len;
  }
  return folds;
}

struct Batch {
  TokenBatch inputs;
  std::vector<TokenId> targets;
  std::vector<std::size_t> offsets;  // window start of each row
};

inline Batch window_batch(std::span<const TokenId> tokens, std::span<const std::size_t> offsets, std::size_t context_len) {
  Batch b;
  b.inputs.batch = offsets.size();
  b.inputs.time = context_len;
  b.inputs.ids.reserve(offsets.size() * context_len);
  b.targets.reserve(offsets.size() * context_len);
  for (std::size_t off : offsets) {
    if (off + context_len + 1 > tokens.size()) throw IndexError("window at offset " + std::to_string(off) + " overruns the token stream");
    b.inputs.ids.insert(b.inputs.ids.end(), tokens.begin() + off, tokens.begin() + off + context_len);
    b.targets.insert(b.targets.end(), tokens.begin() + off + 1, tokens.begin() + off + context_len + 1);
  }
  b.offsets.assign(offsets.begin(), offsets.end());
  return b;
}

/// Uniformly samples next-token windows that lie wholly inside one training
/// span of a fold. Windows never straddle the held-out span.
class BatchSampler {
 public:
  BatchSampler(std::span<const TokenId> tokens, const FoldPlan& fold, std::size_t context_len, std::uint64_t seed)
      : tokens_(tokens), context_len_(context_len), rng_(seed) {
    if (fold.n != tokens.size()) throw ConfigError("sampler: fold plan does not match token stream length");
    for (const auto& s : fold.train_spans()) {
      if (s.size() < context_len + 1) continue;
      ranges_.push_back({s.begin, s.end - context_len});  // valid offsets [begin, end - T)
      total_ += ranges_.back().size();
    }
    if (total_ == 0) throw ConfigError("sampler: no training span can hold a window of " + std::to_string(context_len + 1) + " tokens");
  }

  std::size_t valid_offsets() const { return total_; }
  std::size_t context_len() const { return context_len_; }

  Batch sample_batch(std::size_t batch_size) {
    std::vector<std::size_t> offsets(batch_size);
    for (auto& off : offsets) off = offset_at(static_cast<std::size_t>(uniform01(rng_) * static_cast<double>(total_)));
    return window_batch(tokens_, offsets, context_len_);
  }

 private:
  std::size_t offset_at(std::size_t r) const {
    for (const auto& s : ranges_) {
      if (r < s.size()) return s.begin + r;
      r -= s.size();
    }
    return ranges_.back().end - 1;
  }

  std::span<const TokenId> tokens_;
  std::size_t context_len_;
  Rng rng_;
  std::vector<Span> ranges_;
  std::size_t total_ = 0;
};

/// Token cache file: 8-byte magic "LPATOKEN", uint32 version, uint32
/// reserved (0), uint64 count, then `count` little-endian uint16 ids.
namespace token_cache {

inline constexpr std::array<char, 8> kMagic{'L', 'P', 'A', 'T', 'O', 'K', 'E', 'N'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {
template <typename U>
void put_le(std::ostream& os, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
}
template <typename U>
U get_le(std::istream& is) {
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == EOF) throw IoError("token cache: truncated file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return static_cast<U>(v);
}
}  // namespace detail

inline void write(const std::filesystem::path& path, std::span<const TokenId> ids) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError(path.string() + ": cannot write token cache");
  os.write(kMagic.data(), kMagic.size());
  detail::put_le<std::uint32_t>(os, kVersion);
  detail::put_le<std::uint32_t>(os, 0);
  detail::put_le<std::uint64_t>(os, ids.size());
  for (TokenId id : ids) {
    if (id < 0 || id > 0xFFFF) throw EncodingError("token cache: id " + std::to_string(id) + " does not fit in uint16");
    detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(id));
  }
  if (!os) throw IoError(path.string() + ": write failed");
}

inline std::vector<TokenId> read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(path.string() + ": cannot open token cache");
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw IoError(path.string() + ": not a token cache (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kVersion) throw IoError(path.string() + ": unsupported token cache version " + std::to_string(version));
  detail::get_le<std::uint32_t>(is);
  const auto count = detail::get_le<std::uint64_t>(is);
  if (count > (std::filesystem::file_size(path) - 24) / 2) throw IoError(path.string() + ": token count exceeds file size");
  std::vector<TokenId> ids(count);
  for (auto& id : ids) id = detail::get_le<std::uint16_t>(is);
  return ids;
}

}  // namespace token_cache

}  // namespace lpattn
