#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ctrans/common.hpp"

namespace ctrans {

// Corpus ingestion: byte-level and word-level tokenization, training-set
// frequency tables, contiguous batch windows that never reset state, and the
// synthetic long-range recall task.

enum class TokenKind { Char, Word };

struct Vocabulary {
    TokenKind kind = TokenKind::Char;
    std::vector<std::string> id_to_surface;
    std::unordered_map<std::string, int> surface_to_id;
    int unk_id = -1;  // word kind only

    long size() const { return static_cast<long>(id_to_surface.size()); }
};

struct TokenStream {
    TokenKind kind = TokenKind::Char;
    std::vector<int> ids;
    Vocabulary vocab;
    std::vector<std::string> surfaces;  // word kind: surface per token (pre-OOV mapping)

    long size() const { return static_cast<long>(ids.size()); }
};

namespace detail {

inline bool is_word_space(unsigned char c) { return c == ' ' || c == '\n' || c == '\t' || c == '\r'; }
inline bool is_word_char(unsigned char c) { return std::isalnum(c) != 0 || c == '_' || c >= 0x80; }

inline void require_utf8(const std::string& text) {
    size_t i = 0;
    while (i < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        size_t extra;
        if (c < 0x80) extra = 0;
        else if ((c >> 5) == 0x6) extra = 1;
        else if ((c >> 4) == 0xE) extra = 2;
        else if ((c >> 3) == 0x1E) extra = 3;
        else throw DataError("tokenize: invalid UTF-8 at byte " + std::to_string(i));
        if (i + extra >= text.size()) throw DataError("tokenize: truncated UTF-8 at byte " + std::to_string(i));
        for (size_t k = 1; k <= extra; ++k) {
            if ((static_cast<unsigned char>(text[i + k]) >> 6) != 0x2) {
                throw DataError("tokenize: invalid UTF-8 at byte " + std::to_string(i + k));
            }
        }
        i += extra + 1;
    }
}

// Whitespace separates; runs of word characters form one token; every other
// byte (punctuation) is its own token.
inline std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < text.size()) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_word_space(c)) {
            ++i;
            continue;
        }
        if (is_word_char(c)) {
            size_t j = i;
            while (j < text.size() && is_word_char(static_cast<unsigned char>(text[j]))) ++j;
            out.emplace_back(text.substr(i, j - i));
            i = j;
        } else {
            out.emplace_back(1, text[i]);
            ++i;
        }
    }
    return out;
}

}  // namespace detail

inline Vocabulary char_vocabulary() {
    Vocabulary v;
    v.kind = TokenKind::Char;
    v.id_to_surface.reserve(256);
    for (int b = 0; b < 256; ++b) v.id_to_surface.emplace_back(1, static_cast<char>(b));
    return v;
}

// Builds a vocabulary from training text: char kind is the fixed byte table;
// word kind assigns ids in first-appearance order after a reserved
// unknown-word slot.
inline Vocabulary build_vocabulary(const std::string& train_text, TokenKind kind) {
    if (kind == TokenKind::Char) return char_vocabulary();
    detail::require_utf8(train_text);
    Vocabulary v;
    v.kind = TokenKind::Word;
    v.id_to_surface.push_back("<unk>");
    v.surface_to_id.emplace("<unk>", 0);
    v.unk_id = 0;
    for (const std::string& w : detail::split_words(train_text)) {
        if (v.surface_to_id.emplace(w, static_cast<int>(v.id_to_surface.size())).second) {
            v.id_to_surface.push_back(w);
        }
    }
    return v;
}

// Tokenizes with an existing vocabulary; word kind maps unseen words to the
// reserved unknown id.
inline TokenStream tokenize_with(const Vocabulary& vocab, const std::string& text) {
    TokenStream s;
    s.kind = vocab.kind;
    s.vocab = vocab;
    if (vocab.kind == TokenKind::Char) {
        s.ids.reserve(text.size());
        for (char ch : text) s.ids.push_back(static_cast<int>(static_cast<unsigned char>(ch)));
        return s;
    }
    detail::require_utf8(text);
    for (std::string& w : detail::split_words(text)) {
        auto it = vocab.surface_to_id.find(w);
        s.ids.push_back(it == vocab.surface_to_id.end() ? vocab.unk_id : it->second);
        s.surfaces.push_back(std::move(w));
    }
    return s;
}

// Single-text convenience: build the vocabulary from the text, then tokenize it.
inline TokenStream tokenize(const std::string& text, TokenKind kind) {
    return tokenize_with(build_vocabulary(text, kind), text);
}

inline std::string detokenize(const TokenStream& s) {
    if (s.kind != TokenKind::Char) throw ContractError("detokenize: char streams only");
    std::string out;
    out.reserve(s.ids.size());
    for (int id : s.ids) out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    return out;
}

// Exact word counts over the training split, keyed by surface form.
inline std::unordered_map<std::string, long> frequency_table(const TokenStream& train) {
    if (train.kind != TokenKind::Word) throw ContractError("frequency_table: word streams only");
    std::unordered_map<std::string, long> counts;
    for (const std::string& w : train.surfaces) ++counts[w];
    return counts;
}

struct Batch {
    std::vector<std::vector<int>> inputs;   // B rows of n_s ids
    std::vector<std::vector<int>> targets;  // inputs shifted by one within the shard
};

// The stream is cut into B contiguous shards; batch t pairs window t of every
// shard. Each row advances by exactly n_s tokens per batch, so carrying the
// model state forward sees each shard as one unbroken sequence. Final partial
// windows are dropped.
class ContiguousBatches {
  public:
    ContiguousBatches(std::vector<int> stream, long batch_size, long n_s)
        : stream_(std::move(stream)), batch_size_(batch_size), n_s_(n_s) {
        if (batch_size < 1 || n_s < 1) throw ConfigError("contiguous_batches: batch_size and n_s must be >= 1");
        if (static_cast<long>(stream_.size()) < batch_size * (n_s + 1)) {
            throw DegenerateInputError("contiguous_batches: stream of " + std::to_string(stream_.size()) +
                                       " tokens cannot fill " + std::to_string(batch_size) + " shards of n_s=" +
                                       std::to_string(n_s));
        }
        shard_len_ = static_cast<long>(stream_.size()) / batch_size;
        windows_ = (shard_len_ - 1) / n_s;
    }

    long batch_count() const { return windows_; }
    long shard_len() const { return shard_len_; }

    Batch get(long t) const {
        if (t < 0 || t >= windows_) throw ContractError("contiguous_batches: batch index out of range");
        Batch b;
        b.inputs.resize(static_cast<size_t>(batch_size_));
        b.targets.resize(static_cast<size_t>(batch_size_));
        for (long row = 0; row < batch_size_; ++row) {
            long base = row * shard_len_ + t * n_s_;
            auto& in = b.inputs[static_cast<size_t>(row)];
            auto& tg = b.targets[static_cast<size_t>(row)];
            in.assign(stream_.begin() + base, stream_.begin() + base + n_s_);
            tg.assign(stream_.begin() + base + 1, stream_.begin() + base + n_s_ + 1);
        }
        return b;
    }

  private:
    std::vector<int> stream_;
    long batch_size_ = 0, n_s_ = 0, shard_len_ = 0, windows_ = 0;
};

// Long-range recall: each fixed-length episode plants a (cue, payload) pair,
// waits out D filler tokens, then repeats the cue; the token after the
// repeated cue is the payload again, so a language model scores recall as
// ordinary next-token prediction at the query position.
struct SyntheticTaskSpec {
    long vocab_size = 32;   // id 0 = cue, ids 1..A = payload alphabet, rest filler
    long distance = 8;      // filler tokens between the pair and the repeated cue
    long episode_len = 0;   // 0 = minimal (distance + 4)
    long episodes = 100;
    uint64_t seed = 1;

    long payload_alphabet() const { return (vocab_size - 1) / 2; }

    void validate() const {
        if (vocab_size < 5) throw ConfigError("synthetic_recall: vocab_size must be >= 5");
        if (distance < 0) throw ConfigError("synthetic_recall: distance must be >= 0");
        long minimal = distance + 4;
        if (episode_len != 0 && episode_len < minimal) {
            throw ConfigError("synthetic_recall: episode_len must be >= distance + 4");
        }
        if (episodes < 1) throw ConfigError("synthetic_recall: episodes must be >= 1");
    }
};

struct SyntheticData {
    std::vector<int> tokens;
    std::vector<long> query_positions;  // index of the repeated cue; target there is the payload
    std::vector<int> payloads;
    long episode_len = 0;
    int cue_id = 0;
    long payload_alphabet = 0;
};

inline SyntheticData synthetic_recall(const SyntheticTaskSpec& spec) {
    spec.validate();
    long L = spec.episode_len == 0 ? spec.distance + 4 : spec.episode_len;
    long lead = L - (spec.distance + 4);  // filler before the cue
    long A = spec.payload_alphabet();
    int filler_lo = static_cast<int>(1 + A);
    int filler_n = static_cast<int>(spec.vocab_size - filler_lo);
    SyntheticData out;
    out.episode_len = L;
    out.cue_id = 0;
    out.payload_alphabet = A;
    out.tokens.reserve(static_cast<size_t>(L * spec.episodes));
    auto rng = make_rng(spec.seed, 0);
    std::uniform_int_distribution<int> pay(1, static_cast<int>(A));
    std::uniform_int_distribution<int> fill(filler_lo, filler_lo + filler_n - 1);
    for (long e = 0; e < spec.episodes; ++e) {
        int payload = pay(rng);
        for (long k = 0; k < lead; ++k) out.tokens.push_back(fill(rng));
        out.tokens.push_back(out.cue_id);
        out.tokens.push_back(payload);
        for (long k = 0; k < spec.distance; ++k) out.tokens.push_back(fill(rng));
        out.query_positions.push_back(static_cast<long>(out.tokens.size()));
        out.tokens.push_back(out.cue_id);
        out.tokens.push_back(payload);
        out.payloads.push_back(payload);
    }
    return out;
}

}  // namespace ctrans
