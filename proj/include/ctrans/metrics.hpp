#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctrans/common.hpp"

namespace ctrans {

// Measurement protocols: bits-per-character, tokenization-agnostic word-level
// perplexity, and the frequency-bucket breakdown over training-set counts.

inline double bits_per_character(double total_loss_nats, long n_chars) {
    if (n_chars <= 0) throw DegenerateInputError("bits_per_character: n_chars must be > 0");
    return total_loss_nats / (static_cast<double>(n_chars) * M_LN2);
}

// e^{L / n_words}: the total nats over the evaluated text normalized by its
// word count, independent of the tokenization that produced the loss.
inline double word_level_perplexity(double total_loss_nats, long n_words) {
    if (n_words <= 0) throw DegenerateInputError("word_level_perplexity: n_words must be > 0");
    return std::exp(total_loss_nats / static_cast<double>(n_words));
}

// Frequency buckets over training-set word counts. Boundary rule: a count
// strictly above 10,000 is ">10K"; [1,000, 10,000] is "1K-10K";
// [100, 1,000) is "100-1K"; everything below 100 (including words absent
// from the training set) is "<100".
inline const char* frequency_bucket(long train_count) {
    if (train_count > 10000) return ">10K";
    if (train_count >= 1000) return "1K-10K";
    if (train_count >= 100) return "100-1K";
    return "<100";
}

inline const std::vector<std::string>& bucket_order() {
    static const std::vector<std::string> order{">10K", "1K-10K", "100-1K", "<100", "All"};
    return order;
}

struct BucketPerplexity {
    std::string bucket;
    double ppl = 0.0;
    long word_count = 0;
};

// A word's loss is the sum of its tokens' losses. Callers provide the
// word-aligned losses directly (see word_align_losses); empty buckets are
// omitted, and "All" aggregates every word.
inline std::vector<BucketPerplexity> bucket_perplexity(const std::vector<std::pair<std::string, double>>& word_losses,
                                                       const std::unordered_map<std::string, long>& freq_table) {
    std::map<std::string, std::pair<double, long>> acc;  // bucket -> (loss sum, count)
    double all_sum = 0.0;
    long all_count = 0;
    for (const auto& [word, loss] : word_losses) {
        auto it = freq_table.find(word);
        long count = it == freq_table.end() ? 0 : it->second;
        auto& slot = acc[frequency_bucket(count)];
        slot.first += loss;
        slot.second += 1;
        all_sum += loss;
        all_count += 1;
    }
    std::vector<BucketPerplexity> out;
    for (const std::string& name : bucket_order()) {
        if (name == "All") {
            if (all_count > 0) out.push_back({name, std::exp(all_sum / static_cast<double>(all_count)), all_count});
            continue;
        }
        auto it = acc.find(name);
        if (it != acc.end() && it->second.second > 0) {
            out.push_back({name, std::exp(it->second.first / static_cast<double>(it->second.second)),
                           it->second.second});
        }
    }
    return out;
}

// Groups per-token losses of a character stream into per-word losses.
// Whitespace characters attach to the word that follows them; trailing
// whitespace with no following word attaches to the final word.
inline std::vector<std::pair<std::string, double>> word_align_losses(const std::string& text,
                                                                     const std::vector<double>& per_token_loss) {
    if (text.size() != per_token_loss.size()) throw DimensionError("word_align_losses: length mismatch");
    std::vector<std::pair<std::string, double>> words;
    std::string current;
    double loss = 0.0;
    bool in_word = false;
    auto flush = [&] {
        if (in_word) {
            words.emplace_back(current, loss);
            current.clear();
            loss = 0.0;
            in_word = false;
        }
    };
    for (size_t i = 0; i < text.size(); ++i) {
        char ch = text[i];
        bool ws = ch == ' ' || ch == '\n' || ch == '\t' || ch == '\r';
        if (ws) {
            flush();
            loss += per_token_loss[i];  // carried into the following word
        } else {
            current.push_back(ch);
            loss += per_token_loss[i];
            in_word = true;
        }
    }
    if (in_word) {
        words.emplace_back(current, loss);
    } else if (loss != 0.0 && !words.empty()) {
        words.back().second += loss;
    }
    return words;
}

}  // namespace ctrans
