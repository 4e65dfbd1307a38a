#pragma once

// Deterministic stand-in for a CLIP text encoder: whitespace tokenizer plus
// hash-seeded token and position embeddings. Sequence layout follows CLIP:
// <bos> words... <eos> <pad>..., fixed length.

#include <algorithm>
#include <cctype>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "chromalign/core/error.hpp"
#include "chromalign/core/hash.hpp"
#include "chromalign/core/tensor.hpp"

namespace chromalign {

inline constexpr std::string_view kBosToken = "<bos>";
inline constexpr std::string_view kEosToken = "<eos>";
inline constexpr std::string_view kPadToken = "<pad>";

inline std::vector<std::string> split_words(std::string_view prompt) {
    std::vector<std::string> words;
    std::string cur;
    for (char ch : prompt) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || ch == '-' || ch == '\'') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

class StubTextEncoder {
public:
    StubTextEncoder(int context_length, int dim, std::uint64_t seed)
        : length_(context_length), dim_(dim), seed_(seed) {
        require(context_length >= 2, "context length must hold <bos> and <eos>");
        require(dim > 0, "embedding width must be positive");
    }

    int context_length() const noexcept { return length_; }
    int dim() const noexcept { return dim_; }

    std::vector<std::string> tokenize(std::string_view prompt) const {
        std::vector<std::string> seq{std::string(kBosToken)};
        for (auto& w : split_words(prompt)) {
            if (static_cast<int>(seq.size()) >= length_ - 1) break;
            seq.push_back(std::move(w));
        }
        seq.emplace_back(kEosToken);
        while (static_cast<int>(seq.size()) < length_) seq.emplace_back(kPadToken);
        return seq;
    }

    Matrix encode(std::string_view prompt) const {
        const auto seq = tokenize(prompt);
        Matrix out(length_, dim_);
        for (int i = 0; i < length_; ++i) {
            const RowVector tok = vector_for(fnv1a64(seq[static_cast<std::size_t>(i)], seed_), 1.0f);
            const RowVector pos = vector_for(splitmix64(seed_ ^ (0x5bd1e995ull * (i + 1))), 0.3f);
            out.row(i) = tok + pos;
        }
        return out;
    }

private:
    RowVector vector_for(std::uint64_t key, float scale) const {
        std::mt19937_64 rng(splitmix64(key));
        std::normal_distribution<float> n(0.0f, scale);
        RowVector v(dim_);
        for (int j = 0; j < dim_; ++j) v(j) = n(rng);
        return v;
    }

    int length_;
    int dim_;
    std::uint64_t seed_;
};

// Position of a prompt word in the tokenized sequence (first occurrence).
inline int token_position(const std::vector<std::string>& tokens, std::string_view word) {
    const auto words = split_words(word);
    if (words.size() == 1) {
        for (std::size_t i = 0; i < tokens.size(); ++i)
            if (tokens[i] == words[0]) return static_cast<int>(i);
    }
    std::string available;
    for (const auto& t : tokens)
        if (t.front() != '<') available += (available.empty() ? "" : ", ") + t;
    throw NotFoundError("token '" + std::string(word) + "' not in prompt; available tokens: " + available);
}

}  // namespace chromalign
