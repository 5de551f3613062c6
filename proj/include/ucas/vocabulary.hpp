#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ucas/error.hpp"

namespace ucas {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

/// Fixed symbol table: digits 0-9, '+', '=', the answer delimiter '#',
/// end-of-sequence and padding. Ids are dense.
struct Vocabulary {
    static constexpr TokenId kPlus = 10;
    static constexpr TokenId kEquals = 11;
    static constexpr TokenId kAnswer = 12;
    static constexpr TokenId kEos = 13;
    static constexpr TokenId kPad = 14;
    static constexpr int kSize = 15;

    static constexpr bool contains(TokenId t) { return t >= 0 && t < kSize; }
    static constexpr bool is_digit(TokenId t) { return t >= 0 && t <= 9; }

    /// Text glyphs; EOS renders as '$' and padding as '_'.
    static constexpr char glyph(TokenId t) {
        constexpr char table[kSize + 1] = "0123456789+=#$_";
        return contains(t) ? table[t] : '?';
    }

    static std::optional<TokenId> from_glyph(char c) {
        if (c >= '0' && c <= '9') return static_cast<TokenId>(c - '0');
        switch (c) {
            case '+': return kPlus;
            case '=': return kEquals;
            case '#': return kAnswer;
            case '$': return kEos;
            case '_': return kPad;
            default: return std::nullopt;
        }
    }

    static TokenSeq encode(std::string_view text) {
        TokenSeq out;
        out.reserve(text.size());
        for (char c : text) {
            const auto t = from_glyph(c);
            if (!t) throw InvalidInput(std::string("unknown symbol '") + c + "'");
            out.push_back(*t);
        }
        return out;
    }

    static std::string decode(const TokenSeq& tokens) {
        std::string out;
        out.reserve(tokens.size());
        for (TokenId t : tokens) out.push_back(glyph(t));
        return out;
    }
};

}  // namespace ucas
