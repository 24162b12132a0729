#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace longlist {

// ---------------------------------------------------------------------------
// Error hierarchy. The CLI maps these onto exit codes:
//   ConfigError/InputError -> 2, ProviderError -> 3, StaleInputError -> 4.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct InputError : Error {
    using Error::Error;
};

struct StaleInputError : Error {
    using Error::Error;
};

struct ProviderError : Error {
    using Error::Error;
};

struct TransportError : ProviderError {
    using ProviderError::ProviderError;
};

struct RateLimitedError : ProviderError {
    double retry_after_seconds = 0.0;
    explicit RateLimitedError(const std::string& msg, double retry_after = 0.0)
        : ProviderError(msg), retry_after_seconds(retry_after) {}
};

struct MalformedResponseError : ProviderError {
    using ProviderError::ProviderError;
};

struct DimensionMismatchError : ProviderError {
    using ProviderError::ProviderError;
};

// ---------------------------------------------------------------------------
// Entity types
// ---------------------------------------------------------------------------

enum class EntityType { person, place, org };

inline std::string to_string(EntityType t) {
    switch (t) {
        case EntityType::person: return "person";
        case EntityType::place: return "place";
        case EntityType::org: return "org";
    }
    return "person";
}

inline EntityType entity_type_from_string(std::string_view s) {
    if (s == "person") return EntityType::person;
    if (s == "place") return EntityType::place;
    if (s == "org") return EntityType::org;
    throw InputError("unknown entity type: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Small string helpers
// ---------------------------------------------------------------------------

inline bool is_space_byte(char c) {
    return std::isspace(static_cast<unsigned char>(c)) != 0;
}

// Bytes >= 0x80 are treated as word bytes so multi-byte UTF-8 sequences are
// never split by boundary checks.
inline bool is_word_byte(char c) {
    unsigned char u = static_cast<unsigned char>(c);
    return std::isalnum(u) != 0 || u == '_' || u >= 0x80;
}

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_space_byte(s[b])) ++b;
    while (e > b && is_space_byte(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= s.size(); ++i) {
        if (i == s.size() || s[i] == sep) {
            out.emplace_back(s.substr(start, i - start));
            start = i + 1;
        }
    }
    return out;
}

inline bool starts_with_icase(std::string_view text, std::string_view prefix) {
    if (text.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(text[i])) !=
            std::tolower(static_cast<unsigned char>(prefix[i])))
            return false;
    }
    return true;
}

// Whitespace-delimited word tokens (word bytes per is_word_byte).
inline std::vector<std::string> word_tokens(std::string_view text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (!is_word_byte(text[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && is_word_byte(text[j])) ++j;
        out.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return out;
}

// Returns the byte offset of the first invalid UTF-8 sequence, or npos if the
// buffer is well-formed.
inline std::size_t first_invalid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        unsigned char c = static_cast<unsigned char>(s[i]);
        std::size_t len;
        std::uint32_t cp;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return i;
        }
        if (i + len > s.size()) return i;
        for (std::size_t k = 1; k < len; ++k) {
            unsigned char cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) return i;
            cp = (cp << 6) | (cc & 0x3F);
        }
        // Overlong encodings, surrogates, and out-of-range code points.
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
            (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
            (cp >= 0xD800 && cp <= 0xDFFF))
            return i;
        i += len;
    }
    return std::string_view::npos;
}

// Word-boundary-delimited occurrence test (exact byte match).
inline bool contains_word(std::string_view text, std::string_view word) {
    if (word.empty()) return false;
    std::size_t pos = 0;
    while ((pos = text.find(word, pos)) != std::string_view::npos) {
        bool left_ok = pos == 0 || !is_word_byte(text[pos - 1]);
        bool right_ok =
            pos + word.size() == text.size() || !is_word_byte(text[pos + word.size()]);
        if (left_ok && right_ok) return true;
        ++pos;
    }
    return false;
}

}  // namespace longlist
