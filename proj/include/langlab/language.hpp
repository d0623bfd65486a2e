#pragma once

// Language identity: ISO-639-3 code plus ISO-15924 script. The pair is the
// identity key everywhere; the same code may appear in multiple scripts.

#include <compare>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace langlab {

struct LanguageId {
    std::string code;    // lowercase, 2-3 alphabetic characters
    std::string script;  // 4 characters, title-case, e.g. "Latn"

    auto operator<=>(const LanguageId&) const = default;

    std::string str() const { return code + "_" + script; }
};

inline bool valid_language_code(std::string_view code) {
    if (code.size() < 2 || code.size() > 3) return false;
    for (char c : code) {
        if (c < 'a' || c > 'z') return false;
    }
    return true;
}

inline bool valid_script_code(std::string_view script) {
    if (script.size() != 4) return false;
    if (script[0] < 'A' || script[0] > 'Z') return false;
    for (std::size_t i = 1; i < 4; ++i) {
        if (script[i] < 'a' || script[i] > 'z') return false;
    }
    return true;
}

inline LanguageId make_language(std::string_view code, std::string_view script) {
    if (!valid_language_code(code)) {
        throw std::invalid_argument("bad language code: " + std::string(code));
    }
    if (!valid_script_code(script)) {
        throw std::invalid_argument("bad script code: " + std::string(script));
    }
    return LanguageId{std::string(code), std::string(script)};
}

// Parses "eng_Latn".
inline LanguageId parse_language(std::string_view tag) {
    const auto sep = tag.find('_');
    if (sep == std::string_view::npos) {
        throw std::invalid_argument("bad language tag: " + std::string(tag));
    }
    return make_language(tag.substr(0, sep), tag.substr(sep + 1));
}

}  // namespace langlab

template <>
struct std::hash<langlab::LanguageId> {
    std::size_t operator()(const langlab::LanguageId& id) const noexcept {
        const std::size_t h1 = std::hash<std::string>{}(id.code);
        const std::size_t h2 = std::hash<std::string>{}(id.script);
        return h1 ^ (h2 + 0x9e3779b97f4a7c15ULL + (h1 << 6) + (h1 >> 2));
    }
};
