#include "biasrec/money.hpp"

#include <cctype>

#include "biasrec/errors.hpp"
#include "biasrec/text.hpp"

namespace biasrec {

Money Money::from_cents(std::int64_t cents) {
    if (cents < 0) throw CatalogError("negative amount");
    Money m;
    m.cents_ = cents;
    return m;
}

Money Money::parse(std::string_view decimal) {
    const std::string_view s = trim(decimal);
    if (s.empty()) throw CatalogError("empty price");
    std::int64_t whole = 0;
    std::size_t i = 0;
    bool any_digit = false;
    for (; i < s.size() && s[i] != '.'; ++i) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        if (!std::isdigit(c)) throw CatalogError("bad price: " + std::string(s));
        whole = whole * 10 + (c - '0');
        if (whole > 92233720368547757ll) throw CatalogError("price out of range: " + std::string(s));
        any_digit = true;
    }
    std::int64_t frac = 0;
    if (i < s.size()) {
        ++i;  // skip '.'
        std::size_t digits = 0;
        for (; i < s.size(); ++i, ++digits) {
            const unsigned char c = static_cast<unsigned char>(s[i]);
            if (!std::isdigit(c) || digits >= 2) throw CatalogError("bad price: " + std::string(s));
            frac = frac * 10 + (c - '0');
        }
        if (digits == 0) throw CatalogError("bad price: " + std::string(s));
        if (digits == 1) frac *= 10;
    }
    if (!any_digit) throw CatalogError("bad price: " + std::string(s));
    return from_cents(whole * 100 + frac);
}

std::string Money::to_decimal_string() const {
    std::string out = std::to_string(cents_ / 100);
    const std::int64_t frac = cents_ % 100;
    out.push_back('.');
    out.push_back(static_cast<char>('0' + frac / 10));
    out.push_back(static_cast<char>('0' + frac % 10));
    return out;
}

std::string Money::to_display_string() const {
    const std::int64_t whole = cents_ / 100;
    const std::int64_t frac = cents_ % 100;
    std::string digits = std::to_string(whole);
    std::string grouped;
    grouped.reserve(digits.size() + digits.size() / 3);
    const std::size_t lead = digits.size() % 3 == 0 ? 3 : digits.size() % 3;
    for (std::size_t i = 0; i < digits.size(); ++i) {
        if (i > 0 && i >= lead && (i - lead) % 3 == 0) grouped.push_back(',');
        grouped.push_back(digits[i]);
    }
    std::string out = "$" + grouped;
    if (frac != 0) {
        out.push_back('.');
        out.push_back(static_cast<char>('0' + frac / 10));
        out.push_back(static_cast<char>('0' + frac % 10));
    }
    return out;
}

Money Money::half() const {
    return from_cents((cents_ + 1) / 2);
}

Money Money::per_day(std::int64_t days) const {
    if (days <= 0) throw CatalogError("per_day needs a positive day count");
    return from_cents((cents_ + days / 2) / days);
}

}  // namespace biasrec
