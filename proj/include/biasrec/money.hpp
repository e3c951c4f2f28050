#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace biasrec {

// Exact currency amounts as integer cents. Prices survive halving, per-day
// division and JSON round-trips without drift; all rounding is half up.
class Money {
  public:
    Money() = default;

    static Money from_cents(std::int64_t cents);

    // Accepts "29", "29.0", "29.00", "1299.50". Rejects negatives, more than
    // two decimals and anything non-numeric. Throws CatalogError.
    static Money parse(std::string_view decimal);

    std::int64_t cents() const { return cents_; }
    double dollars() const { return static_cast<double>(cents_) / 100.0; }

    // Canonical form for files: always two decimals, "29.00".
    std::string to_decimal_string() const;

    // Human form used in prompts and reports: "$29", "$14.99", "$1,299".
    // Cents are shown only when nonzero.
    std::string to_display_string() const;

    // Half the amount, cents rounded half up.
    Money half() const;

    // Amount divided by `days`, rounded half up. Used for per-day framing.
    Money per_day(std::int64_t days) const;

    auto operator<=>(const Money&) const = default;

  private:
    std::int64_t cents_ = 0;
};

}  // namespace biasrec
