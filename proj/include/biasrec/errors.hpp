#pragma once

#include <stdexcept>
#include <string>

namespace biasrec {

// Base for all library errors so callers can catch one type at the CLI edge.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct CatalogError : Error {
    using Error::Error;
};

struct AttackError : Error {
    using Error::Error;
};

struct GatewayError : Error {
    enum class Kind { transport, auth, rate_limited, malformed_reply, config, timeout };

    GatewayError(Kind k, const std::string& msg) : Error(msg), kind(k) {}

    Kind kind;
};

struct ParseError : Error {
    using Error::Error;
};

struct ArchiveError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace biasrec
