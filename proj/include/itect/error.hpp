#pragma once

#include <stdexcept>
#include <string>

namespace itect {

/// Failure category, mapped onto CLI exit codes (usage = 1, data = 2).
enum class ErrorKind { usage, data };

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what, ErrorKind kind = ErrorKind::data)
        : std::runtime_error(what), kind_(kind) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace itect
