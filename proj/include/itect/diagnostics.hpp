#pragma once

#include <mutex>
#include <string>
#include <vector>

namespace itect {

enum class Severity { info, warning, error };

struct Diagnostic {
    Severity severity = Severity::warning;
    std::string code;     // short machine-readable tag, e.g. "unreadable-file"
    std::string message;
    std::string path;     // optional subject of the diagnostic
};

/**
 * Thread-safe collector for non-fatal problems (skipped files, detector
 * abstentions). Operations that tolerate bad inputs report here instead of
 * throwing; callers decide whether to print or inspect.
 */
class Diagnostics {
public:
    void report(Diagnostic d);
    void report(Severity s, std::string code, std::string message, std::string path = {});

    [[nodiscard]] std::vector<Diagnostic> entries() const;
    [[nodiscard]] std::size_t size() const;
    [[nodiscard]] std::size_t count(const std::string& code) const;

private:
    mutable std::mutex mutex_;
    std::vector<Diagnostic> entries_;
};

/// One JSON object per line: {"severity":..,"code":..,"message":..,"path":..}
std::string to_json_line(const Diagnostic& d);

const char* to_string(Severity s);

}  // namespace itect
