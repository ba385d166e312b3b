#include "itect/diagnostics.hpp"

#include <algorithm>

#include <json.hpp>

namespace itect {

void Diagnostics::report(Diagnostic d) {
    std::lock_guard lock(mutex_);
    entries_.push_back(std::move(d));
}

void Diagnostics::report(Severity s, std::string code, std::string message, std::string path) {
    report(Diagnostic{s, std::move(code), std::move(message), std::move(path)});
}

std::vector<Diagnostic> Diagnostics::entries() const {
    std::lock_guard lock(mutex_);
    return entries_;
}

std::size_t Diagnostics::size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
}

std::size_t Diagnostics::count(const std::string& code) const {
    std::lock_guard lock(mutex_);
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(),
                                                  [&](const Diagnostic& d) { return d.code == code; }));
}

const char* to_string(Severity s) {
    switch (s) {
        case Severity::info: return "info";
        case Severity::warning: return "warning";
        case Severity::error: return "error";
    }
    return "error";
}

std::string to_json_line(const Diagnostic& d) {
    nlohmann::ordered_json j;
    j["severity"] = to_string(d.severity);
    j["code"] = d.code;
    j["message"] = d.message;
    if (!d.path.empty()) j["path"] = d.path;
    return j.dump();
}

}  // namespace itect
