#include "alseg/kv_document.hpp"

#include "alseg/error.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace alseg {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

} // namespace

KvDocument KvDocument::parse(std::string_view text) {
    KvDocument doc;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto eol = text.find('\n');
        const auto line = trim(text.substr(0, eol));
        text = eol == std::string_view::npos ? std::string_view{} : text.substr(eol + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            fail(ErrorCode::InvalidArgument, fmt::format("line {}: expected 'key = value'", line_no));
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) {
            fail(ErrorCode::InvalidArgument, fmt::format("line {}: empty key", line_no));
        }
        doc.add(std::string(key), std::string(trim(line.substr(eq + 1))));
    }
    return doc;
}

KvDocument KvDocument::read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::Io, "cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string KvDocument::to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    }
    return out;
}

void KvDocument::write_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorCode::Io, "cannot write " + path);
    }
    out << to_string();
    if (!out) {
        fail(ErrorCode::Io, "write failed: " + path);
    }
}

void KvDocument::add(std::string key, std::string value) {
    entries_.emplace_back(std::move(key), std::move(value));
}

void KvDocument::set(const std::string& key, std::string value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = std::move(value);
            return;
        }
    }
    add(key, std::move(value));
}

bool KvDocument::has(const std::string& key) const { return find(key).has_value(); }

std::optional<std::string> KvDocument::find(const std::string& key) const {
    // Last occurrence wins for scalar lookups.
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        if (it->first == key) {
            return it->second;
        }
    }
    return std::nullopt;
}

std::vector<std::string> KvDocument::all(const std::string& key) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) {
        if (k == key) {
            out.push_back(v);
        }
    }
    return out;
}

std::string KvDocument::get(const std::string& key) const {
    auto v = find(key);
    if (!v) {
        fail(ErrorCode::InvalidArgument, "missing key '" + key + "'");
    }
    return *v;
}

std::string KvDocument::get_or(const std::string& key, std::string fallback) const {
    auto v = find(key);
    return v ? *v : std::move(fallback);
}

long long KvDocument::get_int(const std::string& key) const { return parse_int(get(key)); }

long long KvDocument::get_int_or(const std::string& key, long long fallback) const {
    auto v = find(key);
    return v ? parse_int(*v) : fallback;
}

double KvDocument::get_double(const std::string& key) const { return parse_double(get(key)); }

double KvDocument::get_double_or(const std::string& key, double fallback) const {
    auto v = find(key);
    return v ? parse_double(*v) : fallback;
}

std::vector<std::string> split_tokens(std::string_view text, std::string_view separators) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        const auto start = text.find_first_not_of(separators, pos);
        if (start == std::string_view::npos) {
            break;
        }
        const auto end = text.find_first_of(separators, start);
        out.emplace_back(text.substr(start, end == std::string_view::npos ? end : end - start));
        pos = end == std::string_view::npos ? text.size() : end;
    }
    return out;
}

long long parse_int(std::string_view token) {
    token = trim(token);
    if (!token.empty() && token.front() == '+') {
        token.remove_prefix(1);
    }
    long long value = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size() || token.empty()) {
        fail(ErrorCode::InvalidArgument, "not an integer: '" + std::string(token) + "'");
    }
    return value;
}

double parse_double(std::string_view token) {
    token = trim(token);
    if (!token.empty() && token.front() == '+') {
        token.remove_prefix(1);
    }
    double value = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc{} || ptr != token.data() + token.size() || token.empty()) {
        fail(ErrorCode::InvalidArgument, "not a number: '" + std::string(token) + "'");
    }
    return value;
}

std::string format_double(double value) {
    // Shortest representation that round-trips exactly.
    return fmt::format("{}", value);
}

} // namespace alseg
