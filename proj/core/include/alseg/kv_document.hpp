#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace alseg {

/// Ordered `key = value` text document. Keys may repeat; `#` starts a comment line.
class KvDocument {
public:
    static KvDocument parse(std::string_view text);
    static KvDocument read_file(const std::string& path);

    std::string to_string() const;
    void write_file(const std::string& path) const;

    void add(std::string key, std::string value);
    void set(const std::string& key, std::string value);

    bool has(const std::string& key) const;
    std::optional<std::string> find(const std::string& key) const;
    std::vector<std::string> all(const std::string& key) const;

    // Typed accessors throw InvalidArgument on a missing key or a malformed value.
    std::string get(const std::string& key) const;
    std::string get_or(const std::string& key, std::string fallback) const;
    long long get_int(const std::string& key) const;
    long long get_int_or(const std::string& key, long long fallback) const;
    double get_double(const std::string& key) const;
    double get_double_or(const std::string& key, double fallback) const;

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

private:
    std::vector<std::pair<std::string, std::string>> entries_;
};

// Whitespace/comma tokenizing helpers shared by the text formats.
std::vector<std::string> split_tokens(std::string_view text, std::string_view separators = " \t,");
long long parse_int(std::string_view token);
double parse_double(std::string_view token);
std::string format_double(double value);

} // namespace alseg
