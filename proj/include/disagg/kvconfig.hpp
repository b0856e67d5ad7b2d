#pragma once

#include <string>
#include <vector>

namespace disagg {

/// Flat `key = value` document with one level of [section] grouping.
/// Keys are addressed as "section.key"; insertion order is preserved on
/// output so serialized documents diff cleanly.
class KvDoc {
  public:
    static KvDoc parse(const std::string& text);
    static KvDoc load_file(const std::string& path);

    bool has(const std::string& key) const;
    const std::string& get(const std::string& key) const;
    std::string get_or(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    void set(const std::string& key, const std::string& value);
    void set_int(const std::string& key, long value);
    void set_double(const std::string& key, double value);
    void set_bool(const std::string& key, bool value);

    /// Keys of one section, in insertion order.
    std::vector<std::string> section_keys(const std::string& section) const;

    std::string str() const;
    void save_file(const std::string& path) const;

  private:
    std::vector<std::pair<std::string, std::string>> entries_;
    std::pair<std::string, std::string>* find(const std::string& key);
    const std::pair<std::string, std::string>* find(const std::string& key) const;
};

}  // namespace disagg
