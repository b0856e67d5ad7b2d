#include "disagg/kvconfig.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "disagg/errors.hpp"

namespace disagg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

KvDoc KvDoc::parse(const std::string& text) {
    KvDoc doc;
    std::istringstream in(text);
    std::string line, section;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("config line " + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": empty key");
        doc.set(section.empty() ? key : section + "." + key, value);
    }
    return doc;
}

KvDoc KvDoc::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::pair<std::string, std::string>* KvDoc::find(const std::string& key) {
    for (auto& e : entries_)
        if (e.first == key) return &e;
    return nullptr;
}

const std::pair<std::string, std::string>* KvDoc::find(const std::string& key) const {
    for (const auto& e : entries_)
        if (e.first == key) return &e;
    return nullptr;
}

bool KvDoc::has(const std::string& key) const { return find(key) != nullptr; }

const std::string& KvDoc::get(const std::string& key) const {
    const auto* e = find(key);
    if (!e) throw ConfigError("missing config key: " + key);
    return e->second;
}

std::string KvDoc::get_or(const std::string& key, const std::string& fallback) const {
    const auto* e = find(key);
    return e ? e->second : fallback;
}

long KvDoc::get_int(const std::string& key) const {
    const std::string& v = get(key);
    try {
        size_t pos = 0;
        const long r = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw ConfigError("config key " + key + ": '" + v + "' is not an integer");
    }
}

double KvDoc::get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (...) {
        throw ConfigError("config key " + key + ": '" + v + "' is not a number");
    }
}

bool KvDoc::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError("config key " + key + ": '" + v + "' is not a boolean");
}

void KvDoc::set(const std::string& key, const std::string& value) {
    if (auto* e = find(key)) {
        e->second = value;
        return;
    }
    entries_.emplace_back(key, value);
}

void KvDoc::set_int(const std::string& key, long value) {
    set(key, std::to_string(value));
}

void KvDoc::set_double(const std::string& key, double value) {
    // shortest representation that still round-trips exactly
    char buf[64];
    for (int prec = 6; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, value);
        if (std::stod(buf) == value) break;
    }
    set(key, buf);
}

void KvDoc::set_bool(const std::string& key, bool value) {
    set(key, value ? "1" : "0");
}

std::vector<std::string> KvDoc::section_keys(const std::string& section) const {
    std::vector<std::string> out;
    const std::string prefix = section + ".";
    for (const auto& e : entries_)
        if (e.first.rfind(prefix, 0) == 0) out.push_back(e.first);
    return out;
}

std::string KvDoc::str() const {
    std::ostringstream os;
    std::string section;
    bool first = true;
    for (const auto& e : entries_) {
        const auto dot = e.first.find('.');
        const std::string sec = dot == std::string::npos ? "" : e.first.substr(0, dot);
        const std::string key = dot == std::string::npos ? e.first : e.first.substr(dot + 1);
        if (sec != section || first) {
            if (!first) os << '\n';
            if (!sec.empty()) os << '[' << sec << "]\n";
            section = sec;
            first = false;
        }
        os << key << " = " << e.second << '\n';
    }
    return os.str();
}

void KvDoc::save_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write config file: " + path);
    out << str();
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace disagg
