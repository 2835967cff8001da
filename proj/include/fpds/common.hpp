// Copyright 2026 The fpds authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fpds {

/// Bad configuration, bad CLI usage, schema violations. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data. CLI exit code 3.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Numeric helpers

/// Kahan-compensated sum; error stays O(eps) independent of length.
inline double kahan_sum(std::span<const double> values) {
    double sum = 0.0, c = 0.0;
    for (double v : values) {
        double y = v - c;
        double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    return sum;
}

inline double mean_of(std::span<const double> values) {
    if (values.empty()) throw DataError("mean of empty sample");
    return kahan_sum(values) / static_cast<double>(values.size());
}

/// Shortest text form that round-trips an IEEE double exactly.
inline std::string format_double(double x) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, x);
        if (std::strtod(buf, nullptr) == x) return buf;
    }
    return buf;
}

inline double parse_double(const std::string& s, const std::string& what) {
    char* end = nullptr;
    double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw DataError("cannot parse " + what + ": '" + s + "'");
    return v;
}

inline long parse_long(const std::string& s, const std::string& what) {
    char* end = nullptr;
    long v = std::strtol(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw DataError("cannot parse " + what + ": '" + s + "'");
    return v;
}

// ---------------------------------------------------------------------------
// Hashing (stable across runs and platforms, unlike std::hash)

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), h);
}

// ---------------------------------------------------------------------------
// CSV (comma-separated, no quoting; fields in this project never contain commas)

inline std::string strip_cr(std::string s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.pop_back();
    return s;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<size_t> line_numbers;  // 1-based source line of each row

    int column(const std::string& name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open file: " + path);
    CsvTable t;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = strip_cr(line);
        if (line.empty()) continue;
        auto fields = split_csv(line);
        if (t.header.empty()) {
            t.header = std::move(fields);
        } else {
            t.rows.push_back(std::move(fields));
            t.line_numbers.push_back(lineno);
        }
    }
    if (t.header.empty()) throw DataError("empty CSV file: " + path);
    return t;
}

inline void require_header(const CsvTable& t, const std::vector<std::string>& expected,
                           const std::string& path) {
    if (t.header != expected) {
        std::string want;
        for (size_t i = 0; i < expected.size(); ++i) want += (i ? "," : "") + expected[i];
        std::string got;
        for (size_t i = 0; i < t.header.size(); ++i) got += (i ? "," : "") + t.header[i];
        throw DataError("unexpected CSV header in " + path + ": got '" + got +
                        "', expected '" + want + "'");
    }
}

// ---------------------------------------------------------------------------
// Little-endian binary encoding for model/volume payloads

inline void le_put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void le_put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void le_put_f64(std::string& out, double v) {
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    __builtin_memcpy(&bits, &v, sizeof(bits));
    le_put_u64(out, bits);
}

inline void le_put_f32(std::string& out, float v) {
    uint32_t bits;
    __builtin_memcpy(&bits, &v, sizeof(bits));
    le_put_u32(out, bits);
}

class LeReader {
public:
    LeReader(const char* data, size_t n) : p_(data), end_(data + n) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(*p_++)) << (8 * i);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(*p_++)) << (8 * i);
        return v;
    }
    double f64() {
        uint64_t bits = u64();
        double v;
        __builtin_memcpy(&v, &bits, sizeof(v));
        return v;
    }
    float f32() {
        uint32_t bits = u32();
        float v;
        __builtin_memcpy(&v, &bits, sizeof(v));
        return v;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s(p_, n);
        p_ += n;
        return s;
    }
    size_t remaining() const { return static_cast<size_t>(end_ - p_); }

private:
    void need(size_t n) {
        if (remaining() < n) throw DataError("truncated payload");
    }
    const char* p_;
    const char* end_;
};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open file for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace fpds
