#include "steerlab/common.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numbers>

#include <nlohmann/json.hpp>

namespace steerlab {

void log_warning(const std::string& msg) { std::cerr << "[warn] " << msg << "\n"; }

std::string to_string(Attribute a) { return a == Attribute::style ? "style" : "truth"; }
std::string to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }
std::string to_string(Split s) { return s == Split::train ? "train" : "val"; }

Attribute attribute_from_string(const std::string& s) {
    if (s == "style") return Attribute::style;
    if (s == "truth") return Attribute::truth;
    fail(ErrorCode::corrupt_record, "unknown attribute: " + s);
}

Polarity polarity_from_string(const std::string& s) {
    if (s == "positive") return Polarity::positive;
    if (s == "negative") return Polarity::negative;
    fail(ErrorCode::corrupt_record, "unknown polarity: " + s);
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    fail(ErrorCode::corrupt_record, "unknown split: " + s);
}

// ----------------------------------------------------------------------------

double Rng::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // 1 - uniform() keeps the log argument strictly positive
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

uint64_t Rng::below(uint64_t n) {
    if (n == 0) fail(ErrorCode::invalid_argument, "Rng::below(0)");
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
}

uint64_t Rng::mix(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
    auto step = [](uint64_t& s) {
        s += 0x9E3779B97F4A7C15ull;
        uint64_t z = s;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    };
    uint64_t s = seed;
    uint64_t h = step(s);
    s ^= a + 0x9E3779B97F4A7C15ull;
    h ^= step(s);
    s ^= b + 0xC2B2AE3D27D4EB4Full;
    h ^= step(s);
    s ^= c + 0x165667B19E3779F9ull;
    h ^= step(s);
    return h;
}

// ----------------------------------------------------------------------------

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm2_sq(std::span<const double> a) { return dot(a, a); }
double norm2(std::span<const double> a) { return std::sqrt(norm2_sq(a)); }

void axpy(double s, std::span<const double> x, std::span<double> y) {
    for (size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

Mat gram(const Mat& a) {
    Mat g(a.cols, a.cols);
    for (int r = 0; r < a.rows; ++r) {
        auto row = a.row(r);
        for (int i = 0; i < a.cols; ++i) {
            double ri = row[size_t(i)];
            if (ri == 0.0) continue;
            for (int j = i; j < a.cols; ++j) g.at(i, j) += ri * row[size_t(j)];
        }
    }
    for (int i = 0; i < a.cols; ++i)
        for (int j = 0; j < i; ++j) g.at(i, j) = g.at(j, i);
    return g;
}

EighResult jacobi_eigh(Mat a, int max_sweeps) {
    const int n = a.rows;
    if (n != a.cols) fail(ErrorCode::invalid_argument, "jacobi_eigh: matrix not square");

    Mat v(n, n);
    for (int i = 0; i < n; ++i) v.at(i, i) = 1.0;

    double fro = 0.0;
    for (double x : a.data) fro += x * x;
    fro = std::sqrt(fro);
    const double tol = 1e-30 + 1e-15 * fro;

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off = std::max(off, std::abs(a.at(p, q)));
        if (off <= tol) break;

        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                double apq = a.at(p, q);
                if (std::abs(apq) <= tol) continue;

                double theta = (a.at(q, q) - a.at(p, p)) / (2.0 * apq);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;

                for (int k = 0; k < n; ++k) {
                    double akp = a.at(k, p), akq = a.at(k, q);
                    a.at(k, p) = c * akp - s * akq;
                    a.at(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    double apk = a.at(p, k), aqk = a.at(q, k);
                    a.at(p, k) = c * apk - s * aqk;
                    a.at(q, k) = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    double vkp = v.at(k, p), vkq = v.at(k, q);
                    v.at(k, p) = c * vkp - s * vkq;
                    v.at(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[size_t(i)] = i;
    std::sort(order.begin(), order.end(),
              [&](int i, int j) { return a.at(i, i) > a.at(j, j); });

    EighResult out;
    out.values.resize(size_t(n));
    out.vectors = Mat(n, n);
    for (int c = 0; c < n; ++c) {
        int src = order[size_t(c)];
        out.values[size_t(c)] = a.at(src, src);
        for (int r = 0; r < n; ++r) out.vectors.at(r, c) = v.at(r, src);
    }
    return out;
}

// ----------------------------------------------------------------------------

uint64_t fnv1a64(std::span<const unsigned char> bytes) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001B3ull;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) {
    return fnv1a64(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(s.data()), s.size()));
}

std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[size_t(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // prefer the shortest representation that round-trips
    for (int prec = 1; prec <= 16; ++prec) {
        char shorter[40];
        std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
        if (std::strtod(shorter, nullptr) == v) return shorter;
    }
    return buf;
}

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io_failure, "cannot open for writing: " + path.string());
    auto emit = [&](const std::vector<std::string>& cells) {
        for (size_t i = 0; i < cells.size(); ++i) {
            if (i) out << ',';
            out << cells[i];
        }
        out << '\n';
    };
    emit(header);
    for (const auto& r : rows) emit(r);
    if (!out) fail(ErrorCode::io_failure, "write failed: " + path.string());
}

std::vector<unsigned char> read_file_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::missing_file, "cannot open: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

void write_file_bytes(const fs::path& path, std::span<const unsigned char> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io_failure, "cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) fail(ErrorCode::io_failure, "write failed: " + path.string());
}

void write_f32_payload(const fs::path& path, std::span<const float> values) {
    write_file_bytes(path, std::span<const unsigned char>(
                               reinterpret_cast<const unsigned char*>(values.data()),
                               values.size() * sizeof(float)));
}

std::vector<float> read_f32_payload(const fs::path& path, size_t expected_count) {
    auto bytes = read_file_bytes(path);
    if (bytes.size() != expected_count * sizeof(float))
        fail(ErrorCode::manifest_mismatch,
             "payload length mismatch for " + path.string() + ": got " +
                 std::to_string(bytes.size()) + " bytes, expected " +
                 std::to_string(expected_count * sizeof(float)));
    std::vector<float> out(expected_count);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::missing_file, "cannot open: " + path.string());
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_record, "invalid JSON in " + path.string() + ": " + e.what());
    }
    return j;
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io_failure, "cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
    if (!out) fail(ErrorCode::io_failure, "write failed: " + path.string());
}

}  // namespace steerlab
