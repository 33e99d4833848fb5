#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace steerlab {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "on-disk payloads are little-endian and read/written natively");

// ----------------------------------------------------------------------------
// errors

enum class ErrorCode {
    missing_file,
    io_failure,
    manifest_mismatch,
    corrupt_record,
    non_finite_activation,
    invariant_violation,
    invalid_argument,
    shape_mismatch,
    single_class,
    diverged,
    empty_input,
    missing_basis,
    basis_not_deflated,
    config_error,
};

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

void log_warning(const std::string& msg);

// ----------------------------------------------------------------------------
// shared enums

enum class Attribute { style, truth };
enum class Polarity { positive, negative };
enum class Split { train, val };

std::string to_string(Attribute a);
std::string to_string(Polarity p);
std::string to_string(Split s);
Attribute attribute_from_string(const std::string& s);
Polarity polarity_from_string(const std::string& s);
Split split_from_string(const std::string& s);

// ----------------------------------------------------------------------------
// deterministic RNG
//
// splitmix64 core with a Box-Muller gaussian on top. Unlike the std
// distributions this stream is pinned by construction, so every seeded
// artifact is reproducible byte-for-byte.

class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1) with 53 bits
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double gaussian();

    // unbiased integer in [0, n)
    uint64_t below(uint64_t n);

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            size_t j = size_t(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // hash-combine for derived seeds (per head, per pair, ...)
    static uint64_t mix(uint64_t seed, uint64_t a = 0, uint64_t b = 0, uint64_t c = 0);

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// ----------------------------------------------------------------------------
// small dense matrix, row-major

struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(size_t(r) * size_t(c), 0.0) {}

    double& at(int r, int c) { return data[size_t(r) * cols + c]; }
    double at(int r, int c) const { return data[size_t(r) * cols + c]; }
    std::span<double> row(int r) { return {data.data() + size_t(r) * cols, size_t(cols)}; }
    std::span<const double> row(int r) const { return {data.data() + size_t(r) * cols, size_t(cols)}; }
    std::vector<double> col(int c) const {
        std::vector<double> out(static_cast<size_t>(rows));
        for (int r = 0; r < rows; ++r) out[size_t(r)] = at(r, c);
        return out;
    }
};

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);
double norm2_sq(std::span<const double> a);

// y += s * x
void axpy(double s, std::span<const double> x, std::span<double> y);

// A^T A for a row-major N x d matrix: d x d symmetric Gram matrix
Mat gram(const Mat& a);

// Symmetric eigendecomposition by cyclic Jacobi rotations. Eigenvalues are
// returned in non-increasing order; `vectors` holds the matching eigenvectors
// as columns. Input must be symmetric.
struct EighResult {
    std::vector<double> values;
    Mat vectors;
};
EighResult jacobi_eigh(Mat a, int max_sweeps = 64);

// ----------------------------------------------------------------------------
// hashing / formatting / file IO

uint64_t fnv1a64(std::span<const unsigned char> bytes);
uint64_t fnv1a64(const std::string& s);
std::string hex64(uint64_t v);

// shortest round-trip decimal for doubles, used by every CSV export
std::string format_double(double v);

void write_csv(const fs::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::vector<unsigned char> read_file_bytes(const fs::path& path);
void write_file_bytes(const fs::path& path, std::span<const unsigned char> bytes);
void write_f32_payload(const fs::path& path, std::span<const float> values);
std::vector<float> read_f32_payload(const fs::path& path, size_t expected_count);

json read_json_file(const fs::path& path);
void write_json_file(const fs::path& path, const json& j);

}  // namespace steerlab
