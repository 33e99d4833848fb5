#pragma once

// Test-side reference implementations, deliberately independent of the
// library's numerical routes: singular values come from one-sided Jacobi on
// the data matrix (the library uses a two-sided eigensolve of the Gram
// matrix), and the transformer reference materializes full attention
// matrices in a straight-line pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "steerlab/common.hpp"
#include "steerlab/toymodel.hpp"

namespace oracles {

namespace fs = std::filesystem;

// RAII scratch directory under the system temp dir
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = fs::temp_directory_path() /
                (tag + "-" + std::to_string(uint64_t(stamp)) + "-" + std::to_string(counter_++));
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    const fs::path& path() const { return path_; }

private:
    static inline int counter_ = 0;
    fs::path path_;
};

// ----------------------------------------------------------------------------
// one-sided Jacobi SVD: rotate column pairs until mutually orthogonal; the
// singular values are the final column norms

inline std::vector<double> singular_values(steerlab::Mat a, int max_sweeps = 60) {
    const int n = a.rows, d = a.cols;
    auto col_dot = [&](int i, int j) {
        double s = 0.0;
        for (int r = 0; r < n; ++r) s += a.at(r, i) * a.at(r, j);
        return s;
    };

    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        bool rotated = false;
        for (int i = 0; i < d - 1; ++i) {
            for (int j = i + 1; j < d; ++j) {
                double aii = col_dot(i, i), ajj = col_dot(j, j), aij = col_dot(i, j);
                if (std::abs(aij) <= 1e-30 ||
                    std::abs(aij) <= 1e-16 * std::sqrt(aii * ajj))
                    continue;
                rotated = true;
                double tau = (ajj - aii) / (2.0 * aij);
                double t = (tau >= 0.0 ? 1.0 : -1.0) /
                           (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = c * t;
                for (int r = 0; r < n; ++r) {
                    double ri = a.at(r, i), rj = a.at(r, j);
                    a.at(r, i) = c * ri - s * rj;
                    a.at(r, j) = s * ri + c * rj;
                }
            }
        }
        if (!rotated) break;
    }

    std::vector<double> sv(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) sv[size_t(j)] = std::sqrt(col_dot(j, j));
    std::sort(sv.rbegin(), sv.rend());
    return sv;
}

// ----------------------------------------------------------------------------
// straight-line transformer reference: same architecture as the library
// model, written independently with full [T, T] attention materialization

inline steerlab::Mat reference_forward(const steerlab::ToyModel& m,
                                       const std::vector<int>& tokens) {
    using steerlab::Mat;
    const auto& c = m.cfg;
    const int T = int(tokens.size());

    auto layernorm = [&](std::vector<double> x, const std::vector<double>& g,
                         const std::vector<double>& b) {
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= double(x.size());
        double var = 0.0;
        for (double v : x) var += (v - mean) * (v - mean);
        var /= double(x.size());
        for (size_t i = 0; i < x.size(); ++i)
            x[i] = g[i] * (x[i] - mean) / std::sqrt(var + 1e-5) + b[i];
        return x;
    };

    Mat x(T, c.d_model);
    for (int t = 0; t < T; ++t)
        for (int i = 0; i < c.d_model; ++i) {
            double angle = double(t) / std::pow(10000.0, double(2 * (i / 2)) / double(c.d_model));
            double pe = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
            x.at(t, i) = m.embedding[size_t(tokens[size_t(t)]) * c.d_model + size_t(i)] + pe;
        }

    for (int l = 0; l < c.n_layers; ++l) {
        const auto& lw = m.layers[size_t(l)];

        Mat q(T, c.d_model), k(T, c.d_model), v(T, c.d_model);
        for (int t = 0; t < T; ++t) {
            std::vector<double> h(x.row(t).begin(), x.row(t).end());
            h = layernorm(h, lw.ln1_g, lw.ln1_b);
            for (int r = 0; r < 3 * c.d_model; ++r) {
                double s = 0.0;
                for (int i = 0; i < c.d_model; ++i)
                    s += lw.w_qkv[size_t(r) * c.d_model + size_t(i)] * h[size_t(i)];
                if (r < c.d_model) q.at(t, r) = s;
                else if (r < 2 * c.d_model) k.at(t, r - c.d_model) = s;
                else v.at(t, r - 2 * c.d_model) = s;
            }
        }

        Mat mixed(T, c.d_model);
        for (int h = 0; h < c.n_heads; ++h) {
            const int hs = h * c.head_dim;
            Mat att(T, T);
            for (int t = 0; t < T; ++t) {
                double mx = -1e300;
                for (int j = 0; j <= t; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < c.head_dim; ++i) s += q.at(t, hs + i) * k.at(j, hs + i);
                    att.at(t, j) = s / std::sqrt(double(c.head_dim));
                    mx = std::max(mx, att.at(t, j));
                }
                double denom = 0.0;
                for (int j = 0; j <= t; ++j) {
                    att.at(t, j) = std::exp(att.at(t, j) - mx);
                    denom += att.at(t, j);
                }
                for (int j = 0; j <= t; ++j) att.at(t, j) /= denom;
            }
            for (int t = 0; t < T; ++t)
                for (int i = 0; i < c.head_dim; ++i) {
                    double s = 0.0;
                    for (int j = 0; j <= t; ++j) s += att.at(t, j) * v.at(j, hs + i);
                    mixed.at(t, hs + i) = s;
                }
        }

        for (int t = 0; t < T; ++t) {
            for (int r = 0; r < c.d_model; ++r) {
                double s = 0.0;
                for (int i = 0; i < c.d_model; ++i)
                    s += lw.w_out[size_t(r) * c.d_model + size_t(i)] * mixed.at(t, i);
                x.at(t, r) += s;
            }
        }

        for (int t = 0; t < T; ++t) {
            std::vector<double> h(x.row(t).begin(), x.row(t).end());
            h = layernorm(h, lw.ln2_g, lw.ln2_b);
            std::vector<double> mid(static_cast<size_t>(c.d_ff));
            for (int r = 0; r < c.d_ff; ++r) {
                double s = 0.0;
                for (int i = 0; i < c.d_model; ++i)
                    s += lw.w_ff1[size_t(r) * c.d_model + size_t(i)] * h[size_t(i)];
                mid[size_t(r)] = 0.5 * s * (1.0 + std::erf(s / std::sqrt(2.0)));
            }
            for (int r = 0; r < c.d_model; ++r) {
                double s = 0.0;
                for (int i = 0; i < c.d_ff; ++i)
                    s += lw.w_ff2[size_t(r) * c.d_ff + size_t(i)] * mid[size_t(i)];
                x.at(t, r) += s;
            }
        }
    }

    Mat logits(T, c.vocab_size);
    for (int t = 0; t < T; ++t) {
        std::vector<double> h(x.row(t).begin(), x.row(t).end());
        h = layernorm(h, m.lnf_g, m.lnf_b);
        for (int r = 0; r < c.vocab_size; ++r) {
            double s = 0.0;
            for (int i = 0; i < c.d_model; ++i)
                s += m.embedding[size_t(r) * c.d_model + size_t(i)] * h[size_t(i)];
            logits.at(t, r) = s;
        }
    }
    return logits;
}

// random orthonormal d x k basis via Gram-Schmidt on gaussian columns
inline steerlab::Mat random_orthonormal(steerlab::Rng& rng, int d, int k) {
    steerlab::Mat v(d, k);
    for (int c = 0; c < k; ++c) {
        for (int r = 0; r < d; ++r) v.at(r, c) = rng.gaussian();
        for (int p = 0; p < c; ++p) {
            double proj = 0.0;
            for (int r = 0; r < d; ++r) proj += v.at(r, c) * v.at(r, p);
            for (int r = 0; r < d; ++r) v.at(r, c) -= proj * v.at(r, p);
        }
        double nrm = 0.0;
        for (int r = 0; r < d; ++r) nrm += v.at(r, c) * v.at(r, c);
        nrm = std::sqrt(nrm);
        for (int r = 0; r < d; ++r) v.at(r, c) /= nrm;
    }
    return v;
}

}  // namespace oracles
