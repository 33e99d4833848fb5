#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "steerlab/subspace.hpp"
#include "steerlab/synth.hpp"

using namespace steerlab;
using oracles::TempDir;

namespace {

ActivationDataset tiny_dataset(const std::vector<std::vector<float>>& pos,
                               const std::vector<std::vector<float>>& neg) {
    ActivationDataset ds;
    ds.num_layers = 1;
    ds.num_heads = 1;
    ds.head_dim = int(pos[0].size());
    for (size_t p = 0; p < pos.size(); ++p) {
        ds.add_sample({int64_t(2 * p), int64_t(p), Polarity::positive, 1, Attribute::style,
                       Split::train},
                      pos[p]);
        ds.add_sample({int64_t(2 * p + 1), int64_t(p), Polarity::negative, 0, Attribute::style,
                       Split::train},
                      neg[p]);
    }
    return ds;
}

DifferenceMatrix random_diff(int n, int d, uint64_t seed) {
    DifferenceMatrix dm;
    dm.layer = 0;
    dm.head = 0;
    dm.delta = Mat(n, d);
    Rng rng(seed);
    for (auto& v : dm.delta.data) v = rng.gaussian();
    return dm;
}

double frob_sq(const Mat& m) {
    double s = 0.0;
    for (double v : m.data) s += v * v;
    return s;
}

double max_ortho_defect(const Mat& v) {
    double worst = 0.0;
    for (int a = 0; a < v.cols; ++a)
        for (int b = 0; b < v.cols; ++b) {
            double s = 0.0;
            for (int r = 0; r < v.rows; ++r) s += v.at(r, a) * v.at(r, b);
            worst = std::max(worst, std::abs(s - (a == b ? 1.0 : 0.0)));
        }
    return worst;
}

}  // namespace

TEST_CASE("difference rows subtract negative from positive in pair order") {
    auto ds = tiny_dataset({{1.0f, 2.0f}}, {{0.0f, 2.0f}});
    auto dm = difference_matrix(ds, 0, 0);
    REQUIRE(dm.delta.rows == 1);
    CHECK(dm.delta.at(0, 0) == 1.0);
    CHECK(dm.delta.at(0, 1) == 0.0);

    auto same = tiny_dataset({{3.0f, -1.0f}}, {{3.0f, -1.0f}});
    auto zero = difference_matrix(same, 0, 0);
    CHECK(zero.delta.at(0, 0) == 0.0);
    CHECK(zero.delta.at(0, 1) == 0.0);
}

TEST_CASE("difference matrix matches a per-pair loop on randomized data") {
    Rng rng(77);
    std::vector<std::vector<float>> pos, neg;
    for (int p = 0; p < 12; ++p) {
        std::vector<float> a(6), b(6);
        for (auto& v : a) v = float(rng.gaussian());
        for (auto& v : b) v = float(rng.gaussian());
        pos.push_back(a);
        neg.push_back(b);
    }
    auto ds = tiny_dataset(pos, neg);
    auto dm = difference_matrix(ds, 0, 0);
    REQUIRE(dm.delta.rows == 12);
    for (int p = 0; p < 12; ++p)
        for (int i = 0; i < 6; ++i)
            CHECK(dm.delta.at(p, i) ==
                  double(pos[size_t(p)][size_t(i)]) - double(neg[size_t(p)][size_t(i)]));
}

TEST_CASE("an incomplete pair stops the difference matrix") {
    ActivationDataset ds;
    ds.num_layers = 1;
    ds.num_heads = 1;
    ds.head_dim = 2;
    std::vector<float> block{1.0f, 0.0f};
    ds.add_sample({0, 0, Polarity::positive, 1, Attribute::style, Split::train}, block);
    CHECK_THROWS_AS(difference_matrix(ds, 0, 0), Error);
}

TEST_CASE("rank-one matrix yields its exact singular pair") {
    DifferenceMatrix dm;
    dm.delta = Mat(4, 3);
    for (int r = 0; r < 4; ++r) dm.delta.at(r, 1) = 3.0;

    auto sb = top_k_svd(dm, 1);
    CHECK(sb.singular_values[0] == doctest::Approx(6.0).epsilon(1e-12));
    CHECK(sb.basis.at(0, 0) == doctest::Approx(0.0));
    CHECK(sb.basis.at(1, 0) == doctest::Approx(1.0));
    CHECK(sb.basis.at(2, 0) == doctest::Approx(0.0));

    // requesting beyond the effective rank clips with a warning
    auto clipped = top_k_svd(dm, 3);
    CHECK(clipped.k == 1);
}

TEST_CASE("axis-aligned rows produce axis singular vectors in order") {
    DifferenceMatrix dm;
    dm.delta = Mat(2, 3);
    dm.delta.at(0, 0) = 1.0;
    dm.delta.at(1, 1) = 2.0;
    auto sb = top_k_svd(dm, 2);
    REQUIRE(sb.k == 2);
    CHECK(sb.singular_values[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(sb.singular_values[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(sb.basis.at(1, 0) == doctest::Approx(1.0));
    CHECK(sb.basis.at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("column signs fix the largest-magnitude entry positive") {
    auto dm = random_diff(30, 8, 4);
    auto sb = top_k_svd(dm, 3);
    for (int c = 0; c < sb.k; ++c) {
        double best = 0.0;
        for (int r = 0; r < 8; ++r)
            if (std::abs(sb.basis.at(r, c)) > std::abs(best)) best = sb.basis.at(r, c);
        CHECK(best > 0.0);
    }
    // determinism
    auto again = top_k_svd(dm, 3);
    CHECK(sb.basis.data == again.basis.data);
}

TEST_CASE("truncation residual equals the tail singular energy") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto dm = random_diff(50, 16, 100 + seed);
        auto sb = top_k_svd(dm, 4);

        // residual of the rank-4 reconstruction
        Mat resid = dm.delta;
        complement_projector(sb).apply_rows(resid);
        double resid_sq = frob_sq(resid);

        auto sv = oracles::singular_values(dm.delta);
        double tail = 0.0;
        for (size_t i = 4; i < sv.size(); ++i) tail += sv[i] * sv[i];

        CHECK(resid_sq == doctest::Approx(tail).epsilon(1e-6));
        // and the retained values agree with the oracle
        for (int i = 0; i < 4; ++i)
            CHECK(sb.singular_values[size_t(i)] == doctest::Approx(sv[size_t(i)]).epsilon(1e-8));
    }
}

TEST_CASE("every emitted basis is orthonormal to machine precision") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        auto sb = top_k_svd(random_diff(40, 12, 200 + seed), 5);
        CHECK(max_ortho_defect(sb.basis) < 1e-8);
    }
}

TEST_CASE("complement projector removes exactly the basis span") {
    SubspaceBasis e1;
    e1.k = 1;
    e1.basis = Mat(3, 1);
    e1.basis.at(0, 0) = 1.0;
    auto proj = complement_projector(e1);

    std::vector<double> x{1.0, 2.0, 3.0};
    auto out = proj.apply(x);
    CHECK(out[0] == 0.0);
    CHECK(out[1] == 2.0);
    CHECK(out[2] == 3.0);

    std::vector<double> orthogonal{0.0, -4.0, 5.0};
    auto same = proj.apply(orthogonal);
    CHECK(same == orthogonal);
}

TEST_CASE("projector agrees with the dense matrix and is idempotent") {
    Rng rng(31);
    auto basis_mat = oracles::random_orthonormal(rng, 32, 3);
    SubspaceBasis sb;
    sb.k = 3;
    sb.basis = basis_mat;
    auto proj = complement_projector(sb);

    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> x(32);
        for (auto& v : x) v = rng.gaussian();

        // dense (I - V V^T) x
        std::vector<double> dense(32, 0.0);
        for (int i = 0; i < 32; ++i) {
            dense[size_t(i)] = x[size_t(i)];
            for (int j = 0; j < 32; ++j) {
                double vvt = 0.0;
                for (int c = 0; c < 3; ++c) vvt += basis_mat.at(i, c) * basis_mat.at(j, c);
                dense[size_t(i)] -= vvt * x[size_t(j)];
            }
        }
        auto fast = proj.apply(x);
        for (int i = 0; i < 32; ++i) CHECK(fast[size_t(i)] == doctest::Approx(dense[size_t(i)]).epsilon(1e-10));

        auto twice = proj.apply(fast);
        for (int i = 0; i < 32; ++i)
            CHECK(std::abs(twice[size_t(i)] - fast[size_t(i)]) < 1e-10);
    }
}

TEST_CASE("deflation annihilates the style directions") {
    SUBCASE("rows in span{e1,e2} against style [e1] leave exactly e2") {
        DifferenceMatrix dm;
        dm.delta = Mat(3, 4);
        dm.delta.at(0, 0) = 1.0;
        dm.delta.at(0, 1) = 2.0;
        dm.delta.at(1, 0) = -1.0;
        dm.delta.at(1, 1) = 1.0;
        dm.delta.at(2, 0) = 0.5;
        dm.delta.at(2, 1) = -2.0;

        SubspaceBasis style;
        style.k = 1;
        style.basis = Mat(4, 1);
        style.basis.at(0, 0) = 1.0;

        auto deflated = deflate_and_decompose(dm, style, 1);
        CHECK(deflated.deflated);
        CHECK(deflated.basis.at(1, 0) == doctest::Approx(1.0));
        CHECK(std::abs(deflated.basis.at(0, 0)) < 1e-15);
        // sigma is the norm of the surviving e2 components
        double expect = std::sqrt(4.0 + 1.0 + 4.0);
        CHECK(deflated.singular_values[0] == doctest::Approx(expect).epsilon(1e-12));
    }

    SUBCASE("rows already orthogonal to the style basis decompose unchanged") {
        DifferenceMatrix dm;
        dm.delta = Mat(3, 5);
        Rng rng(8);
        for (int r = 0; r < 3; ++r)
            for (int c = 2; c < 5; ++c) dm.delta.at(r, c) = rng.gaussian();

        SubspaceBasis style;
        style.k = 1;
        style.basis = Mat(5, 1);
        style.basis.at(0, 0) = 1.0;

        auto plain = top_k_svd(dm, 2);
        auto deflated = deflate_and_decompose(dm, style, 2);
        CHECK(deflated.singular_values == plain.singular_values);
        CHECK(deflated.basis.data == plain.basis.data);
    }

    SUBCASE("random entangled matrices stay orthogonal over seeds") {
        for (uint64_t seed = 0; seed < 20; ++seed) {
            auto style_dm = random_diff(40, 64, 300 + seed);
            auto truth_dm = random_diff(40, 64, 600 + seed);
            auto style = top_k_svd(style_dm, 5);
            auto deflated = deflate_and_decompose(truth_dm, style, 5);
            CHECK(max_cross_dot(deflated.basis, style.basis) < 1e-8);
            CHECK(max_ortho_defect(deflated.basis) < 1e-8);
        }
    }

    SUBCASE("rank lost to deflation clips the basis with a warning") {
        DifferenceMatrix dm;
        dm.delta = Mat(4, 3);
        Rng rng(12);
        for (int r = 0; r < 4; ++r) {
            double a = rng.gaussian(), b = rng.gaussian();
            dm.delta.at(r, 0) = a;
            dm.delta.at(r, 1) = b;  // rank 2 before deflation
        }
        SubspaceBasis style;
        style.k = 1;
        style.basis = Mat(3, 1);
        style.basis.at(0, 0) = 1.0;
        auto deflated = deflate_and_decompose(dm, style, 2);
        CHECK(deflated.k == 1);
    }
}

TEST_CASE("mean positive activation averages only positive samples") {
    auto one = tiny_dataset({{2.0f, -1.0f}}, {{9.0f, 9.0f}});
    auto m1 = mean_positive_activation(one, 0, 0);
    CHECK(m1[0] == 2.0);
    CHECK(m1[1] == -1.0);

    auto two = tiny_dataset({{1.0f, 0.0f}, {3.0f, 2.0f}}, {{0.0f, 0.0f}, {0.0f, 0.0f}});
    auto m2 = mean_positive_activation(two, 0, 0);
    CHECK(m2[0] == 2.0);
    CHECK(m2[1] == 1.0);

    SUBCASE("matches a loop-and-divide oracle on random data") {
        Rng rng(55);
        std::vector<std::vector<float>> pos, neg;
        for (int p = 0; p < 9; ++p) {
            std::vector<float> a(5), b(5);
            for (auto& v : a) v = float(rng.gaussian());
            for (auto& v : b) v = float(rng.gaussian());
            pos.push_back(a);
            neg.push_back(b);
        }
        auto ds = tiny_dataset(pos, neg);
        auto mean = mean_positive_activation(ds, 0, 0);
        for (int i = 0; i < 5; ++i) {
            double s = 0.0;
            for (const auto& a : pos) s += double(a[size_t(i)]);
            CHECK(mean[size_t(i)] == doctest::Approx(s / 9.0).epsilon(1e-7));
        }
    }
}

TEST_CASE("planted directions are recovered by the leading singular vector") {
    PlantSpec spec;
    spec.n_layers = 1;
    spec.n_heads = 1;
    spec.head_dim = 16;
    spec.style_heads = {{0, 0}};
    spec.alpha = 1.0;
    spec.noise_std = 0.1;  // SNR 10
    spec.num_pairs = 100;
    spec.seed = 40;
    auto data = generate_planted_dataset(spec);
    auto dm = difference_matrix(data.style, 0, 0);
    auto sb = top_k_svd(dm, 1);
    double cos = recovery_score(sb, data.ground_truth.style_dirs.at({0, 0}));
    CHECK(cos >= 0.99);
}

TEST_CASE("subspace banks round-trip through their f32 files") {
    auto style_dm = random_diff(30, 12, 1000);
    auto truth_dm = random_diff(30, 12, 1001);
    auto style = top_k_svd(style_dm, 3);
    auto truth = deflate_and_decompose(truth_dm, style, 3);
    style.mean_positive.assign(12, 0.25);
    truth.mean_positive.assign(12, -0.5);
    truth.attribute = Attribute::truth;

    SubspaceBank bank;
    bank.head_dim = 12;
    bank.entries = {style, truth};

    TempDir tmp("bank");
    save_subspace_bank(bank, tmp.path());
    auto loaded = load_subspace_bank(tmp.path());
    REQUIRE(loaded.entries.size() == 2);

    const auto* s = loaded.find(0, 0, Attribute::style);
    const auto* t = loaded.find(0, 0, Attribute::truth, true);
    REQUIRE(s != nullptr);
    REQUIRE(t != nullptr);
    CHECK(t->deflated);
    CHECK(s->singular_values == style.singular_values);  // exact: stored as JSON doubles
    CHECK(s->mean_positive[0] == 0.25);

    // f32 rounding is cleaned up on load: orthogonality is restored to
    // machine precision, and the basis agrees with the original at f32 level
    CHECK(max_ortho_defect(s->basis) < 1e-12);
    CHECK(max_cross_dot(t->basis, s->basis) < 1e-12);
    for (int r = 0; r < 12; ++r)
        for (int c = 0; c < 3; ++c)
            CHECK(s->basis.at(r, c) == doctest::Approx(style.basis.at(r, c)).epsilon(1e-6));

    const auto* missing = loaded.find(0, 1, Attribute::style);
    CHECK(missing == nullptr);
}

TEST_CASE("svd input validation") {
    auto dm = random_diff(5, 4, 3);
    CHECK_THROWS_AS(top_k_svd(dm, 0), Error);
    CHECK_THROWS_AS(top_k_svd(dm, 5), Error);  // beyond min(N, d)
    DifferenceMatrix empty;
    empty.delta = Mat(0, 4);
    CHECK_THROWS_AS(top_k_svd(empty, 1), Error);
}
