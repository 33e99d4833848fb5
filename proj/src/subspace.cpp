#include "steerlab/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>

namespace steerlab {

namespace {

// relative eigenvalue cutoff for the effective rank of the Gram matrix
constexpr double kRankTolerance = 1e-12;

void fix_column_sign(Mat& v, int col) {
    int arg = 0;
    double best = -1.0;
    for (int r = 0; r < v.rows; ++r) {
        double mag = std::abs(v.at(r, col));
        if (mag > best) {
            best = mag;
            arg = r;
        }
    }
    if (v.at(arg, col) < 0.0)
        for (int r = 0; r < v.rows; ++r) v.at(r, col) = -v.at(r, col);
}

// one modified Gram-Schmidt pass of `col` against the columns of `against`
void orthogonalize_against(Mat& v, int col, const Mat& against) {
    for (int c = 0; c < against.cols; ++c) {
        double proj = 0.0;
        for (int r = 0; r < v.rows; ++r) proj += v.at(r, col) * against.at(r, c);
        for (int r = 0; r < v.rows; ++r) v.at(r, col) -= proj * against.at(r, c);
    }
}

void normalize_column(Mat& v, int col) {
    double nrm = 0.0;
    for (int r = 0; r < v.rows; ++r) nrm += v.at(r, col) * v.at(r, col);
    nrm = std::sqrt(nrm);
    if (nrm == 0.0) fail(ErrorCode::invariant_violation, "cannot normalize a zero column");
    for (int r = 0; r < v.rows; ++r) v.at(r, col) /= nrm;
}

}  // namespace

DifferenceMatrix difference_matrix(const ActivationDataset& ds, int layer, int head) {
    if (layer < 0 || layer >= ds.num_layers || head < 0 || head >= ds.num_heads)
        fail(ErrorCode::invalid_argument, "head index out of range");

    std::map<int64_t, std::pair<std::optional<size_t>, std::optional<size_t>>> pairs;
    for (size_t s = 0; s < ds.num_samples(); ++s) {
        const auto& m = ds.samples[s];
        auto& slot = pairs[m.pair_id];
        if (m.polarity == Polarity::positive)
            slot.first = s;
        else
            slot.second = s;
    }

    DifferenceMatrix dm;
    dm.layer = layer;
    dm.head = head;
    dm.attribute = ds.attribute;
    dm.delta = Mat(int(pairs.size()), ds.head_dim);

    int r = 0;
    for (const auto& [pid, slot] : pairs) {  // std::map iterates pair_id ascending
        if (!slot.first || !slot.second)
            fail(ErrorCode::invariant_violation,
                 "pair " + std::to_string(pid) + " is missing a member");
        auto pos = ds.activation(*slot.first, layer, head);
        auto neg = ds.activation(*slot.second, layer, head);
        auto row = dm.delta.row(r++);
        for (int i = 0; i < ds.head_dim; ++i)
            row[size_t(i)] = double(pos[size_t(i)]) - double(neg[size_t(i)]);
    }
    return dm;
}

SubspaceBasis top_k_svd(const DifferenceMatrix& dm, int k) {
    const int n = dm.delta.rows;
    const int d = dm.delta.cols;
    if (n == 0) fail(ErrorCode::empty_input, "difference matrix is empty");
    if (k < 1) fail(ErrorCode::invalid_argument, "k must be >= 1");
    if (k > std::min(n, d))
        fail(ErrorCode::invalid_argument, "k must not exceed min(rows, dim)");

    EighResult eig = jacobi_eigh(gram(dm.delta));

    double lead = std::max(eig.values[0], 0.0);
    double cutoff = lead * kRankTolerance;
    int rank = 0;
    for (double v : eig.values)
        if (v > cutoff && v > 0.0) ++rank;

    int k_eff = std::min(k, rank);
    if (k_eff < k)
        log_warning("requested k=" + std::to_string(k) + " exceeds effective rank " +
                    std::to_string(rank) + " at layer " + std::to_string(dm.layer) + " head " +
                    std::to_string(dm.head) + "; clipping");
    if (k_eff == 0) fail(ErrorCode::invariant_violation, "difference matrix has rank zero");

    SubspaceBasis sb;
    sb.layer = dm.layer;
    sb.head = dm.head;
    sb.attribute = dm.attribute;
    sb.k = k_eff;
    sb.basis = Mat(d, k_eff);
    sb.singular_values.resize(size_t(k_eff));
    for (int c = 0; c < k_eff; ++c) {
        sb.singular_values[size_t(c)] = std::sqrt(std::max(eig.values[size_t(c)], 0.0));
        for (int r = 0; r < d; ++r) sb.basis.at(r, c) = eig.vectors.at(r, c);
        fix_column_sign(sb.basis, c);
    }
    return sb;
}

std::vector<double> ComplementProjector::apply(std::span<const double> x) const {
    if (int(x.size()) != basis.rows)
        fail(ErrorCode::shape_mismatch, "projector dimension mismatch");
    std::vector<double> out(x.begin(), x.end());
    for (int c = 0; c < basis.cols; ++c) {
        double proj = 0.0;
        for (int r = 0; r < basis.rows; ++r) proj += basis.at(r, c) * x[size_t(r)];
        for (int r = 0; r < basis.rows; ++r) out[size_t(r)] -= proj * basis.at(r, c);
    }
    return out;
}

void ComplementProjector::apply_rows(Mat& m) const {
    if (m.cols != basis.rows) fail(ErrorCode::shape_mismatch, "projector dimension mismatch");
    for (int r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        for (int c = 0; c < basis.cols; ++c) {
            double proj = 0.0;
            for (int i = 0; i < basis.rows; ++i) proj += basis.at(i, c) * row[size_t(i)];
            for (int i = 0; i < basis.rows; ++i) row[size_t(i)] -= proj * basis.at(i, c);
        }
    }
}

ComplementProjector complement_projector(const SubspaceBasis& basis) {
    return ComplementProjector{basis.basis};
}

SubspaceBasis deflate_and_decompose(const DifferenceMatrix& truth_dm,
                                    const SubspaceBasis& style_basis, int k) {
    if (truth_dm.layer != style_basis.layer || truth_dm.head != style_basis.head)
        fail(ErrorCode::invalid_argument, "deflation requires matching (layer, head)");
    if (truth_dm.delta.cols != style_basis.basis.rows)
        fail(ErrorCode::shape_mismatch, "dimension mismatch between matrix and basis");

    DifferenceMatrix projected = truth_dm;
    complement_projector(style_basis).apply_rows(projected.delta);

    SubspaceBasis sb = top_k_svd(projected, k);
    // scrub residual rounding so the mutual-orthogonality invariant holds at
    // machine precision, not just at the eigensolver's; exact zeros and unit
    // norms are left untouched so an already-orthogonal input passes through
    // bit-for-bit
    for (int c = 0; c < sb.k; ++c) {
        for (int sc = 0; sc < style_basis.basis.cols; ++sc) {
            double proj = 0.0;
            for (int r = 0; r < sb.basis.rows; ++r)
                proj += sb.basis.at(r, c) * style_basis.basis.at(r, sc);
            if (proj != 0.0)
                for (int r = 0; r < sb.basis.rows; ++r)
                    sb.basis.at(r, c) -= proj * style_basis.basis.at(r, sc);
        }
        double nrm = 0.0;
        for (int r = 0; r < sb.basis.rows; ++r) nrm += sb.basis.at(r, c) * sb.basis.at(r, c);
        nrm = std::sqrt(nrm);
        if (nrm == 0.0) fail(ErrorCode::invariant_violation, "deflation removed a whole column");
        if (std::abs(nrm - 1.0) > 1e-12)
            for (int r = 0; r < sb.basis.rows; ++r) sb.basis.at(r, c) /= nrm;
    }
    sb.deflated = true;
    return sb;
}

std::vector<double> mean_positive_activation(const ActivationDataset& ds, int layer, int head) {
    if (layer < 0 || layer >= ds.num_layers || head < 0 || head >= ds.num_heads)
        fail(ErrorCode::invalid_argument, "head index out of range");
    std::vector<double> mean(size_t(ds.head_dim), 0.0);
    size_t count = 0;
    for (size_t s = 0; s < ds.num_samples(); ++s) {
        if (ds.samples[s].polarity != Polarity::positive) continue;
        auto a = ds.activation(s, layer, head);
        for (int i = 0; i < ds.head_dim; ++i) mean[size_t(i)] += double(a[size_t(i)]);
        ++count;
    }
    if (count == 0) fail(ErrorCode::empty_input, "dataset has no positive samples");
    for (auto& v : mean) v /= double(count);
    return mean;
}

double max_cross_dot(const Mat& v, const Mat& w) {
    if (v.rows != w.rows) fail(ErrorCode::shape_mismatch, "basis dimension mismatch");
    double worst = 0.0;
    for (int a = 0; a < v.cols; ++a) {
        for (int b = 0; b < w.cols; ++b) {
            double s = 0.0;
            for (int r = 0; r < v.rows; ++r) s += v.at(r, a) * w.at(r, b);
            worst = std::max(worst, std::abs(s));
        }
    }
    return worst;
}

// ----------------------------------------------------------------------------

const SubspaceBasis* SubspaceBank::find(int layer, int head, Attribute attribute,
                                        std::optional<bool> deflated) const {
    for (const auto& e : entries) {
        if (e.layer != layer || e.head != head || e.attribute != attribute) continue;
        if (deflated && e.deflated != *deflated) continue;
        return &e;
    }
    return nullptr;
}

void save_subspace_bank(const SubspaceBank& bank, const fs::path& dir) {
    fs::create_directories(dir);
    json entries = json::array();
    std::vector<float> payload;
    for (const auto& e : bank.entries) {
        if (e.basis.rows != bank.head_dim || int(e.mean_positive.size()) != bank.head_dim)
            fail(ErrorCode::shape_mismatch, "bank entry does not match head_dim");
        entries.push_back(json{{"layer", e.layer},
                               {"head", e.head},
                               {"attribute", to_string(e.attribute)},
                               {"k", e.k},
                               {"deflated", e.deflated},
                               {"singular_values", e.singular_values}});
        for (int c = 0; c < e.k; ++c)
            for (int r = 0; r < e.basis.rows; ++r) payload.push_back(float(e.basis.at(r, c)));
        for (double v : e.mean_positive) payload.push_back(float(v));
    }
    json manifest{{"version", 1}, {"head_dim", bank.head_dim}, {"entries", entries}};
    write_json_file(dir / "subspaces.json", manifest);
    write_f32_payload(dir / "bases.bin", payload);
}

SubspaceBank load_subspace_bank(const fs::path& dir) {
    json manifest = read_json_file(dir / "subspaces.json");
    SubspaceBank bank;
    try {
        bank.head_dim = manifest.at("head_dim").get<int>();
        const auto& entries = manifest.at("entries");

        size_t total = 0;
        for (const auto& e : entries)
            total += size_t(e.at("k").get<int>() + 1) * size_t(bank.head_dim);
        auto payload = read_f32_payload(dir / "bases.bin", total);

        size_t pos = 0;
        for (const auto& e : entries) {
            SubspaceBasis sb;
            sb.layer = e.at("layer").get<int>();
            sb.head = e.at("head").get<int>();
            sb.attribute = attribute_from_string(e.at("attribute").get<std::string>());
            sb.k = e.at("k").get<int>();
            sb.deflated = e.at("deflated").get<bool>();
            sb.singular_values = e.at("singular_values").get<std::vector<double>>();
            sb.basis = Mat(bank.head_dim, sb.k);
            for (int c = 0; c < sb.k; ++c)
                for (int r = 0; r < bank.head_dim; ++r) sb.basis.at(r, c) = double(payload[pos++]);
            sb.mean_positive.resize(size_t(bank.head_dim));
            for (auto& v : sb.mean_positive) v = double(payload[pos++]);
            bank.entries.push_back(std::move(sb));
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_record, "bad subspace bank: " + std::string(e.what()));
    }

    // f32 storage rounds orthonormality down to ~1e-7; restore it. Plain
    // bases first, then deflated ones against their (already cleaned) style
    // partner.
    auto clean = [](SubspaceBasis& e, const SubspaceBasis* style) {
        for (int c = 0; c < e.k; ++c) {
            if (style) orthogonalize_against(e.basis, c, style->basis);
            for (int prev = 0; prev < c; ++prev) {
                double proj = 0.0;
                for (int r = 0; r < e.basis.rows; ++r)
                    proj += e.basis.at(r, c) * e.basis.at(r, prev);
                for (int r = 0; r < e.basis.rows; ++r)
                    e.basis.at(r, c) -= proj * e.basis.at(r, prev);
            }
            normalize_column(e.basis, c);
        }
    };
    for (auto& e : bank.entries)
        if (!e.deflated) clean(e, nullptr);
    for (auto& e : bank.entries)
        if (e.deflated) clean(e, bank.find(e.layer, e.head, Attribute::style));
    return bank;
}

}  // namespace steerlab
