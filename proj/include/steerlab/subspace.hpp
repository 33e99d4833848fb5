#pragma once

#include <optional>
#include <vector>

#include "steerlab/common.hpp"
#include "steerlab/store.hpp"

namespace steerlab {

// Row i holds (positive - negative) activations of pair i at one head, in
// ascending pair_id order.
struct DifferenceMatrix {
    int layer = -1;
    int head = -1;
    Attribute attribute = Attribute::style;
    Mat delta;  // [N, d]
};

DifferenceMatrix difference_matrix(const ActivationDataset& ds, int layer, int head);

struct SubspaceBasis {
    int layer = -1;
    int head = -1;
    Attribute attribute = Attribute::style;
    int k = 0;
    Mat basis;  // [d, k], orthonormal columns, non-increasing singular values
    std::vector<double> singular_values;
    std::vector<double> mean_positive;  // filled when the basis joins a bank
    bool deflated = false;
};

// Top-k right singular vectors via eigendecomposition of the d x d Gram
// matrix. Column signs are fixed by making each column's largest-magnitude
// entry positive. When the effective rank falls below k the basis is clipped
// with a warning.
SubspaceBasis top_k_svd(const DifferenceMatrix& dm, int k);

// x -> x - V (V^T x). Never materializes the d x d projector.
struct ComplementProjector {
    Mat basis;  // [d, k]

    std::vector<double> apply(std::span<const double> x) const;
    void apply_rows(Mat& m) const;
};

ComplementProjector complement_projector(const SubspaceBasis& basis);

// Projects every row of the truth differences through the style complement,
// then decomposes. The result is re-orthonormalized against the style basis
// so the mutual-orthogonality invariant holds at machine precision.
SubspaceBasis deflate_and_decompose(const DifferenceMatrix& truth_dm,
                                    const SubspaceBasis& style_basis, int k);

std::vector<double> mean_positive_activation(const ActivationDataset& ds, int layer, int head);

// max |V^T W| over all column pairs; the deflation orthogonality measure
double max_cross_dot(const Mat& v, const Mat& w);

// ----------------------------------------------------------------------------
// bank: every basis needed by a steering plan, persisted as
//   subspaces.json + bases.bin (per entry: V columns then the positive mean)

struct SubspaceBank {
    int head_dim = 0;
    std::vector<SubspaceBasis> entries;

    const SubspaceBasis* find(int layer, int head, Attribute attribute,
                              std::optional<bool> deflated = std::nullopt) const;
};

void save_subspace_bank(const SubspaceBank& bank, const fs::path& dir);
SubspaceBank load_subspace_bank(const fs::path& dir);

}  // namespace steerlab
