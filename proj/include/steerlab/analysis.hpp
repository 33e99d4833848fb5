#pragma once

#include <map>
#include <set>
#include <vector>

#include "steerlab/common.hpp"
#include "steerlab/probe.hpp"
#include "steerlab/steer.hpp"
#include "steerlab/store.hpp"
#include "steerlab/subspace.hpp"
#include "steerlab/toymodel.hpp"

namespace steerlab {

double cosine_similarity(std::span<const double> u, std::span<const double> v);

struct WelchResult {
    double t = 0.0;
    double dof = 0.0;
    double p_two_tailed = 1.0;
    double cohens_d = 0.0;
};

// Welch's unequal-variance t statistic with Welch-Satterthwaite degrees of
// freedom; two-tailed p through the regularized incomplete beta; Cohen's d
// with the pooled standard deviation.
WelchResult welch_t_test(std::span<const double> group_a, std::span<const double> group_b);

// Regularized incomplete beta I_x(a, b), evaluated with a Lentz continued
// fraction. Accurate to ~1e-6 over the parameter range used here.
double reg_inc_beta(double a, double b, double x);
double student_t_two_tailed_p(double t, double dof);

struct MeanDifference {
    int layer = -1;
    int head = -1;
    Attribute attribute = Attribute::style;
    std::vector<double> delta_mean;  // mean(positive) - mean(negative)
};

MeanDifference mean_difference(const ActivationDataset& ds, int layer, int head);

struct EntanglementReport {
    std::vector<std::pair<HeadKey, double>> same_head_relevant;    // |cos| per head
    std::vector<std::pair<HeadKey, double>> same_head_irrelevant;  // |cos| per head
    std::vector<double> cross_head;                                // cos across heads
    WelchResult welch;  // relevant vs irrelevant same-head |cos| groups
};

EntanglementReport entanglement_report(const std::map<HeadKey, MeanDifference>& style_means,
                                       const std::map<HeadKey, MeanDifference>& truth_means,
                                       const std::set<HeadKey>& relevant,
                                       const std::set<HeadKey>& irrelevant);

void write_entanglement_csv(const EntanglementReport& report, const fs::path& path);

struct InfoLossReport {
    int layer = -1;
    int head = -1;
    int k = 0;
    int dim = 0;
    double delta = 0.0;       // captured-energy fraction removed by deflation
    double k_over_d = 0.0;    // the incoherence estimate
};

// delta = |ΔA_t V_s V_s^T|_F^2 / |ΔA_t|_F^2, computed from row projections.
InfoLossReport info_loss(const DifferenceMatrix& truth_dm, const SubspaceBasis& style_basis);

// sample_id, label, and the first two basis coordinates per sample
void projection_export(const ActivationDataset& ds, const SubspaceBasis& basis,
                       const fs::path& path);

// one row per probe plus per-layer aggregate rows (head column = "all")
void accuracy_heatmap_export(const std::vector<const ProbeBank*>& banks, const fs::path& path);

// ----------------------------------------------------------------------------
// strength sweep (edited generation scored by probes)

struct ProbeScorer {
    Attribute attribute = Attribute::style;
    std::vector<ProbeModel> probes;

    // mean sigmoid score of the edited activations (raw + delta) at this
    // scorer's heads over positions >= from_pos
    double score_trace(const GenerationTrace& trace, int from_pos) const;
};

struct SweepPoint {
    double gamma_style = 0.0;
    double gamma_truth = 0.0;
    double style_score = 0.0;
    double truth_score = 0.0;
};

std::vector<SweepPoint> strength_sweep(const ToyModel& model, const HeadPartition& partition,
                                       const SubspaceBank& bank, const StrengthParams& base,
                                       const std::vector<double>& gamma_style_grid,
                                       const std::vector<double>& gamma_truth_grid,
                                       const std::vector<std::string>& prompts,
                                       const ProbeScorer& style_scorer,
                                       const ProbeScorer& truth_scorer, int max_new);

void write_sweep_csv(const std::vector<SweepPoint>& points, const fs::path& path);

}  // namespace steerlab
