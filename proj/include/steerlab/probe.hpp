#pragma once

#include <map>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "steerlab/common.hpp"
#include "steerlab/store.hpp"

namespace steerlab {

using HeadKey = std::pair<int, int>;  // (layer, head)

struct ProbeConfig {
    double learning_rate = 0.5;
    int epochs = 500;
    double l2_weight = 1e-4;
    uint64_t seed = 1;
    bool use_bias = false;
};

struct ProbeModel {
    int layer = -1;
    int head = -1;
    Attribute attribute = Attribute::style;
    std::vector<double> weights;
    double bias = 0.0;
    bool has_bias = false;
    double val_accuracy = 0.0;
};

// Deterministic full-batch gradient descent on the logistic loss with L2 on
// the weights (never on the bias). Throws on a single-class training set and
// on a non-finite loss.
ProbeModel train_probe(const Mat& x, const std::vector<int>& y, const ProbeConfig& cfg);

// Fraction of samples where (score > 0) matches the label; an exact zero
// score predicts class 0.
double evaluate_probe(const ProbeModel& probe, const Mat& x, const std::vector<int>& y);

double probe_score(const ProbeModel& probe, std::span<const double> a);  // sigmoid

struct HeadSelection {
    Attribute attribute = Attribute::style;
    int capacity = 0;  // H
    std::vector<std::pair<HeadKey, double>> heads;  // accuracy non-increasing

    std::set<HeadKey> key_set() const;
};

HeadSelection select_heads(const std::map<HeadKey, double>& accuracies, int capacity,
                           Attribute attribute);

struct HeadPartition {
    std::set<HeadKey> style_only;
    std::set<HeadKey> truth_only;
    std::set<HeadKey> coupled;

    std::set<HeadKey> all() const;
};

HeadPartition partition_heads(const HeadSelection& style_sel, const HeadSelection& truth_sel);

json partition_to_json(const HeadPartition& p);
HeadPartition partition_from_json(const json& j);

// ----------------------------------------------------------------------------
// dataset-level helpers and the probe bank

struct LabeledVectors {
    Mat x;
    std::vector<int> y;
};

// Gathers activations of one head, converted to double. `split` of nullopt
// takes every sample.
LabeledVectors gather_head_vectors(const ActivationDataset& ds, int layer, int head,
                                   std::optional<Split> split);

struct ProbeBank {
    Attribute attribute = Attribute::style;
    int head_dim = 0;
    std::vector<ProbeModel> probes;

    const ProbeModel* find(int layer, int head) const;
    std::map<HeadKey, double> accuracies() const;
};

// Trains one probe per (layer, head) on the train split and scores it on the
// val split. Per-head seeds derive from cfg.seed.
ProbeBank train_probe_bank(const ActivationDataset& ds, const ProbeConfig& cfg);

void save_probe_bank(const ProbeBank& bank, const fs::path& dir);
ProbeBank load_probe_bank(const fs::path& dir);

}  // namespace steerlab
