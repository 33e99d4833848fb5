#pragma once

#include <map>
#include <vector>

#include "steerlab/common.hpp"
#include "steerlab/store.hpp"
#include "steerlab/subspace.hpp"
#include "steerlab/toymodel.hpp"

namespace steerlab {

struct HeadRef {
    int layer = 0;
    int head = 0;
    auto operator<=>(const HeadRef&) const = default;
};

// Blueprint for planted datasets: unit directions of amplitude `alpha` are
// injected at the signal heads, with the directions of a coupled head (one
// that is a signal head for both attributes) separated by exactly
// `angle_deg`. Negative members carry only the shared Gaussian base;
// non-signal heads get independent draws in both members.
struct PlantSpec {
    int n_layers = 2;
    int n_heads = 4;
    int head_dim = 16;
    std::vector<HeadRef> style_heads;
    std::vector<HeadRef> truth_heads;
    double angle_deg = 60.0;
    double alpha = 1.0;
    double noise_std = 0.1;
    double base_std = 0.2;
    int num_pairs = 100;
    double split_ratio = 0.8;
    uint64_t seed = 0;
};

void validate_plant_spec(const PlantSpec& spec);
json plant_spec_to_json(const PlantSpec& spec);
PlantSpec plant_spec_from_json(const json& j);

struct GroundTruth {
    PlantSpec spec;
    std::map<HeadRef, std::vector<double>> style_dirs;
    std::map<HeadRef, std::vector<double>> truth_dirs;
};

json ground_truth_to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const json& j);

struct PlantedData {
    ActivationDataset style;
    ActivationDataset truth;
    GroundTruth ground_truth;
};

PlantedData generate_planted_dataset(const PlantSpec& spec);

// |cos(v1, u)| between the leading basis vector and a planted direction
double recovery_score(const SubspaceBasis& basis, std::span<const double> planted);

// Planted datasets whose base activations come from a seeded toy model run
// over random byte prompts, so downstream stages operate on model-shaped
// data. Offsets are injected at extraction time exactly as in the Gaussian
// construction.
struct PlantedToySetup {
    ToyModel model;
    ActivationDataset style;
    ActivationDataset truth;
    GroundTruth ground_truth;
};

PlantedToySetup planted_toy_setup(const PlantSpec& spec, uint64_t model_seed,
                                  int prompt_len = 12);

}  // namespace steerlab
