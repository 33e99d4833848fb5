#pragma once

#include <map>
#include <optional>
#include <vector>

#include "steerlab/common.hpp"
#include "steerlab/probe.hpp"
#include "steerlab/subspace.hpp"
#include "steerlab/toymodel.hpp"

namespace steerlab {

enum class HeadCase { style_only, truth_only, coupled };
enum class EditPositions { all, generated_only };

std::string to_string(HeadCase c);
std::string to_string(EditPositions p);
HeadCase head_case_from_string(const std::string& s);
EditPositions positions_from_string(const std::string& s);

struct StrengthParams {
    double gamma_style = 0.0;
    double gamma_truth = 0.0;
    EditPositions positions = EditPositions::all;
};

struct PlanHead {
    int layer = -1;
    int head = -1;
    HeadCase head_case = HeadCase::style_only;
    std::optional<SubspaceBasis> style;  // V_s, sigma_s, positive mean
    std::optional<SubspaceBasis> truth;  // V_t (deflated for coupled heads)
};

// Immutable once built; one plan can serve any number of generation sessions.
struct SteeringPlan {
    int head_dim = 0;
    StrengthParams strengths;
    std::vector<PlanHead> heads;

    const PlanHead* find(int layer, int head) const;
};

// Assembles a plan from a partition and a bank. Every head must have its
// bases present; coupled heads must carry a deflated truth basis that is
// orthogonal to the style basis within 1e-8.
SteeringPlan build_plan(const HeadPartition& partition, const SubspaceBank& bank,
                        const StrengthParams& strengths);

// sigma / head_dim
double global_strength(double sigma, int head_dim);

// signed projection coefficient of (mean_positive - activation) onto v
double adaptive_scale(std::span<const double> mean_positive, std::span<const double> activation,
                      std::span<const double> basis_vector);

// Sum over the head's basis terms of (global * adaptive * gamma) * v_i,
// recomputed from the live activation — nothing is cached between tokens.
std::vector<double> steering_delta(const SteeringPlan& plan, int layer, int head,
                                   std::span<const double> activation);

// Adapts a plan into the model's edit callback. The editor holds a reference;
// the plan must outlive it. `prompt_len` marks where generated positions
// start for the generated_only mode; a bare forward pass uses 0 so every
// position counts as generated.
HeadEditor as_head_editor(const SteeringPlan& plan, int prompt_len = 0);

// Plan file: JSON manifest referencing a subspace bank by path + content
// hash. Loading revalidates the hash and rebuilds the plan from the bank.
void save_plan(const SteeringPlan& plan, const HeadPartition& partition,
               const fs::path& plan_path, const fs::path& bank_dir);
SteeringPlan load_plan(const fs::path& plan_path);

}  // namespace steerlab
