#include "steerlab/steer.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace steerlab {

namespace {
constexpr double kCoupledOrthoTol = 1e-8;
}

std::string to_string(HeadCase c) {
    switch (c) {
        case HeadCase::style_only: return "style_only";
        case HeadCase::truth_only: return "truth_only";
        case HeadCase::coupled: return "coupled";
    }
    return "style_only";
}

std::string to_string(EditPositions p) {
    return p == EditPositions::all ? "all" : "generated_only";
}

HeadCase head_case_from_string(const std::string& s) {
    if (s == "style_only") return HeadCase::style_only;
    if (s == "truth_only") return HeadCase::truth_only;
    if (s == "coupled") return HeadCase::coupled;
    fail(ErrorCode::corrupt_record, "unknown head case: " + s);
}

EditPositions positions_from_string(const std::string& s) {
    if (s == "all") return EditPositions::all;
    if (s == "generated_only") return EditPositions::generated_only;
    fail(ErrorCode::corrupt_record, "unknown positions mode: " + s);
}

const PlanHead* SteeringPlan::find(int layer, int head) const {
    for (const auto& h : heads)
        if (h.layer == layer && h.head == head) return &h;
    return nullptr;
}

namespace {

SubspaceBasis require_basis(const SubspaceBank& bank, HeadKey key, Attribute attr,
                            std::optional<bool> deflated) {
    const SubspaceBasis* b = bank.find(key.first, key.second, attr, deflated);
    if (!b)
        fail(ErrorCode::missing_basis,
             "bank has no " + to_string(attr) + (deflated && *deflated ? " (deflated)" : "") +
                 " basis for layer " + std::to_string(key.first) + " head " +
                 std::to_string(key.second));
    if (b->mean_positive.empty())
        fail(ErrorCode::missing_basis, "bank entry lacks the positive-mean activation");
    return *b;
}

}  // namespace

SteeringPlan build_plan(const HeadPartition& partition, const SubspaceBank& bank,
                        const StrengthParams& strengths) {
    if (!(strengths.gamma_style >= 0.0) || !(strengths.gamma_truth >= 0.0) ||
        !std::isfinite(strengths.gamma_style) || !std::isfinite(strengths.gamma_truth))
        fail(ErrorCode::invalid_argument, "strengths must be finite and nonnegative");

    SteeringPlan plan;
    plan.head_dim = bank.head_dim;
    plan.strengths = strengths;

    for (const auto& key : partition.style_only) {
        PlanHead ph;
        ph.layer = key.first;
        ph.head = key.second;
        ph.head_case = HeadCase::style_only;
        ph.style = require_basis(bank, key, Attribute::style, std::nullopt);
        plan.heads.push_back(std::move(ph));
    }
    for (const auto& key : partition.truth_only) {
        PlanHead ph;
        ph.layer = key.first;
        ph.head = key.second;
        ph.head_case = HeadCase::truth_only;
        ph.truth = require_basis(bank, key, Attribute::truth, std::nullopt);
        plan.heads.push_back(std::move(ph));
    }
    for (const auto& key : partition.coupled) {
        PlanHead ph;
        ph.layer = key.first;
        ph.head = key.second;
        ph.head_case = HeadCase::coupled;
        ph.style = require_basis(bank, key, Attribute::style, std::nullopt);
        if (!bank.find(key.first, key.second, Attribute::truth, true) &&
            bank.find(key.first, key.second, Attribute::truth))
            fail(ErrorCode::basis_not_deflated,
                 "coupled head at layer " + std::to_string(key.first) + " head " +
                     std::to_string(key.second) + " was given an entangled truth basis");
        ph.truth = require_basis(bank, key, Attribute::truth, true);
        double cross = max_cross_dot(ph.truth->basis, ph.style->basis);
        if (cross > kCoupledOrthoTol)
            fail(ErrorCode::invariant_violation,
                 "coupled-head bases are not mutually orthogonal (max dot " +
                     format_double(cross) + ")");
        plan.heads.push_back(std::move(ph));
    }

    for (const auto& ph : plan.heads) {
        for (const auto* b : {&ph.style, &ph.truth}) {
            if (b->has_value() && (*b)->basis.rows != plan.head_dim)
                fail(ErrorCode::shape_mismatch, "plan bases disagree on head_dim");
        }
    }
    return plan;
}

double global_strength(double sigma, int head_dim) {
    if (sigma < 0.0) fail(ErrorCode::invalid_argument, "sigma must be nonnegative");
    if (head_dim < 1) fail(ErrorCode::invalid_argument, "head_dim must be >= 1");
    return sigma / double(head_dim);
}

double adaptive_scale(std::span<const double> mean_positive, std::span<const double> activation,
                      std::span<const double> basis_vector) {
    double vv = norm2_sq(basis_vector);
    if (vv == 0.0) fail(ErrorCode::invalid_argument, "basis vector must be nonzero");
    double num = 0.0;
    for (size_t i = 0; i < basis_vector.size(); ++i)
        num += (mean_positive[i] - activation[i]) * basis_vector[i];
    return num / vv;
}

namespace {

void accumulate_terms(const SubspaceBasis& basis, double gamma, int head_dim,
                      std::span<const double> activation, std::vector<double>& delta) {
    if (gamma == 0.0) return;
    for (int i = 0; i < basis.k; ++i) {
        std::vector<double> v = basis.basis.col(i);
        double lambda = global_strength(basis.singular_values[size_t(i)], head_dim) *
                        adaptive_scale(basis.mean_positive, activation, v) * gamma;
        axpy(lambda, v, delta);
    }
}

}  // namespace

std::vector<double> steering_delta(const SteeringPlan& plan, int layer, int head,
                                   std::span<const double> activation) {
    const PlanHead* ph = plan.find(layer, head);
    if (!ph)
        fail(ErrorCode::invalid_argument,
             "no plan entry for layer " + std::to_string(layer) + " head " + std::to_string(head));
    if (int(activation.size()) != plan.head_dim)
        fail(ErrorCode::shape_mismatch, "activation length disagrees with plan head_dim");

    std::vector<double> delta(size_t(plan.head_dim), 0.0);
    if (ph->head_case != HeadCase::truth_only)
        accumulate_terms(*ph->style, plan.strengths.gamma_style, plan.head_dim, activation, delta);
    if (ph->head_case != HeadCase::style_only)
        accumulate_terms(*ph->truth, plan.strengths.gamma_truth, plan.head_dim, activation, delta);
    return delta;
}

HeadEditor as_head_editor(const SteeringPlan& plan, int prompt_len) {
    return [&plan, prompt_len](int layer, int head, int position,
                               std::span<const double> activation, std::span<double> delta) {
        if (plan.strengths.positions == EditPositions::generated_only && position < prompt_len)
            return;
        const PlanHead* ph = plan.find(layer, head);
        if (!ph) return;
        std::vector<double> d = steering_delta(plan, layer, head, activation);
        for (size_t i = 0; i < d.size(); ++i) delta[i] = d[i];
    };
}

// ----------------------------------------------------------------------------
// plan files

void save_plan(const SteeringPlan& plan, const HeadPartition& partition,
               const fs::path& plan_path, const fs::path& bank_dir) {
    auto manifest_bytes = read_file_bytes(bank_dir / "subspaces.json");
    auto payload_bytes = read_file_bytes(bank_dir / "bases.bin");
    uint64_t h = fnv1a64(manifest_bytes);
    std::string combined = hex64(h);
    combined += hex64(fnv1a64(payload_bytes));
    uint64_t bank_hash = fnv1a64(combined);

    json heads = json::array();
    for (const auto& ph : plan.heads) {
        json entry{{"layer", ph.layer},
                   {"head", ph.head},
                   {"case", to_string(ph.head_case)}};
        if (ph.style) entry["k_style"] = ph.style->k;
        if (ph.truth) entry["k_truth"] = ph.truth->k;
        heads.push_back(entry);
    }
    json j{{"version", 1},
           {"bank_path", bank_dir.string()},
           {"bank_hash", hex64(bank_hash)},
           {"gamma_style", plan.strengths.gamma_style},
           {"gamma_truth", plan.strengths.gamma_truth},
           {"positions", to_string(plan.strengths.positions)},
           {"partition", partition_to_json(partition)},
           {"heads", heads}};
    write_json_file(plan_path, j);
}

SteeringPlan load_plan(const fs::path& plan_path) {
    json j = read_json_file(plan_path);
    try {
        fs::path bank_dir = j.at("bank_path").get<std::string>();

        auto manifest_bytes = read_file_bytes(bank_dir / "subspaces.json");
        auto payload_bytes = read_file_bytes(bank_dir / "bases.bin");
        std::string combined = hex64(fnv1a64(manifest_bytes));
        combined += hex64(fnv1a64(payload_bytes));
        std::string have = hex64(fnv1a64(combined));
        if (have != j.at("bank_hash").get<std::string>())
            fail(ErrorCode::manifest_mismatch,
                 "subspace bank content hash disagrees with the plan");

        SubspaceBank bank = load_subspace_bank(bank_dir);
        HeadPartition partition = partition_from_json(j.at("partition"));
        StrengthParams strengths;
        strengths.gamma_style = j.at("gamma_style").get<double>();
        strengths.gamma_truth = j.at("gamma_truth").get<double>();
        strengths.positions = positions_from_string(j.at("positions").get<std::string>());
        return build_plan(partition, bank, strengths);
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_record, "bad plan file: " + std::string(e.what()));
    }
}

}  // namespace steerlab
