#include "steerlab/analysis.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace steerlab {

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) fail(ErrorCode::shape_mismatch, "vector length mismatch");
    double nu = norm2(u), nv = norm2(v);
    if (nu == 0.0 || nv == 0.0)
        fail(ErrorCode::invalid_argument, "cosine similarity of a zero vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

// ----------------------------------------------------------------------------
// Welch's t-test

namespace {

// Lentz's method for the continued fraction of the incomplete beta
double beta_cont_frac(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-12;
    constexpr double kTiny = 1e-300;

    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;

    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;

        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

double sample_mean(std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s / double(xs.size());
}

double sample_var(std::span<const double> xs, double mean) {
    double s = 0.0;
    for (double x : xs) s += (x - mean) * (x - mean);
    return s / double(xs.size() - 1);
}

}  // namespace

double reg_inc_beta(double a, double b, double x) {
    if (x < 0.0 || x > 1.0) fail(ErrorCode::invalid_argument, "x outside [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log1p(-x);
    double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cont_frac(a, b, x) / a;
    return 1.0 - front * beta_cont_frac(b, a, 1.0 - x) / b;
}

double student_t_two_tailed_p(double t, double dof) {
    if (dof <= 0.0) fail(ErrorCode::invalid_argument, "dof must be positive");
    double x = dof / (dof + t * t);
    return std::clamp(reg_inc_beta(dof / 2.0, 0.5, x), 0.0, 1.0);
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2)
        fail(ErrorCode::invalid_argument, "each group needs at least 2 values");
    double na = double(a.size()), nb = double(b.size());
    double ma = sample_mean(a), mb = sample_mean(b);
    double va = sample_var(a, ma), vb = sample_var(b, mb);
    if (va == 0.0 && vb == 0.0)
        fail(ErrorCode::invalid_argument, "both groups have zero variance");

    double se_a = va / na, se_b = vb / nb;
    WelchResult r;
    r.t = (ma - mb) / std::sqrt(se_a + se_b);
    r.dof = (se_a + se_b) * (se_a + se_b) /
            (se_a * se_a / (na - 1.0) + se_b * se_b / (nb - 1.0));
    r.p_two_tailed = student_t_two_tailed_p(r.t, r.dof);

    double pooled = std::sqrt(((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0));
    r.cohens_d = pooled == 0.0 ? 0.0 : (ma - mb) / pooled;
    return r;
}

// ----------------------------------------------------------------------------

MeanDifference mean_difference(const ActivationDataset& ds, int layer, int head) {
    if (layer < 0 || layer >= ds.num_layers || head < 0 || head >= ds.num_heads)
        fail(ErrorCode::invalid_argument, "head index out of range");
    std::vector<double> pos(size_t(ds.head_dim), 0.0), neg(size_t(ds.head_dim), 0.0);
    size_t np = 0, nn = 0;
    for (size_t s = 0; s < ds.num_samples(); ++s) {
        auto a = ds.activation(s, layer, head);
        auto& acc = ds.samples[s].polarity == Polarity::positive ? pos : neg;
        auto& cnt = ds.samples[s].polarity == Polarity::positive ? np : nn;
        for (int i = 0; i < ds.head_dim; ++i) acc[size_t(i)] += double(a[size_t(i)]);
        ++cnt;
    }
    if (np == 0 || nn == 0) fail(ErrorCode::empty_input, "dataset lacks one polarity");

    MeanDifference md;
    md.layer = layer;
    md.head = head;
    md.attribute = ds.attribute;
    md.delta_mean.resize(size_t(ds.head_dim));
    for (int i = 0; i < ds.head_dim; ++i)
        md.delta_mean[size_t(i)] = pos[size_t(i)] / double(np) - neg[size_t(i)] / double(nn);
    return md;
}

EntanglementReport entanglement_report(const std::map<HeadKey, MeanDifference>& style_means,
                                       const std::map<HeadKey, MeanDifference>& truth_means,
                                       const std::set<HeadKey>& relevant,
                                       const std::set<HeadKey>& irrelevant) {
    if (relevant.empty() || irrelevant.empty())
        fail(ErrorCode::empty_input, "both head groups must be nonempty");

    auto require = [](const std::map<HeadKey, MeanDifference>& m, HeadKey k)
        -> const MeanDifference& {
        auto it = m.find(k);
        if (it == m.end())
            fail(ErrorCode::invalid_argument,
                 "missing mean difference for layer " + std::to_string(k.first) + " head " +
                     std::to_string(k.second));
        return it->second;
    };

    EntanglementReport rep;
    for (const auto& k : relevant)
        rep.same_head_relevant.emplace_back(
            k, std::abs(cosine_similarity(require(style_means, k).delta_mean,
                                          require(truth_means, k).delta_mean)));
    for (const auto& k : irrelevant)
        rep.same_head_irrelevant.emplace_back(
            k, std::abs(cosine_similarity(require(style_means, k).delta_mean,
                                          require(truth_means, k).delta_mean)));

    std::set<HeadKey> all = relevant;
    all.insert(irrelevant.begin(), irrelevant.end());
    for (const auto& ka : all)
        for (const auto& kb : all) {
            if (ka == kb) continue;
            rep.cross_head.push_back(cosine_similarity(require(style_means, ka).delta_mean,
                                                       require(truth_means, kb).delta_mean));
        }

    std::vector<double> rel, irr;
    for (const auto& [k, v] : rep.same_head_relevant) rel.push_back(v);
    for (const auto& [k, v] : rep.same_head_irrelevant) irr.push_back(v);
    rep.welch = welch_t_test(rel, irr);
    return rep;
}

void write_entanglement_csv(const EntanglementReport& rep, const fs::path& path) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [k, v] : rep.same_head_relevant)
        rows.push_back({"same_head_relevant", std::to_string(k.first), std::to_string(k.second),
                        format_double(v)});
    for (const auto& [k, v] : rep.same_head_irrelevant)
        rows.push_back({"same_head_irrelevant", std::to_string(k.first), std::to_string(k.second),
                        format_double(v)});
    for (double v : rep.cross_head) rows.push_back({"cross_head", "", "", format_double(v)});
    write_csv(path, {"group", "layer", "head", "cos"}, rows);
}

InfoLossReport info_loss(const DifferenceMatrix& truth_dm, const SubspaceBasis& style_basis) {
    const Mat& m = truth_dm.delta;
    const Mat& v = style_basis.basis;
    if (m.cols != v.rows) fail(ErrorCode::shape_mismatch, "dimension mismatch");

    double total = 0.0, captured = 0.0;
    for (int r = 0; r < m.rows; ++r) {
        auto row = m.row(r);
        total += norm2_sq(row);
        for (int c = 0; c < v.cols; ++c) {
            double proj = 0.0;
            for (int i = 0; i < v.rows; ++i) proj += row[size_t(i)] * v.at(i, c);
            captured += proj * proj;
        }
    }
    if (total == 0.0) fail(ErrorCode::invalid_argument, "difference matrix has zero norm");

    InfoLossReport rep;
    rep.layer = truth_dm.layer;
    rep.head = truth_dm.head;
    rep.k = style_basis.k;
    rep.dim = m.cols;
    rep.delta = std::clamp(captured / total, 0.0, 1.0);
    rep.k_over_d = double(style_basis.k) / double(m.cols);
    return rep;
}

void projection_export(const ActivationDataset& ds, const SubspaceBasis& basis,
                       const fs::path& path) {
    if (basis.k < 2)
        fail(ErrorCode::invalid_argument, "projection export needs at least 2 basis columns");
    std::vector<double> v1 = basis.basis.col(0);
    std::vector<double> v2 = basis.basis.col(1);

    std::vector<std::vector<std::string>> rows;
    for (size_t s = 0; s < ds.num_samples(); ++s) {
        auto a = ds.activation(s, basis.layer, basis.head);
        double c1 = 0.0, c2 = 0.0;
        for (int i = 0; i < ds.head_dim; ++i) {
            c1 += double(a[size_t(i)]) * v1[size_t(i)];
            c2 += double(a[size_t(i)]) * v2[size_t(i)];
        }
        rows.push_back({std::to_string(ds.samples[s].sample_id),
                        std::to_string(ds.samples[s].label), format_double(c1),
                        format_double(c2)});
    }
    write_csv(path, {"sample_id", "label", "coordinate1", "coordinate2"}, rows);
}

void accuracy_heatmap_export(const std::vector<const ProbeBank*>& banks, const fs::path& path) {
    if (banks.empty()) fail(ErrorCode::empty_input, "no probe banks to export");

    std::vector<std::vector<std::string>> rows;
    for (const ProbeBank* bank : banks) {
        std::map<int, std::vector<double>> per_layer;
        for (const auto& p : bank->probes) {
            rows.push_back({std::to_string(p.layer), std::to_string(p.head),
                            to_string(p.attribute), format_double(p.val_accuracy), ""});
            per_layer[p.layer].push_back(p.val_accuracy);
        }
        for (const auto& [layer, accs] : per_layer) {
            double mean = 0.0;
            for (double a : accs) mean += a;
            mean /= double(accs.size());
            double var = 0.0;
            for (double a : accs) var += (a - mean) * (a - mean);
            double std_dev = std::sqrt(var / double(accs.size()));
            rows.push_back({std::to_string(layer), "all", to_string(bank->attribute),
                            format_double(mean), format_double(std_dev)});
        }
    }
    write_csv(path, {"layer", "head", "attribute", "accuracy", "std"}, rows);
}

// ----------------------------------------------------------------------------

double ProbeScorer::score_trace(const GenerationTrace& trace, int from_pos) const {
    if (probes.empty()) fail(ErrorCode::empty_input, "scorer has no probes");
    double total = 0.0;
    size_t count = 0;
    std::vector<double> edited(static_cast<size_t>(trace.head_dim));
    for (const auto& p : probes) {
        for (int pos = from_pos; pos < trace.positions; ++pos) {
            auto raw = trace.raw_at(pos, p.layer, p.head);
            auto del = trace.delta_at(pos, p.layer, p.head);
            for (int i = 0; i < trace.head_dim; ++i) edited[size_t(i)] = raw[size_t(i)] + del[size_t(i)];
            total += probe_score(p, edited);
            ++count;
        }
    }
    if (count == 0) fail(ErrorCode::empty_input, "no positions to score");
    return total / double(count);
}

std::vector<SweepPoint> strength_sweep(const ToyModel& model, const HeadPartition& partition,
                                       const SubspaceBank& bank, const StrengthParams& base,
                                       const std::vector<double>& gamma_style_grid,
                                       const std::vector<double>& gamma_truth_grid,
                                       const std::vector<std::string>& prompts,
                                       const ProbeScorer& style_scorer,
                                       const ProbeScorer& truth_scorer, int max_new) {
    if (gamma_style_grid.empty() || gamma_truth_grid.empty())
        fail(ErrorCode::invalid_argument, "sweep grids must be nonempty");
    if (prompts.empty()) fail(ErrorCode::invalid_argument, "sweep needs prompts");

    std::vector<SweepPoint> points;
    for (double gs : gamma_style_grid) {
        for (double gt : gamma_truth_grid) {
            StrengthParams strengths = base;
            strengths.gamma_style = gs;
            strengths.gamma_truth = gt;
            SteeringPlan plan = build_plan(partition, bank, strengths);

            double style_total = 0.0, truth_total = 0.0;
            for (const auto& prompt : prompts) {
                int prompt_len = int(prompt.size()) + 1;  // + BOS
                HeadEditor editor = as_head_editor(plan, prompt_len);
                GenerateResult gen = generate(model, prompt, &editor, max_new);
                int from = std::min(gen.prompt_len, gen.trace.positions - 1);
                style_total += style_scorer.score_trace(gen.trace, from);
                truth_total += truth_scorer.score_trace(gen.trace, from);
            }
            points.push_back({gs, gt, style_total / double(prompts.size()),
                              truth_total / double(prompts.size())});
        }
    }
    return points;
}

void write_sweep_csv(const std::vector<SweepPoint>& points, const fs::path& path) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : points)
        rows.push_back({format_double(p.gamma_style), format_double(p.gamma_truth),
                        format_double(p.style_score), format_double(p.truth_score)});
    write_csv(path, {"gamma_style", "gamma_truth", "style_score", "truth_score"}, rows);
}

}  // namespace steerlab
