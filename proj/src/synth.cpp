#include "steerlab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

namespace steerlab {

namespace {

std::vector<double> random_unit(Rng& rng, int dim) {
    std::vector<double> v(static_cast<size_t>(dim));
    double n = 0.0;
    while (n == 0.0) {
        for (auto& x : v) x = rng.gaussian();
        n = norm2(v);
    }
    for (auto& x : v) x /= n;
    return v;
}

// unit vector at exactly `angle` radians from u, in the plane spanned by u
// and a random orthogonal direction
std::vector<double> rotated_unit(Rng& rng, std::span<const double> u, double angle) {
    std::vector<double> w = random_unit(rng, int(u.size()));
    double proj = dot(w, u);
    for (size_t i = 0; i < w.size(); ++i) w[i] -= proj * u[i];
    double n = norm2(w);
    while (n < 1e-9) {  // astronomically unlikely; redraw for safety
        w = random_unit(rng, int(u.size()));
        proj = dot(w, u);
        for (size_t i = 0; i < w.size(); ++i) w[i] -= proj * u[i];
        n = norm2(w);
    }
    for (auto& x : w) x /= n;

    std::vector<double> out(u.size());
    double c = std::cos(angle), s = std::sin(angle);
    for (size_t i = 0; i < u.size(); ++i) out[i] = c * u[i] + s * w[i];
    return out;
}

bool contains(const std::vector<HeadRef>& refs, HeadRef key) {
    return std::find(refs.begin(), refs.end(), key) != refs.end();
}

std::vector<HeadRef> refs_from_json(const json& arr) {
    std::vector<HeadRef> out;
    for (const auto& j : arr)
        out.push_back({j.at("layer").get<int>(), j.at("head").get<int>()});
    return out;
}

json refs_to_json(const std::vector<HeadRef>& refs) {
    json arr = json::array();
    for (const auto& r : refs) arr.push_back(json{{"layer", r.layer}, {"head", r.head}});
    return arr;
}

}  // namespace

void validate_plant_spec(const PlantSpec& spec) {
    if (spec.n_layers < 1 || spec.n_heads < 1 || spec.head_dim < 1)
        fail(ErrorCode::invalid_argument, "plant geometry must be positive");
    if (spec.num_pairs < 2) fail(ErrorCode::invalid_argument, "need at least 2 pairs");
    if (!(spec.angle_deg >= 0.0 && spec.angle_deg <= 90.0))
        fail(ErrorCode::invalid_argument, "angle must lie in [0, 90] degrees");
    if (spec.alpha < 0.0 || spec.noise_std < 0.0 || spec.base_std < 0.0)
        fail(ErrorCode::invalid_argument, "amplitudes and noise must be nonnegative");
    auto check_refs = [&](const std::vector<HeadRef>& refs) {
        std::set<HeadRef> seen;
        for (const auto& r : refs) {
            if (r.layer < 0 || r.layer >= spec.n_layers || r.head < 0 || r.head >= spec.n_heads)
                fail(ErrorCode::invalid_argument, "signal head outside the geometry");
            if (!seen.insert(r).second)
                fail(ErrorCode::invalid_argument, "duplicate signal head");
        }
    };
    check_refs(spec.style_heads);
    check_refs(spec.truth_heads);
}

json plant_spec_to_json(const PlantSpec& s) {
    return json{{"n_layers", s.n_layers},
                {"n_heads", s.n_heads},
                {"head_dim", s.head_dim},
                {"style_heads", refs_to_json(s.style_heads)},
                {"truth_heads", refs_to_json(s.truth_heads)},
                {"angle_deg", s.angle_deg},
                {"alpha", s.alpha},
                {"noise_std", s.noise_std},
                {"base_std", s.base_std},
                {"num_pairs", s.num_pairs},
                {"split_ratio", s.split_ratio},
                {"seed", s.seed}};
}

PlantSpec plant_spec_from_json(const json& j) {
    PlantSpec s;
    try {
        s.n_layers = j.at("n_layers").get<int>();
        s.n_heads = j.at("n_heads").get<int>();
        s.head_dim = j.at("head_dim").get<int>();
        s.style_heads = refs_from_json(j.at("style_heads"));
        s.truth_heads = refs_from_json(j.at("truth_heads"));
        s.angle_deg = j.value("angle_deg", 60.0);
        s.alpha = j.value("alpha", 1.0);
        s.noise_std = j.value("noise_std", 0.1);
        s.base_std = j.value("base_std", 0.2);
        s.num_pairs = j.value("num_pairs", 100);
        s.split_ratio = j.value("split_ratio", 0.8);
        s.seed = j.value("seed", uint64_t(0));
    } catch (const json::exception& e) {
        fail(ErrorCode::config_error, "bad plant spec: " + std::string(e.what()));
    }
    validate_plant_spec(s);
    return s;
}

json ground_truth_to_json(const GroundTruth& gt) {
    auto dirs_to_json = [](const std::map<HeadRef, std::vector<double>>& dirs) {
        json arr = json::array();
        for (const auto& [ref, u] : dirs)
            arr.push_back(json{{"layer", ref.layer}, {"head", ref.head}, {"direction", u}});
        return arr;
    };
    return json{{"spec", plant_spec_to_json(gt.spec)},
                {"style_directions", dirs_to_json(gt.style_dirs)},
                {"truth_directions", dirs_to_json(gt.truth_dirs)}};
}

GroundTruth ground_truth_from_json(const json& j) {
    GroundTruth gt;
    try {
        gt.spec = plant_spec_from_json(j.at("spec"));
        auto dirs_from = [](const json& arr) {
            std::map<HeadRef, std::vector<double>> out;
            for (const auto& e : arr)
                out[{e.at("layer").get<int>(), e.at("head").get<int>()}] =
                    e.at("direction").get<std::vector<double>>();
            return out;
        };
        gt.style_dirs = dirs_from(j.at("style_directions"));
        gt.truth_dirs = dirs_from(j.at("truth_directions"));
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_record, "bad ground truth: " + std::string(e.what()));
    }
    return gt;
}

namespace {

GroundTruth plant_directions(const PlantSpec& spec) {
    GroundTruth gt;
    gt.spec = spec;
    const double angle = spec.angle_deg * std::numbers::pi / 180.0;
    for (const auto& ref : spec.style_heads) {
        Rng rng(Rng::mix(spec.seed, 0xD1, uint64_t(ref.layer), uint64_t(ref.head)));
        gt.style_dirs[ref] = random_unit(rng, spec.head_dim);
    }
    for (const auto& ref : spec.truth_heads) {
        Rng rng(Rng::mix(spec.seed, 0xD2, uint64_t(ref.layer), uint64_t(ref.head)));
        if (contains(spec.style_heads, ref)) {
            gt.truth_dirs[ref] = rotated_unit(rng, gt.style_dirs.at(ref), angle);
        } else {
            gt.truth_dirs[ref] = random_unit(rng, spec.head_dim);
        }
    }
    return gt;
}

// Fills one dataset. `base_at` supplies the shared per-(pair, layer, head)
// base vector; the Gaussian construction and the toy-model construction only
// differ in that supplier.
template <class BaseFn>
ActivationDataset build_planted(const PlantSpec& spec, const GroundTruth& gt, Attribute attr,
                                uint64_t stream, BaseFn&& base_at) {
    const auto& signal = attr == Attribute::style ? spec.style_heads : spec.truth_heads;
    const auto& dirs = attr == Attribute::style ? gt.style_dirs : gt.truth_dirs;

    ActivationDataset ds;
    ds.num_layers = spec.n_layers;
    ds.num_heads = spec.n_heads;
    ds.head_dim = spec.head_dim;
    ds.attribute = attr;

    const size_t stride = ds.stride();
    std::vector<float> pos_block(stride), neg_block(stride);

    for (int pair = 0; pair < spec.num_pairs; ++pair) {
        for (int l = 0; l < spec.n_layers; ++l) {
            for (int h = 0; h < spec.n_heads; ++h) {
                Rng rng(Rng::mix(spec.seed, (uint64_t(stream) << 8) | uint64_t(attr == Attribute::style ? 1 : 2),
                                 uint64_t(pair), (uint64_t(l) << 20) | uint64_t(h)));
                size_t off = (size_t(l) * spec.n_heads + h) * size_t(spec.head_dim);
                HeadRef ref{l, h};
                bool is_signal = contains(signal, ref);

                std::vector<double> base = base_at(pair, l, h, rng);
                if (is_signal) {
                    const auto& u = dirs.at(ref);
                    for (int i = 0; i < spec.head_dim; ++i) {
                        double neg = base[size_t(i)];
                        double pos = base[size_t(i)] + spec.alpha * u[size_t(i)] +
                                     spec.noise_std * rng.gaussian();
                        neg_block[off + size_t(i)] = float(neg);
                        pos_block[off + size_t(i)] = float(pos);
                    }
                } else {
                    // independent draws in both members
                    std::vector<double> other = base_at(pair, l, h, rng);
                    for (int i = 0; i < spec.head_dim; ++i) {
                        neg_block[off + size_t(i)] = float(base[size_t(i)]);
                        pos_block[off + size_t(i)] = float(other[size_t(i)]);
                    }
                }
            }
        }
        SampleMeta pos_meta{2 * int64_t(pair), int64_t(pair), Polarity::positive, 1, attr,
                            Split::train};
        SampleMeta neg_meta{2 * int64_t(pair) + 1, int64_t(pair), Polarity::negative, 0, attr,
                            Split::train};
        ds.add_sample(pos_meta, pos_block);
        ds.add_sample(neg_meta, neg_block);
    }

    return split_train_val(ds, spec.split_ratio, Rng::mix(spec.seed, 0x53504C49ull, stream));
}

}  // namespace

PlantedData generate_planted_dataset(const PlantSpec& spec) {
    validate_plant_spec(spec);
    GroundTruth gt = plant_directions(spec);

    auto gaussian_base = [&](int, int, int, Rng& rng) {
        std::vector<double> base(static_cast<size_t>(spec.head_dim));
        for (auto& v : base) v = spec.base_std * rng.gaussian();
        return base;
    };

    PlantedData out{build_planted(spec, gt, Attribute::style, 1, gaussian_base),
                    build_planted(spec, gt, Attribute::truth, 1, gaussian_base), gt};
    return out;
}

double recovery_score(const SubspaceBasis& basis, std::span<const double> planted) {
    if (basis.basis.rows != int(planted.size()))
        fail(ErrorCode::shape_mismatch, "direction dimension disagrees with basis");
    std::vector<double> v1 = basis.basis.col(0);
    double denom = norm2(v1) * norm2(planted);
    if (denom == 0.0) fail(ErrorCode::invalid_argument, "zero vector");
    return std::abs(dot(v1, planted)) / denom;
}

PlantedToySetup planted_toy_setup(const PlantSpec& spec, uint64_t model_seed, int prompt_len) {
    validate_plant_spec(spec);
    if (prompt_len < 1) fail(ErrorCode::invalid_argument, "prompt_len must be >= 1");

    ModelConfig cfg;
    cfg.d_model = spec.n_heads * spec.head_dim;
    cfg.n_layers = spec.n_layers;
    cfg.n_heads = spec.n_heads;
    cfg.head_dim = spec.head_dim;
    cfg.d_ff = 2 * cfg.d_model;
    cfg.max_seq_len = std::max(96, prompt_len + 2);

    PlantedToySetup out;
    out.model = init_model(cfg, model_seed);
    out.ground_truth = plant_directions(spec);

    // one model-derived base per (attribute, pair): final-token activations
    // of a random printable prompt, captured per head
    auto make_base_table = [&](uint64_t stream) {
        std::vector<std::vector<double>> table(static_cast<size_t>(spec.num_pairs));
        for (int pair = 0; pair < spec.num_pairs; ++pair) {
            Rng prng(Rng::mix(spec.seed, 0x505250, stream, uint64_t(pair)));
            std::string prompt(size_t(prompt_len), ' ');
            for (auto& ch : prompt) ch = char(' ' + int(prng.below(95)));
            ForwardResult fr = forward(out.model, encode_bytes(prompt, true, false), nullptr);
            int last = fr.trace.positions - 1;
            std::vector<double> flat(size_t(spec.n_layers) * spec.n_heads * spec.head_dim);
            size_t o = 0;
            for (int l = 0; l < spec.n_layers; ++l)
                for (int h = 0; h < spec.n_heads; ++h)
                    for (double v : fr.trace.raw_at(last, l, h)) flat[o++] = v;
            table[size_t(pair)] = std::move(flat);
        }
        return table;
    };

    auto style_table = make_base_table(1);
    auto truth_table = make_base_table(2);

    auto model_base = [&](const std::vector<std::vector<double>>& table) {
        return [&table, &spec](int pair, int l, int h, Rng& rng) {
            std::vector<double> base(static_cast<size_t>(spec.head_dim));
            size_t off = (size_t(l) * spec.n_heads + h) * size_t(spec.head_dim);
            const auto& flat = table[size_t(pair)];
            // jitter both members so non-signal heads carry independent noise
            for (int i = 0; i < spec.head_dim; ++i)
                base[size_t(i)] = flat[off + size_t(i)] + spec.noise_std * rng.gaussian();
            return base;
        };
    };

    out.style = build_planted(spec, out.ground_truth, Attribute::style, 3,
                              model_base(style_table));
    out.truth = build_planted(spec, out.ground_truth, Attribute::truth, 4,
                              model_base(truth_table));
    return out;
}

}  // namespace steerlab
