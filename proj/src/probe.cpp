#include "steerlab/probe.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

namespace steerlab {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// numerically stable: log(1 + e^z) without overflow
double softplus(double z) { return z > 30.0 ? z : std::log1p(std::exp(z)); }

}  // namespace

ProbeModel train_probe(const Mat& x, const std::vector<int>& y, const ProbeConfig& cfg) {
    const int n = x.rows;
    const int d = x.cols;
    if (n == 0 || size_t(n) != y.size())
        fail(ErrorCode::invalid_argument, "train_probe: empty data or label length mismatch");

    int positives = 0;
    for (int label : y) positives += (label == 1);
    if (positives == 0 || positives == n)
        fail(ErrorCode::single_class, "training set contains a single class");

    ProbeModel probe;
    probe.has_bias = cfg.use_bias;
    probe.weights.resize(static_cast<size_t>(d));
    Rng rng(Rng::mix(cfg.seed, 0x50524F4245ull));
    for (auto& w : probe.weights) w = 0.01 * rng.gaussian();
    probe.bias = 0.0;

    std::vector<double> grad(static_cast<size_t>(d));
    const double inv_n = 1.0 / double(n);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        double grad_bias = 0.0;
        double loss = 0.0;
        for (int i = 0; i < n; ++i) {
            auto xi = x.row(i);
            double z = dot(probe.weights, xi) + (probe.has_bias ? probe.bias : 0.0);
            double p = sigmoid(z);
            double err = p - double(y[size_t(i)]);
            axpy(err, xi, grad);
            grad_bias += err;
            loss += (y[size_t(i)] == 1) ? softplus(-z) : softplus(z);
        }
        loss *= inv_n;
        loss += 0.5 * cfg.l2_weight * norm2_sq(probe.weights);
        if (!std::isfinite(loss)) fail(ErrorCode::diverged, "probe training diverged");

        for (int j = 0; j < d; ++j) {
            double g = grad[size_t(j)] * inv_n + cfg.l2_weight * probe.weights[size_t(j)];
            probe.weights[size_t(j)] -= cfg.learning_rate * g;
        }
        if (probe.has_bias) probe.bias -= cfg.learning_rate * grad_bias * inv_n;
    }

    for (double w : probe.weights)
        if (!std::isfinite(w)) fail(ErrorCode::diverged, "probe training diverged");
    return probe;
}

double evaluate_probe(const ProbeModel& probe, const Mat& x, const std::vector<int>& y) {
    if (x.rows == 0 || size_t(x.rows) != y.size())
        fail(ErrorCode::empty_input, "evaluate_probe: empty data or label length mismatch");
    int correct = 0;
    for (int i = 0; i < x.rows; ++i) {
        double z = dot(probe.weights, x.row(i)) + (probe.has_bias ? probe.bias : 0.0);
        int pred = z > 0.0 ? 1 : 0;
        correct += (pred == y[size_t(i)]);
    }
    return double(correct) / double(x.rows);
}

double probe_score(const ProbeModel& probe, std::span<const double> a) {
    return sigmoid(dot(probe.weights, a) + (probe.has_bias ? probe.bias : 0.0));
}

std::set<HeadKey> HeadSelection::key_set() const {
    std::set<HeadKey> out;
    for (const auto& [key, acc] : heads) out.insert(key);
    return out;
}

HeadSelection select_heads(const std::map<HeadKey, double>& accuracies, int capacity,
                           Attribute attribute) {
    if (capacity < 1) fail(ErrorCode::invalid_argument, "need capacity >= 1");
    if (size_t(capacity) > accuracies.size())
        fail(ErrorCode::invalid_argument, "capacity exceeds the number of scored heads");

    std::vector<std::pair<HeadKey, double>> ranked(accuracies.begin(), accuracies.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;  // ties broken by (layer, head) ascending
    });
    ranked.resize(size_t(capacity));

    HeadSelection sel;
    sel.attribute = attribute;
    sel.capacity = capacity;
    sel.heads = std::move(ranked);
    return sel;
}

std::set<HeadKey> HeadPartition::all() const {
    std::set<HeadKey> out = style_only;
    out.insert(truth_only.begin(), truth_only.end());
    out.insert(coupled.begin(), coupled.end());
    return out;
}

HeadPartition partition_heads(const HeadSelection& style_sel, const HeadSelection& truth_sel) {
    std::set<HeadKey> style_keys = style_sel.key_set();
    std::set<HeadKey> truth_keys = truth_sel.key_set();

    HeadPartition part;
    for (const auto& k : style_keys)
        (truth_keys.count(k) ? part.coupled : part.style_only).insert(k);
    for (const auto& k : truth_keys)
        if (!style_keys.count(k)) part.truth_only.insert(k);
    return part;
}

namespace {
json keys_to_json(const std::set<HeadKey>& keys) {
    json arr = json::array();
    for (const auto& [l, h] : keys) arr.push_back(json{{"layer", l}, {"head", h}});
    return arr;
}
std::set<HeadKey> keys_from_json(const json& arr) {
    std::set<HeadKey> out;
    for (const auto& j : arr) out.insert({j.at("layer").get<int>(), j.at("head").get<int>()});
    return out;
}
}  // namespace

json partition_to_json(const HeadPartition& p) {
    return json{{"style_only", keys_to_json(p.style_only)},
                {"truth_only", keys_to_json(p.truth_only)},
                {"coupled", keys_to_json(p.coupled)}};
}

HeadPartition partition_from_json(const json& j) {
    HeadPartition p;
    try {
        p.style_only = keys_from_json(j.at("style_only"));
        p.truth_only = keys_from_json(j.at("truth_only"));
        p.coupled = keys_from_json(j.at("coupled"));
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_record, "bad partition: " + std::string(e.what()));
    }
    return p;
}

// ----------------------------------------------------------------------------

LabeledVectors gather_head_vectors(const ActivationDataset& ds, int layer, int head,
                                   std::optional<Split> split) {
    if (layer < 0 || layer >= ds.num_layers || head < 0 || head >= ds.num_heads)
        fail(ErrorCode::invalid_argument, "head index out of range");

    std::vector<size_t> idx;
    for (size_t s = 0; s < ds.num_samples(); ++s)
        if (!split || ds.samples[s].split == *split) idx.push_back(s);

    LabeledVectors out;
    out.x = Mat(int(idx.size()), ds.head_dim);
    out.y.resize(idx.size());
    for (size_t r = 0; r < idx.size(); ++r) {
        auto src = ds.activation(idx[r], layer, head);
        auto dst = out.x.row(int(r));
        for (int i = 0; i < ds.head_dim; ++i) dst[size_t(i)] = double(src[size_t(i)]);
        out.y[r] = ds.samples[idx[r]].label;
    }
    return out;
}

const ProbeModel* ProbeBank::find(int layer, int head) const {
    for (const auto& p : probes)
        if (p.layer == layer && p.head == head) return &p;
    return nullptr;
}

std::map<HeadKey, double> ProbeBank::accuracies() const {
    std::map<HeadKey, double> out;
    for (const auto& p : probes) out[{p.layer, p.head}] = p.val_accuracy;
    return out;
}

ProbeBank train_probe_bank(const ActivationDataset& ds, const ProbeConfig& cfg) {
    ProbeBank bank;
    bank.attribute = ds.attribute;
    bank.head_dim = ds.head_dim;
    for (int l = 0; l < ds.num_layers; ++l) {
        for (int h = 0; h < ds.num_heads; ++h) {
            auto train = gather_head_vectors(ds, l, h, Split::train);
            auto val = gather_head_vectors(ds, l, h, Split::val);
            ProbeConfig head_cfg = cfg;
            head_cfg.seed = Rng::mix(cfg.seed, uint64_t(l), uint64_t(h));
            ProbeModel probe = train_probe(train.x, train.y, head_cfg);
            probe.layer = l;
            probe.head = h;
            probe.attribute = ds.attribute;
            probe.val_accuracy = evaluate_probe(probe, val.x, val.y);
            bank.probes.push_back(std::move(probe));
        }
    }
    return bank;
}

void save_probe_bank(const ProbeBank& bank, const fs::path& dir) {
    fs::create_directories(dir);
    json entries = json::array();
    std::vector<float> payload;
    for (const auto& p : bank.probes) {
        entries.push_back(json{{"layer", p.layer},
                               {"head", p.head},
                               {"attribute", to_string(p.attribute)},
                               {"accuracy", p.val_accuracy},
                               {"bias", p.bias},
                               {"has_bias", p.has_bias}});
        for (double w : p.weights) payload.push_back(float(w));
    }
    json manifest{{"version", 1},
                  {"attribute", to_string(bank.attribute)},
                  {"head_dim", bank.head_dim},
                  {"probes", entries}};
    write_json_file(dir / "probes.json", manifest);
    write_f32_payload(dir / "probes.bin", payload);
}

ProbeBank load_probe_bank(const fs::path& dir) {
    json manifest = read_json_file(dir / "probes.json");
    ProbeBank bank;
    try {
        bank.attribute = attribute_from_string(manifest.at("attribute").get<std::string>());
        bank.head_dim = manifest.at("head_dim").get<int>();
        const auto& entries = manifest.at("probes");
        auto payload =
            read_f32_payload(dir / "probes.bin", entries.size() * size_t(bank.head_dim));
        size_t pos = 0;
        for (const auto& e : entries) {
            ProbeModel p;
            p.layer = e.at("layer").get<int>();
            p.head = e.at("head").get<int>();
            p.attribute = attribute_from_string(e.at("attribute").get<std::string>());
            p.val_accuracy = e.at("accuracy").get<double>();
            p.bias = e.at("bias").get<double>();
            p.has_bias = e.at("has_bias").get<bool>();
            p.weights.resize(size_t(bank.head_dim));
            for (auto& w : p.weights) w = double(payload[pos++]);
            bank.probes.push_back(std::move(p));
        }
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_record, "bad probe bank: " + std::string(e.what()));
    }
    return bank;
}

}  // namespace steerlab
