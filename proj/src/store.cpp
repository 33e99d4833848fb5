#include "steerlab/store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

namespace steerlab {

namespace {
constexpr int kDatasetVersion = 1;
}

// ----------------------------------------------------------------------------
// QA corpora

void validate_corpus(const std::vector<QAPair>& corpus) {
    std::set<int64_t> ids;
    for (const auto& p : corpus) {
        if (!ids.insert(p.pair_id).second)
            fail(ErrorCode::invariant_violation,
                 "duplicate pair_id in corpus: " + std::to_string(p.pair_id));
        if (p.positive_response.empty() || p.negative_response.empty())
            fail(ErrorCode::invariant_violation,
                 "empty response in pair " + std::to_string(p.pair_id));
    }
}

std::vector<QAPair> load_qa_corpus(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::missing_file, "cannot open corpus: " + path.string());
    std::vector<QAPair> corpus;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
            QAPair p;
            p.pair_id = j.at("pair_id").get<int64_t>();
            p.question = j.at("question").get<std::string>();
            p.positive_response = j.at("positive_response").get<std::string>();
            p.negative_response = j.at("negative_response").get<std::string>();
            p.attribute = attribute_from_string(j.at("attribute").get<std::string>());
            corpus.push_back(std::move(p));
        } catch (const json::exception& e) {
            fail(ErrorCode::corrupt_record,
                 path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    validate_corpus(corpus);
    return corpus;
}

void save_qa_corpus(const std::vector<QAPair>& corpus, const fs::path& path) {
    validate_corpus(corpus);
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorCode::io_failure, "cannot open for writing: " + path.string());
    for (const auto& p : corpus) {
        json j{{"pair_id", p.pair_id},
               {"question", p.question},
               {"positive_response", p.positive_response},
               {"negative_response", p.negative_response},
               {"attribute", to_string(p.attribute)}};
        out << j.dump() << '\n';
    }
    if (!out) fail(ErrorCode::io_failure, "write failed: " + path.string());
}

// ----------------------------------------------------------------------------
// Activation datasets

void ActivationDataset::add_sample(const SampleMeta& meta, std::span<const float> block) {
    if (block.size() != stride())
        fail(ErrorCode::shape_mismatch, "activation block has wrong length");
    samples.push_back(meta);
    activations.insert(activations.end(), block.begin(), block.end());
}

void validate_dataset(const ActivationDataset& ds) {
    if (ds.num_layers < 1 || ds.num_heads < 1 || ds.head_dim < 1)
        fail(ErrorCode::invariant_violation, "dataset geometry must be positive");
    if (ds.activations.size() != ds.num_samples() * ds.stride())
        fail(ErrorCode::invariant_violation, "activation payload size disagrees with samples");

    std::set<int64_t> sample_ids;
    std::map<int64_t, std::pair<int, int>> pair_counts;  // pair_id -> (pos, neg)
    for (const auto& m : ds.samples) {
        if (!sample_ids.insert(m.sample_id).second)
            fail(ErrorCode::invariant_violation,
                 "duplicate sample_id: " + std::to_string(m.sample_id));
        bool positive = m.polarity == Polarity::positive;
        if ((m.label == 1) != positive)
            fail(ErrorCode::invariant_violation,
                 "label/polarity mismatch at sample " + std::to_string(m.sample_id));
        if (m.attribute != ds.attribute)
            fail(ErrorCode::invariant_violation,
                 "sample attribute disagrees with dataset attribute");
        auto& c = pair_counts[m.pair_id];
        (positive ? c.first : c.second) += 1;
    }
    for (const auto& [pid, c] : pair_counts) {
        if (c.first != 1 || c.second != 1)
            fail(ErrorCode::invariant_violation,
                 "pair " + std::to_string(pid) + " must have exactly one positive and one negative sample");
    }
    for (float v : ds.activations) {
        if (!std::isfinite(v))
            fail(ErrorCode::non_finite_activation, "non-finite activation value");
    }
}

void save_dataset(const ActivationDataset& ds, const fs::path& dir) {
    validate_dataset(ds);
    fs::create_directories(dir);

    json manifest{{"version", kDatasetVersion},
                  {"num_samples", ds.num_samples()},
                  {"num_layers", ds.num_layers},
                  {"num_heads", ds.num_heads},
                  {"head_dim", ds.head_dim},
                  {"attribute", to_string(ds.attribute)},
                  {"dtype", "f32le"}};
    write_json_file(dir / "manifest.json", manifest);

    std::ofstream meta(dir / "samples.jsonl", std::ios::binary);
    if (!meta) fail(ErrorCode::io_failure, "cannot open for writing: " + (dir / "samples.jsonl").string());
    for (const auto& m : ds.samples) {
        json j{{"sample_id", m.sample_id}, {"pair_id", m.pair_id},
               {"polarity", to_string(m.polarity)}, {"label", m.label},
               {"attribute", to_string(m.attribute)}, {"split", to_string(m.split)}};
        meta << j.dump() << '\n';
    }
    if (!meta) fail(ErrorCode::io_failure, "write failed: samples.jsonl");

    write_f32_payload(dir / "activations.bin", ds.activations);
}

ActivationDataset load_dataset(const fs::path& dir) {
    json manifest = read_json_file(dir / "manifest.json");

    ActivationDataset ds;
    size_t num_samples = 0;
    try {
        num_samples = manifest.at("num_samples").get<size_t>();
        ds.num_layers = manifest.at("num_layers").get<int>();
        ds.num_heads = manifest.at("num_heads").get<int>();
        ds.head_dim = manifest.at("head_dim").get<int>();
        ds.attribute = attribute_from_string(manifest.at("attribute").get<std::string>());
        if (manifest.at("dtype").get<std::string>() != "f32le")
            fail(ErrorCode::manifest_mismatch, "unsupported dtype in manifest");
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_record, "bad manifest: " + std::string(e.what()));
    }

    std::ifstream meta(dir / "samples.jsonl", std::ios::binary);
    if (!meta) fail(ErrorCode::missing_file, "cannot open: " + (dir / "samples.jsonl").string());
    std::string line;
    size_t lineno = 0;
    while (std::getline(meta, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            SampleMeta m;
            m.sample_id = j.at("sample_id").get<int64_t>();
            m.pair_id = j.at("pair_id").get<int64_t>();
            m.polarity = polarity_from_string(j.at("polarity").get<std::string>());
            m.label = j.at("label").get<int>();
            m.attribute = attribute_from_string(j.at("attribute").get<std::string>());
            m.split = split_from_string(j.at("split").get<std::string>());
            ds.samples.push_back(m);
        } catch (const json::exception& e) {
            fail(ErrorCode::corrupt_record,
                 "samples.jsonl:" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (ds.samples.size() != num_samples)
        fail(ErrorCode::manifest_mismatch,
             "manifest declares " + std::to_string(num_samples) + " samples, samples.jsonl has " +
                 std::to_string(ds.samples.size()));

    ds.activations = read_f32_payload(dir / "activations.bin", num_samples * ds.stride());
    validate_dataset(ds);
    return ds;
}

ActivationDataset split_train_val(const ActivationDataset& ds, double ratio, uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0))
        fail(ErrorCode::invalid_argument, "split ratio must lie in (0, 1)");
    if (ds.samples.empty()) fail(ErrorCode::empty_input, "cannot split an empty dataset");

    std::set<int64_t> pair_set;
    for (const auto& m : ds.samples) pair_set.insert(m.pair_id);
    std::vector<int64_t> pairs(pair_set.begin(), pair_set.end());
    if (pairs.size() < 2)
        fail(ErrorCode::invalid_argument, "need at least 2 pairs to split");

    Rng rng(Rng::mix(seed, 0x53504C49ull));  // stream tag for split assignment
    rng.shuffle(pairs);

    size_t n_train = size_t(std::llround(ratio * double(pairs.size())));
    n_train = std::clamp<size_t>(n_train, 1, pairs.size() - 1);

    std::set<int64_t> train_pairs(pairs.begin(), pairs.begin() + std::ptrdiff_t(n_train));
    ActivationDataset out = ds;
    for (auto& m : out.samples)
        m.split = train_pairs.count(m.pair_id) ? Split::train : Split::val;
    return out;
}

}  // namespace steerlab
