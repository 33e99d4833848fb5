#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "steerlab/common.hpp"

namespace steerlab {

// ----------------------------------------------------------------------------
// QA corpora: JSONL of contrast pairs for one attribute.

struct QAPair {
    int64_t pair_id = 0;
    std::string question;
    std::string positive_response;
    std::string negative_response;
    Attribute attribute = Attribute::style;
};

void validate_corpus(const std::vector<QAPair>& corpus);
std::vector<QAPair> load_qa_corpus(const fs::path& path);
void save_qa_corpus(const std::vector<QAPair>& corpus, const fs::path& path);

// ----------------------------------------------------------------------------
// Activation datasets: per-sample final-token head activations, stored as
//   manifest.json + samples.jsonl + activations.bin (f32le, [S, L, H, d]).

struct SampleMeta {
    int64_t sample_id = 0;
    int64_t pair_id = 0;
    Polarity polarity = Polarity::positive;
    int label = 1;  // 1 iff polarity == positive
    Attribute attribute = Attribute::style;
    Split split = Split::train;
};

struct ActivationDataset {
    int num_layers = 0;
    int num_heads = 0;
    int head_dim = 0;
    Attribute attribute = Attribute::style;
    std::vector<SampleMeta> samples;
    std::vector<float> activations;  // row-major [S, L, H, d], sample order == samples order

    size_t num_samples() const { return samples.size(); }
    size_t stride() const { return size_t(num_layers) * num_heads * head_dim; }

    std::span<const float> activation(size_t sample, int layer, int head) const {
        size_t off = sample * stride() + (size_t(layer) * num_heads + head) * head_dim;
        return {activations.data() + off, size_t(head_dim)};
    }
    std::span<float> activation(size_t sample, int layer, int head) {
        size_t off = sample * stride() + (size_t(layer) * num_heads + head) * head_dim;
        return {activations.data() + off, size_t(head_dim)};
    }

    // appends metadata plus one [L, H, d] activation block
    void add_sample(const SampleMeta& meta, std::span<const float> block);
};

// Throws on any invariant violation: label/polarity mismatch, non-finite
// values, duplicate sample ids, or pairs without exactly one positive and one
// negative member.
void validate_dataset(const ActivationDataset& ds);

void save_dataset(const ActivationDataset& ds, const fs::path& dir);
ActivationDataset load_dataset(const fs::path& dir);

// Pair-level train/val assignment via seeded shuffle. Both members of a pair
// share a split; the train pair count is round(ratio * pairs), clamped so
// both splits stay nonempty. Deterministic for a fixed seed.
ActivationDataset split_train_val(const ActivationDataset& ds, double ratio, uint64_t seed);

}  // namespace steerlab
