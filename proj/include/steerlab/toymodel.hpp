#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "steerlab/common.hpp"

namespace steerlab {

// Byte-level decoder-only transformer. Pre-norm residual blocks; the output
// head is tied to the embedding matrix; positions are encoded with
// parameter-free sinusoids so the weight file holds exactly the tensors
// documented in the README. The per-head attention output (the value mixture
// before the output projection) is the interception point for edits.

constexpr int kByteVocab = 256;
constexpr int kBosId = 256;
constexpr int kEosId = 257;
constexpr int kPadId = 258;
constexpr int kVocabSize = 259;

struct ModelConfig {
    int vocab_size = kVocabSize;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int head_dim = 16;
    int d_ff = 128;
    int max_seq_len = 96;
};

void validate_config(const ModelConfig& cfg);
json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const json& j);

struct LayerWeights {
    std::vector<double> w_qkv;  // [3*d_model, d_model]
    std::vector<double> w_out;  // [d_model, d_model]
    std::vector<double> ln1_g, ln1_b, ln2_g, ln2_b;  // [d_model] each
    std::vector<double> w_ff1;  // [d_ff, d_model]
    std::vector<double> w_ff2;  // [d_model, d_ff]
};

struct ToyModel {
    ModelConfig cfg;
    std::vector<double> embedding;  // [vocab, d_model]; doubles as the output head
    std::vector<LayerWeights> layers;
    std::vector<double> lnf_g, lnf_b;  // final norm
};

// Per-head edit callback: reads the head activation at one position and fills
// `delta` (pre-zeroed, length head_dim). Must not depend on anything but the
// given arguments and the steering plan it closes over.
using HeadEditor = std::function<void(int layer, int head, int position,
                                      std::span<const double> activation,
                                      std::span<double> delta)>;

struct GenerationTrace {
    int positions = 0;
    int n_layers = 0;
    int n_heads = 0;
    int head_dim = 0;
    int prompt_len = 0;          // 0 when the trace comes from a bare forward
    std::vector<int> tokens;     // token ids fed to the pass that produced the trace
    std::vector<double> raw;     // [T, L, H, d] head activations before editing
    std::vector<double> delta;   // [T, L, H, d] applied deltas (zero off-plan)

    size_t offset(int pos, int layer, int head) const {
        return ((size_t(pos) * n_layers + layer) * n_heads + head) * size_t(head_dim);
    }
    std::span<const double> raw_at(int pos, int layer, int head) const {
        return {raw.data() + offset(pos, layer, head), size_t(head_dim)};
    }
    std::span<const double> delta_at(int pos, int layer, int head) const {
        return {delta.data() + offset(pos, layer, head), size_t(head_dim)};
    }
};

struct ForwardResult {
    Mat logits;  // [T, vocab]
    GenerationTrace trace;
};

struct GenerateResult {
    std::string text;             // generated continuation (without the prompt)
    std::vector<int> generated;   // generated token ids, EOS excluded
    int prompt_len = 0;           // tokens in the encoded prompt (incl. BOS)
    GenerationTrace trace;        // final full-sequence pass, prompt + generation
};

std::vector<int> encode_bytes(std::string_view text, bool add_bos, bool add_eos);
std::string decode_bytes(std::span<const int> tokens);

ToyModel init_model(const ModelConfig& cfg, uint64_t seed);
void save_model(const ToyModel& model, const fs::path& dir);
ToyModel load_model(const fs::path& dir);

ForwardResult forward(const ToyModel& model, std::span<const int> tokens,
                      const HeadEditor* editor = nullptr);
GenerateResult generate(const ToyModel& model, std::string_view prompt,
                        const HeadEditor* editor, int max_new);
double perplexity(const ToyModel& model, std::string_view text);

// exp of the mean NLL; factored out so the mapping itself is testable
double ppl_from_mean_nll(double mean_nll);

}  // namespace steerlab
