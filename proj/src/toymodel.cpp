#include "steerlab/toymodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

namespace steerlab {

namespace {

constexpr double kLnEps = 1e-5;

void layer_norm(std::span<const double> x, std::span<const double> g,
                std::span<const double> b, std::span<double> out) {
    const size_t n = x.size();
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= double(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= double(n);
    double inv = 1.0 / std::sqrt(var + kLnEps);
    for (size_t i = 0; i < n; ++i) out[i] = g[i] * (x[i] - mean) * inv + b[i];
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// y = W x for row-major W [rows, cols]
void matvec(std::span<const double> w, int rows, int cols,
            std::span<const double> x, std::span<double> y) {
    for (int r = 0; r < rows; ++r) {
        const double* wr = w.data() + size_t(r) * cols;
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += wr[c] * x[size_t(c)];
        y[size_t(r)] = s;
    }
}

double sin_pos_encoding(int pos, int dim, int d_model) {
    double exponent = double(2 * (dim / 2)) / double(d_model);
    double angle = double(pos) / std::pow(10000.0, exponent);
    return (dim % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

// gaussian draw rounded through float so in-memory weights are exactly the
// values the f32 weight file stores
double draw_f32(Rng& rng, double std_dev) {
    return double(float(rng.gaussian() * std_dev));
}

size_t weight_count(const ModelConfig& c) {
    size_t per_layer = size_t(3 * c.d_model) * c.d_model + size_t(c.d_model) * c.d_model +
                       4 * size_t(c.d_model) + size_t(c.d_ff) * c.d_model +
                       size_t(c.d_model) * c.d_ff;
    return size_t(c.vocab_size) * c.d_model + size_t(c.n_layers) * per_layer +
           2 * size_t(c.d_model);
}

}  // namespace

void validate_config(const ModelConfig& cfg) {
    if (cfg.vocab_size != kVocabSize)
        fail(ErrorCode::invalid_argument, "vocab_size must be 259 (bytes + BOS/EOS/PAD)");
    if (cfg.d_model < 1 || cfg.n_layers < 1 || cfg.n_heads < 1 || cfg.head_dim < 1 ||
        cfg.d_ff < 1 || cfg.max_seq_len < 1)
        fail(ErrorCode::invalid_argument, "all model dimensions must be >= 1");
    if (cfg.d_model != cfg.n_heads * cfg.head_dim)
        fail(ErrorCode::invalid_argument, "d_model must equal n_heads * head_dim");
}

json config_to_json(const ModelConfig& c) {
    return json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
                {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                {"head_dim", c.head_dim},     {"d_ff", c.d_ff},
                {"max_seq_len", c.max_seq_len}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    try {
        c.vocab_size = j.at("vocab_size").get<int>();
        c.d_model = j.at("d_model").get<int>();
        c.n_layers = j.at("n_layers").get<int>();
        c.n_heads = j.at("n_heads").get<int>();
        c.head_dim = j.at("head_dim").get<int>();
        c.d_ff = j.at("d_ff").get<int>();
        c.max_seq_len = j.at("max_seq_len").get<int>();
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_record, "bad model config: " + std::string(e.what()));
    }
    validate_config(c);
    return c;
}

std::vector<int> encode_bytes(std::string_view text, bool add_bos, bool add_eos) {
    std::vector<int> ids;
    ids.reserve(text.size() + 2);
    if (add_bos) ids.push_back(kBosId);
    for (unsigned char ch : text) ids.push_back(int(ch));
    if (add_eos) ids.push_back(kEosId);
    return ids;
}

std::string decode_bytes(std::span<const int> tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int id : tokens) {
        if (id >= 0 && id < kByteVocab) out.push_back(char(static_cast<unsigned char>(id)));
    }
    return out;
}

ToyModel init_model(const ModelConfig& cfg, uint64_t seed) {
    validate_config(cfg);
    ToyModel m;
    m.cfg = cfg;
    Rng rng(Rng::mix(seed, 0x4D4F44454Cull));  // model stream

    const double proj_std = 1.0 / std::sqrt(double(cfg.d_model));
    const double ff2_std = 1.0 / std::sqrt(double(cfg.d_ff));

    auto fill = [&](std::vector<double>& v, size_t n, double sd) {
        v.resize(n);
        for (auto& x : v) x = draw_f32(rng, sd);
    };

    fill(m.embedding, size_t(cfg.vocab_size) * cfg.d_model, 0.3);
    m.layers.resize(size_t(cfg.n_layers));
    for (auto& lw : m.layers) {
        fill(lw.w_qkv, size_t(3 * cfg.d_model) * cfg.d_model, proj_std);
        fill(lw.w_out, size_t(cfg.d_model) * cfg.d_model, proj_std);
        lw.ln1_g.assign(size_t(cfg.d_model), 1.0);
        lw.ln1_b.assign(size_t(cfg.d_model), 0.0);
        lw.ln2_g.assign(size_t(cfg.d_model), 1.0);
        lw.ln2_b.assign(size_t(cfg.d_model), 0.0);
        fill(lw.w_ff1, size_t(cfg.d_ff) * cfg.d_model, proj_std);
        fill(lw.w_ff2, size_t(cfg.d_model) * cfg.d_ff, ff2_std);
    }
    m.lnf_g.assign(size_t(cfg.d_model), 1.0);
    m.lnf_b.assign(size_t(cfg.d_model), 0.0);
    return m;
}

void save_model(const ToyModel& m, const fs::path& dir) {
    validate_config(m.cfg);
    fs::create_directories(dir);
    write_json_file(dir / "model.json", config_to_json(m.cfg));

    std::vector<float> payload;
    payload.reserve(weight_count(m.cfg));
    auto emit = [&](const std::vector<double>& v) {
        for (double x : v) payload.push_back(float(x));
    };
    emit(m.embedding);
    for (const auto& lw : m.layers) {
        emit(lw.w_qkv);
        emit(lw.w_out);
        emit(lw.ln1_g);
        emit(lw.ln1_b);
        emit(lw.ln2_g);
        emit(lw.ln2_b);
        emit(lw.w_ff1);
        emit(lw.w_ff2);
    }
    emit(m.lnf_g);
    emit(m.lnf_b);
    write_f32_payload(dir / "weights.bin", payload);
}

ToyModel load_model(const fs::path& dir) {
    ModelConfig cfg = config_from_json(read_json_file(dir / "model.json"));
    std::vector<float> payload;
    try {
        payload = read_f32_payload(dir / "weights.bin", weight_count(cfg));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::manifest_mismatch)
            fail(ErrorCode::shape_mismatch, e.what());
        throw;
    }

    ToyModel m;
    m.cfg = cfg;
    size_t pos = 0;
    auto take = [&](std::vector<double>& v, size_t n) {
        v.resize(n);
        for (size_t i = 0; i < n; ++i) v[i] = double(payload[pos++]);
    };
    take(m.embedding, size_t(cfg.vocab_size) * cfg.d_model);
    m.layers.resize(size_t(cfg.n_layers));
    for (auto& lw : m.layers) {
        take(lw.w_qkv, size_t(3 * cfg.d_model) * cfg.d_model);
        take(lw.w_out, size_t(cfg.d_model) * cfg.d_model);
        take(lw.ln1_g, size_t(cfg.d_model));
        take(lw.ln1_b, size_t(cfg.d_model));
        take(lw.ln2_g, size_t(cfg.d_model));
        take(lw.ln2_b, size_t(cfg.d_model));
        take(lw.w_ff1, size_t(cfg.d_ff) * cfg.d_model);
        take(lw.w_ff2, size_t(cfg.d_model) * cfg.d_ff);
    }
    take(m.lnf_g, size_t(cfg.d_model));
    take(m.lnf_b, size_t(cfg.d_model));
    return m;
}

ForwardResult forward(const ToyModel& m, std::span<const int> tokens, const HeadEditor* editor) {
    const auto& c = m.cfg;
    const int T = int(tokens.size());
    if (T == 0) fail(ErrorCode::empty_input, "forward needs at least one token");
    if (T > c.max_seq_len)
        fail(ErrorCode::invalid_argument,
             "sequence of " + std::to_string(T) + " tokens exceeds max_seq_len " +
                 std::to_string(c.max_seq_len));
    for (int id : tokens)
        if (id < 0 || id >= c.vocab_size)
            fail(ErrorCode::invalid_argument, "token id out of range: " + std::to_string(id));

    ForwardResult res;
    res.trace.positions = T;
    res.trace.n_layers = c.n_layers;
    res.trace.n_heads = c.n_heads;
    res.trace.head_dim = c.head_dim;
    res.trace.tokens.assign(tokens.begin(), tokens.end());
    res.trace.raw.assign(size_t(T) * c.n_layers * c.n_heads * c.head_dim, 0.0);
    res.trace.delta.assign(res.trace.raw.size(), 0.0);

    Mat x(T, c.d_model);
    for (int t = 0; t < T; ++t) {
        const double* e = m.embedding.data() + size_t(tokens[size_t(t)]) * c.d_model;
        auto row = x.row(t);
        for (int i = 0; i < c.d_model; ++i) row[size_t(i)] = e[i] + sin_pos_encoding(t, i, c.d_model);
    }

    std::vector<double> normed(static_cast<size_t>(c.d_model));
    std::vector<double> qkv(size_t(3 * c.d_model));
    Mat q(T, c.d_model), k(T, c.d_model), v(T, c.d_model);
    std::vector<double> scores;
    std::vector<double> head_mix(static_cast<size_t>(c.d_model));
    std::vector<double> attn_out(static_cast<size_t>(c.d_model));
    std::vector<double> ff_hidden(static_cast<size_t>(c.d_ff));
    std::vector<double> ff_out(static_cast<size_t>(c.d_model));
    std::vector<double> delta(static_cast<size_t>(c.head_dim));
    const double inv_sqrt_d = 1.0 / std::sqrt(double(c.head_dim));

    for (int l = 0; l < c.n_layers; ++l) {
        const auto& lw = m.layers[size_t(l)];

        for (int t = 0; t < T; ++t) {
            layer_norm(x.row(t), lw.ln1_g, lw.ln1_b, normed);
            matvec(lw.w_qkv, 3 * c.d_model, c.d_model, normed, qkv);
            std::memcpy(q.row(t).data(), qkv.data(), sizeof(double) * size_t(c.d_model));
            std::memcpy(k.row(t).data(), qkv.data() + c.d_model, sizeof(double) * size_t(c.d_model));
            std::memcpy(v.row(t).data(), qkv.data() + 2 * c.d_model, sizeof(double) * size_t(c.d_model));
        }

        for (int t = 0; t < T; ++t) {
            scores.assign(size_t(t) + 1, 0.0);
            for (int h = 0; h < c.n_heads; ++h) {
                const int hs = h * c.head_dim;
                const double* qt = q.row(t).data() + hs;

                double max_score = -std::numeric_limits<double>::infinity();
                for (int j = 0; j <= t; ++j) {
                    const double* kj = k.row(j).data() + hs;
                    double s = 0.0;
                    for (int i = 0; i < c.head_dim; ++i) s += qt[i] * kj[i];
                    s *= inv_sqrt_d;
                    scores[size_t(j)] = s;
                    max_score = std::max(max_score, s);
                }
                double denom = 0.0;
                for (int j = 0; j <= t; ++j) {
                    scores[size_t(j)] = std::exp(scores[size_t(j)] - max_score);
                    denom += scores[size_t(j)];
                }
                double inv_denom = 1.0 / denom;

                double* mix = head_mix.data() + hs;
                std::fill(mix, mix + c.head_dim, 0.0);
                for (int j = 0; j <= t; ++j) {
                    double w = scores[size_t(j)] * inv_denom;
                    const double* vj = v.row(j).data() + hs;
                    for (int i = 0; i < c.head_dim; ++i) mix[i] += w * vj[i];
                }

                // edit hook: record the raw head activation, ask the editor
                // for a delta, and splice it in before the output projection
                size_t toff = res.trace.offset(t, l, h);
                std::memcpy(res.trace.raw.data() + toff, mix, sizeof(double) * size_t(c.head_dim));
                if (editor && *editor) {
                    std::fill(delta.begin(), delta.end(), 0.0);
                    (*editor)(l, h, t, {mix, size_t(c.head_dim)}, delta);
                    bool nonzero = false;
                    for (double dv : delta)
                        if (dv != 0.0) { nonzero = true; break; }
                    if (nonzero) {
                        std::memcpy(res.trace.delta.data() + toff, delta.data(),
                                    sizeof(double) * size_t(c.head_dim));
                        for (int i = 0; i < c.head_dim; ++i) mix[i] += delta[size_t(i)];
                    }
                }
            }

            matvec(lw.w_out, c.d_model, c.d_model, head_mix, attn_out);
            auto xt = x.row(t);
            for (int i = 0; i < c.d_model; ++i) xt[size_t(i)] += attn_out[size_t(i)];
        }

        for (int t = 0; t < T; ++t) {
            layer_norm(x.row(t), lw.ln2_g, lw.ln2_b, normed);
            matvec(lw.w_ff1, c.d_ff, c.d_model, normed, ff_hidden);
            for (auto& hv : ff_hidden) hv = gelu(hv);
            matvec(lw.w_ff2, c.d_model, c.d_ff, ff_hidden, ff_out);
            auto xt = x.row(t);
            for (int i = 0; i < c.d_model; ++i) xt[size_t(i)] += ff_out[size_t(i)];
        }
    }

    res.logits = Mat(T, c.vocab_size);
    for (int t = 0; t < T; ++t) {
        layer_norm(x.row(t), m.lnf_g, m.lnf_b, normed);
        matvec(m.embedding, c.vocab_size, c.d_model, normed, res.logits.row(t));
    }
    return res;
}

GenerateResult generate(const ToyModel& m, std::string_view prompt, const HeadEditor* editor,
                        int max_new) {
    if (max_new < 1) fail(ErrorCode::invalid_argument, "max_new must be >= 1");
    std::vector<int> tokens = encode_bytes(prompt, /*add_bos=*/true, /*add_eos=*/false);

    GenerateResult out;
    out.prompt_len = int(tokens.size());

    for (int step = 0; step < max_new; ++step) {
        if (int(tokens.size()) >= m.cfg.max_seq_len) break;
        ForwardResult fr = forward(m, tokens, editor);
        auto logits = fr.logits.row(fr.logits.rows - 1);
        int best = 0;
        for (int i = 1; i < m.cfg.vocab_size; ++i)
            if (logits[size_t(i)] > logits[size_t(best)]) best = i;
        if (best == kEosId) break;
        tokens.push_back(best);
        out.generated.push_back(best);
    }

    // one final pass over the full sequence gives the definitive trace;
    // causality makes it agree with every incremental pass
    ForwardResult final_pass = forward(m, tokens, editor);
    out.trace = std::move(final_pass.trace);
    out.trace.prompt_len = out.prompt_len;
    out.text = decode_bytes(out.generated);
    return out;
}

double ppl_from_mean_nll(double mean_nll) { return std::exp(mean_nll); }

double perplexity(const ToyModel& m, std::string_view text) {
    if (text.empty()) fail(ErrorCode::empty_input, "perplexity needs nonempty text");
    std::vector<int> tokens = encode_bytes(text, /*add_bos=*/true, /*add_eos=*/true);
    ForwardResult fr = forward(m, tokens, nullptr);

    double nll_sum = 0.0;
    const int targets = int(tokens.size()) - 1;
    for (int t = 0; t < targets; ++t) {
        auto logits = fr.logits.row(t);
        double mx = logits[0];
        for (double v : logits) mx = std::max(mx, v);
        double denom = 0.0;
        for (double v : logits) denom += std::exp(v - mx);
        double target_logit = logits[size_t(tokens[size_t(t) + 1])];
        nll_sum += std::log(denom) - (target_logit - mx);
    }
    return ppl_from_mean_nll(nll_sum / double(targets));
}

}  // namespace steerlab
