#include "steerlab/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "steerlab/analysis.hpp"
#include "steerlab/metrics.hpp"
#include "steerlab/probe.hpp"
#include "steerlab/steer.hpp"
#include "steerlab/store.hpp"
#include "steerlab/subspace.hpp"
#include "steerlab/synth.hpp"
#include "steerlab/toymodel.hpp"

namespace steerlab {

namespace {

// ----------------------------------------------------------------------------
// run directories

struct RunContext {
    json config;
    fs::path run_dir;
    std::vector<std::string> outputs;

    void note(const fs::path& p) { outputs.push_back(p.filename().string()); }
};

std::string config_hash(const json& config) {
    return hex64(fnv1a64(config.dump()));  // nlohmann keeps object keys sorted
}

// returns nullopt when a completed identical run exists and force is off
std::optional<RunContext> open_run(const std::string& command, const json& config,
                                   const fs::path& out_dir, bool force) {
    std::string hash = config_hash(config);
    fs::path run_dir = out_dir / (command + "-" + hash);
    fs::path manifest = run_dir / "run_manifest.json";
    if (!force && fs::exists(manifest)) {
        json m = read_json_file(manifest);
        if (m.value("status", "") == "complete") return std::nullopt;
    }
    fs::create_directories(run_dir);
    return RunContext{config, run_dir, {}};
}

void close_run(RunContext& ctx, const std::string& command) {
    json manifest{{"command", command},
                  {"config", ctx.config},
                  {"config_hash", config_hash(ctx.config)},
                  {"outputs", ctx.outputs},
                  {"status", "complete"}};
    write_json_file(ctx.run_dir / "run_manifest.json", manifest);
}

fs::path existing_run_dir(const std::string& command, const json& config,
                          const fs::path& out_dir) {
    return out_dir / (command + "-" + config_hash(config));
}

// ----------------------------------------------------------------------------
// config helpers

fs::path require_path(const json& cfg, const std::string& key) {
    if (!cfg.contains(key))
        fail(ErrorCode::config_error, "config is missing \"" + key + "\"");
    fs::path p = cfg.at(key).get<std::string>();
    if (!fs::exists(p))
        fail(ErrorCode::config_error, "config path \"" + key + "\" does not exist: " + p.string());
    return p;
}

ProbeConfig probe_config_from(const json& cfg, uint64_t fallback_seed) {
    ProbeConfig pc;
    json sub = cfg.value("probe", json::object());
    pc.learning_rate = sub.value("learning_rate", pc.learning_rate);
    pc.epochs = sub.value("epochs", pc.epochs);
    pc.l2_weight = sub.value("l2_weight", pc.l2_weight);
    pc.use_bias = sub.value("use_bias", pc.use_bias);
    pc.seed = sub.value("seed", fallback_seed);
    if (pc.learning_rate <= 0.0 || pc.epochs < 1 || pc.l2_weight < 0.0)
        fail(ErrorCode::config_error, "invalid probe configuration");
    return pc;
}

json selection_to_json(const HeadSelection& sel) {
    json heads = json::array();
    for (const auto& [key, acc] : sel.heads)
        heads.push_back(json{{"layer", key.first}, {"head", key.second}, {"accuracy", acc}});
    return json{{"attribute", to_string(sel.attribute)}, {"capacity", sel.capacity},
                {"heads", heads}};
}

HeadSelection selection_from_json(const json& j) {
    HeadSelection sel;
    try {
        sel.attribute = attribute_from_string(j.at("attribute").get<std::string>());
        sel.capacity = j.at("capacity").get<int>();
        for (const auto& e : j.at("heads"))
            sel.heads.emplace_back(HeadKey{e.at("layer").get<int>(), e.at("head").get<int>()},
                                   e.at("accuracy").get<double>());
    } catch (const json::exception& e) {
        fail(ErrorCode::corrupt_record, "bad head selection: " + std::string(e.what()));
    }
    return sel;
}

HeadSelection load_selection(const json& cfg, const std::string& key) {
    return selection_from_json(read_json_file(require_path(cfg, key)));
}

// style basis for every style-selected head; truth basis for truth-selected
// heads, deflated (and also kept entangled) at coupled heads
SubspaceBank build_bank(const ActivationDataset& style_ds, const ActivationDataset& truth_ds,
                        const HeadPartition& partition, int k) {
    SubspaceBank bank;
    bank.head_dim = style_ds.head_dim;

    auto add_entry = [&](SubspaceBasis&& sb, const ActivationDataset& ds) {
        sb.mean_positive = mean_positive_activation(ds, sb.layer, sb.head);
        bank.entries.push_back(std::move(sb));
    };

    for (const auto& [l, h] : partition.style_only)
        add_entry(top_k_svd(difference_matrix(style_ds, l, h), k), style_ds);
    for (const auto& [l, h] : partition.truth_only)
        add_entry(top_k_svd(difference_matrix(truth_ds, l, h), k), truth_ds);
    for (const auto& [l, h] : partition.coupled) {
        SubspaceBasis style_basis = top_k_svd(difference_matrix(style_ds, l, h), k);
        DifferenceMatrix truth_dm = difference_matrix(truth_ds, l, h);
        SubspaceBasis entangled = top_k_svd(truth_dm, k);
        SubspaceBasis deflated = deflate_and_decompose(truth_dm, style_basis, k);
        add_entry(std::move(style_basis), style_ds);
        add_entry(std::move(entangled), truth_ds);
        add_entry(std::move(deflated), truth_ds);
    }
    return bank;
}

StrengthParams strengths_from(const json& cfg) {
    StrengthParams sp;
    sp.gamma_style = cfg.value("gamma_style", 0.0);
    sp.gamma_truth = cfg.value("gamma_truth", 0.0);
    sp.positions = positions_from_string(cfg.value("positions", "all"));
    return sp;
}

ProbeScorer scorer_from(const ProbeBank& bank, const HeadSelection& sel) {
    ProbeScorer sc;
    sc.attribute = bank.attribute;
    for (const auto& [key, acc] : sel.heads) {
        const ProbeModel* p = bank.find(key.first, key.second);
        if (!p)
            fail(ErrorCode::config_error, "probe bank lacks a selected head");
        sc.probes.push_back(*p);
    }
    return sc;
}

std::vector<std::string> sweep_prompts(const json& sweep_cfg, uint64_t seed) {
    if (sweep_cfg.contains("prompts"))
        return sweep_cfg.at("prompts").get<std::vector<std::string>>();
    int count = sweep_cfg.value("num_prompts", 8);
    int len = sweep_cfg.value("prompt_len", 12);
    if (count < 1 || len < 1) fail(ErrorCode::config_error, "invalid sweep prompt settings");
    std::vector<std::string> prompts;
    Rng rng(Rng::mix(seed, 0x505754ull));
    for (int i = 0; i < count; ++i) {
        std::string p(size_t(len), ' ');
        for (auto& ch : p) ch = char(' ' + int(rng.below(95)));
        prompts.push_back(std::move(p));
    }
    return prompts;
}

void save_trace(const GenerationTrace& trace, const fs::path& dir) {
    fs::create_directories(dir);
    json meta{{"positions", trace.positions}, {"n_layers", trace.n_layers},
              {"n_heads", trace.n_heads},     {"head_dim", trace.head_dim},
              {"prompt_len", trace.prompt_len}, {"tokens", trace.tokens}};
    write_json_file(dir / "trace.json", meta);
    std::vector<float> raw(trace.raw.begin(), trace.raw.end());
    std::vector<float> delta(trace.delta.begin(), trace.delta.end());
    write_f32_payload(dir / "trace_raw.bin", raw);
    write_f32_payload(dir / "trace_delta.bin", delta);
}

}  // namespace

// ----------------------------------------------------------------------------
// commands

RunResult cmd_synth(const json& spec_config, const fs::path& out_dir, bool force) {
    json plant = spec_config;
    json toy = json::object();
    if (plant.contains("toy_model")) {
        toy = plant.at("toy_model");
        plant.erase("toy_model");
    }
    PlantSpec spec = plant_spec_from_json(plant);

    auto ctx = open_run("synth", spec_config, out_dir, force);
    if (!ctx) return {existing_run_dir("synth", spec_config, out_dir), true};

    if (!toy.empty()) {
        // bases come from a seeded toy model instead of pure gaussians, and
        // the model itself is written so steer/sweep can pick it up
        auto setup = planted_toy_setup(spec, toy.value("seed", uint64_t(0)),
                                       toy.value("prompt_len", 12));
        save_model(setup.model, ctx->run_dir / "model");
        ctx->note("model");
        save_dataset(setup.style, ctx->run_dir / "style_dataset");
        save_dataset(setup.truth, ctx->run_dir / "truth_dataset");
        write_json_file(ctx->run_dir / "ground_truth.json",
                        ground_truth_to_json(setup.ground_truth));
    } else {
        PlantedData data = generate_planted_dataset(spec);
        save_dataset(data.style, ctx->run_dir / "style_dataset");
        save_dataset(data.truth, ctx->run_dir / "truth_dataset");
        write_json_file(ctx->run_dir / "ground_truth.json",
                        ground_truth_to_json(data.ground_truth));
    }
    ctx->note("style_dataset");
    ctx->note("truth_dataset");
    ctx->note("ground_truth.json");
    close_run(*ctx, "synth");
    return {ctx->run_dir, false};
}

namespace {

ActivationDataset extract_dataset(const ToyModel& model, const std::vector<QAPair>& corpus,
                                  Attribute attribute) {
    ActivationDataset ds;
    ds.num_layers = model.cfg.n_layers;
    ds.num_heads = model.cfg.n_heads;
    ds.head_dim = model.cfg.head_dim;
    ds.attribute = attribute;

    std::vector<float> block(ds.stride());
    int64_t next_id = 0;
    for (const auto& pair : corpus) {
        if (pair.attribute != attribute)
            fail(ErrorCode::config_error, "corpus attribute disagrees with dataset attribute");
        for (Polarity pol : {Polarity::positive, Polarity::negative}) {
            const std::string& response =
                pol == Polarity::positive ? pair.positive_response : pair.negative_response;
            std::string text = pair.question + "\n" + response;
            ForwardResult fr = forward(model, encode_bytes(text, true, false), nullptr);
            int last = fr.trace.positions - 1;
            size_t o = 0;
            for (int l = 0; l < ds.num_layers; ++l)
                for (int h = 0; h < ds.num_heads; ++h)
                    for (double v : fr.trace.raw_at(last, l, h)) block[o++] = float(v);
            SampleMeta meta{next_id++, pair.pair_id, pol, pol == Polarity::positive ? 1 : 0,
                            attribute, Split::train};
            ds.add_sample(meta, block);
        }
    }
    return ds;
}

}  // namespace

RunResult cmd_extract(const json& config, const fs::path& out_dir, bool force) {
    fs::path model_dir = require_path(config, "model_dir");
    if (!config.contains("style_corpus") && !config.contains("truth_corpus"))
        fail(ErrorCode::config_error, "extract needs style_corpus and/or truth_corpus");
    double ratio = config.value("split", json::object()).value("ratio", 0.8);
    uint64_t split_seed = config.value("split", json::object()).value("seed", uint64_t(7));

    auto ctx = open_run("extract", config, out_dir, force);
    if (!ctx) return {existing_run_dir("extract", config, out_dir), true};

    ToyModel model = load_model(model_dir);
    for (auto [key, attr, out_name] :
         {std::tuple{"style_corpus", Attribute::style, "style_dataset"},
          std::tuple{"truth_corpus", Attribute::truth, "truth_dataset"}}) {
        if (!config.contains(key)) continue;
        auto corpus = load_qa_corpus(require_path(config, key));
        ActivationDataset ds = extract_dataset(model, corpus, attr);
        ds = split_train_val(ds, ratio, split_seed);
        save_dataset(ds, ctx->run_dir / out_name);
        ctx->note(out_name);
    }
    close_run(*ctx, "extract");
    return {ctx->run_dir, false};
}

RunResult cmd_probe(const json& config, const fs::path& out_dir, bool force) {
    int capacity = config.value("heads_per_attribute", 0);
    if (capacity < 1) fail(ErrorCode::config_error, "heads_per_attribute must be >= 1");
    ProbeConfig pc = probe_config_from(config, config.value("seed", uint64_t(1)));

    auto ctx = open_run("probe", config, out_dir, force);
    if (!ctx) return {existing_run_dir("probe", config, out_dir), true};

    std::vector<const ProbeBank*> banks;
    std::vector<ProbeBank> storage;
    for (auto [key, bank_name, sel_name] :
         {std::tuple{"style_dataset", "probe_bank_style", "selection_style.json"},
          std::tuple{"truth_dataset", "probe_bank_truth", "selection_truth.json"}}) {
        if (!config.contains(key)) continue;
        ActivationDataset ds = load_dataset(require_path(config, key));
        ProbeBank bank = train_probe_bank(ds, pc);
        save_probe_bank(bank, ctx->run_dir / bank_name);
        ctx->note(bank_name);
        HeadSelection sel = select_heads(bank.accuracies(), capacity, ds.attribute);
        write_json_file(ctx->run_dir / sel_name, selection_to_json(sel));
        ctx->note(sel_name);
        storage.push_back(std::move(bank));
    }
    if (storage.empty())
        fail(ErrorCode::config_error, "probe needs style_dataset and/or truth_dataset");
    for (const auto& b : storage) banks.push_back(&b);
    accuracy_heatmap_export(banks, ctx->run_dir / "heatmap.csv");
    ctx->note("heatmap.csv");
    close_run(*ctx, "probe");
    return {ctx->run_dir, false};
}

RunResult cmd_subspace(const json& config, const fs::path& out_dir, bool force) {
    int k = config.value("subspace_rank", 0);
    if (k < 1) fail(ErrorCode::config_error, "subspace_rank must be >= 1");

    auto ctx = open_run("subspace", config, out_dir, force);
    if (!ctx) return {existing_run_dir("subspace", config, out_dir), true};

    ActivationDataset style_ds = load_dataset(require_path(config, "style_dataset"));
    ActivationDataset truth_ds = load_dataset(require_path(config, "truth_dataset"));
    HeadSelection style_sel = load_selection(config, "selection_style");
    HeadSelection truth_sel = load_selection(config, "selection_truth");

    HeadPartition partition = partition_heads(style_sel, truth_sel);
    write_json_file(ctx->run_dir / "partition.json", partition_to_json(partition));
    ctx->note("partition.json");

    SubspaceBank bank = build_bank(style_ds, truth_ds, partition, k);
    save_subspace_bank(bank, ctx->run_dir / "subspace_bank");
    ctx->note("subspace_bank");
    close_run(*ctx, "subspace");
    return {ctx->run_dir, false};
}

RunResult cmd_steer(const json& config, const std::string& prompt, const fs::path& out_dir,
                    bool force) {
    json effective = config;
    effective["prompt"] = prompt;  // the prompt is part of the run identity
    int max_new = config.value("max_new_tokens", 32);
    if (max_new < 1) fail(ErrorCode::config_error, "max_new_tokens must be >= 1");

    auto ctx = open_run("steer", effective, out_dir, force);
    if (!ctx) return {existing_run_dir("steer", effective, out_dir), true};

    ToyModel model = load_model(require_path(config, "model_dir"));
    fs::path bank_dir = require_path(config, "subspace_bank");
    SubspaceBank bank = load_subspace_bank(bank_dir);
    HeadPartition partition = partition_from_json(read_json_file(require_path(config, "partition")));
    SteeringPlan plan = build_plan(partition, bank, strengths_from(config));

    save_plan(plan, partition, ctx->run_dir / "plan.json", bank_dir);
    ctx->note("plan.json");

    int prompt_len = int(prompt.size()) + 1;  // + BOS
    HeadEditor editor = as_head_editor(plan, prompt_len);
    GenerateResult gen = generate(model, prompt, &editor, max_new);

    std::ofstream text_out(ctx->run_dir / "generation.txt", std::ios::binary);
    text_out << gen.text;
    text_out.close();
    ctx->note("generation.txt");

    save_trace(gen.trace, ctx->run_dir / "trace");
    ctx->note("trace");
    close_run(*ctx, "steer");
    return {ctx->run_dir, false};
}

RunResult cmd_analyze(const json& config, const fs::path& out_dir, bool force) {
    int k = config.value("subspace_rank", 0);
    if (k < 1) fail(ErrorCode::config_error, "subspace_rank must be >= 1");

    auto ctx = open_run("analyze", config, out_dir, force);
    if (!ctx) return {existing_run_dir("analyze", config, out_dir), true};

    ActivationDataset style_ds = load_dataset(require_path(config, "style_dataset"));
    ActivationDataset truth_ds = load_dataset(require_path(config, "truth_dataset"));
    HeadSelection style_sel = load_selection(config, "selection_style");
    HeadSelection truth_sel = load_selection(config, "selection_truth");
    HeadPartition partition = partition_heads(style_sel, truth_sel);

    // mean differences for every head in the geometry
    std::map<HeadKey, MeanDifference> style_means, truth_means;
    std::set<HeadKey> all_heads;
    for (int l = 0; l < style_ds.num_layers; ++l)
        for (int h = 0; h < style_ds.num_heads; ++h) {
            style_means[{l, h}] = mean_difference(style_ds, l, h);
            truth_means[{l, h}] = mean_difference(truth_ds, l, h);
            all_heads.insert({l, h});
        }

    // entanglement: relevant = coupled heads, irrelevant = the rest
    const std::set<HeadKey>& relevant = partition.coupled;
    std::set<HeadKey> irrelevant;
    for (const auto& key : all_heads)
        if (!relevant.count(key)) irrelevant.insert(key);

    if (relevant.size() >= 2 && irrelevant.size() >= 2) {
        EntanglementReport rep =
            entanglement_report(style_means, truth_means, relevant, irrelevant);
        write_entanglement_csv(rep, ctx->run_dir / "entanglement.csv");
        ctx->note("entanglement.csv");
        write_json_file(ctx->run_dir / "entanglement.json",
                        json{{"welch_t", rep.welch.t},
                             {"welch_dof", rep.welch.dof},
                             {"welch_p_two_tailed", rep.welch.p_two_tailed},
                             {"cohens_d", rep.welch.cohens_d}});
        ctx->note("entanglement.json");
    } else {
        // groups too small for the Welch comparison; still export the
        // per-head cosines so the measurement is never lost
        log_warning("entanglement group test skipped: needs at least 2 coupled and 2 other heads");
        std::vector<std::vector<std::string>> rows;
        for (const auto& key : all_heads) {
            double cos = cosine_similarity(style_means.at(key).delta_mean,
                                           truth_means.at(key).delta_mean);
            rows.push_back({relevant.count(key) ? "same_head_relevant" : "same_head_irrelevant",
                            std::to_string(key.first), std::to_string(key.second),
                            format_double(std::abs(cos))});
        }
        write_csv(ctx->run_dir / "entanglement.csv", {"group", "layer", "head", "cos"}, rows);
        ctx->note("entanglement.csv");
    }

    // information loss at coupled heads
    std::vector<std::vector<std::string>> loss_rows;
    for (const auto& [l, h] : partition.coupled) {
        SubspaceBasis style_basis = top_k_svd(difference_matrix(style_ds, l, h), k);
        InfoLossReport rep = info_loss(difference_matrix(truth_ds, l, h), style_basis);
        loss_rows.push_back({std::to_string(rep.layer), std::to_string(rep.head),
                             std::to_string(rep.k), std::to_string(rep.dim),
                             format_double(rep.delta), format_double(rep.k_over_d)});
    }
    if (!loss_rows.empty()) {
        write_csv(ctx->run_dir / "info_loss.csv", {"layer", "head", "k", "dim", "delta", "k_over_d"},
                  loss_rows);
        ctx->note("info_loss.csv");
    }

    // projections onto the leading and the trailing (unselected) directions
    auto export_projections = [&](const ActivationDataset& ds, const HeadSelection& sel,
                                  const std::string& tag) {
        for (const auto& [key, acc] : sel.heads) {
            auto [l, h] = key;
            DifferenceMatrix dm = difference_matrix(ds, l, h);
            int max_rank = std::min(dm.delta.rows, dm.delta.cols);
            SubspaceBasis wide = top_k_svd(dm, std::min(k + 2, max_rank));
            if (wide.k < 2) continue;

            SubspaceBasis lead = wide;
            lead.k = 2;
            lead.basis = Mat(wide.basis.rows, 2);
            for (int r = 0; r < wide.basis.rows; ++r) {
                lead.basis.at(r, 0) = wide.basis.at(r, 0);
                lead.basis.at(r, 1) = wide.basis.at(r, 1);
            }
            std::string name = "projection_" + tag + "_L" + std::to_string(l) + "H" +
                               std::to_string(h) + ".csv";
            projection_export(ds, lead, ctx->run_dir / name);
            ctx->note(name);

            if (wide.k >= k + 2) {
                SubspaceBasis tail = wide;
                tail.k = 2;
                tail.basis = Mat(wide.basis.rows, 2);
                for (int r = 0; r < wide.basis.rows; ++r) {
                    tail.basis.at(r, 0) = wide.basis.at(r, k);
                    tail.basis.at(r, 1) = wide.basis.at(r, k + 1);
                }
                name = "projection_" + tag + "_irrelevant_L" + std::to_string(l) + "H" +
                       std::to_string(h) + ".csv";
                projection_export(ds, tail, ctx->run_dir / name);
                ctx->note(name);
            }
        }
    };
    export_projections(style_ds, style_sel, "style");
    export_projections(truth_ds, truth_sel, "truth");

    // coupled heads: style activations against the entangled truth basis and
    // against its deflated counterpart
    for (const auto& [l, h] : partition.coupled) {
        SubspaceBasis style_basis = top_k_svd(difference_matrix(style_ds, l, h), k);
        DifferenceMatrix truth_dm = difference_matrix(truth_ds, l, h);
        SubspaceBasis entangled = top_k_svd(truth_dm, k);
        SubspaceBasis deflated = deflate_and_decompose(truth_dm, style_basis, k);
        if (entangled.k >= 2 && deflated.k >= 2) {
            std::string base = "_L" + std::to_string(l) + "H" + std::to_string(h) + ".csv";
            projection_export(style_ds, entangled,
                              ctx->run_dir / ("projection_coupled_entangled" + base));
            ctx->note("projection_coupled_entangled" + base);
            projection_export(style_ds, deflated,
                              ctx->run_dir / ("projection_coupled_deflated" + base));
            ctx->note("projection_coupled_deflated" + base);
        }
    }

    close_run(*ctx, "analyze");
    return {ctx->run_dir, false};
}

RunResult cmd_sweep(const json& config, const fs::path& out_dir, bool force) {
    json sweep_cfg = config.value("sweep", json::object());
    auto gs_grid = sweep_cfg.value("gamma_style_grid", std::vector<double>{});
    auto gt_grid = sweep_cfg.value("gamma_truth_grid", std::vector<double>{});
    if (gs_grid.empty() || gt_grid.empty())
        fail(ErrorCode::config_error, "sweep grids must be nonempty");
    int max_new = sweep_cfg.value("max_new_tokens", 24);

    auto ctx = open_run("sweep", config, out_dir, force);
    if (!ctx) return {existing_run_dir("sweep", config, out_dir), true};

    ToyModel model = load_model(require_path(config, "model_dir"));
    SubspaceBank bank = load_subspace_bank(require_path(config, "subspace_bank"));
    HeadPartition partition = partition_from_json(read_json_file(require_path(config, "partition")));
    ProbeBank style_bank = load_probe_bank(require_path(config, "probe_bank_style"));
    ProbeBank truth_bank = load_probe_bank(require_path(config, "probe_bank_truth"));
    HeadSelection style_sel = load_selection(config, "selection_style");
    HeadSelection truth_sel = load_selection(config, "selection_truth");

    StrengthParams base = strengths_from(config);
    auto prompts = sweep_prompts(sweep_cfg, config.value("seed", uint64_t(0)));
    auto points = strength_sweep(model, partition, bank, base, gs_grid, gt_grid, prompts,
                                 scorer_from(style_bank, style_sel),
                                 scorer_from(truth_bank, truth_sel), max_new);
    write_sweep_csv(points, ctx->run_dir / "sweep.csv");
    ctx->note("sweep.csv");
    close_run(*ctx, "sweep");
    return {ctx->run_dir, false};
}

RunResult cmd_metrics(const json& component_scores, const fs::path& out_dir, bool force) {
    MetricReport report = compute_metric_report(component_scores);
    auto ctx = open_run("metrics", component_scores, out_dir, force);
    if (!ctx) return {existing_run_dir("metrics", component_scores, out_dir), true};
    write_json_file(ctx->run_dir / "metric_report.json", metric_report_to_json(report));
    ctx->note("metric_report.json");
    close_run(*ctx, "metrics");
    return {ctx->run_dir, false};
}

// ----------------------------------------------------------------------------
// CLI dispatch

void apply_override(json& config, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        fail(ErrorCode::config_error, "--set expects key=value, got: " + assignment);
    std::string key = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::exception&) {
        parsed = value;  // plain string
    }

    json* node = &config;
    size_t start = 0;
    while (true) {
        size_t dot = key.find('.', start);
        std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
        if (part.empty()) fail(ErrorCode::config_error, "empty key segment in --set " + assignment);
        if (dot == std::string::npos) {
            (*node)[part] = parsed;
            break;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"desk-scale pipeline for disentangled activation steering"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "runs", prompt;
    std::vector<std::string> overrides;
    bool force = false;
    std::optional<uint64_t> seed_override;

    auto add_common = [&](CLI::App* cmd, bool needs_prompt = false) {
        cmd->add_option("--config", config_path, "configuration JSON file")->required();
        cmd->add_option("--out", out_dir, "output directory for run artifacts");
        cmd->add_option("--set", overrides, "override config entries as key=value");
        cmd->add_option("--seed", seed_override, "override the top-level seed");
        cmd->add_flag("--force", force, "rerun even when an identical run exists");
        if (needs_prompt)
            cmd->add_option("--prompt", prompt, "prompt byte string")->required();
        return cmd;
    };

    auto* c_extract = add_common(app.add_subcommand("extract", "capture head activations over a QA corpus"));
    auto* c_probe = add_common(app.add_subcommand("probe", "train per-head probes and select heads"));
    auto* c_subspace = add_common(app.add_subcommand("subspace", "build subspace bank with deflation"));
    auto* c_steer = add_common(app.add_subcommand("steer", "generate with steering applied"), true);
    auto* c_analyze = add_common(app.add_subcommand("analyze", "entanglement, info-loss and projection exports"));
    auto* c_sweep = add_common(app.add_subcommand("sweep", "edited-generation strength sweep"));
    auto* c_synth = add_common(app.add_subcommand("synth", "generate planted datasets"));
    auto* c_metrics = add_common(app.add_subcommand("metrics", "composite metric report"));

    std::vector<const char*> argv;
    argv.push_back("steerlab");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        json config;
        try {
            config = read_json_file(config_path);
        } catch (const Error& e) {
            fail(ErrorCode::config_error, e.what());
        }
        for (const auto& o : overrides) apply_override(config, o);
        if (seed_override) config["seed"] = *seed_override;

        RunResult res;
        if (c_extract->parsed()) res = cmd_extract(config, out_dir, force);
        else if (c_probe->parsed()) res = cmd_probe(config, out_dir, force);
        else if (c_subspace->parsed()) res = cmd_subspace(config, out_dir, force);
        else if (c_steer->parsed()) res = cmd_steer(config, prompt, out_dir, force);
        else if (c_analyze->parsed()) res = cmd_analyze(config, out_dir, force);
        else if (c_sweep->parsed()) res = cmd_sweep(config, out_dir, force);
        else if (c_synth->parsed()) res = cmd_synth(config, out_dir, force);
        else if (c_metrics->parsed()) res = cmd_metrics(config, out_dir, force);

        std::cout << (res.reused ? "reused " : "wrote ") << res.run_dir.string() << "\n";
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.code()) {
            case ErrorCode::config_error:
            case ErrorCode::invalid_argument:
            case ErrorCode::missing_file:
                return 1;
            default:
                return 2;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace steerlab
