#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <iomanip>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <spdlog/cfg/helpers.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "focusgate/error.hpp"
#include "focusgate/halluc_metrics.hpp"
#include "focusgate/synth_fixtures.hpp"
#include "focusgate/var_analysis.hpp"

#ifndef FOCUSGATE_DATA_DIR
#define FOCUSGATE_DATA_DIR "data"
#endif

namespace focusgate::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void configure_logging() {
    static bool done = false;
    if (!done) {
        auto logger = spdlog::stderr_color_mt("focusgate");
        logger->set_pattern("[%l] %v");
        spdlog::set_default_logger(logger);
        done = true;
    }
    spdlog::set_level(spdlog::level::info);
    if (const char* env = std::getenv("FOCUSGATE_LOG")) spdlog::cfg::helpers::load_levels(env);
}

fs::path data_dir() {
    if (const char* env = std::getenv("FOCUSGATE_DATA")) return env;
    return FOCUSGATE_DATA_DIR;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw UsageError(path.string() + " is not valid JSON: " + e.what());
    }
}

fs::path prepare_out_dir(const std::string& out) {
    fs::path dir(out);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create output directory " + out + ": " + ec.message());
    return dir;
}

int exit_code_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument:
        case ErrorCode::EmptyInput: return kUsage;
        default: return kDataFormat;
    }
}

int report_error(const std::string& kind, const std::string& message, int code) {
    std::cerr << json{{"error", kind}, {"message", message}, {"exit_code", code}}.dump() << std::endl;
    return code;
}

std::string join_layers(const std::vector<int>& layers) {
    std::string out;
    for (int l : layers) out += (out.empty() ? "" : ",") + std::to_string(l);
    return out;
}

ReadOptions read_options(bool strict) { return ReadOptions{.strict = strict}; }

// --- option holders ------------------------------------------------------------

struct PhaseFlags {
    double lambda = 2.0;
    double baseline_frac = 0.25;
    std::string window_frac = "0.30";

    PhaseConfig config() const {
        PhaseConfig cfg;
        cfg.lambda = lambda;
        cfg.baseline_fraction = baseline_frac;
        if (window_frac == "auto") {
            cfg.auto_window = true;
        } else {
            try {
                std::size_t used = 0;
                cfg.window_fraction = std::stod(window_frac, &used);
                if (used != window_frac.size()) throw std::invalid_argument(window_frac);
            } catch (const std::exception&) {
                throw UsageError("--window-frac expects a number or 'auto', got '" + window_frac + "'");
            }
        }
        cfg.validate();
        return cfg;
    }
};

void add_phase_flags(CLI::App* cmd, PhaseFlags& f) {
    cmd->add_option("--lambda", f.lambda, "onset threshold multiplier on the baseline std")->capture_default_str();
    cmd->add_option("--baseline-frac", f.baseline_frac, "fraction of layers forming the baseline")
        ->capture_default_str();
    cmd->add_option("--window-frac", f.window_frac, "focus window as a fraction of depth, or 'auto'")
        ->capture_default_str();
}

// --- subcommands -----------------------------------------------------------------

int cmd_phases(const std::string& trace_path, const PhaseFlags& flags, const std::string& out, bool strict) {
    const PhaseConfig cfg = flags.config();
    const auto trace = read_attention_trace(trace_path, read_options(strict));
    const auto profile = concentration_profile(trace, cfg.sigma_floor);
    const auto outcome = detect_phases(profile, cfg);
    const fs::path dir = prepare_out_dir(out);

    json report{{"trace", trace_path}, {"model_id", trace.header().model_id}, {"profile", to_json(profile)}};
    if (const auto* p = std::get_if<PhaseProfile>(&outcome)) {
        write_text(dir / "profile.csv", profile_csv(profile, p));
        report.update(to_json(*p));
        write_json(dir / "phases.json", report);
        spdlog::info("focus phase: layers {}-{} (K={}, threshold={:.6g})", p->l_start, p->l_end, p->window,
                     p->threshold);
        std::cout << to_json(*p).dump() << std::endl;
        return kOk;
    }
    const auto& none = std::get<NoFocusDetected>(outcome);
    write_text(dir / "profile.csv", profile_csv(profile, nullptr));
    report.update(to_json(none));
    write_json(dir / "phases.json", report);
    std::cerr << to_json(none).dump() << std::endl;
    return kNoFocus;
}

struct SelectFlags {
    std::string method = "dpp";
    std::optional<double> ratio;
    bool ratio_means_retained = false;
    std::string source_layers;
    std::optional<int> feature_layer;
    std::string target_layers;
    std::string profile;
    double jitter_rel = 1e-6;
    unsigned threads = 0;
};

int cmd_select(const std::string& trace_path, const std::string& features_path, const SelectFlags& flags,
               const PhaseFlags& phase_flags, const std::string& out, bool strict) {
    SelectConfig cfg;
    cfg.method = flags.method == "topk" ? SelectionMethod::TopK : SelectionMethod::Dpp;
    cfg.ratio = flags.ratio;
    cfg.ratio_means_retained = flags.ratio_means_retained;
    if (!flags.source_layers.empty()) cfg.source_layers = parse_layer_list(flags.source_layers);
    cfg.feature_layer = flags.feature_layer;
    if (!flags.target_layers.empty()) cfg.target_layers = parse_layer_list(flags.target_layers);
    if (!flags.profile.empty()) cfg.profile = find_profile(flags.profile);
    cfg.phases = phase_flags.config();
    cfg.jitter_rel = flags.jitter_rel;
    cfg.threads = flags.threads;

    const auto trace = read_attention_trace(trace_path, read_options(strict));
    const auto features = read_feature_dump(features_path, read_options(strict));
    const auto run = select_stage(cfg, trace, features);
    spdlog::info("selection stage: {:.4f} s ({} of {} patches kept, method {})", run.selection_seconds,
                 run.selection.k_selected, features.rows(), flags.method);

    const fs::path dir = prepare_out_dir(out);
    const json sel = selection_json(run, cfg);
    write_json(dir / "selection.json", sel);
    write_json(dir / "mask.json", to_json(run.mask));
    std::cout << json{{"K_selected", run.selection.k_selected},
                      {"retained_tokens", run.mask.retained.size()},
                      {"target_layers", run.layers.target_layers},
                      {"selection", (dir / "selection.json").string()},
                      {"mask", (dir / "mask.json").string()}}
                     .dump()
              << std::endl;
    return kOk;
}

struct ConditionSummary {
    std::string label;
    std::vector<std::string> files;
    std::vector<double> image_means;
    VarStats grid;  // mean of the per-image grids
};

ConditionSummary summarize_condition(const std::string& label, const std::vector<std::string>& files, bool strict) {
    ConditionSummary c;
    c.label = label;
    c.files = files;
    for (const auto& f : files) {
        const auto stats = var_stats(read_decoder_trace(f, read_options(strict)), label);
        if (c.image_means.empty()) {
            c.grid = stats;
            c.grid.values.clear();
        } else {
            if (stats.layer_ids != c.grid.layer_ids || stats.num_heads != c.grid.num_heads) {
                throw Error(ErrorCode::ShapeMismatch, f + " has a different layer/head layout from " + files.front());
            }
            for (std::size_t i = 0; i < c.grid.grid.size(); ++i) c.grid.grid[i] += stats.grid[i];
        }
        c.image_means.push_back(stats.image_mean);
    }
    const auto n = static_cast<double>(files.size());
    for (double& g : c.grid.grid) g /= n;
    double total = 0.0;
    for (double m : c.image_means) total += m;
    c.grid.image_mean = total / n;
    return c;
}

json condition_json(const ConditionSummary& c) {
    return {{"label", c.label}, {"files", c.files}, {"image_means", c.image_means}, {"mean", c.grid.image_mean}};
}

int cmd_var(const std::vector<std::string>& a, const std::vector<std::string>& b, const std::string& label_a,
            const std::string& label_b, const std::string& out, bool strict) {
    if (a.size() < 2 || b.size() < 2) throw UsageError("var needs at least two decoder traces per condition");
    const auto ca = summarize_condition(label_a, a, strict);
    const auto cb = summarize_condition(label_b, b, strict);
    const auto welch = compare_conditions(ca.image_means, cb.image_means);

    const fs::path dir = prepare_out_dir(out);
    json report = to_json(welch);
    report["condition_a"] = condition_json(ca);
    report["condition_b"] = condition_json(cb);
    report["grids"] = {{"a", (dir / "grid_a.csv").string()}, {"b", (dir / "grid_b.csv").string()}};
    write_text(dir / "grid_a.csv", grid_csv(ca.grid));
    write_text(dir / "grid_b.csv", grid_csv(cb.grid));
    write_json(dir / "var_report.json", report);
    std::cout << to_json(welch).dump() << std::endl;
    return kOk;
}

int cmd_metrics(const std::string& captions_path, const std::string& annotations_path, const std::string& lexicon,
                const std::string& suite, bool f1_pooled, const std::string& out) {
    const fs::path lexicon_path = lexicon.empty() ? data_dir() / "lexicon" / "coco80.json" : fs::path(lexicon);
    const auto lex = ObjectLexicon::load(lexicon_path);
    const auto captions = load_captions(captions_path);
    if (captions.empty()) throw UsageError(captions_path + " contains no captions");
    const auto records = build_records(captions, load_annotations(annotations_path), lex);
    const auto report = evaluate_captions(records, lex, f1_pooled ? F1Mode::Pooled : F1Mode::PerImage);

    const fs::path dir = prepare_out_dir(out);
    json j = to_json(report, suite);
    j["lexicon"] = lexicon_path.string();
    write_json(dir / "metrics.json", j);
    write_text(dir / "per_image.csv", per_image_csv(report));
    std::cout << to_json(report, suite).dump() << std::endl;
    return kOk;
}

struct SynthItem {
    std::string name;
    AnyTrace trace;
    json sidecar;
};

SynthItem synthesize(json spec, std::uint64_t default_seed, const std::string& fallback_name) {
    if (!spec.is_object()) throw UsageError("each fixture spec must be a JSON object");
    const std::string type = spec.value("type", std::string("phase"));
    const std::string name = spec.value("name", fallback_name);
    if (name.empty() || name.find('/') != std::string::npos) throw UsageError("invalid fixture name '" + name + "'");
    if (!spec.contains("seed")) spec["seed"] = default_seed;

    if (type == "phase") {
        const auto s = phase_spec_from_json(spec);
        return {name,
                gen_phase_trace(s),
                {{"spec", to_json(s)},
                 {"ground_truth",
                  {{"l_start", s.boundary}, {"K_true", s.window}, {"l_end", s.boundary + s.window - 1}, {"seed", s.seed}}}}};
    }
    if (type == "features") {
        const auto s = feature_spec_from_json(spec);
        auto fx = gen_feature_dump(s);
        return {name, std::move(fx.dump),
                {{"spec", to_json(s)}, {"ground_truth", {{"cluster_of", fx.cluster}, {"seed", s.seed}}}}};
    }
    if (type == "decoder") {
        const auto s = decoder_spec_from_json(spec);
        return {name,
                gen_decoder_trace(s),
                {{"spec", to_json(s)},
                 {"ground_truth",
                  {{"target_var", s.target_var},
                   {"visual_span", {s.visual_span.begin, s.visual_span.end}},
                   {"seed", s.seed}}}}};
    }
    throw UsageError("unknown fixture type '" + type + "' (expected phase, features or decoder)");
}

int cmd_synth(const std::string& spec_path, std::uint64_t seed, const std::string& out) {
    const json doc = read_json_file(spec_path);
    std::vector<SynthItem> items;
    if (doc.is_array()) {
        if (doc.empty()) throw UsageError(spec_path + " holds an empty spec list");
        std::set<std::string> names;
        for (std::size_t i = 0; i < doc.size(); ++i) {
            std::ostringstream name;
            name << "trace_" << std::setw(3) << std::setfill('0') << i;
            items.push_back(synthesize(doc[i], seed + i, name.str()));
            if (!names.insert(items.back().name).second) throw UsageError("duplicate fixture name " + items.back().name);
        }
    } else {
        items.push_back(synthesize(doc, seed, "trace"));
    }

    const fs::path dir = prepare_out_dir(out);
    json written = json::array();
    for (auto& item : items) {
        const fs::path trace_file = dir / (item.name + ".pats");
        write_trace(trace_file, item.trace);
        item.sidecar["trace"] = trace_file.filename().string();
        write_json(dir / (item.name + ".json"), item.sidecar);
        written.push_back(trace_file.string());
    }
    spdlog::info("wrote {} fixture(s) to {}", items.size(), dir.string());
    std::cout << json{{"written", written}}.dump() << std::endl;
    return kOk;
}

}  // namespace

// --- public helpers ------------------------------------------------------------

std::vector<int> parse_layer_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string part;
    auto to_int = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(s, &used);
            if (used != s.size() || v < 0) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw UsageError("bad layer list '" + text + "'");
        }
    };
    while (std::getline(ss, part, ',')) {
        const auto dash = part.find('-');
        if (dash == std::string::npos) {
            out.push_back(to_int(part));
        } else {
            const int lo = to_int(part.substr(0, dash));
            const int hi = to_int(part.substr(dash + 1));
            if (hi < lo) throw UsageError("bad layer range '" + part + "'");
            for (int l = lo; l <= hi; ++l) out.push_back(l);
        }
    }
    if (out.empty()) throw UsageError("empty layer list");
    std::sort(out.begin(), out.end());
    if (std::adjacent_find(out.begin(), out.end()) != out.end()) throw UsageError("repeated layer in '" + text + "'");
    return out;
}

ModelMaskProfile find_profile(const std::string& name_or_path) {
    fs::path path(name_or_path);
    if (!fs::exists(path)) path = data_dir() / "profiles" / (name_or_path + ".json");
    if (!fs::exists(path)) throw UsageError("unknown model profile '" + name_or_path + "'");
    return load_profile(path);
}

ResolvedLayers resolve_layers(const SelectConfig& cfg, const AttentionTrace& trace, const FeatureDump& features) {
    const TraceHeader& h = trace.header();
    if (features.rows() != h.patch_count()) {
        throw Error(ErrorCode::ShapeMismatch, "feature dump has " + std::to_string(features.rows()) +
                                                  " patch rows but the attention trace has " +
                                                  std::to_string(h.patch_count()) + " patch tokens");
    }

    std::optional<PhaseProfile> phases;
    auto detected = [&]() -> const PhaseProfile& {
        if (!phases) {
            PhaseOutcome outcome;
            try {
                outcome = detect_phases(concentration_profile(trace, cfg.phases.sigma_floor), cfg.phases);
            } catch (const Error& e) {
                throw UsageError(std::string("cannot infer layers from the trace (") + e.what() +
                                 "); pass them explicitly or use --profile");
            }
            if (!std::holds_alternative<PhaseProfile>(outcome)) {
                throw UsageError("no focus phase detected in the trace; pass layers explicitly or use --profile");
            }
            phases = std::get<PhaseProfile>(outcome);
            spdlog::info("detected focus phase {}-{}", phases->l_start, phases->l_end);
        }
        return *phases;
    };

    ResolvedLayers r;
    if (cfg.source_layers) {
        r.source_layers = *cfg.source_layers;
        r.origin["source_layers"] = "flag";
    } else if (cfg.profile) {
        r.source_layers = cfg.profile->source_layers;
        r.origin["source_layers"] = "profile";
    } else {
        // The last diffusion layers before the onset, at most five of them.
        const auto& p = detected();
        for (std::size_t pos = p.start_pos >= 5 ? p.start_pos - 5 : 0; pos < p.start_pos; ++pos) {
            r.source_layers.push_back(h.layer_ids[pos]);
        }
        r.origin["source_layers"] = "phases";
    }

    if (cfg.feature_layer) {
        r.feature_layer = *cfg.feature_layer;
        r.origin["feature_layer"] = "flag";
    } else if (cfg.profile) {
        r.feature_layer = cfg.profile->feature_layer;
        r.origin["feature_layer"] = "profile";
    } else {
        r.feature_layer = features.source_layer();
        r.origin["feature_layer"] = "features";
    }
    if (r.feature_layer != features.source_layer()) {
        throw UsageError("feature layer " + std::to_string(r.feature_layer) + " requested but the feature dump was taken at layer " +
                         std::to_string(features.source_layer()));
    }

    if (cfg.target_layers) {
        r.target_layers = *cfg.target_layers;
        r.origin["target_layers"] = "flag";
    } else if (cfg.profile) {
        r.target_layers = cfg.profile->target_layers;
        r.origin["target_layers"] = "profile";
    } else {
        const auto& p = detected();
        for (std::size_t pos = p.start_pos; pos <= p.end_pos; ++pos) r.target_layers.push_back(h.layer_ids[pos]);
        r.origin["target_layers"] = "phases";
    }

    if (cfg.ratio) {
        r.ratio = *cfg.ratio;
        r.origin["ratio"] = "flag";
    } else if (cfg.profile) {
        r.ratio = cfg.profile->masking_ratio;
        r.origin["ratio"] = "profile";
    } else {
        throw UsageError("no masking ratio; pass --ratio or --profile");
    }
    if (cfg.profile && cfg.profile->model_id != h.model_id) {
        spdlog::warn("profile {} applied to a trace from model {}", cfg.profile->model_id, h.model_id);
    }
    spdlog::debug("layers: source [{}] ({}), feature {} ({}), target [{}] ({})", join_layers(r.source_layers),
                  r.origin["source_layers"].get<std::string>(), r.feature_layer,
                  r.origin["feature_layer"].get<std::string>(), join_layers(r.target_layers),
                  r.origin["target_layers"].get<std::string>());
    return r;
}

SelectionRun select_stage(const SelectConfig& cfg, const AttentionTrace& trace, const FeatureDump& features) {
    SelectionRun run;
    run.layers = resolve_layers(cfg, trace, features);

    const auto start = std::chrono::steady_clock::now();
    const auto q = token_importance(trace, run.layers.source_layers);
    const std::size_t k = retained_count(q.q.size(), run.layers.ratio, cfg.ratio_means_retained);
    if (cfg.method == SelectionMethod::Dpp) {
        const auto sim = similarity_matrix(features);
        if (!sim.zero_rows.empty()) spdlog::warn("{} feature rows are all zero", sim.zero_rows.size());
        const auto kernel = build_kernel(q, sim, cfg.jitter_rel);
        GreedyOptions opts;
        opts.threads = cfg.threads;
        run.selection = greedy_map(kernel, k, opts);
        if (run.selection.stopped_early) {
            spdlog::warn("greedy selection stopped early at {} of {} tokens", run.selection.k_selected, k);
        }
    } else {
        run.selection = topk_select(q.q, k);
    }
    run.selection_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    run.mask = build_mask(run.selection, trace.header(), run.layers.target_layers);
    return run;
}

json selection_json(const SelectionRun& run, const SelectConfig& cfg) {
    json j = to_json(run.selection);
    j["config_echo"] = {{"method", cfg.method == SelectionMethod::Dpp ? "dpp" : "topk"},
                        {"ratio", run.layers.ratio},
                        {"ratio_means_retained", cfg.ratio_means_retained},
                        {"source_layers", run.layers.source_layers},
                        {"feature_layer", run.layers.feature_layer},
                        {"target_layers", run.layers.target_layers},
                        {"layer_origin", run.layers.origin},
                        {"jitter_rel", cfg.jitter_rel},
                        {"profile", cfg.profile ? json(cfg.profile->model_id) : json(nullptr)},
                        {"lambda", cfg.phases.lambda},
                        {"baseline_frac", cfg.phases.baseline_fraction},
                        {"window_frac", cfg.phases.auto_window ? json("auto") : json(cfg.phases.window_fraction)}};
    return j;
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args);
}

int run(const std::vector<std::string>& args) {
    configure_logging();
    CLI::App app{"focusgate: attention phase detection, DPP token selection and hallucination metrics", "focusgate"};
    app.require_subcommand(1);

    std::string out = ".";
    bool strict = false;
    std::uint64_t seed = 0;
    PhaseFlags phase_flags;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--out", out, "output directory")->capture_default_str();
        cmd->add_option("--seed", seed, "random seed")->capture_default_str();
    };

    auto* phases = app.add_subcommand("phases", "detect diffusion / focus / rediffusion phases in a vision trace");
    std::string phase_trace;
    phases->add_option("trace", phase_trace, "vision attention trace (.pats)")->required();
    add_phase_flags(phases, phase_flags);
    phases->add_flag("--strict", strict, "treat row-sum deviations as errors");
    add_common(phases);

    auto* select = app.add_subcommand("select", "select patch tokens and write a focus-phase mask");
    std::string sel_trace, sel_features;
    SelectFlags sel;
    select->add_option("trace", sel_trace, "vision attention trace with full storage")->required();
    select->add_option("features", sel_features, "feature dump")->required();
    select->add_option("--method", sel.method, "selection method")
        ->check(CLI::IsMember({"dpp", "topk"}))
        ->capture_default_str();
    select->add_option("--ratio", sel.ratio, "masking ratio (suppressed fraction of patches)")
        ->check(CLI::Range(0.0, 1.0));
    select->add_flag("--ratio-means-retained", sel.ratio_means_retained, "read --ratio as the retained fraction");
    select->add_option("--source-layers", sel.source_layers, "layers averaged for importance, e.g. 7-11");
    select->add_option("--feature-layer", sel.feature_layer, "layer the feature dump was taken from");
    select->add_option("--target-layers", sel.target_layers, "layers the mask applies to, e.g. 12-18");
    select->add_option("--profile", sel.profile, "bundled model profile name or profile JSON path");
    select->add_option("--jitter", sel.jitter_rel, "relative diagonal jitter of the kernel")->capture_default_str();
    select->add_option("--threads", sel.threads, "workers for the greedy scan (0 = all cores)")->capture_default_str();
    add_phase_flags(select, phase_flags);
    select->add_flag("--strict", strict, "treat row-sum deviations as errors");
    add_common(select);

    auto* var = app.add_subcommand("var", "compare visual attention ratio between two conditions");
    std::vector<std::string> var_a, var_b;
    std::string label_a = "a", label_b = "b";
    var->add_option("--a", var_a, "decoder traces of condition a")->required()->expected(1, -1);
    var->add_option("--b", var_b, "decoder traces of condition b")->required()->expected(1, -1);
    var->add_option("--label-a", label_a, "name of condition a")->capture_default_str();
    var->add_option("--label-b", label_b, "name of condition b")->capture_default_str();
    var->add_flag("--strict", strict, "treat row-sum deviations as errors");
    add_common(var);

    auto* metrics = app.add_subcommand("metrics", "CHAIR, object F1 and AMBER generative metrics for captions");
    std::string captions, annotations, lexicon, suite = "amber";
    bool f1_pooled = false;
    metrics->add_option("captions", captions, "captions JSONL with image_id and caption")->required();
    metrics->add_option("annotations", annotations, "JSON mapping image_id to GT objects")->required();
    metrics->add_option("--lexicon", lexicon, "object lexicon JSON (default: bundled COCO-80)");
    metrics->add_option("--suite", suite, "metric suite")->check(CLI::IsMember({"chair", "amber"}))->capture_default_str();
    metrics->add_flag("--f1-pooled", f1_pooled, "pool F1 over the corpus instead of averaging per image");
    add_common(metrics);

    auto* synth = app.add_subcommand("synth", "generate synthetic traces with known ground truth");
    std::string spec_path;
    synth->add_option("spec", spec_path, "fixture spec JSON (object or array)")->required();
    add_common(synth);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error("Usage", e.what(), kUsage);
    }

    try {
        if (*phases) return cmd_phases(phase_trace, phase_flags, out, strict);
        if (*select) return cmd_select(sel_trace, sel_features, sel, phase_flags, out, strict);
        if (*var) return cmd_var(var_a, var_b, label_a, label_b, out, strict);
        if (*metrics) return cmd_metrics(captions, annotations, lexicon, suite, f1_pooled, out);
        if (*synth) return cmd_synth(spec_path, seed, out);
    } catch (const UsageError& e) {
        return report_error("Usage", e.what(), kUsage);
    } catch (const Error& e) {
        return report_error(std::string(to_string(e.code())), e.what(), exit_code_for(e.code()));
    } catch (const std::exception& e) {
        return report_error("Internal", e.what(), kInternal);
    }
    return report_error("Usage", "no subcommand given", kUsage);
}

}  // namespace focusgate::cli
