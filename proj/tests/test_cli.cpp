#include <doctest.h>

#include <fstream>
#include <iterator>
#include <set>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "focusgate/halluc_metrics.hpp"
#include "focusgate/synth_fixtures.hpp"
#include "test_support.hpp"

using namespace focusgate;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

int run_cli(std::vector<std::string> args) { return cli::run(args); }

json load_json(const fs::path& p) {
    std::ifstream in(p);
    return json::parse(in);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

fs::path phase_trace_file(const fs::path& dir) {
    PhaseFixtureSpec spec;
    spec.num_heads = 2;
    spec.num_tokens = 65;
    spec.seed = 5;
    const auto path = dir / "vision.pats";
    write_trace(path, gen_phase_trace(spec));
    return path;
}

// Importance favours cluster 0 strongly and cluster 1 mildly; everything else is flat.
AttentionTrace clustered_importance_trace(std::size_t n) {
    auto header = vision_header("clustered", {0}, 1, n, false);
    header.depth = 4;
    AttentionTrace t(header);
    std::vector<double> w(n);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        w[j] = j % 8 == 0 ? 10.0 : (j % 8 == 1 ? 5.0 : 1.0);
        sum += w[j];
    }
    for (std::size_t q = 0; q < n; ++q) {
        auto row = t.row(0, 0, q);
        for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<float>(w[j] / sum);
    }
    return t;
}

std::size_t clusters_hit(const json& selection) {
    std::set<std::size_t> seen;
    for (const auto& id : selection.at("selected")) seen.insert(id.get<std::size_t>() % 8);
    return seen.size();
}

fs::path decoder_file(const fs::path& dir, const std::string& name, double target, std::uint64_t seed) {
    DecoderFixtureSpec spec;
    spec.tokens = 10;
    spec.target_var = target;
    spec.seed = seed;
    const auto path = dir / (name + ".pats");
    write_trace(path, gen_decoder_trace(spec));
    return path;
}

const fs::path kData = FOCUSGATE_TEST_DATA;

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("layer lists accept ranges and singletons") {
    CHECK(cli::parse_layer_list("7-11") == std::vector<int>{7, 8, 9, 10, 11});
    CHECK(cli::parse_layer_list("3,7-9") == std::vector<int>{3, 7, 8, 9});
    CHECK(cli::parse_layer_list("12") == std::vector<int>{12});
    CHECK_THROWS_AS(cli::parse_layer_list("9-7"), cli::UsageError);
    CHECK_THROWS_AS(cli::parse_layer_list("a"), cli::UsageError);
    CHECK_THROWS_AS(cli::parse_layer_list("3,3"), cli::UsageError);
    CHECK_THROWS_AS(cli::parse_layer_list(""), cli::UsageError);
}

TEST_CASE("bundled profiles resolve by name") {
    const auto llava = cli::find_profile("llava-1.5");
    CHECK(llava.masking_ratio == doctest::Approx(0.60));
    CHECK(llava.source_layers == std::vector<int>{7, 8, 9, 10, 11});
    CHECK(llava.feature_layer == 11);
    CHECK(llava.target_layers == std::vector<int>{12, 13, 14, 15, 16, 17, 18});
    CHECK(cli::find_profile("shikra-7b").masking_ratio == doctest::Approx(0.35));
    CHECK(cli::find_profile("qwen2.5-vl").masking_ratio == doctest::Approx(0.65));
    CHECK(cli::find_profile("internvl-2.5").masking_ratio == doctest::Approx(0.40));
    CHECK_THROWS_AS(cli::find_profile("no-such-model"), cli::UsageError);
}

TEST_CASE("usage errors exit 64") {
    CHECK(run_cli({}) == cli::kUsage);
    CHECK(run_cli({"frobnicate"}) == cli::kUsage);
    const auto dir = testing::scratch_dir("cli_usage");
    const auto trace = phase_trace_file(dir);
    CHECK(run_cli({"phases", trace.string(), "--no-such-flag"}) == cli::kUsage);
    CHECK(run_cli({"phases", trace.string(), "--window-frac", "wide"}) == cli::kUsage);
    CHECK(run_cli({"phases", trace.string(), "--window-frac", "1.5"}) == cli::kUsage);
    CHECK(run_cli({"phases"}) == cli::kUsage);
}

TEST_CASE("phases writes the profile and the detected window") {
    const auto dir = testing::scratch_dir("cli_phases");
    const auto trace = phase_trace_file(dir);
    REQUIRE(run_cli({"phases", trace.string(), "--out", (dir / "out").string()}) == cli::kOk);
    REQUIRE(fs::exists(dir / "out" / "profile.csv"));
    const auto j = load_json(dir / "out" / "phases.json");
    CHECK(j["status"] == "focus_detected");
    CHECK(j["l_start"] == 11);
    CHECK(j["l_end"] == 17);
    CHECK(j["window"] == 7);

    // K = round(0.40 * 24) = 10 moves the end to layer 20.
    REQUIRE(run_cli({"phases", trace.string(), "--window-frac", "0.40", "--out", (dir / "wide").string()}) ==
            cli::kOk);
    const auto wide = load_json(dir / "wide" / "phases.json");
    CHECK(wide["l_start"] == 11);
    CHECK(wide["l_end"] == 20);

    std::ifstream csv(dir / "out" / "profile.csv");
    std::size_t lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    CHECK(lines == 25);
}

TEST_CASE("flat traces exit 2 with a diagnostic") {
    const auto dir = testing::scratch_dir("cli_nofocus");
    auto header = vision_header("flat", {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}, 2, 17, true);
    AttentionTrace t(header);
    for (float& v : t.values()) v = 1.0f / 17.0f;
    write_trace(dir / "flat.pats", t);
    CHECK(run_cli({"phases", (dir / "flat.pats").string(), "--out", dir.string()}) == cli::kNoFocus);
    CHECK(load_json(dir / "phases.json")["status"] == "NoFocusDetected");
}

TEST_CASE("too few layers and corrupt files are rejected") {
    const auto dir = testing::scratch_dir("cli_bad_inputs");
    const auto shallow = dir / "shallow.pats";
    write_trace(shallow, testing::random_full_trace({0, 1, 2, 3, 4, 5}, 1, 10, true, 3));
    CHECK(run_cli({"phases", shallow.string(), "--out", dir.string()}) == cli::kUsage);

    write_file(dir / "junk.pats", "NOPE this is not a trace");
    CHECK(run_cli({"phases", (dir / "junk.pats").string(), "--out", dir.string()}) == cli::kDataFormat);
    CHECK(run_cli({"phases", (dir / "missing.pats").string(), "--out", dir.string()}) == cli::kDataFormat);

    // A well-formed decoder trace passed where a vision trace is expected is a bad argument.
    const auto decoder = decoder_file(dir, "dec", 0.5, 1);
    CHECK(run_cli({"phases", decoder.string(), "--out", dir.string()}) == cli::kUsage);
}

TEST_CASE("select with the llava profile keeps 230 patches plus CLS") {
    const auto dir = testing::scratch_dir("cli_select_profile");
    auto header = vision_header("llava-1.5", {7, 8, 9, 10, 11}, 2, 577, true);
    header.depth = 24;
    AttentionTrace trace(header);
    std::mt19937_64 rng(17);
    testing::fill_stochastic(trace.values(), 577, rng);
    write_trace(dir / "vision.pats", trace);
    FeatureFixtureSpec fspec;
    fspec.dim = 16;
    fspec.clusters = 6;
    fspec.noise_std = 0.3;
    fspec.seed = 4;
    write_trace(dir / "features.pats", gen_feature_dump(fspec).dump);

    const auto out = dir / "out";
    REQUIRE(run_cli({"select", (dir / "vision.pats").string(), (dir / "features.pats").string(), "--profile",
                     "llava-1.5", "--out", out.string()}) == cli::kOk);
    const auto mask = load_json(out / "mask.json");
    CHECK(mask["retained"].size() == 231);
    CHECK(mask["retained"][0] == 0);
    CHECK(mask["target_layers"] == json::array({12, 13, 14, 15, 16, 17, 18}));
    CHECK(mask["n_total"] == 577);
    const auto sel = load_json(out / "selection.json");
    CHECK(sel["K_selected"] == 230);
    CHECK(sel["config_echo"]["layer_origin"]["source_layers"] == "profile");
    CHECK(sel["config_echo"]["ratio"] == doctest::Approx(0.60));

    // A flag overrides the profile.
    REQUIRE(run_cli({"select", (dir / "vision.pats").string(), (dir / "features.pats").string(), "--profile",
                     "llava-1.5", "--ratio", "0.35", "--out", out.string()}) == cli::kOk);
    CHECK(load_json(out / "selection.json")["K_selected"] == 374);

    // Runs are reproducible byte for byte.
    const std::string first = slurp(out / "selection.json");
    REQUIRE(run_cli({"select", (dir / "vision.pats").string(), (dir / "features.pats").string(), "--profile",
                     "llava-1.5", "--ratio", "0.35", "--threads", "3", "--out", out.string()}) == cli::kOk);
    CHECK(slurp(out / "selection.json") == first);

    // The feature dump comes from layer 11; asking for another layer is an error.
    CHECK(run_cli({"select", (dir / "vision.pats").string(), (dir / "features.pats").string(), "--profile",
                   "llava-1.5", "--feature-layer", "10", "--out", out.string()}) == cli::kUsage);
    // Without a ratio or profile there is nothing to size the selection.
    CHECK(run_cli({"select", (dir / "vision.pats").string(), (dir / "features.pats").string(), "--source-layers",
                   "7-11", "--target-layers", "12-18", "--out", out.string()}) == cli::kUsage);
    // Target layers beyond the encoder depth.
    CHECK(run_cli({"select", (dir / "vision.pats").string(), (dir / "features.pats").string(), "--profile",
                   "llava-1.5", "--target-layers", "30", "--out", out.string()}) == cli::kUsage);
    // Source layers missing from the trace.
    CHECK(run_cli({"select", (dir / "vision.pats").string(), (dir / "features.pats").string(), "--profile",
                   "llava-1.5", "--source-layers", "1-3", "--out", out.string()}) == cli::kUsage);
}

TEST_CASE("select falls back to detected phases for layers") {
    const auto dir = testing::scratch_dir("cli_select_phases");
    PhaseFixtureSpec spec;
    spec.num_heads = 2;
    spec.num_tokens = 65;
    spec.storage = Storage::Full;
    spec.seed = 8;
    write_trace(dir / "vision.pats", gen_phase_trace(spec));
    FeatureFixtureSpec fspec;
    fspec.num_patches = 64;
    fspec.dim = 8;
    fspec.seed = 8;
    write_trace(dir / "features.pats", gen_feature_dump(fspec).dump);

    REQUIRE(run_cli({"select", (dir / "vision.pats").string(), (dir / "features.pats").string(), "--ratio", "0.5",
                     "--out", dir.string()}) == cli::kOk);
    const auto echo = load_json(dir / "selection.json")["config_echo"];
    CHECK(echo["source_layers"] == json::array({6, 7, 8, 9, 10}));
    CHECK(echo["target_layers"] == json::array({11, 12, 13, 14, 15, 16, 17}));
    CHECK(echo["layer_origin"]["source_layers"] == "phases");
    CHECK(echo["layer_origin"]["feature_layer"] == "features");

    // Mismatched patch counts between trace and features.
    FeatureFixtureSpec small = fspec;
    small.num_patches = 32;
    write_trace(dir / "small.pats", gen_feature_dump(small).dump);
    CHECK(run_cli({"select", (dir / "vision.pats").string(), (dir / "small.pats").string(), "--ratio", "0.5",
                   "--out", dir.string()}) == cli::kDataFormat);
}

TEST_CASE("dpp covers more clusters than top-k") {
    const auto dir = testing::scratch_dir("cli_dpp_vs_topk");
    write_trace(dir / "vision.pats", clustered_importance_trace(64));
    FeatureFixtureSpec fspec;
    fspec.num_patches = 64;
    fspec.dim = 32;
    fspec.clusters = 8;
    fspec.noise_std = 0.05;
    fspec.has_cls = false;
    fspec.source_layer = 0;
    fspec.seed = 21;
    write_trace(dir / "features.pats", gen_feature_dump(fspec).dump);

    const std::vector<std::string> common{(dir / "vision.pats").string(), (dir / "features.pats").string(),
                                          "--ratio", "0.75", "--source-layers", "0", "--target-layers", "1"};
    auto with = [&](std::vector<std::string> head, const std::string& out) {
        head.insert(head.end(), common.begin(), common.end());
        head.insert(head.end(), {"--out", (dir / out).string()});
        return head;
    };
    REQUIRE(run_cli(with({"select", "--method", "topk"}, "topk")) == cli::kOk);
    REQUIRE(run_cli(with({"select", "--method", "dpp"}, "dpp")) == cli::kOk);
    const auto topk = load_json(dir / "topk" / "selection.json");
    const auto dpp = load_json(dir / "dpp" / "selection.json");
    CHECK(topk["K_selected"] == 16);
    CHECK(dpp["K_selected"] == 16);
    CHECK(clusters_hit(topk) == 2);
    CHECK(clusters_hit(dpp) == 8);
    CHECK(run_cli(with({"select", "--method", "random"}, "bad")) == cli::kUsage);
}

TEST_CASE("var compares two conditions") {
    const auto dir = testing::scratch_dir("cli_var");
    std::vector<std::string> a, b;
    for (int i = 0; i < 8; ++i) {
        a.push_back(decoder_file(dir, "a" + std::to_string(i), 0.55, 100 + i).string());
        b.push_back(decoder_file(dir, "b" + std::to_string(i), 0.45, 200 + i).string());
    }
    std::vector<std::string> args{"var", "--a"};
    args.insert(args.end(), a.begin(), a.end());
    args.push_back("--b");
    args.insert(args.end(), b.begin(), b.end());
    args.insert(args.end(), {"--out", (dir / "out").string()});
    REQUIRE(run_cli(args) == cli::kOk);
    const auto report = load_json(dir / "out" / "var_report.json");
    CHECK(report["direction"] == "a>b");
    CHECK(report["p_value"].get<double>() < 1e-3);
    CHECK(report["condition_a"]["image_means"].size() == 8);
    CHECK(fs::exists(dir / "out" / "grid_a.csv"));
    CHECK(fs::exists(dir / "out" / "grid_b.csv"));

    std::vector<std::string> same{"var", "--a"};
    same.insert(same.end(), a.begin(), a.end());
    same.push_back("--b");
    same.insert(same.end(), a.begin(), a.end());
    same.insert(same.end(), {"--out", (dir / "same").string()});
    REQUIRE(run_cli(same) == cli::kOk);
    const auto flat = load_json(dir / "same" / "var_report.json");
    CHECK(flat["p_value"] == 1.0);
    CHECK(flat["direction"] == "a=b");

    CHECK(run_cli({"var", "--a", a[0], "--b", b[0], b[1], "--out", dir.string()}) == cli::kUsage);
}

TEST_CASE("metrics reproduces the golden corpus") {
    const auto dir = testing::scratch_dir("cli_metrics");
    REQUIRE(run_cli({"metrics", (kData / "golden_captions.jsonl").string(),
                     (kData / "golden_annotations.json").string(), "--lexicon",
                     (kData / "golden_lexicon.json").string(), "--out", dir.string()}) == cli::kOk);
    const auto m = load_json(dir / "metrics.json");
    CHECK(m["chair_s"] == 8.0 / 17.0);
    CHECK(m["chair_i"] == 9.0 / 23.0);
    CHECK(m["f1"] == 97.0 / 150.0);
    CHECK(m["cover"] == 8.0 / 9.0);
    CHECK(m["hal"] == 3.0 / 5.0);
    CHECK(m["cog"] == 5.0 / 23.0);
    CHECK(m["cog_formula"] == "reconstructed-v1");

    std::ifstream csv(dir / "per_image.csv");
    std::size_t lines = 0;
    for (std::string line; std::getline(csv, line);) ++lines;
    CHECK(lines == 11);

    REQUIRE(run_cli({"metrics", (kData / "golden_captions.jsonl").string(),
                     (kData / "golden_annotations.json").string(), "--lexicon",
                     (kData / "golden_lexicon.json").string(), "--suite", "chair", "--f1-pooled", "--out",
                     (dir / "pooled").string()}) == cli::kOk);
    const auto pooled = load_json(dir / "pooled" / "metrics.json");
    CHECK(pooled["f1"] == 28.0 / 39.0);
    CHECK_FALSE(pooled.contains("cover"));
}

TEST_CASE("metrics input errors") {
    const auto dir = testing::scratch_dir("cli_metrics_errors");
    write_file(dir / "empty.jsonl", "");
    CHECK(run_cli({"metrics", (dir / "empty.jsonl").string(), (kData / "golden_annotations.json").string(),
                   "--out", dir.string()}) == cli::kUsage);
    write_file(dir / "stray.jsonl", "{\"image_id\": 999, \"caption\": \"A dog.\"}\n");
    CHECK(run_cli({"metrics", (dir / "stray.jsonl").string(), (kData / "golden_annotations.json").string(),
                   "--out", dir.string()}) == cli::kDataFormat);
    CHECK(run_cli({"metrics", (kData / "golden_captions.jsonl").string(),
                   (kData / "golden_annotations.json").string(), "--suite", "pope", "--out", dir.string()}) ==
          cli::kUsage);
}

TEST_CASE("the bundled lexicon handles common synonyms") {
    const auto lex = ObjectLexicon::load(fs::path(FOCUSGATE_TEST_DATA) / ".." / ".." / "data" / "lexicon" /
                                         "coco80.json");
    CHECK(lex.objects().size() == 80);
    CHECK(extract_objects("Two men ride bikes past a fire hydrant.", lex) ==
          std::vector<std::string>{"person", "bicycle", "fire hydrant"});
}

TEST_CASE("synth is deterministic and validates specs") {
    const auto dir = testing::scratch_dir("cli_synth");
    write_file(dir / "one.json", R"({"type": "phase", "L": 16, "H": 2, "N_total": 33, "boundary": 6})");
    REQUIRE(run_cli({"synth", (dir / "one.json").string(), "--seed", "9", "--out", (dir / "x").string()}) ==
            cli::kOk);
    REQUIRE(run_cli({"synth", (dir / "one.json").string(), "--seed", "9", "--out", (dir / "y").string()}) ==
            cli::kOk);
    CHECK(slurp(dir / "x" / "trace.pats") == slurp(dir / "y" / "trace.pats"));
    const auto side = load_json(dir / "x" / "trace.json");
    CHECK(side["ground_truth"]["l_start"] == 6);
    CHECK(side["ground_truth"]["seed"] == 9);
    CHECK(read_attention_trace(dir / "x" / "trace.pats").header().num_layers == 16);

    REQUIRE(run_cli({"synth", (dir / "one.json").string(), "--seed", "10", "--out", (dir / "z").string()}) ==
            cli::kOk);
    CHECK(slurp(dir / "x" / "trace.pats") != slurp(dir / "z" / "trace.pats"));

    write_file(dir / "bad.json", R"({"type": "phase", "L": 16, "boundary": 20})");
    CHECK(run_cli({"synth", (dir / "bad.json").string(), "--out", dir.string()}) == cli::kUsage);
    write_file(dir / "kind.json", R"({"type": "audio"})");
    CHECK(run_cli({"synth", (dir / "kind.json").string(), "--out", dir.string()}) == cli::kUsage);
    write_file(dir / "broken.json", "{\"type\": ");
    CHECK(run_cli({"synth", (dir / "broken.json").string(), "--out", dir.string()}) == cli::kUsage);
}

TEST_CASE("synth writes a batch of fixtures") {
    const auto dir = testing::scratch_dir("cli_synth_batch");
    json specs = json::array();
    for (int i = 0; i < 100; ++i) {
        specs.push_back({{"type", "phase"}, {"L", 12}, {"H", 1}, {"N_total", 10}, {"boundary", 4 + i % 4}, {"window", 3}});
    }
    specs[3] = {{"type", "features"}, {"N", 9}, {"C", 4}};
    specs[4] = {{"type", "decoder"}, {"tokens", 3}};
    write_file(dir / "batch.json", specs.dump());
    REQUIRE(run_cli({"synth", (dir / "batch.json").string(), "--seed", "1", "--out", (dir / "out").string()}) ==
            cli::kOk);
    std::size_t pats = 0;
    for (const auto& entry : fs::directory_iterator(dir / "out")) pats += entry.path().extension() == ".pats";
    CHECK(pats == 100);
    CHECK(std::holds_alternative<FeatureDump>(read_trace(dir / "out" / "trace_003.pats").trace));
    CHECK(std::holds_alternative<DecoderTrace>(read_trace(dir / "out" / "trace_004.pats").trace));
    CHECK(load_json(dir / "out" / "trace_099.json")["ground_truth"]["seed"] == 100);
}

}  // TEST_SUITE
