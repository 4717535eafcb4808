#include <doctest.h>

#include <fstream>

#include "focusgate/error.hpp"
#include "focusgate/halluc_metrics.hpp"
#include "test_support.hpp"

using namespace focusgate;

namespace {

const std::filesystem::path kData = FOCUSGATE_TEST_DATA;

ObjectLexicon small_lexicon() {
    return ObjectLexicon::from_json(nlohmann::json::parse(R"({
        "objects": ["dog", "car", "cat", "hot_dog", "bird", "bus"],
        "surface_forms": {"puppy": "dog"},
        "cog_associations": {"dog": ["cat"]}
    })"));
}

double frac(const nlohmann::json& pair) { return pair[0].get<double>() / pair[1].get<double>(); }

std::vector<CaptionRecord> golden_records() {
    const auto lex = ObjectLexicon::load(kData / "golden_lexicon.json");
    return build_records(load_captions(kData / "golden_captions.jsonl"), load_annotations(kData / "golden_annotations.json"),
                         lex);
}

}  // namespace

TEST_SUITE("halluc_metrics") {

TEST_CASE("object extraction") {
    const auto lex = small_lexicon();
    CHECK(extract_objects("two dogs near a car", lex) == std::vector<std::string>{"dog", "car"});
    CHECK(extract_objects("A HOT DOG stand", lex) == std::vector<std::string>{"hot_dog"});
    CHECK(extract_objects("", lex).empty());
    CHECK(extract_objects("Buses and a puppy", lex) == std::vector<std::string>{"bus", "dog"});
    CHECK(extract_objects("catalog of doghouses", lex).empty());
    CHECK(extract_objects("dog, dog; DOG", lex) == std::vector<std::string>{"dog", "dog", "dog"});
}

TEST_CASE("sentence splitting") {
    CHECK(split_sentences("One. Two! Three? ") == std::vector<std::string>{"One", "Two", "Three"});
    CHECK(split_sentences("...").empty());
    CHECK(split_sentences("no terminal") == std::vector<std::string>{"no terminal"});
}

TEST_CASE("lexicon validation") {
    CHECK_THROWS_AS(ObjectLexicon::from_json({{"objects", {"dog"}}, {"surface_forms", {{"pup", "wolf"}}}}), Error);
    CHECK_THROWS_AS(ObjectLexicon::from_json({{"objects", {"dog"}}, {"cog_associations", {{"dog", {"cat"}}}}}), Error);
    CHECK_THROWS_AS(make_record("1", "a dog", {"unicorn"}, small_lexicon()), Error);
}

TEST_CASE("CHAIR examples") {
    const auto lex = small_lexicon();
    const auto r = chair({make_record("1", "A dog sits. A car drives by.", {"dog"}, lex)}, lex);
    CHECK(r.chair_s == 0.5);

    const auto ri = chair({make_record("1", "A dog, a cat and a car.", {"dog", "cat"}, lex)}, lex);
    CHECK(ri.chair_i == 1.0 / 3.0);
}

TEST_CASE("F1 examples") {
    const auto lex = small_lexicon();
    const auto a = object_f1({make_record("1", "A dog, a cat and a car.", {"dog", "cat", "bird"}, lex)}, lex);
    CHECK(a.precision == 2.0 / 3.0);
    CHECK(a.recall == 2.0 / 3.0);
    CHECK(a.f1 == 2.0 / 3.0);
    CHECK(object_f1({make_record("1", "A dog and a cat.", {"dog", "cat"}, lex)}, lex).f1 == 1.0);
    CHECK(object_f1({make_record("1", "Nothing here.", {"dog"}, lex)}, lex).f1 == 0.0);
}

TEST_CASE("AMBER examples") {
    const auto lex = small_lexicon();
    const auto exact = amber_generative(
        {make_record("1", "A dog and a car.", {"dog", "car"}, lex), make_record("2", "A bird.", {"bird"}, lex)}, lex);
    CHECK(exact.cover == 1.0);
    CHECK(exact.hal == 0.0);
    CHECK(exact.cog == 0.0);
    const auto half = amber_generative(
        {make_record("1", "A dog and a cat.", {"dog"}, lex), make_record("2", "A bird.", {"bird"}, lex)}, lex);
    CHECK(half.hal == 0.5);
    CHECK(half.cog == 1.0 / 3.0);
}

TEST_CASE("empty GT is excluded from Cover and flagged") {
    const auto lex = small_lexicon();
    const auto r = amber_generative(
        {make_record("1", "A dog.", {"dog"}, lex), make_record("2", "An empty room.", {}, lex)}, lex);
    CHECK(r.cover == 1.0);
    CHECK(r.cover_images == 1);
    REQUIRE(r.flags.size() == 1);
    CHECK(r.flags[0] == "cover_excluded_empty_gt:1");
}

TEST_CASE("no mentioned objects is flagged") {
    const auto lex = small_lexicon();
    const auto r = chair({make_record("1", "Nothing.", {"dog"}, lex)}, lex);
    CHECK(r.chair_i == 0.0);
    CHECK(r.flags == std::vector<std::string>{"zero_mentioned_objects"});
    CHECK_THROWS_AS(chair({}, lex), Error);
}

TEST_CASE("golden corpus") {
    const auto lex = ObjectLexicon::load(kData / "golden_lexicon.json");
    const auto records = golden_records();
    std::ifstream in(kData / "golden_expected.json");
    const auto want = nlohmann::json::parse(in);

    const auto r = evaluate_captions(records, lex);
    CHECK(r.images == 10);
    CHECK(r.sentences == want["sentences"]);
    CHECK(r.hallucinated_sentences == want["hallucinated_sentences"]);
    CHECK(r.mentioned == want["mentioned_objects"]);
    CHECK(r.hallucinated == want["hallucinated_objects"]);
    CHECK(r.cog_hallucinated == want["cog_hallucinated_objects"]);
    CHECK(r.cover_images == want["cover_images"]);
    CHECK(r.hal_images == want["hal_images"]);
    CHECK(r.chair_s == frac(want["chair_s"]));
    CHECK(r.chair_i == frac(want["chair_i"]));
    CHECK(r.precision == frac(want["precision"]));
    CHECK(r.recall == frac(want["recall"]));
    CHECK(r.f1 == frac(want["f1"]));
    CHECK(r.cover == frac(want["cover"]));
    CHECK(r.hal == frac(want["hal"]));
    CHECK(r.cog == frac(want["cog"]));

    const auto pooled = evaluate_captions(records, lex, F1Mode::Pooled);
    CHECK(pooled.precision == frac(want["pooled_precision"]));
    CHECK(pooled.recall == frac(want["pooled_recall"]));
    CHECK(pooled.f1 == frac(want["pooled_f1"]));
}

TEST_CASE("golden per-image rows") {
    const auto lex = ObjectLexicon::load(kData / "golden_lexicon.json");
    const auto r = evaluate_captions(golden_records(), lex);
    const auto& two = r.per_image[1];
    CHECK(two.mentioned == std::set<std::string>{"chair", "fork", "knife", "table"});
    CHECK(two.hallucinated == std::set<std::string>{"chair", "knife"});
    CHECK(two.cog_hallucinated == 2);
    const auto& seven = r.per_image[6];
    CHECK(seven.sentences == 3);
    CHECK(seven.hallucinated == std::set<std::string>{"bench", "bus"});
    CHECK_FALSE(r.per_image[5].cover.has_value());
    const auto csv = per_image_csv(r);
    CHECK(csv.find("\n6,1,0,0,0,0,0,0,0,0,,0,0\n") != std::string::npos);
}

TEST_CASE("captions equal to the GT lists are perfect") {
    const auto lex = ObjectLexicon::load(kData / "golden_lexicon.json");
    std::vector<CaptionRecord> records;
    for (const auto& [id, gt] : load_annotations(kData / "golden_annotations.json")) {
        if (gt.empty()) continue;
        std::string text;
        for (const auto& g : gt) text += (text.empty() ? "" : ", ") + g;
        records.push_back(make_record(id, text + ".", gt, lex));
    }
    const auto r = evaluate_captions(records, lex);
    CHECK(r.chair_s == 0.0);
    CHECK(r.chair_i == 0.0);
    CHECK(r.f1 == 1.0);
    CHECK(r.cover == 1.0);
    CHECK(r.hal == 0.0);
}

TEST_CASE("CHAIR ignores record and sentence order") {
    const auto lex = ObjectLexicon::load(kData / "golden_lexicon.json");
    auto records = golden_records();
    const auto base = chair(records, lex);
    std::reverse(records.begin(), records.end());
    for (auto& rec : records) std::reverse(rec.sentences.begin(), rec.sentences.end());
    const auto flipped = chair(records, lex);
    CHECK(flipped.chair_s == base.chair_s);
    CHECK(flipped.chair_i == base.chair_i);
}

TEST_CASE("adding a GT-only caption never raises the hallucination count") {
    const auto lex = ObjectLexicon::load(kData / "golden_lexicon.json");
    auto records = golden_records();
    const auto before = chair(records, lex);
    records.push_back(make_record("extra", "A dog and a man.", {"dog", "person"}, lex));
    const auto after = chair(records, lex);
    CHECK(after.hallucinated == before.hallucinated);
    CHECK(after.chair_i <= before.chair_i);
}

TEST_CASE("unknown image ids are listed") {
    const auto lex = small_lexicon();
    try {
        build_records({{"1", "a dog"}, {"7", "a cat"}, {"9", "x"}}, {{"1", {"dog"}}}, lex);
        FAIL("expected UnknownImageId");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownImageId);
        CHECK(std::string(e.what()).find("7, 9") != std::string::npos);
    }
}

TEST_CASE("report json") {
    const auto lex = ObjectLexicon::load(kData / "golden_lexicon.json");
    const auto r = evaluate_captions(golden_records(), lex);
    const auto amber = to_json(r, "amber");
    CHECK(amber["cog_formula"] == "reconstructed-v1");
    CHECK(amber["counts"]["hal_images"] == 6);
    const auto ch = to_json(r, "chair");
    CHECK_FALSE(ch.contains("cover"));
    CHECK(ch["f1_mode"] == "per_image");
}

}  // TEST_SUITE
