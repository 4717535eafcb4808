#pragma once

// Caption-level object hallucination metrics: CHAIR_S / CHAIR_I, object F1,
// and the AMBER generative metrics (Cover, Hal, Cog) over an object lexicon.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace focusgate {

class ObjectLexicon {
public:
    ObjectLexicon() = default;

    // {objects: [...], surface_forms: {surface: canonical}, cog_associations: {canonical: [...]}}
    static ObjectLexicon from_json(const nlohmann::json& j);
    static ObjectLexicon load(const std::filesystem::path& path);

    const std::set<std::string>& objects() const { return objects_; }
    bool contains(const std::string& canonical) const { return objects_.count(canonical) > 0; }
    // Canonical object for a lowercase, single-spaced phrase.
    std::optional<std::string> lookup(const std::string& phrase) const;
    // True when `hallucinated` is a plausible confusion for any of `gt`.
    bool is_cog_associated(const std::string& hallucinated, const std::set<std::string>& gt) const;
    std::size_t max_phrase_words() const { return max_words_; }

private:
    void add_surface(const std::string& surface, const std::string& canonical);

    std::set<std::string> objects_;
    std::unordered_map<std::string, std::string> surface_;
    std::map<std::string, std::set<std::string>> cog_;
    std::size_t max_words_ = 1;
};

// Canonical objects in order of mention (repeats kept). Longest match over
// lowercase words; a trailing -es or -s is folded when the exact form misses.
std::vector<std::string> extract_objects(const std::string& text, const ObjectLexicon& lexicon);

// Split on '.', '!' and '?'; whitespace-only pieces are dropped.
std::vector<std::string> split_sentences(const std::string& text);

struct CaptionRecord {
    std::string image_id;
    std::string generated_text;
    std::vector<std::string> sentences;
    std::set<std::string> gt_objects;
};

// Throws InvalidArgument if a GT object is not a canonical lexicon object.
CaptionRecord make_record(std::string image_id, std::string text, std::set<std::string> gt_objects,
                          const ObjectLexicon& lexicon);

struct ImageMetrics {
    std::string image_id;
    std::size_t sentences = 0;
    std::size_t hallucinated_sentences = 0;
    std::set<std::string> mentioned;
    std::set<std::string> hallucinated;
    std::size_t gt_count = 0;
    std::size_t correct = 0;  // |mentioned ∩ GT|
    std::size_t cog_hallucinated = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::optional<double> cover;  // empty when GT is empty
    bool hal = false;
};

enum class F1Mode { PerImage, Pooled };

struct MetricsReport {
    std::size_t images = 0;
    // CHAIR, pooled over the corpus.
    std::size_t sentences = 0;
    std::size_t hallucinated_sentences = 0;
    std::size_t mentioned = 0;
    std::size_t hallucinated = 0;
    double chair_s = 0.0;
    double chair_i = 0.0;
    // Object F1.
    F1Mode f1_mode = F1Mode::PerImage;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    // AMBER generative.
    std::size_t cover_images = 0;
    double cover_sum = 0.0;
    double cover = 0.0;
    std::size_t hal_images = 0;
    double hal = 0.0;
    std::size_t cog_hallucinated = 0;
    double cog = 0.0;

    std::vector<std::string> flags;
    std::vector<ImageMetrics> per_image;
};

ImageMetrics image_metrics(const CaptionRecord& record, const ObjectLexicon& lexicon);

MetricsReport chair(const std::vector<CaptionRecord>& records, const ObjectLexicon& lexicon);
MetricsReport object_f1(const std::vector<CaptionRecord>& records, const ObjectLexicon& lexicon,
                        F1Mode mode = F1Mode::PerImage);
MetricsReport amber_generative(const std::vector<CaptionRecord>& records, const ObjectLexicon& lexicon);
// Every metric in one pass.
MetricsReport evaluate_captions(const std::vector<CaptionRecord>& records, const ObjectLexicon& lexicon,
                                F1Mode mode = F1Mode::PerImage);

struct Caption {
    std::string image_id;
    std::string text;
};

// JSONL, one {image_id, caption} object per line; image ids may be numbers.
std::vector<Caption> load_captions(const std::filesystem::path& path);
// {image_id: [gt objects]}
std::map<std::string, std::set<std::string>> load_annotations(const std::filesystem::path& path);
// Throws UnknownImageId naming every caption without annotations.
std::vector<CaptionRecord> build_records(const std::vector<Caption>& captions,
                                         const std::map<std::string, std::set<std::string>>& annotations,
                                         const ObjectLexicon& lexicon);

nlohmann::json to_json(const MetricsReport& report, const std::string& suite = "all");
std::string per_image_csv(const MetricsReport& report);

}  // namespace focusgate
