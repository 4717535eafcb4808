#include "focusgate/halluc_metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <boost/multiprecision/cpp_int.hpp>

#include "focusgate/error.hpp"

namespace focusgate {

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); }

bool is_word_char(unsigned char c) { return std::isalnum(c) || c == '\''; }

std::vector<std::string> words_of(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : text) {
        if (is_word_char(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            words.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

// Lowercase, underscores and punctuation to spaces, single-spaced.
std::string normalize_phrase(const std::string& s) {
    std::string out;
    for (const std::string& w : words_of(s)) {
        // '_' is not a word character, so "hot_dog" arrives here as two words.
        if (!out.empty()) out.push_back(' ');
        out += w;
    }
    return out;
}

std::size_t word_count(const std::string& phrase) {
    return static_cast<std::size_t>(std::count(phrase.begin(), phrase.end(), ' ')) + 1;
}

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

// Per-image means are accumulated exactly so corpus values are the correctly
// rounded quotient of two integers.
using Rational = boost::multiprecision::cpp_rational;

Rational rational(std::size_t num, std::size_t den) {
    return den == 0 ? Rational(0) : Rational(static_cast<long long>(num), static_cast<long long>(den));
}

double to_double(const Rational& q) {
    return boost::multiprecision::numerator(q).convert_to<double>() /
           boost::multiprecision::denominator(q).convert_to<double>();
}

std::string image_id_of(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    invalid("image_id must be a string or an integer");
}

}  // namespace

// --- lexicon -----------------------------------------------------------------

void ObjectLexicon::add_surface(const std::string& surface, const std::string& canonical) {
    const std::string phrase = normalize_phrase(surface);
    if (phrase.empty()) invalid("empty surface form for '" + canonical + "'");
    surface_[phrase] = canonical;
    max_words_ = std::max(max_words_, word_count(phrase));
}

ObjectLexicon ObjectLexicon::from_json(const nlohmann::json& j) {
    try {
        ObjectLexicon lex;
        for (const auto& o : j.at("objects")) lex.objects_.insert(o.get<std::string>());
        for (const std::string& o : lex.objects_) lex.add_surface(o, o);
        if (j.contains("surface_forms")) {
            for (const auto& [surface, canonical] : j.at("surface_forms").items()) {
                const auto c = canonical.get<std::string>();
                if (!lex.contains(c)) invalid("surface form '" + surface + "' maps to unknown object '" + c + "'");
                lex.add_surface(surface, c);
            }
        }
        if (j.contains("cog_associations")) {
            for (const auto& [obj, targets] : j.at("cog_associations").items()) {
                if (!lex.contains(obj)) invalid("cog association for unknown object '" + obj + "'");
                for (const auto& t : targets) {
                    const auto target = t.get<std::string>();
                    if (!lex.contains(target)) invalid("cog target '" + target + "' is not a lexicon object");
                    lex.cog_[obj].insert(target);
                }
            }
        }
        return lex;
    } catch (const nlohmann::json::exception& e) {
        invalid(std::string("malformed lexicon: ") + e.what());
    }
}

ObjectLexicon ObjectLexicon::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open lexicon " + path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        invalid(path.string() + ": " + e.what());
    }
}

std::optional<std::string> ObjectLexicon::lookup(const std::string& phrase) const {
    auto it = surface_.find(phrase);
    if (it == surface_.end()) return std::nullopt;
    return it->second;
}

bool ObjectLexicon::is_cog_associated(const std::string& hallucinated, const std::set<std::string>& gt) const {
    for (const std::string& g : gt) {
        auto it = cog_.find(g);
        if (it != cog_.end() && it->second.count(hallucinated)) return true;
    }
    return false;
}

// --- extraction --------------------------------------------------------------

std::vector<std::string> extract_objects(const std::string& text, const ObjectLexicon& lexicon) {
    const auto words = words_of(text);
    std::vector<std::string> found;
    auto match = [&](std::size_t begin, std::size_t len) -> std::optional<std::string> {
        std::string phrase;
        for (std::size_t k = 0; k < len; ++k) {
            if (k) phrase.push_back(' ');
            phrase += words[begin + k];
        }
        if (auto hit = lexicon.lookup(phrase)) return hit;
        const std::string& last = words[begin + len - 1];
        for (std::size_t strip : {2u, 1u}) {
            const std::string_view suffix = strip == 2 ? "es" : "s";
            if (last.size() > strip && last.ends_with(suffix)) {
                if (auto hit = lexicon.lookup(phrase.substr(0, phrase.size() - strip))) return hit;
            }
        }
        return std::nullopt;
    };
    std::size_t i = 0;
    while (i < words.size()) {
        bool matched = false;
        for (std::size_t len = std::min(lexicon.max_phrase_words(), words.size() - i); len >= 1; --len) {
            if (auto hit = match(i, len)) {
                found.push_back(*hit);
                i += len;
                matched = true;
                break;
            }
        }
        if (!matched) ++i;
    }
    return found;
}

std::vector<std::string> split_sentences(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        const auto first = cur.find_first_not_of(" \t\r\n");
        if (first != std::string::npos) {
            const auto last = cur.find_last_not_of(" \t\r\n");
            out.push_back(cur.substr(first, last - first + 1));
        }
        cur.clear();
    };
    for (char c : text) {
        if (c == '.' || c == '!' || c == '?') {
            flush();
        } else {
            cur.push_back(c);
        }
    }
    flush();
    return out;
}

CaptionRecord make_record(std::string image_id, std::string text, std::set<std::string> gt_objects,
                          const ObjectLexicon& lexicon) {
    for (const std::string& g : gt_objects) {
        if (!lexicon.contains(g)) invalid("image " + image_id + ": GT object '" + g + "' is not in the lexicon");
    }
    CaptionRecord r;
    r.image_id = std::move(image_id);
    r.sentences = split_sentences(text);
    r.generated_text = std::move(text);
    r.gt_objects = std::move(gt_objects);
    return r;
}

// --- metrics -----------------------------------------------------------------

ImageMetrics image_metrics(const CaptionRecord& record, const ObjectLexicon& lexicon) {
    ImageMetrics m;
    m.image_id = record.image_id;
    m.sentences = record.sentences.size();
    m.gt_count = record.gt_objects.size();
    for (const std::string& sentence : record.sentences) {
        bool sentence_hallucinates = false;
        for (const std::string& obj : extract_objects(sentence, lexicon)) {
            m.mentioned.insert(obj);
            if (!record.gt_objects.count(obj)) {
                sentence_hallucinates = true;
                m.hallucinated.insert(obj);
            }
        }
        if (sentence_hallucinates) ++m.hallucinated_sentences;
    }
    m.correct = m.mentioned.size() - m.hallucinated.size();
    for (const std::string& h : m.hallucinated) {
        if (lexicon.is_cog_associated(h, record.gt_objects)) ++m.cog_hallucinated;
    }
    m.precision = ratio(m.correct, m.mentioned.size());
    m.recall = ratio(m.correct, m.gt_count);
    m.f1 = ratio(2 * m.correct, m.correct == 0 ? 0 : m.mentioned.size() + m.gt_count);
    if (m.gt_count > 0) m.cover = ratio(m.correct, m.gt_count);
    m.hal = !m.hallucinated.empty();
    return m;
}

MetricsReport evaluate_captions(const std::vector<CaptionRecord>& records, const ObjectLexicon& lexicon,
                                F1Mode mode) {
    if (records.empty()) throw Error(ErrorCode::EmptyInput, "no caption records to evaluate");
    MetricsReport r;
    r.images = records.size();
    r.f1_mode = mode;
    std::size_t correct = 0;
    std::size_t gt_total = 0;
    Rational p_sum = 0;
    Rational r_sum = 0;
    Rational f_sum = 0;
    Rational cover_sum = 0;
    for (const CaptionRecord& rec : records) {
        ImageMetrics m = image_metrics(rec, lexicon);
        r.sentences += m.sentences;
        r.hallucinated_sentences += m.hallucinated_sentences;
        r.mentioned += m.mentioned.size();
        r.hallucinated += m.hallucinated.size();
        r.cog_hallucinated += m.cog_hallucinated;
        correct += m.correct;
        gt_total += m.gt_count;
        p_sum += rational(m.correct, m.mentioned.size());
        r_sum += rational(m.correct, m.gt_count);
        // F1 = 2PR / (P + R) = 2 |correct| / (|mentioned| + |GT|)
        f_sum += rational(2 * m.correct, m.correct == 0 ? 0 : m.mentioned.size() + m.gt_count);
        if (m.cover) {
            ++r.cover_images;
            cover_sum += rational(m.correct, m.gt_count);
        }
        if (m.hal) ++r.hal_images;
        r.per_image.push_back(std::move(m));
    }

    r.chair_s = ratio(r.hallucinated_sentences, r.sentences);
    r.chair_i = ratio(r.hallucinated, r.mentioned);
    if (r.mentioned == 0) r.flags.push_back("zero_mentioned_objects");
    if (r.sentences == 0) r.flags.push_back("zero_sentences");

    const auto n = static_cast<long long>(r.images);
    if (mode == F1Mode::PerImage) {
        r.precision = to_double(p_sum / n);
        r.recall = to_double(r_sum / n);
        r.f1 = to_double(f_sum / n);
    } else {
        r.precision = ratio(correct, r.mentioned);
        r.recall = ratio(correct, gt_total);
        r.f1 = ratio(2 * correct, correct == 0 ? 0 : r.mentioned + gt_total);
    }

    r.cover_sum = to_double(cover_sum);
    r.cover = r.cover_images > 0 ? to_double(cover_sum / static_cast<long long>(r.cover_images)) : 0.0;
    if (r.cover_images < r.images) {
        r.flags.push_back("cover_excluded_empty_gt:" + std::to_string(r.images - r.cover_images));
    }
    r.hal = ratio(r.hal_images, r.images);
    r.cog = ratio(r.cog_hallucinated, r.mentioned);
    return r;
}

MetricsReport chair(const std::vector<CaptionRecord>& records, const ObjectLexicon& lexicon) {
    return evaluate_captions(records, lexicon);
}

MetricsReport object_f1(const std::vector<CaptionRecord>& records, const ObjectLexicon& lexicon, F1Mode mode) {
    return evaluate_captions(records, lexicon, mode);
}

MetricsReport amber_generative(const std::vector<CaptionRecord>& records, const ObjectLexicon& lexicon) {
    return evaluate_captions(records, lexicon);
}

// --- IO ----------------------------------------------------------------------

std::vector<Caption> load_captions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open captions " + path.string());
    std::vector<Caption> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            out.push_back({image_id_of(j.at("image_id")), j.at("caption").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            invalid(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::map<std::string, std::set<std::string>> load_annotations(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open annotations " + path.string());
    try {
        std::map<std::string, std::set<std::string>> out;
        const auto j = nlohmann::json::parse(in);
        for (const auto& [id, objs] : j.items()) {
            out[id] = objs.get<std::set<std::string>>();
        }
        return out;
    } catch (const nlohmann::json::exception& e) {
        invalid(path.string() + ": " + e.what());
    }
}

std::vector<CaptionRecord> build_records(const std::vector<Caption>& captions,
                                         const std::map<std::string, std::set<std::string>>& annotations,
                                         const ObjectLexicon& lexicon) {
    std::vector<std::string> unknown;
    std::vector<CaptionRecord> out;
    for (const Caption& c : captions) {
        auto it = annotations.find(c.image_id);
        if (it == annotations.end()) {
            unknown.push_back(c.image_id);
            continue;
        }
        out.push_back(make_record(c.image_id, c.text, it->second, lexicon));
    }
    if (!unknown.empty()) {
        std::string list;
        for (const auto& id : unknown) list += (list.empty() ? "" : ", ") + id;
        throw Error(ErrorCode::UnknownImageId, "captions reference images without annotations: " + list);
    }
    return out;
}

nlohmann::json to_json(const MetricsReport& r, const std::string& suite) {
    nlohmann::json j;
    j["suite"] = suite;
    j["images"] = r.images;
    j["chair_s"] = r.chair_s;
    j["chair_i"] = r.chair_i;
    j["f1"] = r.f1;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1_mode"] = r.f1_mode == F1Mode::PerImage ? "per_image" : "pooled";
    j["counts"] = {{"sentences", r.sentences},
                   {"hallucinated_sentences", r.hallucinated_sentences},
                   {"mentioned_objects", r.mentioned},
                   {"hallucinated_objects", r.hallucinated}};
    if (suite != "chair") {
        j["cover"] = r.cover;
        j["hal"] = r.hal;
        j["cog"] = r.cog;
        j["amber_chair"] = r.chair_i;
        j["counts"]["cover_images"] = r.cover_images;
        j["counts"]["hal_images"] = r.hal_images;
        j["counts"]["cog_hallucinated_objects"] = r.cog_hallucinated;
        j["cog_formula"] = "reconstructed-v1";
    }
    j["flags"] = r.flags;
    return j;
}

std::string per_image_csv(const MetricsReport& r) {
    std::ostringstream out;
    out.precision(17);
    out << "image_id,sentences,hallucinated_sentences,mentioned,hallucinated,gt,correct,precision,recall,f1,cover,hal,"
           "cog_hallucinated\n";
    for (const ImageMetrics& m : r.per_image) {
        out << m.image_id << ',' << m.sentences << ',' << m.hallucinated_sentences << ',' << m.mentioned.size() << ','
            << m.hallucinated.size() << ',' << m.gt_count << ',' << m.correct << ',' << m.precision << ','
            << m.recall << ',' << m.f1 << ',';
        if (m.cover) out << *m.cover;
        out << ',' << (m.hal ? 1 : 0) << ',' << m.cog_hallucinated << '\n';
    }
    return out.str();
}

}  // namespace focusgate
