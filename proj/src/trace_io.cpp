#include "focusgate/trace_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <spdlog/spdlog.h>

#include "focusgate/error.hpp"

namespace focusgate {

namespace {

constexpr char kMagic[4] = {'P', 'A', 'T', 'S'};

using json = nlohmann::json;

[[noreturn]] void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void put_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
    const std::size_t start = out.size();
    out.resize(start + values.size() * sizeof(float));
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(out.data() + start, values.data(), values.size() * sizeof(float));
    } else {
        std::uint8_t* dst = out.data() + start;
        for (float f : values) {
            const auto bits = std::bit_cast<std::uint32_t>(f);
            for (int i = 0; i < 4; ++i) *dst++ = static_cast<std::uint8_t>(bits >> (8 * i));
        }
    }
}

void get_floats(const std::uint8_t* src, std::span<float> values) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(values.data(), src, values.size() * sizeof(float));
    } else {
        for (float& f : values) {
            f = std::bit_cast<float>(get_u32(src));
            src += 4;
        }
    }
}

std::size_t checked_product(std::initializer_list<std::size_t> dims) {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
}

void expect_size(const std::vector<float>& values, std::size_t expected, const char* what) {
    if (values.size() != expected) {
        fail(ErrorCode::ShapeMismatch, std::string(what) + ": payload has " + std::to_string(values.size()) +
                                           " floats, header implies " + std::to_string(expected));
    }
}

TraceKind kind_from_string(const std::string& s) {
    if (s == "vision_attention") return TraceKind::VisionAttention;
    if (s == "decoder_attention") return TraceKind::DecoderAttention;
    if (s == "features") return TraceKind::Features;
    fail(ErrorCode::InvalidHeader, "unknown trace kind '" + s + "'");
}

Storage storage_from_string(const std::string& s) {
    if (s == "full") return Storage::Full;
    if (s == "cls_reduced") return Storage::ClsReduced;
    fail(ErrorCode::InvalidHeader, "unknown storage '" + s + "'");
}

struct Section {
    std::string name;
    std::vector<std::size_t> shape;
    std::span<const float> data;
};

std::vector<Section> sections_of(const AnyTrace& trace) {
    std::vector<Section> out;
    std::visit(
        [&](const auto& t) {
            using T = std::decay_t<decltype(t)>;
            const TraceHeader& h = t.header();
            if constexpr (std::is_same_v<T, AttentionTrace>) {
                const std::size_t per_layer = h.num_heads * t.head_stride();
                for (std::size_t l = 0; l < h.num_layers; ++l) {
                    out.push_back({"layer." + std::to_string(h.layer_ids[l]),
                                   {h.num_heads, t.rows_per_head(), h.num_tokens},
                                   t.values().subspan(l * per_layer, per_layer)});
                }
            } else if constexpr (std::is_same_v<T, FeatureDump>) {
                out.push_back({"features", {t.rows(), t.dim()}, t.values()});
            } else {
                out.push_back({"attention",
                               {h.num_generated, h.num_layers, h.num_heads, h.num_tokens},
                               t.values()});
            }
        },
        trace);
    return out;
}

const TraceHeader& header_of(const AnyTrace& trace) {
    return std::visit([](const auto& t) -> const TraceHeader& { return t.header(); }, trace);
}

// Checks finiteness always and row sums for attention kinds.
void validate_payload(const TraceHeader& h, const std::vector<Section>& sections,
                      const ReadOptions& options, LoadedTrace& loaded) {
    const bool rows_are_distributions = h.kind != TraceKind::Features;
    for (const Section& s : sections) {
        const std::size_t row_len = s.shape.back();
        const std::size_t rows = s.data.size() / row_len;
        for (std::size_t r = 0; r < rows; ++r) {
            const auto row = s.data.subspan(r * row_len, row_len);
            double sum = 0.0;
            for (float v : row) {
                if (!std::isfinite(v)) {
                    fail(ErrorCode::NonFiniteValue,
                         "non-finite value in section " + s.name + " row " + std::to_string(r));
                }
                if (rows_are_distributions && v < 0.0f) {
                    fail(ErrorCode::RowSumOutOfTolerance,
                         "negative attention weight in section " + s.name + " row " + std::to_string(r));
                }
                sum += v;
            }
            if (rows_are_distributions && std::abs(sum - 1.0) > kRowSumTolerance) {
                if (options.strict) {
                    fail(ErrorCode::RowSumOutOfTolerance, "row sum " + std::to_string(sum) + " in section " +
                                                              s.name + " row " + std::to_string(r));
                }
                ++loaded.warning_count;
                if (loaded.warnings.size() < options.max_warnings) {
                    loaded.warnings.push_back({s.name, r, sum});
                }
            }
        }
    }
}

}  // namespace

std::string to_string(TraceKind kind) {
    switch (kind) {
        case TraceKind::VisionAttention: return "vision_attention";
        case TraceKind::DecoderAttention: return "decoder_attention";
        case TraceKind::Features: return "features";
    }
    return "unknown";
}

std::string to_string(Storage storage) {
    return storage == Storage::Full ? "full" : "cls_reduced";
}

std::size_t TraceHeader::layer_position(int layer_id) const {
    auto it = std::lower_bound(layer_ids.begin(), layer_ids.end(), layer_id);
    if (it == layer_ids.end() || *it != layer_id) {
        fail(ErrorCode::InvalidArgument, "layer " + std::to_string(layer_id) + " is not present in the trace");
    }
    return static_cast<std::size_t>(it - layer_ids.begin());
}

bool TraceHeader::has_layer(int layer_id) const {
    return std::binary_search(layer_ids.begin(), layer_ids.end(), layer_id);
}

void TraceHeader::validate() const {
    auto bad = [](const std::string& msg) { fail(ErrorCode::InvalidHeader, msg); };
    if (num_layers < 1) bad("num_layers must be >= 1");
    if (num_heads < 1) bad("num_heads must be >= 1");
    if (num_tokens < 2) bad("N_total must be >= 2");
    if (storage == Storage::ClsReduced && !has_cls) bad("cls_reduced storage requires has_cls");
    if (storage == Storage::ClsReduced && kind != TraceKind::VisionAttention) {
        bad("cls_reduced storage only applies to vision_attention traces");
    }
    if (layer_ids.size() != num_layers) bad("layer_ids length must equal num_layers");
    for (std::size_t i = 1; i < layer_ids.size(); ++i) {
        if (layer_ids[i] <= layer_ids[i - 1]) bad("layer_ids must be strictly increasing");
    }
    if (!layer_ids.empty() && layer_ids.front() < 0) bad("layer_ids must be non-negative");
    if (depth && !layer_ids.empty() && layer_ids.back() >= *depth) bad("layer_ids exceed declared depth");
    const bool is_decoder = kind == TraceKind::DecoderAttention;
    if (visual_span.has_value() != is_decoder) bad("visual_span is required for, and only for, decoder traces");
    if (is_decoder) {
        if (visual_span->begin >= visual_span->end || visual_span->end > num_tokens) {
            bad("visual_span must satisfy 0 <= start < end <= context length");
        }
        if (num_generated < 1) bad("decoder trace needs at least one generated token");
    }
    if (kind == TraceKind::Features) {
        if (feature_dim < 1) bad("features need feature_dim >= 1");
        if (num_layers != 1 || num_heads != 1) bad("features use num_layers = num_heads = 1");
    }
}

// --- AttentionTrace --------------------------------------------------------

AttentionTrace::AttentionTrace(TraceHeader header) : header_(std::move(header)) {
    header_.validate();
    if (header_.kind != TraceKind::VisionAttention) fail(ErrorCode::InvalidHeader, "expected vision_attention header");
    values_.assign(checked_product({header_.num_layers, header_.num_heads, head_stride()}), 0.0f);
}

AttentionTrace::AttentionTrace(TraceHeader header, std::vector<float> values)
    : header_(std::move(header)), values_(std::move(values)) {
    header_.validate();
    if (header_.kind != TraceKind::VisionAttention) fail(ErrorCode::InvalidHeader, "expected vision_attention header");
    expect_size(values_, checked_product({header_.num_layers, header_.num_heads, head_stride()}), "attention");
}

std::size_t AttentionTrace::rows_per_head() const {
    return header_.storage == Storage::Full ? header_.num_tokens : 1;
}

std::span<const float> AttentionTrace::row(std::size_t layer_pos, std::size_t head, std::size_t query) const {
    const std::size_t n = header_.num_tokens;
    return std::span<const float>(values_).subspan(
        ((layer_pos * header_.num_heads + head) * rows_per_head() + query) * n, n);
}

std::span<float> AttentionTrace::row(std::size_t layer_pos, std::size_t head, std::size_t query) {
    const std::size_t n = header_.num_tokens;
    return std::span<float>(values_).subspan(((layer_pos * header_.num_heads + head) * rows_per_head() + query) * n,
                                             n);
}

std::span<const float> AttentionTrace::cls_row(std::size_t layer_pos, std::size_t head) const {
    if (!header_.has_cls) fail(ErrorCode::InvalidArgument, "trace has no CLS token");
    return row(layer_pos, head, 0);
}

std::span<const float> AttentionTrace::head_block(std::size_t layer_pos, std::size_t head) const {
    return std::span<const float>(values_).subspan((layer_pos * header_.num_heads + head) * head_stride(),
                                                   head_stride());
}

// --- FeatureDump -------------------------------------------------------------

FeatureDump::FeatureDump(TraceHeader header) : header_(std::move(header)) {
    header_.validate();
    if (header_.kind != TraceKind::Features) fail(ErrorCode::InvalidHeader, "expected features header");
    values_.assign(header_.patch_count() * header_.feature_dim, 0.0f);
}

FeatureDump::FeatureDump(TraceHeader header, std::vector<float> values)
    : header_(std::move(header)), values_(std::move(values)) {
    header_.validate();
    if (header_.kind != TraceKind::Features) fail(ErrorCode::InvalidHeader, "expected features header");
    expect_size(values_, header_.patch_count() * header_.feature_dim, "features");
}

std::span<const float> FeatureDump::row(std::size_t i) const {
    return std::span<const float>(values_).subspan(i * dim(), dim());
}

std::span<float> FeatureDump::row(std::size_t i) { return std::span<float>(values_).subspan(i * dim(), dim()); }

// --- DecoderTrace ------------------------------------------------------------

DecoderTrace::DecoderTrace(TraceHeader header) : header_(std::move(header)) {
    header_.validate();
    if (header_.kind != TraceKind::DecoderAttention) fail(ErrorCode::InvalidHeader, "expected decoder header");
    values_.assign(
        checked_product({header_.num_generated, header_.num_layers, header_.num_heads, header_.num_tokens}), 0.0f);
}

DecoderTrace::DecoderTrace(TraceHeader header, std::vector<float> values)
    : header_(std::move(header)), values_(std::move(values)) {
    header_.validate();
    if (header_.kind != TraceKind::DecoderAttention) fail(ErrorCode::InvalidHeader, "expected decoder header");
    expect_size(values_,
                checked_product({header_.num_generated, header_.num_layers, header_.num_heads, header_.num_tokens}),
                "decoder attention");
}

std::span<const float> DecoderTrace::row(std::size_t token, std::size_t layer_pos, std::size_t head) const {
    const std::size_t n = header_.num_tokens;
    return std::span<const float>(values_).subspan(
        ((token * header_.num_layers + layer_pos) * header_.num_heads + head) * n, n);
}

std::span<float> DecoderTrace::row(std::size_t token, std::size_t layer_pos, std::size_t head) {
    const std::size_t n = header_.num_tokens;
    return std::span<float>(values_).subspan(((token * header_.num_layers + layer_pos) * header_.num_heads + head) * n,
                                             n);
}

// --- header builders ---------------------------------------------------------

TraceHeader vision_header(std::string model_id, std::vector<int> layer_ids, std::size_t num_heads,
                          std::size_t num_tokens, bool has_cls, Storage storage) {
    TraceHeader h;
    h.kind = TraceKind::VisionAttention;
    h.model_id = std::move(model_id);
    h.num_layers = layer_ids.size();
    h.layer_ids = std::move(layer_ids);
    h.num_heads = num_heads;
    h.num_tokens = num_tokens;
    h.has_cls = has_cls;
    h.storage = storage;
    return h;
}

TraceHeader feature_header(std::string model_id, int source_layer, std::size_t num_tokens, bool has_cls,
                           std::size_t feature_dim) {
    TraceHeader h;
    h.kind = TraceKind::Features;
    h.model_id = std::move(model_id);
    h.num_layers = 1;
    h.num_heads = 1;
    h.layer_ids = {source_layer};
    h.num_tokens = num_tokens;
    h.has_cls = has_cls;
    h.feature_dim = feature_dim;
    return h;
}

TraceHeader decoder_header(std::string model_id, std::vector<int> layer_ids, std::size_t num_heads,
                           std::size_t context_length, TokenSpan visual_span, std::size_t num_generated) {
    TraceHeader h;
    h.kind = TraceKind::DecoderAttention;
    h.model_id = std::move(model_id);
    h.num_layers = layer_ids.size();
    h.layer_ids = std::move(layer_ids);
    h.num_heads = num_heads;
    h.num_tokens = context_length;
    h.visual_span = visual_span;
    h.num_generated = num_generated;
    return h;
}

// --- JSON header -------------------------------------------------------------

json header_to_json(const TraceHeader& h) {
    json j;
    j["kind"] = to_string(h.kind);
    j["model_id"] = h.model_id;
    j["L"] = h.num_layers;
    j["H"] = h.num_heads;
    j["N_total"] = h.num_tokens;
    j["has_cls"] = h.has_cls;
    j["storage"] = to_string(h.storage);
    j["layer_ids"] = h.layer_ids;
    if (h.kind == TraceKind::Features) {
        j["C"] = h.feature_dim;
        j["source_layer"] = h.layer_ids.front();
    }
    if (h.visual_span) j["visual_span"] = {h.visual_span->begin, h.visual_span->end};
    if (h.kind == TraceKind::DecoderAttention) j["T"] = h.num_generated;
    if (h.depth) j["depth"] = *h.depth;
    return j;
}

TraceHeader header_from_json(const json& j) {
    try {
        TraceHeader h;
        h.kind = kind_from_string(j.at("kind").get<std::string>());
        h.model_id = j.at("model_id").get<std::string>();
        h.num_layers = j.at("L").get<std::size_t>();
        h.num_heads = j.at("H").get<std::size_t>();
        h.num_tokens = j.at("N_total").get<std::size_t>();
        h.has_cls = j.at("has_cls").get<bool>();
        h.storage = storage_from_string(j.at("storage").get<std::string>());
        h.layer_ids = j.at("layer_ids").get<std::vector<int>>();
        if (h.kind == TraceKind::Features) h.feature_dim = j.at("C").get<std::size_t>();
        if (j.contains("visual_span")) {
            const auto span = j.at("visual_span").get<std::vector<std::size_t>>();
            if (span.size() != 2) fail(ErrorCode::InvalidHeader, "visual_span must be [start, end]");
            h.visual_span = TokenSpan{span[0], span[1]};
        }
        if (h.kind == TraceKind::DecoderAttention) h.num_generated = j.at("T").get<std::size_t>();
        if (j.contains("depth")) h.depth = j.at("depth").get<int>();
        h.validate();
        return h;
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidHeader, std::string("malformed header: ") + e.what());
    }
}

// --- encode / decode ---------------------------------------------------------

std::vector<std::uint8_t> encode_trace(const AnyTrace& trace) {
    const TraceHeader& h = header_of(trace);
    h.validate();
    const auto sections = sections_of(trace);

    json j = header_to_json(h);
    json jsec = json::object();
    std::size_t offset = 0;
    for (const Section& s : sections) {
        jsec[s.name] = {{"offset", offset}, {"shape", s.shape}};
        offset += s.data.size() * sizeof(float);
    }
    j["sections"] = std::move(jsec);
    const std::string text = j.dump();

    std::vector<std::uint8_t> out;
    out.reserve(12 + text.size() + offset);
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    put_u32(out, kPatsVersion);
    put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const Section& s : sections) put_floats(out, s.data);
    return out;
}

LoadedTrace decode_trace(std::span<const std::uint8_t> bytes, const ReadOptions& options) {
    if (bytes.size() < 12) fail(ErrorCode::TruncatedPayload, "file shorter than the fixed PATS preamble");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) fail(ErrorCode::BadMagic, "bad magic; not a PATS file");
    const std::uint32_t version = get_u32(bytes.data() + 4);
    if (version != kPatsVersion) fail(ErrorCode::UnsupportedVersion, "unsupported PATS version " + std::to_string(version));
    const std::uint32_t header_len = get_u32(bytes.data() + 8);
    if (bytes.size() < 12ull + header_len) fail(ErrorCode::TruncatedPayload, "truncated JSON header");

    json j;
    try {
        j = json::parse(bytes.begin() + 12, bytes.begin() + 12 + header_len);
    } catch (const json::exception& e) {
        fail(ErrorCode::InvalidHeader, std::string("header is not valid JSON: ") + e.what());
    }
    TraceHeader h = header_from_json(j);
    const auto payload = bytes.subspan(12 + header_len);

    json sections;
    try {
        sections = j.at("sections");
    } catch (const json::exception&) {
        fail(ErrorCode::InvalidHeader, "header lacks 'sections'");
    }
    auto read_section = [&](const std::string& name, std::vector<std::size_t> shape, std::span<float> dst) {
        if (!sections.contains(name)) fail(ErrorCode::InvalidHeader, "missing section " + name);
        const auto& s = sections.at(name);
        const auto offset = s.at("offset").get<std::size_t>();
        if (s.at("shape").get<std::vector<std::size_t>>() != shape) {
            fail(ErrorCode::ShapeMismatch, "section " + name + " shape disagrees with header");
        }
        const std::size_t nbytes = dst.size() * sizeof(float);
        if (offset > payload.size() || payload.size() - offset < nbytes) {
            fail(ErrorCode::TruncatedPayload, "section " + name + " extends past end of file");
        }
        get_floats(payload.data() + offset, dst);
    };

    auto decode_payload = [&]() -> AnyTrace {
        switch (h.kind) {
            case TraceKind::VisionAttention: {
                AttentionTrace t(h);
                const std::size_t per_layer = h.num_heads * t.head_stride();
                for (std::size_t l = 0; l < h.num_layers; ++l) {
                    read_section("layer." + std::to_string(h.layer_ids[l]),
                                 {h.num_heads, t.rows_per_head(), h.num_tokens},
                                 t.values().subspan(l * per_layer, per_layer));
                }
                return t;
            }
            case TraceKind::Features: {
                FeatureDump t(h);
                read_section("features", {t.rows(), t.dim()}, t.values());
                return t;
            }
            case TraceKind::DecoderAttention: break;
        }
        DecoderTrace t(h);
        read_section("attention", {h.num_generated, h.num_layers, h.num_heads, h.num_tokens}, t.values());
        return t;
    };
    LoadedTrace loaded{decode_payload(), {}, 0};
    validate_payload(h, sections_of(loaded.trace), options, loaded);
    return loaded;
}

void write_trace(const std::filesystem::path& path, const AnyTrace& trace) {
    const auto bytes = encode_trace(trace);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::Io, "write failed for " + path.string());
}

LoadedTrace read_trace(const std::filesystem::path& path, const ReadOptions& options) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto loaded = decode_trace(bytes, options);
    if (loaded.warning_count > 0) {
        spdlog::warn("{}: {} attention rows deviate from unit sum by more than {}", path.string(),
                     loaded.warning_count, kRowSumTolerance);
    }
    return loaded;
}

namespace {

template <class T>
T read_as(const std::filesystem::path& path, const ReadOptions& options, const char* expected) {
    auto loaded = read_trace(path, options);
    if (auto* t = std::get_if<T>(&loaded.trace)) return std::move(*t);
    fail(ErrorCode::InvalidArgument, path.string() + " is not a " + expected + " trace");
}

}  // namespace

AttentionTrace read_attention_trace(const std::filesystem::path& path, const ReadOptions& options) {
    return read_as<AttentionTrace>(path, options, "vision_attention");
}

FeatureDump read_feature_dump(const std::filesystem::path& path, const ReadOptions& options) {
    return read_as<FeatureDump>(path, options, "features");
}

DecoderTrace read_decoder_trace(const std::filesystem::path& path, const ReadOptions& options) {
    return read_as<DecoderTrace>(path, options, "decoder_attention");
}

}  // namespace focusgate
