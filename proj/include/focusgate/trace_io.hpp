#pragma once

// PATS trace container: attention tensors, feature dumps and decoder attention
// in one self-describing binary format.
//
//   bytes 0..3   "PATS"
//   bytes 4..7   format version (uint32 LE, currently 1)
//   bytes 8..11  header length in bytes (uint32 LE)
//   JSON header  UTF-8, `header length` bytes
//   payload      float32 LE, row-major; section offsets are relative to the
//                first payload byte and recorded in header["sections"]

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace focusgate {

inline constexpr std::uint32_t kPatsVersion = 1;
inline constexpr double kRowSumTolerance = 1e-4;

enum class TraceKind { VisionAttention, DecoderAttention, Features };
enum class Storage { Full, ClsReduced };

std::string to_string(TraceKind kind);
std::string to_string(Storage storage);

// Half-open token interval [begin, end).
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t size() const { return end - begin; }
    bool contains(std::size_t i) const { return i >= begin && i < end; }
    bool operator==(const TokenSpan&) const = default;
};

struct TraceHeader {
    TraceKind kind = TraceKind::VisionAttention;
    std::string model_id;
    std::size_t num_layers = 0;
    std::size_t num_heads = 0;
    // Patch tokens plus CLS when present; the context length for decoder traces.
    std::size_t num_tokens = 0;
    bool has_cls = false;
    Storage storage = Storage::Full;
    std::size_t feature_dim = 0;               // features only
    std::optional<TokenSpan> visual_span;      // decoder only
    std::size_t num_generated = 0;             // decoder only
    std::vector<int> layer_ids;
    // Full encoder depth when only a subset of layers was exported.
    std::optional<int> depth;

    std::size_t patch_count() const { return has_cls ? num_tokens - 1 : num_tokens; }
    // The CLS token always sits at index 0.
    std::optional<std::size_t> cls_index() const {
        return has_cls ? std::optional<std::size_t>(0) : std::nullopt;
    }
    // Offset added to a patch id to obtain its absolute token index.
    std::size_t patch_offset() const { return has_cls ? 1 : 0; }

    // Position of an absolute layer id within layer_ids; throws InvalidArgument.
    std::size_t layer_position(int layer_id) const;
    bool has_layer(int layer_id) const;

    // Throws Error(InvalidHeader) on any invariant violation.
    void validate() const;

    bool operator==(const TraceHeader&) const = default;
};

// Per-layer, per-head attention. Full storage keeps N_total x N_total rows per
// head; cls_reduced keeps only the CLS query row.
class AttentionTrace {
public:
    explicit AttentionTrace(TraceHeader header);
    AttentionTrace(TraceHeader header, std::vector<float> values);

    const TraceHeader& header() const { return header_; }
    std::size_t rows_per_head() const;
    std::size_t head_stride() const { return rows_per_head() * header_.num_tokens; }

    std::span<const float> row(std::size_t layer_pos, std::size_t head, std::size_t query) const;
    std::span<float> row(std::size_t layer_pos, std::size_t head, std::size_t query);
    // Query row of the CLS token (row 0 under full storage).
    std::span<const float> cls_row(std::size_t layer_pos, std::size_t head) const;
    std::span<const float> head_block(std::size_t layer_pos, std::size_t head) const;

    std::span<const float> values() const { return values_; }
    std::span<float> values() { return values_; }

private:
    TraceHeader header_;
    std::vector<float> values_;
};

// Patch-token embeddings (N x C) taken from one encoder layer.
class FeatureDump {
public:
    explicit FeatureDump(TraceHeader header);
    FeatureDump(TraceHeader header, std::vector<float> values);

    const TraceHeader& header() const { return header_; }
    int source_layer() const { return header_.layer_ids.front(); }
    std::size_t rows() const { return header_.patch_count(); }
    std::size_t dim() const { return header_.feature_dim; }

    std::span<const float> row(std::size_t i) const;
    std::span<float> row(std::size_t i);
    std::span<const float> values() const { return values_; }
    std::span<float> values() { return values_; }

private:
    TraceHeader header_;
    std::vector<float> values_;
};

// Decoder attention: for every generated token, every (layer, head), one row
// over the full context of num_tokens positions.
class DecoderTrace {
public:
    explicit DecoderTrace(TraceHeader header);
    DecoderTrace(TraceHeader header, std::vector<float> values);

    const TraceHeader& header() const { return header_; }
    std::size_t num_generated() const { return header_.num_generated; }
    const TokenSpan& visual_span() const { return *header_.visual_span; }

    std::span<const float> row(std::size_t token, std::size_t layer_pos, std::size_t head) const;
    std::span<float> row(std::size_t token, std::size_t layer_pos, std::size_t head);
    std::span<const float> values() const { return values_; }
    std::span<float> values() { return values_; }

private:
    TraceHeader header_;
    std::vector<float> values_;
};

using AnyTrace = std::variant<AttentionTrace, FeatureDump, DecoderTrace>;

// Builders for the common header shapes.
TraceHeader vision_header(std::string model_id, std::vector<int> layer_ids, std::size_t num_heads,
                          std::size_t num_tokens, bool has_cls, Storage storage = Storage::Full);
TraceHeader feature_header(std::string model_id, int source_layer, std::size_t num_tokens,
                           bool has_cls, std::size_t feature_dim);
TraceHeader decoder_header(std::string model_id, std::vector<int> layer_ids, std::size_t num_heads,
                           std::size_t context_length, TokenSpan visual_span,
                           std::size_t num_generated);

struct ValidationWarning {
    std::string section;
    std::size_t row = 0;  // flattened row index within the section
    double row_sum = 0.0;
};

struct ReadOptions {
    bool strict = false;
    // Retain at most this many warnings; the remainder is only counted.
    std::size_t max_warnings = 64;
};

struct LoadedTrace {
    AnyTrace trace;
    std::vector<ValidationWarning> warnings;
    std::size_t warning_count = 0;
};

std::vector<std::uint8_t> encode_trace(const AnyTrace& trace);
LoadedTrace decode_trace(std::span<const std::uint8_t> bytes, const ReadOptions& options = {});

void write_trace(const std::filesystem::path& path, const AnyTrace& trace);
LoadedTrace read_trace(const std::filesystem::path& path, const ReadOptions& options = {});

// Convenience loaders that also check the header kind.
AttentionTrace read_attention_trace(const std::filesystem::path& path, const ReadOptions& options = {});
FeatureDump read_feature_dump(const std::filesystem::path& path, const ReadOptions& options = {});
DecoderTrace read_decoder_trace(const std::filesystem::path& path, const ReadOptions& options = {});

nlohmann::json header_to_json(const TraceHeader& header);
TraceHeader header_from_json(const nlohmann::json& j);

}  // namespace focusgate
