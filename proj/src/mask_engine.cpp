#include "focusgate/mask_engine.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include "focusgate/error.hpp"

namespace focusgate {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); }

void check_target_layers(const std::vector<int>& targets, const TraceHeader& header) {
    if (targets.empty()) invalid("target_layers must not be empty");
    for (int layer : targets) {
        const bool ok = header.depth ? (layer >= 0 && layer < *header.depth) : header.has_layer(layer);
        if (!ok) invalid("target layer " + std::to_string(layer) + " is outside the encoder's layers");
    }
}

std::vector<double> values_from_retained(std::size_t n_total, const std::vector<std::size_t>& retained) {
    std::vector<double> values(n_total, kNegInf);
    for (std::size_t i : retained) values[i] = 0.0;
    return values;
}

}  // namespace

void ModelMaskProfile::validate() const {
    if (!(masking_ratio > 0.0 && masking_ratio < 1.0)) invalid("masking_ratio must lie in (0, 1)");
    if (target_layers.empty()) invalid("profile needs target layers");
    if (source_layers.empty()) invalid("profile needs source layers");
}

ModelMaskProfile profile_from_json(const nlohmann::json& j) {
    try {
        ModelMaskProfile p;
        p.model_id = j.at("model_id").get<std::string>();
        p.masking_ratio = j.at("masking_ratio").get<double>();
        p.source_layers = j.at("source_layers").get<std::vector<int>>();
        p.feature_layer = j.at("feature_layer").get<int>();
        p.target_layers = j.at("target_layers").get<std::vector<int>>();
        p.validate();
        return p;
    } catch (const nlohmann::json::exception& e) {
        invalid(std::string("malformed model profile: ") + e.what());
    }
}

nlohmann::json to_json(const ModelMaskProfile& p) {
    return {{"model_id", p.model_id},
            {"masking_ratio", p.masking_ratio},
            {"source_layers", p.source_layers},
            {"feature_layer", p.feature_layer},
            {"target_layers", p.target_layers}};
}

ModelMaskProfile load_profile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Io, "cannot open profile " + path.string());
    try {
        return profile_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
        invalid(path.string() + ": " + e.what());
    }
}

std::string to_string(ModulationMode mode) {
    switch (mode) {
        case ModulationMode::Mask: return "mask";
        case ModulationMode::InverseMask: return "inverse_mask";
        case ModulationMode::LogitShift: return "logit_shift";
    }
    return "mask";
}

ModulationMode modulation_mode_from_string(const std::string& s) {
    if (s == "mask") return ModulationMode::Mask;
    if (s == "inverse_mask") return ModulationMode::InverseMask;
    if (s == "logit_shift") return ModulationMode::LogitShift;
    invalid("unknown modulation mode '" + s + "'");
}

bool AdditiveMask::is_suppressed(std::size_t token) const {
    return std::isinf(values.at(token)) && values[token] < 0.0;
}

AdditiveMask build_mask(const SelectionResult& selection, const TraceHeader& header,
                        const std::vector<int>& target_layers) {
    if (selection.selected.empty()) invalid("cannot build a mask from an empty selection");
    check_target_layers(target_layers, header);

    std::set<std::size_t> retained;
    for (std::size_t patch : selection.selected) {
        if (patch >= header.patch_count()) invalid("selected patch id " + std::to_string(patch) + " out of range");
        retained.insert(patch + header.patch_offset());
    }
    if (auto cls = header.cls_index()) retained.insert(*cls);

    AdditiveMask m;
    m.model_id = header.model_id;
    m.target_layers = target_layers;
    m.n_total = header.num_tokens;
    m.cls_index = header.cls_index();
    m.mode = ModulationMode::Mask;
    m.retained.assign(retained.begin(), retained.end());
    m.values = values_from_retained(m.n_total, m.retained);
    return m;
}

ModulationSpec build_modulation(const std::vector<std::size_t>& group, ModulationMode mode, double delta,
                                const std::vector<int>& target_layers, std::size_t n_total,
                                std::optional<std::size_t> cls_index, std::string model_id) {
    if (target_layers.empty()) invalid("target_layers must not be empty");
    if (mode != ModulationMode::LogitShift && group.empty()) invalid("mask modes need a non-empty group");
    if (mode == ModulationMode::LogitShift && !std::isfinite(delta)) invalid("logit_shift needs a finite delta");
    if (cls_index && *cls_index >= n_total) invalid("cls_index out of range");

    std::set<std::size_t> in_group;
    for (std::size_t i : group) {
        if (i >= n_total) invalid("group token " + std::to_string(i) + " out of range");
        in_group.insert(i);
    }

    ModulationSpec m;
    m.model_id = std::move(model_id);
    m.target_layers = target_layers;
    m.n_total = n_total;
    m.cls_index = cls_index;
    m.mode = mode;
    m.group.assign(in_group.begin(), in_group.end());
    m.delta = mode == ModulationMode::LogitShift ? delta : 0.0;

    for (std::size_t i = 0; i < n_total; ++i) {
        const bool is_cls = cls_index && *cls_index == i;
        const bool grouped = in_group.count(i) > 0;
        bool keep = true;
        if (mode == ModulationMode::Mask) keep = is_cls || !grouped;
        if (mode == ModulationMode::InverseMask) keep = is_cls || grouped;
        if (keep) m.retained.push_back(i);
    }
    m.values = values_from_retained(n_total, m.retained);
    if (mode == ModulationMode::LogitShift) {
        for (std::size_t i : m.group) m.values[i] = delta;
    }
    return m;
}

std::vector<std::size_t> complement_group(const SelectionResult& selection, const TraceHeader& header) {
    std::vector<char> chosen(header.patch_count(), 0);
    for (std::size_t p : selection.selected) chosen.at(p) = 1;
    std::vector<std::size_t> out;
    for (std::size_t p = 0; p < chosen.size(); ++p) {
        if (!chosen[p]) out.push_back(p + header.patch_offset());
    }
    return out;
}

std::vector<double> apply_mask_offline(std::span<const double> logits, const AdditiveMask& mask) {
    if (logits.size() != mask.n_total) invalid("logit row length differs from mask n_total");
    constexpr double lowest = std::numeric_limits<double>::lowest();
    std::vector<double> z(logits.size());
    double peak = lowest;
    bool any_retained = false;
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (!std::isfinite(logits[i])) invalid("logits must be finite");
        if (mask.is_suppressed(i)) {
            z[i] = lowest;
        } else {
            z[i] = logits[i] + mask.values[i];
            peak = std::max(peak, z[i]);
            any_retained = true;
        }
    }
    if (!any_retained) throw Error(ErrorCode::AllSuppressed, "every token in the row is suppressed");
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = mask.is_suppressed(i) ? 0.0 : std::exp(z[i] - peak);
        sum += z[i];
    }
    for (double& v : z) v /= sum;
    return z;
}

nlohmann::json to_json(const AdditiveMask& m) {
    nlohmann::json j{{"version", kMaskFileVersion},
                     {"model_id", m.model_id},
                     {"target_layers", m.target_layers},
                     {"n_total", m.n_total},
                     {"cls_index", m.cls_index ? nlohmann::json(*m.cls_index) : nlohmann::json(nullptr)},
                     {"retained", m.retained},
                     {"fill", "-inf"},
                     {"mode", to_string(m.mode)}};
    if (m.mode != ModulationMode::Mask || !m.group.empty()) j["group"] = m.group;
    if (m.mode == ModulationMode::LogitShift) j["delta"] = m.delta;
    return j;
}

AdditiveMask mask_from_json(const nlohmann::json& j) {
    try {
        if (j.at("version").get<int>() != kMaskFileVersion) invalid("unsupported mask file version");
        if (j.at("fill").get<std::string>() != "-inf") invalid("mask fill must be \"-inf\"");
        AdditiveMask m;
        m.model_id = j.at("model_id").get<std::string>();
        m.target_layers = j.at("target_layers").get<std::vector<int>>();
        m.n_total = j.at("n_total").get<std::size_t>();
        if (!j.at("cls_index").is_null()) m.cls_index = j.at("cls_index").get<std::size_t>();
        m.mode = modulation_mode_from_string(j.value("mode", std::string("mask")));
        m.retained = j.at("retained").get<std::vector<std::size_t>>();
        if (j.contains("group")) m.group = j.at("group").get<std::vector<std::size_t>>();
        if (m.mode == ModulationMode::LogitShift) m.delta = j.at("delta").get<double>();
        for (std::size_t i : m.retained) {
            if (i >= m.n_total) invalid("retained index out of range");
        }
        m.values = values_from_retained(m.n_total, m.retained);
        if (m.mode == ModulationMode::LogitShift) {
            for (std::size_t i : m.group) m.values.at(i) = m.delta;
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        invalid(std::string("malformed mask file: ") + e.what());
    }
}

}  // namespace focusgate
