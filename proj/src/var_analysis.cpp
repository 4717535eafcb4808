#include "focusgate/var_analysis.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "focusgate/error.hpp"

namespace focusgate {

namespace {

struct Moments {
    double mean = 0.0;
    double var = 0.0;  // unbiased
};

Moments moments(const std::vector<double>& x) {
    Moments m;
    m.mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
    for (double v : x) m.var += (v - m.mean) * (v - m.mean);
    m.var /= static_cast<double>(x.size() - 1);
    return m;
}

}  // namespace

double VarStats::at(std::size_t token, std::size_t layer_pos, std::size_t head) const {
    return values.at((token * layer_ids.size() + layer_pos) * num_heads + head);
}

double VarStats::grid_at(std::size_t layer_pos, std::size_t head) const {
    return grid.at(layer_pos * num_heads + head);
}

double var_per_token(const DecoderTrace& trace, std::size_t token, std::size_t layer_pos, std::size_t head) {
    const TraceHeader& h = trace.header();
    if (token >= h.num_generated || layer_pos >= h.num_layers || head >= h.num_heads) {
        throw Error(ErrorCode::InvalidArgument, "VAR index out of range");
    }
    const TokenSpan& span = trace.visual_span();
    const auto row = trace.row(token, layer_pos, head);
    if (span.end > row.size()) throw Error(ErrorCode::InvalidArgument, "visual span exceeds the attention row");
    double sum = 0.0;
    for (std::size_t i = span.begin; i < span.end; ++i) sum += row[i];
    return sum;
}

VarStats var_stats(const DecoderTrace& trace, std::string label) {
    const TraceHeader& h = trace.header();
    if (h.num_generated == 0) throw Error(ErrorCode::EmptyInput, "decoder trace has no generated tokens");
    VarStats s;
    s.condition_label = std::move(label);
    s.layer_ids = h.layer_ids;
    s.num_heads = h.num_heads;
    s.num_tokens = h.num_generated;
    s.values.reserve(h.num_generated * h.num_layers * h.num_heads);
    s.grid.assign(h.num_layers * h.num_heads, 0.0);
    double total = 0.0;
    for (std::size_t t = 0; t < h.num_generated; ++t) {
        for (std::size_t l = 0; l < h.num_layers; ++l) {
            for (std::size_t head = 0; head < h.num_heads; ++head) {
                const double v = var_per_token(trace, t, l, head);
                s.values.push_back(v);
                s.grid[l * h.num_heads + head] += v;
                total += v;
            }
        }
    }
    const auto tokens = static_cast<double>(h.num_generated);
    for (double& g : s.grid) g /= tokens;
    s.image_mean = total / static_cast<double>(s.values.size());
    return s;
}

WelchResult compare_conditions(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() < 2 || b.size() < 2) {
        throw Error(ErrorCode::InvalidArgument, "Welch test needs at least two samples per condition");
    }
    const Moments ma = moments(a);
    const Moments mb = moments(b);
    WelchResult r;
    r.mean_a = ma.mean;
    r.mean_b = mb.mean;
    const double diff = ma.mean - mb.mean;
    r.direction = diff > 0.0 ? "a>b" : (diff < 0.0 ? "a<b" : "a=b");

    const double va = ma.var / static_cast<double>(a.size());
    const double vb = mb.var / static_cast<double>(b.size());
    const double se2 = va + vb;
    if (se2 == 0.0) {
        // Both samples constant: identical means carry no evidence of a shift,
        // distinct means are separated with certainty.
        r.statistic = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
        r.dof = static_cast<double>(a.size() + b.size() - 2);
        r.p_value = diff == 0.0 ? 1.0 : 0.0;
        return r;
    }
    r.statistic = diff / std::sqrt(se2);
    r.dof = se2 * se2 /
            (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
    const boost::math::students_t dist(r.dof);
    r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.statistic)));
    r.p_value = std::min(r.p_value, 1.0);
    return r;
}

std::string grid_csv(const VarStats& s) {
    std::ostringstream out;
    out.precision(17);
    out << "layer,head,mean_var\n";
    for (std::size_t l = 0; l < s.layer_ids.size(); ++l) {
        for (std::size_t h = 0; h < s.num_heads; ++h) out << s.layer_ids[l] << ',' << h << ',' << s.grid_at(l, h) << '\n';
    }
    return out.str();
}

nlohmann::json to_json(const WelchResult& r) {
    return {{"test", "welch_t_two_sided"}, {"statistic", r.statistic}, {"dof", r.dof},     {"p_value", r.p_value},
            {"mean_a", r.mean_a},          {"mean_b", r.mean_b},       {"direction", r.direction}};
}

}  // namespace focusgate
