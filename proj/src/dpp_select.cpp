#include "focusgate/dpp_select.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

#include "focusgate/error.hpp"

namespace focusgate {

namespace {

[[noreturn]] void invalid(const std::string& msg) { throw Error(ErrorCode::InvalidArgument, msg); }

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Runs fn(begin, end) over [0, n) split into contiguous chunks.
template <class Fn>
void parallel_chunks(std::size_t n, unsigned threads, Fn&& fn) {
    if (threads <= 1 || n < 256) {
        fn(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + threads - 1) / threads;
    std::vector<std::jthread> workers;
    for (std::size_t begin = chunk; begin < n; begin += chunk) {
        workers.emplace_back([&fn, begin, end = std::min(n, begin + chunk)] { fn(begin, end); });
    }
    fn(std::size_t{0}, std::min(n, chunk));
}

}  // namespace

ImportanceVector token_importance(const AttentionTrace& trace, const std::vector<int>& source_layers) {
    const TraceHeader& h = trace.header();
    if (h.storage != Storage::Full) invalid("token importance needs full attention matrices, got cls_reduced");
    if (source_layers.empty()) invalid("token importance needs at least one source layer");

    const std::size_t n_total = h.num_tokens;
    std::vector<double> column_sums(n_total, 0.0);
    for (int layer : source_layers) {
        const std::size_t pos = h.layer_position(layer);
        for (std::size_t head = 0; head < h.num_heads; ++head) {
            const auto block = trace.head_block(pos, head);
            for (std::size_t j = 0; j < n_total; ++j) {
                const float* row = block.data() + j * n_total;
                for (std::size_t i = 0; i < n_total; ++i) column_sums[i] += row[i];
            }
        }
    }
    const double count = static_cast<double>(source_layers.size() * h.num_heads);
    ImportanceVector out;
    out.source_layers = source_layers;
    out.q.assign(column_sums.begin() + static_cast<std::ptrdiff_t>(h.patch_offset()), column_sums.end());
    for (double& v : out.q) v /= count;
    return out;
}

SimilarityMatrix similarity_matrix(const FeatureDump& features) {
    const auto n = static_cast<Eigen::Index>(features.rows());
    const auto c = static_cast<Eigen::Index>(features.dim());
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> f(
        features.values().data(), n, c);
    return similarity_matrix(Eigen::MatrixXd(f.cast<double>()));
}

SimilarityMatrix similarity_matrix(const Eigen::MatrixXd& features) {
    const Eigen::Index n = features.rows();
    if (n < 1 || features.cols() < 1) invalid("similarity needs N >= 1 and C >= 1");
    if (!features.allFinite()) throw Error(ErrorCode::NonFiniteValue, "non-finite feature values");

    SimilarityMatrix out;
    Eigen::MatrixXd normalized = features;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double norm = normalized.row(i).norm();
        if (norm > 0.0) {
            normalized.row(i) /= norm;
        } else {
            out.zero_rows.push_back(static_cast<std::size_t>(i));
        }
    }
    out.S = Eigen::MatrixXd::Zero(n, n);
    out.S.selfadjointView<Eigen::Lower>().rankUpdate(normalized);
    out.S.triangularView<Eigen::StrictlyUpper>() = out.S.transpose();
    out.S = out.S.cwiseMax(-1.0).cwiseMin(1.0);
    out.S.diagonal().setOnes();
    return out;
}

DppKernel build_kernel(const ImportanceVector& q, const SimilarityMatrix& S, double jitter_rel) {
    return build_kernel(q.q, S.S, jitter_rel);
}

DppKernel build_kernel(const std::vector<double>& q, const Eigen::MatrixXd& S, double jitter_rel) {
    const auto n = static_cast<Eigen::Index>(q.size());
    if (S.rows() != n || S.cols() != n) invalid("importance and similarity sizes differ");
    if (!(jitter_rel >= 0.0)) invalid("jitter_rel must be non-negative");
    for (double v : q) {
        if (!(v >= 0.0) || !std::isfinite(v)) invalid("importance values must be finite and non-negative");
    }
    if (std::all_of(q.begin(), q.end(), [](double v) { return v == 0.0; })) {
        throw Error(ErrorCode::DegenerateKernel, "all importance scores are zero");
    }
    const Eigen::Map<const Eigen::VectorXd> qv(q.data(), n);
    DppKernel k;
    k.L = qv.asDiagonal() * S * qv.asDiagonal();
    k.jitter = jitter_rel * k.L.trace() / static_cast<double>(n);
    k.L.diagonal().array() += k.jitter;
    return k;
}

SelectionResult greedy_map(const DppKernel& kernel, std::size_t k, const GreedyOptions& options) {
    const std::size_t n = kernel.size();
    if (k < 1 || k > n) invalid("K must lie in [1, N], got K=" + std::to_string(k) + " N=" + std::to_string(n));
    const Eigen::MatrixXd& L = kernel.L;
    const double mean_diag = L.trace() / static_cast<double>(n);
    if (!(mean_diag > 0.0)) throw Error(ErrorCode::DegenerateKernel, "kernel trace is not positive");
    const double stop_below = options.gain_tol * mean_diag;
    const double psd_floor = -options.psd_tol * mean_diag;
    const unsigned threads = options.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : options.threads;

    Eigen::VectorXd d2 = L.diagonal();
    if (d2.minCoeff() < psd_floor) throw Error(ErrorCode::KernelNotPsd, "kernel has a negative diagonal entry");
    // Row i holds the Cholesky coefficients of token i against the picks so far.
    RowMatrix chol = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    std::vector<char> taken(n, 0);

    SelectionResult result;
    result.k_requested = k;
    for (std::size_t t = 0; t < k; ++t) {
        std::size_t best = n;
        double best_d2 = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (!taken[i] && d2[static_cast<Eigen::Index>(i)] > best_d2) {
                best = i;
                best_d2 = d2[static_cast<Eigen::Index>(i)];
            }
        }
        if (best_d2 <= stop_below) {
            result.stopped_early = true;
            break;
        }
        result.selected.push_back(best);
        result.marginal_log_gains.push_back(std::log(best_d2));
        taken[best] = 1;
        if (t + 1 == k) break;

        const auto j = static_cast<Eigen::Index>(best);
        const auto tt = static_cast<Eigen::Index>(t);
        const double dj = std::sqrt(best_d2);
        const Eigen::VectorXd cj = chol.row(j).head(tt).transpose();
        std::atomic<bool> not_psd{false};
        parallel_chunks(n, threads, [&](std::size_t begin, std::size_t end) {
            const auto b = static_cast<Eigen::Index>(begin);
            const auto len = static_cast<Eigen::Index>(end - begin);
            Eigen::VectorXd e = L.col(j).segment(b, len);
            if (tt > 0) e.noalias() -= chol.block(b, 0, len, tt) * cj;
            e /= dj;
            chol.block(b, tt, len, 1) = e;
            d2.segment(b, len).array() -= e.array().square();
            for (Eigen::Index i = 0; i < len; ++i) {
                if (!taken[static_cast<std::size_t>(b + i)] && d2[b + i] < psd_floor) not_psd.store(true, std::memory_order_relaxed);
            }
        });
        if (not_psd) throw Error(ErrorCode::KernelNotPsd, "negative conditional variance; kernel is not PSD");
    }
    result.k_selected = result.selected.size();
    return result;
}

SelectionResult topk_select(const std::vector<double>& q, std::size_t k) {
    if (k < 1 || k > q.size()) invalid("K must lie in [1, N]");
    std::vector<std::size_t> order(q.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return q[a] > q[b]; });
    order.resize(k);
    SelectionResult r;
    r.selected = std::move(order);
    r.k_requested = k;
    r.k_selected = k;
    return r;
}

std::size_t retained_count(std::size_t n_patches, double ratio, bool ratio_means_retained) {
    if (!(ratio > 0.0 && ratio < 1.0)) invalid("masking ratio must lie in (0, 1)");
    const double keep = ratio_means_retained ? ratio : 1.0 - ratio;
    const auto k = static_cast<std::size_t>(std::lround(keep * static_cast<double>(n_patches)));
    return std::clamp<std::size_t>(k, 1, n_patches);
}

nlohmann::json to_json(const SelectionResult& r) {
    return {{"selected", r.selected},
            {"K_requested", r.k_requested},
            {"K_selected", r.k_selected},
            {"marginal_log_gains", r.marginal_log_gains},
            {"stopped_early", r.stopped_early}};
}

}  // namespace focusgate
