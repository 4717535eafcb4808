#pragma once

// Importance-weighted DPP kernel over patch tokens and greedy MAP selection.
//
//   q_i  = sum_j Abar_{j,i}, Abar = attention averaged over heads and source layers
//   S_ij = cosine similarity of feature rows i and j
//   L_ij = q_i S_ij q_j
//
// greedy_map grows the selected set one token at a time, each time taking the
// token whose addition maximizes log det(L_selected). The incremental Cholesky
// rows make each step O(N * |selected|).

#include <cstddef>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "focusgate/trace_io.hpp"

namespace focusgate {

struct ImportanceVector {
    std::vector<double> q;  // one entry per patch token
    std::vector<int> source_layers;
};

struct SimilarityMatrix {
    Eigen::MatrixXd S;
    std::vector<std::size_t> zero_rows;  // feature rows with zero norm
};

struct DppKernel {
    Eigen::MatrixXd L;
    double jitter = 0.0;  // value added to every diagonal entry

    std::size_t size() const { return static_cast<std::size_t>(L.rows()); }
};

struct SelectionResult {
    std::vector<std::size_t> selected;  // patch ids in pick order
    std::size_t k_requested = 0;
    std::size_t k_selected = 0;
    std::vector<double> marginal_log_gains;
    bool stopped_early = false;
};

struct GreedyOptions {
    // Stop when the best conditional variance falls to gain_tol * trace(L) / N.
    double gain_tol = 1e-12;
    // Conditional variances below -psd_tol * trace(L) / N mean L is not PSD.
    double psd_tol = 1e-8;
    // Workers for the per-candidate update scan; 0 picks hardware concurrency.
    unsigned threads = 1;
};

ImportanceVector token_importance(const AttentionTrace& trace, const std::vector<int>& source_layers);

SimilarityMatrix similarity_matrix(const FeatureDump& features);
// Same computation over a raw row-major N x C matrix.
SimilarityMatrix similarity_matrix(const Eigen::MatrixXd& features);

// jitter = jitter_rel * trace(qSq) / N is added to the diagonal.
DppKernel build_kernel(const ImportanceVector& q, const SimilarityMatrix& S, double jitter_rel = 1e-6);
DppKernel build_kernel(const std::vector<double>& q, const Eigen::MatrixXd& S, double jitter_rel = 1e-6);

SelectionResult greedy_map(const DppKernel& kernel, std::size_t k, const GreedyOptions& options = {});

// Indices of the k largest q, lowest index first among ties.
SelectionResult topk_select(const std::vector<double>& q, std::size_t k);

// Number of patch tokens kept for a masking ratio. By default the ratio is the
// suppressed fraction: keep = round((1 - ratio) * n).
std::size_t retained_count(std::size_t n_patches, double ratio, bool ratio_means_retained = false);

nlohmann::json to_json(const SelectionResult& result);

}  // namespace focusgate
