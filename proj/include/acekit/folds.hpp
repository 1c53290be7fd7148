#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "acekit/errors.hpp"
#include "acekit/rng.hpp"

namespace acekit {

// K-fold assignment. Fold indices are 0-based internally.
struct FoldPlan {
    int K = 0;
    std::vector<int> assignment;  // length n, values in [0, K)

    std::vector<int> fold_indices(int k) const {
        std::vector<int> idx;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] == k) idx.push_back(static_cast<int>(i));
        return idx;
    }

    std::vector<int> complement_indices(int k) const {
        std::vector<int> idx;
        for (std::size_t i = 0; i < assignment.size(); ++i)
            if (assignment[i] != k) idx.push_back(static_cast<int>(i));
        return idx;
    }
};

// Random folds stratified by a binary vector: within each stratum the
// fold sizes differ by at most one, and a running deal counter keeps the
// overall sizes balanced too.
inline FoldPlan make_stratified_folds(const Eigen::VectorXd& strata, int K, RngStream& rng) {
    const Eigen::Index n = strata.size();
    if (K < 2) throw ValidationError("make_folds: K must be at least 2");
    std::vector<int> ones, zeros;
    for (Eigen::Index i = 0; i < n; ++i)
        (strata[i] == 1.0 ? ones : zeros).push_back(static_cast<int>(i));
    const std::size_t min_arm = std::min(ones.size(), zeros.size());
    if (static_cast<std::size_t>(K) > min_arm)
        throw ValidationError("make_folds: K=" + std::to_string(K) +
                              " exceeds the smaller exposure arm (" + std::to_string(min_arm) +
                              ")");
    FoldPlan plan;
    plan.K = K;
    plan.assignment.assign(static_cast<std::size_t>(n), 0);
    int counter = 0;
    for (auto* arm : {&ones, &zeros}) {
        rng.shuffle(*arm);
        for (int idx : *arm) plan.assignment[static_cast<std::size_t>(idx)] = counter++ % K;
    }
    return plan;
}

// Stratified-by-exposure fold construction for cross-fitting.
inline FoldPlan make_folds(const Eigen::VectorXd& X, int K, RngStream& rng) {
    return make_stratified_folds(X, K, rng);
}

// Unstratified random folds of near-equal size (used for regression-task
// cross-validation inside the ensemble).
inline FoldPlan make_plain_folds(Eigen::Index n, int K, RngStream& rng) {
    if (K < 2) throw ValidationError("make_plain_folds: K must be at least 2");
    if (static_cast<Eigen::Index>(K) > n)
        throw ValidationError("make_plain_folds: K exceeds record count");
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = static_cast<int>(i);
    rng.shuffle(idx);
    FoldPlan plan;
    plan.K = K;
    plan.assignment.assign(static_cast<std::size_t>(n), 0);
    int counter = 0;
    for (int i : idx) plan.assignment[static_cast<std::size_t>(i)] = counter++ % K;
    return plan;
}

}  // namespace acekit
