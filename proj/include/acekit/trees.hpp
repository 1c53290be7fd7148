#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "acekit/errors.hpp"
#include "acekit/rng.hpp"
#include "acekit/stats.hpp"

namespace acekit {

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict_row(const double* x) const {
        int cur = 0;
        while (nodes[static_cast<std::size_t>(cur)].feature >= 0) {
            const TreeNode& nd = nodes[static_cast<std::size_t>(cur)];
            cur = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
        }
        return nodes[static_cast<std::size_t>(cur)].value;
    }

    // Leaf index for a training row; used to recompute leaf values.
    int leaf_of(const double* x) const {
        int cur = 0;
        while (nodes[static_cast<std::size_t>(cur)].feature >= 0) {
            const TreeNode& nd = nodes[static_cast<std::size_t>(cur)];
            cur = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
        }
        return cur;
    }
};

struct TreeParams {
    int max_depth = -1;  // -1 = unlimited, 0 = root only
    int min_leaf = 5;
    int mtry = 0;  // 0 = all features
};

namespace detail {

// Feature-major copy of the training rows for cache-friendly splits.
struct ColumnData {
    Eigen::Index n = 0, q = 0;
    std::vector<std::vector<double>> cols;

    // Loads X with rows permuted by `order`.
    void load(const Eigen::MatrixXd& X, const std::vector<int>& order) {
        n = X.rows();
        q = X.cols();
        cols.assign(static_cast<std::size_t>(q), {});
        for (Eigen::Index j = 0; j < q; ++j) {
            auto& c = cols[static_cast<std::size_t>(j)];
            c.resize(static_cast<std::size_t>(n));
            for (Eigen::Index i = 0; i < n; ++i)
                c[static_cast<std::size_t>(i)] = X(order[static_cast<std::size_t>(i)], j);
        }
    }

    // Copies training row i into a contiguous buffer.
    void fill_row(Eigen::Index i, std::vector<double>& buf) const {
        buf.resize(static_cast<std::size_t>(q));
        for (Eigen::Index j = 0; j < q; ++j)
            buf[static_cast<std::size_t>(j)] = cols[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)];
    }
};

// Canonical training order: rows sorted lexicographically by features
// then target, so fits do not depend on input record order.
inline std::vector<int> canonical_order(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    std::vector<int> idx(static_cast<std::size_t>(X.rows()));
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            if (X(a, j) != X(b, j)) return X(a, j) < X(b, j);
        }
        return y[a] < y[b];
    });
    return idx;
}

class TreeBuilder {
public:
    TreeBuilder(const ColumnData& data, const std::vector<double>& target,
                const TreeParams& params)
        : data_(data), y_(target), params_(params) {
        scratch_.reserve(static_cast<std::size_t>(data.n));
        feat_pool_.resize(static_cast<std::size_t>(data.q));
        std::iota(feat_pool_.begin(), feat_pool_.end(), 0);
    }

    // Builds a tree over the given sample indices (bootstrap or all).
    RegressionTree build(std::vector<int> samples, RngStream& rng) {
        tree_.nodes.clear();
        build_node(samples, 0, rng);
        return std::move(tree_);
    }

private:
    struct SplitResult {
        int feature = -1;
        double threshold = 0.0;
        double gain = 0.0;
    };

    int build_node(std::vector<int>& samples, int depth, RngStream& rng) {
        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        double sum = 0.0;
        for (int i : samples) sum += y_[static_cast<std::size_t>(i)];
        const double mean = sum / static_cast<double>(samples.size());
        tree_.nodes[static_cast<std::size_t>(id)].value = mean;

        const int m = static_cast<int>(samples.size());
        const bool depth_ok = params_.max_depth < 0 || depth < params_.max_depth;
        if (!depth_ok || m < 2 * params_.min_leaf) return id;

        const SplitResult split = best_split(samples, rng);
        if (split.feature < 0) return id;

        std::vector<int> left, right;
        left.reserve(samples.size());
        right.reserve(samples.size());
        const auto& col = data_.cols[static_cast<std::size_t>(split.feature)];
        for (int i : samples)
            (col[static_cast<std::size_t>(i)] <= split.threshold ? left : right).push_back(i);
        samples.clear();
        samples.shrink_to_fit();

        tree_.nodes[static_cast<std::size_t>(id)].feature = split.feature;
        tree_.nodes[static_cast<std::size_t>(id)].threshold = split.threshold;
        const int l = build_node(left, depth + 1, rng);
        tree_.nodes[static_cast<std::size_t>(id)].left = l;
        const int r = build_node(right, depth + 1, rng);
        tree_.nodes[static_cast<std::size_t>(id)].right = r;
        return id;
    }

    SplitResult best_split(const std::vector<int>& samples, RngStream& rng) {
        const int m = static_cast<int>(samples.size());
        const int q = static_cast<int>(data_.q);
        int mtry = params_.mtry > 0 ? std::min(params_.mtry, q) : q;

        // Partial Fisher-Yates over the feature pool.
        for (int t = 0; t < mtry; ++t) {
            const int j = t + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(q - t)));
            std::swap(feat_pool_[static_cast<std::size_t>(t)], feat_pool_[static_cast<std::size_t>(j)]);
        }

        SplitResult best;
        double total = 0.0;
        for (int i : samples) total += y_[static_cast<std::size_t>(i)];

        for (int t = 0; t < mtry; ++t) {
            const int f = feat_pool_[static_cast<std::size_t>(t)];
            const auto& col = data_.cols[static_cast<std::size_t>(f)];
            scratch_.clear();
            for (int i : samples)
                scratch_.push_back({col[static_cast<std::size_t>(i)], y_[static_cast<std::size_t>(i)]});
            std::sort(scratch_.begin(), scratch_.end(),
                      [](const XY& a, const XY& b) { return a.x < b.x; });
            if (scratch_.front().x == scratch_.back().x) continue;

            double left_sum = 0.0;
            const double base = total * total / static_cast<double>(m);
            for (int i = 0; i + 1 < m; ++i) {
                left_sum += scratch_[static_cast<std::size_t>(i)].y;
                const int nl = i + 1;
                const int nr = m - nl;
                if (nl < params_.min_leaf) continue;
                if (nr < params_.min_leaf) break;
                if (scratch_[static_cast<std::size_t>(i)].x ==
                    scratch_[static_cast<std::size_t>(i + 1)].x)
                    continue;
                const double right_sum = total - left_sum;
                const double gain = left_sum * left_sum / nl + right_sum * right_sum / nr - base;
                if (gain > best.gain + 1e-12) {
                    best.gain = gain;
                    best.feature = f;
                    best.threshold = 0.5 * (scratch_[static_cast<std::size_t>(i)].x +
                                            scratch_[static_cast<std::size_t>(i + 1)].x);
                }
            }
        }
        return best;
    }

    struct XY {
        double x;
        double y;
    };

    const ColumnData& data_;
    const std::vector<double>& y_;
    const TreeParams& params_;
    RegressionTree tree_;
    std::vector<XY> scratch_;
    std::vector<int> feat_pool_;
};

}  // namespace detail

struct ForestParams {
    int trees = 500;
    TreeParams tree;  // mtry 0 resolves to floor(sqrt(q))
};

struct ForestModel {
    std::vector<RegressionTree> trees;

    double predict_row(const double* x) const {
        double s = 0.0;
        for (const auto& t : trees) s += t.predict_row(x);
        return s / static_cast<double>(trees.size());
    }
};

// Bagged regression trees with feature subsampling. Rows are put in a
// canonical order first so the fit is invariant to record order.
inline ForestModel fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const ForestParams& params, RngStream rng) {
    if (X.rows() != y.size()) throw ValidationError("forest: row mismatch");
    if (X.rows() == 0) throw ValidationError("forest: empty design");
    const std::vector<int> order = detail::canonical_order(X, y);
    std::vector<double> yc(static_cast<std::size_t>(y.size()));
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        yc[static_cast<std::size_t>(i)] = y[order[static_cast<std::size_t>(i)]];
    detail::ColumnData data;
    data.load(X, order);

    TreeParams tp = params.tree;
    if (tp.mtry <= 0)
        tp.mtry = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(X.cols())))));

    ForestModel model;
    model.trees.reserve(static_cast<std::size_t>(params.trees));
    detail::TreeBuilder builder(data, yc, tp);
    const Eigen::Index n = X.rows();
    for (int t = 0; t < params.trees; ++t) {
        RngStream tree_rng = rng.derive(static_cast<std::uint64_t>(t));
        std::vector<int> boot(static_cast<std::size_t>(n));
        for (Eigen::Index i = 0; i < n; ++i)
            boot[static_cast<std::size_t>(i)] =
                static_cast<int>(tree_rng.uniform_int(static_cast<std::uint64_t>(n)));
        model.trees.push_back(builder.build(std::move(boot), tree_rng));
    }
    return model;
}

struct BoostParams {
    int rounds = 100;
    double learning_rate = 0.1;
    int depth = 3;
    int min_leaf = 5;
    bool logit = false;  // logistic loss for probability targets
};

struct BoostModel {
    double base = 0.0;
    double learning_rate = 0.1;
    bool logit = false;
    std::vector<RegressionTree> trees;

    double raw_row(const double* x) const {
        double f = base;
        for (const auto& t : trees) f += learning_rate * t.predict_row(x);
        return f;
    }

    double predict_row(const double* x) const {
        const double f = raw_row(x);
        return logit ? expit(f) : f;
    }
};

// Gradient boosting with depth-limited exact-greedy trees. Squared-error
// loss for regression; logistic loss with Newton leaf values for
// probability targets.
inline BoostModel fit_boost(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const BoostParams& params, RngStream rng) {
    (void)rng;  // fit is deterministic; kept for interface symmetry
    if (X.rows() != y.size()) throw ValidationError("boost: row mismatch");
    if (X.rows() == 0) throw ValidationError("boost: empty design");
    const std::vector<int> order = detail::canonical_order(X, y);
    Eigen::VectorXd ycv(y.size());
    for (Eigen::Index i = 0; i < X.rows(); ++i) ycv[i] = y[order[static_cast<std::size_t>(i)]];
    detail::ColumnData data;
    data.load(X, order);

    const Eigen::Index n = X.rows();
    BoostModel model;
    model.learning_rate = params.learning_rate;
    model.logit = params.logit;
    if (params.logit) {
        const double pbar = std::min(1.0 - 1e-6, std::max(1e-6, ycv.mean()));
        model.base = logit(pbar);
    } else {
        model.base = ycv.mean();
    }

    Eigen::VectorXd f = Eigen::VectorXd::Constant(n, model.base);
    std::vector<double> grad(static_cast<std::size_t>(n));
    TreeParams tp;
    tp.max_depth = params.depth;
    tp.min_leaf = params.min_leaf;
    tp.mtry = 0;
    detail::TreeBuilder builder(data, grad, tp);
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);

    RngStream dummy(0, 0);
    std::vector<double> leaf_num, leaf_den, row_buf;
    std::vector<int> leaf_idx(static_cast<std::size_t>(n));
    for (int round = 0; round < params.rounds; ++round) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const double target = params.logit ? ycv[i] - expit(f[i]) : ycv[i] - f[i];
            grad[static_cast<std::size_t>(i)] = target;
        }
        RegressionTree tree = builder.build(all, dummy);
        for (Eigen::Index i = 0; i < n; ++i) {
            data.fill_row(i, row_buf);
            leaf_idx[static_cast<std::size_t>(i)] = tree.leaf_of(row_buf.data());
        }
        if (params.logit) {
            // Newton step per leaf: sum(y - p) / sum(p(1-p)).
            leaf_num.assign(tree.nodes.size(), 0.0);
            leaf_den.assign(tree.nodes.size(), 0.0);
            for (Eigen::Index i = 0; i < n; ++i) {
                const int leaf = leaf_idx[static_cast<std::size_t>(i)];
                const double p = expit(f[i]);
                leaf_num[static_cast<std::size_t>(leaf)] += ycv[i] - p;
                leaf_den[static_cast<std::size_t>(leaf)] += std::max(p * (1.0 - p), 1e-6);
            }
            for (std::size_t nd = 0; nd < tree.nodes.size(); ++nd)
                if (tree.nodes[nd].feature < 0)
                    tree.nodes[nd].value = leaf_num[nd] / std::max(leaf_den[nd], 1e-12);
        }
        for (Eigen::Index i = 0; i < n; ++i)
            f[i] += params.learning_rate *
                    tree.nodes[static_cast<std::size_t>(leaf_idx[static_cast<std::size_t>(i)])].value;
        model.trees.push_back(std::move(tree));
    }
    return model;
}

}  // namespace acekit
