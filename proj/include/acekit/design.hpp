#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "acekit/errors.hpp"
#include "acekit/stats.hpp"

namespace acekit {

enum class Expansion { kMain, kPairwise, kSpline };

enum class ColumnRole { kMain, kInteraction, kSpline };

// Numeric design with column provenance and (optional) standardization
// constants recorded when applied.
struct DesignMatrix {
    Eigen::MatrixXd values;
    std::vector<ColumnRole> provenance;
    std::vector<double> center;  // empty unless standardized
    std::vector<double> scale;

    Eigen::Index rows() const { return values.rows(); }
    Eigen::Index cols() const { return values.cols(); }
    bool standardized() const { return !center.empty(); }
};

inline DesignMatrix make_design(const Eigen::MatrixXd& base) {
    DesignMatrix d;
    d.values = base;
    d.provenance.assign(static_cast<std::size_t>(base.cols()), ColumnRole::kMain);
    return d;
}

namespace detail {

inline std::vector<double> column_to_vector(const Eigen::MatrixXd& m, Eigen::Index c) {
    return std::vector<double>(m.col(c).data(), m.col(c).data() + m.rows());
}

inline bool is_binary_column(const Eigen::MatrixXd& m, Eigen::Index c) {
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        if (m(i, c) != 0.0 && m(i, c) != 1.0) return false;
    return true;
}

inline bool is_constant_column(const Eigen::MatrixXd& m, Eigen::Index c) {
    for (Eigen::Index i = 1; i < m.rows(); ++i)
        if (m(i, c) != m(0, c)) return false;
    return true;
}

// Natural cubic spline basis over knots xi_1 < ... < xi_K: the linear
// term plus K-2 truncated-cubic differences, linear beyond the boundary
// knots. K knots yield K-1 basis columns.
inline void natural_spline_basis(double x, const std::vector<double>& knots,
                                 double* out /* size knots.size()-1 */) {
    const std::size_t K = knots.size();
    const double xK = knots[K - 1];
    const double xKm1 = knots[K - 2];
    auto cube_plus = [](double v) { return v > 0.0 ? v * v * v : 0.0; };
    auto d = [&](std::size_t m) {
        return (cube_plus(x - knots[m]) - cube_plus(x - xK)) / (xK - knots[m]);
    };
    out[0] = x;
    const double dlast = (cube_plus(x - xKm1) - cube_plus(x - xK)) / (xK - xKm1);
    for (std::size_t m = 0; m + 2 < K; ++m) out[m + 1] = d(m) - dlast;
}

}  // namespace detail

// Recipe for expanding a base confounder matrix; fitted on training data
// (knot locations, binary flags) and re-applied at prediction time.
struct FeatureMap {
    Expansion expansion = Expansion::kMain;
    Eigen::Index input_cols = 0;
    // Spline only: per input column, the knot sequence (empty = passthrough).
    std::vector<std::vector<double>> knots;

    Eigen::MatrixXd apply(const Eigen::MatrixXd& base) const {
        if (base.cols() != input_cols)
            throw ValidationError("design contract mismatch: expected " +
                                  std::to_string(input_cols) + " base columns, got " +
                                  std::to_string(base.cols()));
        if (!base.allFinite()) throw ValidationError("design: non-finite input");
        const Eigen::Index n = base.rows();
        const Eigen::Index p = base.cols();
        switch (expansion) {
            case Expansion::kMain:
                return base;
            case Expansion::kPairwise: {
                Eigen::MatrixXd out(n, p + p * (p - 1) / 2);
                out.leftCols(p) = base;
                Eigen::Index c = p;
                for (Eigen::Index a = 0; a < p; ++a)
                    for (Eigen::Index b = a + 1; b < p; ++b)
                        out.col(c++) = base.col(a).cwiseProduct(base.col(b));
                return out;
            }
            case Expansion::kSpline: {
                Eigen::Index q = 0;
                for (const auto& k : knots)
                    q += k.empty() ? 1 : static_cast<Eigen::Index>(k.size()) - 1;
                Eigen::MatrixXd out(n, q);
                std::vector<double> buf;
                Eigen::Index c = 0;
                for (Eigen::Index j = 0; j < p; ++j) {
                    const auto& k = knots[static_cast<std::size_t>(j)];
                    if (k.empty()) {
                        out.col(c++) = base.col(j);
                        continue;
                    }
                    buf.resize(k.size() - 1);
                    for (Eigen::Index i = 0; i < n; ++i) {
                        detail::natural_spline_basis(base(i, j), k, buf.data());
                        for (std::size_t b = 0; b < buf.size(); ++b)
                            out(i, c + static_cast<Eigen::Index>(b)) = buf[b];
                    }
                    c += static_cast<Eigen::Index>(k.size()) - 1;
                }
                return out;
            }
        }
        throw ValidationError("design: unknown expansion");
    }

    std::vector<ColumnRole> provenance() const {
        std::vector<ColumnRole> roles;
        const Eigen::Index p = input_cols;
        switch (expansion) {
            case Expansion::kMain:
                roles.assign(static_cast<std::size_t>(p), ColumnRole::kMain);
                break;
            case Expansion::kPairwise:
                roles.assign(static_cast<std::size_t>(p), ColumnRole::kMain);
                roles.insert(roles.end(), static_cast<std::size_t>(p * (p - 1) / 2),
                             ColumnRole::kInteraction);
                break;
            case Expansion::kSpline:
                for (const auto& k : knots) {
                    if (k.empty()) roles.push_back(ColumnRole::kMain);
                    else roles.insert(roles.end(), k.size() - 1, ColumnRole::kSpline);
                }
                break;
        }
        return roles;
    }
};

// Builds the expansion recipe from training data. Spline knots sit at
// equally spaced quantiles with boundary knots at the observed extremes;
// binary columns pass through untouched.
inline FeatureMap fit_feature_map(const Eigen::MatrixXd& W, Expansion expansion,
                                  int interior_knots = 3) {
    if (!W.allFinite()) throw ValidationError("design: non-finite input");
    FeatureMap map;
    map.expansion = expansion;
    map.input_cols = W.cols();
    if (expansion != Expansion::kSpline) return map;

    map.knots.resize(static_cast<std::size_t>(W.cols()));
    for (Eigen::Index j = 0; j < W.cols(); ++j) {
        if (detail::is_constant_column(W, j))
            throw ValidationError("spline expansion: constant column " + std::to_string(j));
        if (detail::is_binary_column(W, j)) continue;
        std::vector<double> k;
        k.push_back(quantile(detail::column_to_vector(W, j), 0.0));
        for (int m = 1; m <= interior_knots; ++m)
            k.push_back(quantile(detail::column_to_vector(W, j),
                                 static_cast<double>(m) / (interior_knots + 1)));
        k.push_back(quantile(detail::column_to_vector(W, j), 1.0));
        std::sort(k.begin(), k.end());
        k.erase(std::unique(k.begin(), k.end()), k.end());
        // Too few distinct knots (heavily tied column): leave it linear.
        if (k.size() >= 3) map.knots[static_cast<std::size_t>(j)] = std::move(k);
    }
    return map;
}

inline DesignMatrix expand_design(const Eigen::MatrixXd& W, Expansion expansion,
                                  int interior_knots = 3) {
    const FeatureMap map = fit_feature_map(W, expansion, interior_knots);
    DesignMatrix d;
    d.values = map.apply(W);
    d.provenance = map.provenance();
    return d;
}

// Column-wise centering/scaling with constants captured at fit time.
// Near-constant columns get unit scale so they zero out after centering.
struct Standardizer {
    std::vector<double> center;
    std::vector<double> scale;

    void fit(const Eigen::MatrixXd& m) {
        const auto q = static_cast<std::size_t>(m.cols());
        center.resize(q);
        scale.resize(q);
        const double n = static_cast<double>(m.rows());
        for (std::size_t j = 0; j < q; ++j) {
            const auto col = m.col(static_cast<Eigen::Index>(j));
            center[j] = col.mean();
            const double var = (col.array() - center[j]).square().sum() / n;
            scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& m) const {
        if (static_cast<std::size_t>(m.cols()) != center.size())
            throw ValidationError("standardizer: column count mismatch");
        Eigen::MatrixXd out = m;
        for (std::size_t j = 0; j < center.size(); ++j)
            out.col(static_cast<Eigen::Index>(j)) =
                (m.col(static_cast<Eigen::Index>(j)).array() - center[j]) / scale[j];
        return out;
    }
};

}  // namespace acekit
