#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <vector>

#include "acekit/design.hpp"
#include "acekit/errors.hpp"
#include "acekit/folds.hpp"
#include "acekit/rng.hpp"
#include "acekit/stats.hpp"

namespace acekit {

struct ElasticNetFit {
    double intercept = 0.0;
    Eigen::VectorXd coef;  // original scale
    double alpha = 1.0;
    double lambda = 0.0;  // penalty actually used

    Eigen::VectorXd linear(const Eigen::MatrixXd& X) const {
        return (X * coef).array() + intercept;
    }
};

namespace detail {

inline double soft_threshold(double z, double g) {
    if (z > g) return z - g;
    if (z < -g) return z + g;
    return 0.0;
}

// Cyclic coordinate descent for one penalty value on standardized
// columns. Maintains the residual; converges on max coefficient change.
// Weighted form covers the IRLS-reweighted binomial case (weights sum
// is folded into the 1/n convention by the caller providing w ~ O(1)).
inline void cd_gaussian(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& w, Eigen::VectorXd& r,
                        Eigen::VectorXd& beta, double& beta0, bool update_intercept,
                        double lambda, double alpha, double tol, int max_sweeps) {
    const Eigen::Index n = Xs.rows();
    const Eigen::Index q = Xs.cols();
    const double dn = static_cast<double>(n);
    Eigen::VectorXd xsq(q);
    for (Eigen::Index j = 0; j < q; ++j)
        xsq[j] = Xs.col(j).cwiseProduct(w).dot(Xs.col(j)) / dn;
    const double wsum = w.sum() / dn;
    const double l1 = lambda * alpha;
    const double l2 = lambda * (1.0 - alpha);
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double max_delta = 0.0;
        if (update_intercept) {
            const double delta = r.dot(w) / (wsum * dn);
            if (delta != 0.0) {
                beta0 += delta;
                r.array() -= delta;
                max_delta = std::max(max_delta, std::fabs(delta));
            }
        }
        for (Eigen::Index j = 0; j < q; ++j) {
            if (xsq[j] <= 0.0) continue;
            const double grad = Xs.col(j).cwiseProduct(w).dot(r) / dn + xsq[j] * beta[j];
            const double bj = soft_threshold(grad, l1) / (xsq[j] + l2);
            const double delta = bj - beta[j];
            if (delta != 0.0) {
                r -= delta * Xs.col(j);
                beta[j] = bj;
                max_delta = std::max(max_delta, std::fabs(delta));
            }
        }
        if (max_delta < tol) break;
    }
}

inline std::vector<double> lambda_path(double lambda_max, double ratio, int count) {
    std::vector<double> path(count);
    const double loghi = std::log(lambda_max);
    const double loglo = std::log(lambda_max * ratio);
    for (int i = 0; i < count; ++i)
        path[i] = std::exp(loghi + (loglo - loghi) * static_cast<double>(i) /
                                       static_cast<double>(count - 1));
    return path;
}

}  // namespace detail

struct ElasticNetParams {
    double alpha = 1.0;
    std::optional<double> fixed_lambda;  // skip CV when set
    int path_points = 100;
    int cv_folds = 5;
    double tol = 1e-7;
    int max_sweeps = 2000;
    bool binomial = false;
};

namespace detail {

// Full coefficient path on standardized data with warm starts. Returns
// one (intercept, beta) pair per lambda.
inline void enet_path(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& y,
                      const std::vector<double>& path, const ElasticNetParams& p,
                      std::vector<double>& b0_out, std::vector<Eigen::VectorXd>& beta_out) {
    const Eigen::Index n = Xs.rows();
    const Eigen::Index q = Xs.cols();
    b0_out.assign(path.size(), 0.0);
    beta_out.assign(path.size(), Eigen::VectorXd::Zero(q));
    if (!p.binomial) {
        const double ybar = y.mean();
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
        Eigen::VectorXd r = y.array() - ybar;
        const Eigen::VectorXd w = Eigen::VectorXd::Ones(n);
        double b0 = 0.0;  // on centered response
        for (std::size_t k = 0; k < path.size(); ++k) {
            cd_gaussian(Xs, w, r, beta, b0, true, path[k], p.alpha, p.tol, p.max_sweeps);
            b0_out[k] = b0 + ybar;
            beta_out[k] = beta;
        }
        return;
    }
    // Binomial: outer quadratic approximation per lambda, warm-started.
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
    double b0 = logit(std::min(1.0 - 1e-6, std::max(1e-6, y.mean())));
    for (std::size_t k = 0; k < path.size(); ++k) {
        for (int outer = 0; outer < 25; ++outer) {
            const Eigen::VectorXd eta = (Xs * beta).array() + b0;
            Eigen::VectorXd w(n), z(n);
            for (Eigen::Index i = 0; i < n; ++i) {
                const double mu = expit(eta[i]);
                const double wi = std::max(mu * (1.0 - mu), 1e-5);
                w[i] = wi;
                z[i] = eta[i] + (y[i] - mu) / wi;
            }
            const Eigen::VectorXd beta_prev = beta;
            const double b0_prev = b0;
            Eigen::VectorXd r = z - (Xs * beta).array().matrix() -
                                Eigen::VectorXd::Constant(n, b0);
            cd_gaussian(Xs, w, r, beta, b0, true, path[k], p.alpha, p.tol, p.max_sweeps);
            const double delta = std::max((beta - beta_prev).cwiseAbs().maxCoeff(),
                                          std::fabs(b0 - b0_prev));
            if (delta < p.tol) break;
        }
        b0_out[k] = b0;
        beta_out[k] = beta;
    }
}

inline double enet_lambda_max(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& y,
                              const ElasticNetParams& p) {
    const double dn = static_cast<double>(Xs.rows());
    const Eigen::VectorXd yc = y.array() - y.mean();
    const double gmax = (Xs.transpose() * yc).cwiseAbs().maxCoeff() / dn;
    return std::max(gmax / std::max(p.alpha, 1e-3), 1e-10);
}

}  // namespace detail

// Elastic net with internal K-fold CV over a log-spaced penalty path
// (lambda-min rule; ties resolve to the stronger penalty). A fixed
// lambda skips the CV.
inline ElasticNetFit fit_elastic_net(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                     const ElasticNetParams& p, RngStream rng) {
    if (X.rows() != y.size()) throw ValidationError("elastic net: row mismatch");
    if (X.cols() == 0 || X.rows() == 0) throw ValidationError("elastic net: empty design");
    Standardizer std_;
    std_.fit(X);
    const Eigen::MatrixXd Xs = std_.apply(X);
    const Eigen::Index q = X.cols();

    const double lmax = detail::enet_lambda_max(Xs, y, p);
    const double ratio = X.rows() > q ? 1e-4 : 1e-2;

    double lambda_use = 0.0;
    if (p.fixed_lambda) {
        lambda_use = *p.fixed_lambda;
    } else {
        const std::vector<double> path = detail::lambda_path(lmax, ratio, p.path_points);
        // CV curve accumulated over folds fitted on their own subsets.
        std::vector<double> cv_err(path.size(), 0.0);
        FoldPlan folds = p.binomial ? make_stratified_folds(y, p.cv_folds, rng)
                                    : make_plain_folds(y.size(), p.cv_folds, rng);
        for (int k = 0; k < folds.K; ++k) {
            const auto train = folds.complement_indices(k);
            const auto test = folds.fold_indices(k);
            Eigen::MatrixXd Xtr(train.size(), q);
            Eigen::VectorXd ytr(train.size());
            for (std::size_t i = 0; i < train.size(); ++i) {
                Xtr.row(static_cast<Eigen::Index>(i)) = X.row(train[i]);
                ytr[static_cast<Eigen::Index>(i)] = y[train[i]];
            }
            Standardizer fold_std;
            fold_std.fit(Xtr);
            std::vector<double> b0s;
            std::vector<Eigen::VectorXd> betas;
            detail::enet_path(fold_std.apply(Xtr), ytr, path, p, b0s, betas);
            for (std::size_t li = 0; li < path.size(); ++li) {
                for (int i : test) {
                    double eta = b0s[li];
                    for (Eigen::Index j = 0; j < q; ++j)
                        eta += betas[li][j] * (X(i, j) - fold_std.center[static_cast<std::size_t>(j)]) /
                               fold_std.scale[static_cast<std::size_t>(j)];
                    if (p.binomial) {
                        const double mu = clamp_probability(expit(eta), 1e-12);
                        cv_err[li] -= 2.0 * (y[i] * std::log(mu) +
                                             (1.0 - y[i]) * std::log(1.0 - mu));
                    } else {
                        const double d = y[i] - eta;
                        cv_err[li] += d * d;
                    }
                }
            }
        }
        std::size_t best = 0;
        for (std::size_t li = 1; li < path.size(); ++li)
            if (cv_err[li] < cv_err[best]) best = li;
        lambda_use = path[best];
    }

    // Final fit on all rows, warm-started down the path to the chosen
    // penalty (or straight to it when it exceeds lambda_max).
    std::vector<double> final_path;
    if (lambda_use >= lmax) {
        final_path.push_back(lambda_use);
    } else {
        for (double l : detail::lambda_path(lmax, ratio, p.path_points)) {
            if (l > lambda_use) final_path.push_back(l);
        }
        final_path.push_back(lambda_use);
    }
    std::vector<double> b0s;
    std::vector<Eigen::VectorXd> betas;
    ElasticNetParams pf = p;
    if (lambda_use == 0.0) pf.max_sweeps = 10000;
    detail::enet_path(Xs, y, final_path, pf, b0s, betas);

    ElasticNetFit fit;
    fit.alpha = p.alpha;
    fit.lambda = lambda_use;
    fit.coef = betas.back();
    for (Eigen::Index j = 0; j < q; ++j)
        fit.coef[j] /= std_.scale[static_cast<std::size_t>(j)];
    fit.intercept = b0s.back();
    for (Eigen::Index j = 0; j < q; ++j)
        fit.intercept -= fit.coef[j] * std_.center[static_cast<std::size_t>(j)];
    return fit;
}

}  // namespace acekit
