#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "acekit/design.hpp"
#include "acekit/errors.hpp"
#include "acekit/stats.hpp"

namespace acekit {

// Linear predictor with explicit intercept; link handling lives with the
// caller (identity vs logit).
struct LinearModel {
    double intercept = 0.0;
    Eigen::VectorXd coef;

    Eigen::VectorXd linear(const Eigen::MatrixXd& X) const {
        if (X.cols() != coef.size())
            throw ValidationError("linear model: design has " + std::to_string(X.cols()) +
                                  " columns, expected " + std::to_string(coef.size()));
        return (X * coef).array() + intercept;
    }
};

// Least squares with intercept via rank-revealing QR; collinear columns
// are pivoted out deterministically.
inline LinearModel fit_ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    if (X.rows() != y.size()) throw ValidationError("fit_ols: row mismatch");
    if (X.rows() == 0) throw ValidationError("fit_ols: empty design");
    Eigen::MatrixXd Xi(X.rows(), X.cols() + 1);
    Xi.col(0).setOnes();
    Xi.rightCols(X.cols()) = X;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Xi);
    qr.setThreshold(1e-10);
    const Eigen::VectorXd beta = qr.solve(y);
    LinearModel m;
    m.intercept = beta[0];
    m.coef = beta.tail(X.cols());
    return m;
}

// Ridge regression on standardized columns, intercept unpenalized.
// Objective: (1/2n)||y - b0 - Xb||^2 + (lambda/2)||b||^2.
inline LinearModel fit_ridge(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda) {
    if (X.rows() != y.size()) throw ValidationError("fit_ridge: row mismatch");
    Standardizer std_;
    std_.fit(X);
    const Eigen::MatrixXd Xs = std_.apply(X);
    const double n = static_cast<double>(X.rows());
    const double ybar = y.mean();
    const Eigen::VectorXd yc = y.array() - ybar;
    Eigen::MatrixXd A = (Xs.transpose() * Xs) / n;
    A.diagonal().array() += lambda;
    const Eigen::VectorXd b = Xs.transpose() * yc / n;
    const Eigen::VectorXd beta_s = A.ldlt().solve(b);
    LinearModel m;
    m.coef = beta_s;
    for (Eigen::Index j = 0; j < m.coef.size(); ++j)
        m.coef[j] /= std_.scale[static_cast<std::size_t>(j)];
    m.intercept = ybar;
    for (Eigen::Index j = 0; j < m.coef.size(); ++j)
        m.intercept -= m.coef[j] * std_.center[static_cast<std::size_t>(j)];
    return m;
}

namespace detail {

inline double binomial_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double m = std::min(1.0 - 1e-12, std::max(1e-12, mu[i]));
        dev -= 2.0 * (y[i] * std::log(m) + (1.0 - y[i]) * std::log(1.0 - m));
    }
    return dev;
}

// IRLS core on a design that already contains whatever columns should be
// fitted; `penalty` applies to all columns except the intercept (col 0).
inline Eigen::VectorXd irls_core(const Eigen::MatrixXd& Xi, const Eigen::VectorXd& y,
                                 double penalty, double tol, int max_iter, bool* diverged) {
    const Eigen::Index n = Xi.rows();
    const Eigen::Index q = Xi.cols();
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
    const double ybar = std::min(1.0 - 1e-6, std::max(1e-6, y.mean()));
    beta[0] = logit(ybar);
    double dev_prev = std::numeric_limits<double>::infinity();
    *diverged = false;
    for (int it = 0; it < max_iter; ++it) {
        const Eigen::VectorXd eta = Xi * beta;
        Eigen::VectorXd mu(n), w(n), z(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            mu[i] = expit(eta[i]);
            const double wi = std::max(mu[i] * (1.0 - mu[i]), 1e-10);
            w[i] = wi;
            z[i] = eta[i] + (y[i] - mu[i]) / wi;
        }
        Eigen::MatrixXd A = Xi.transpose() * w.asDiagonal() * Xi;
        if (penalty > 0.0) {
            const double scaled = penalty * static_cast<double>(n);
            for (Eigen::Index j = 1; j < q; ++j) A(j, j) += scaled;
        }
        const Eigen::VectorXd b = Xi.transpose() * (w.asDiagonal() * z);
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
        Eigen::VectorXd beta_new = ldlt.solve(b);
        if (!beta_new.allFinite() || (A * beta_new - b).cwiseAbs().maxCoeff() >
                                         1e-6 * (b.cwiseAbs().maxCoeff() + 1.0)) {
            // Singular system: retry with a jitter, then give up to the
            // caller's ridge fallback.
            A.diagonal().array() += 1e-8 * (A.trace() / static_cast<double>(q) + 1.0);
            beta_new = A.ldlt().solve(b);
            if (!beta_new.allFinite()) {
                *diverged = true;
                return beta;
            }
        }
        beta = beta_new;
        const Eigen::VectorXd mu_new = (Xi * beta).unaryExpr([](double e) { return expit(e); });
        const double dev = binomial_deviance(y, mu_new);
        if (std::fabs(dev_prev - dev) < tol * (std::fabs(dev) + 0.1)) {
            dev_prev = dev;
            break;
        }
        dev_prev = dev;
    }
    // Separation heuristic: vanishing deviance with runaway coefficients.
    if (dev_prev < 1e-6 || beta.tail(q - 1).cwiseAbs().maxCoeff() > 30.0) *diverged = true;
    return beta;
}

}  // namespace detail

// Logistic regression by IRLS (deviance tolerance 1e-8, at most 50
// iterations). On separation the fit is redone with a small ridge
// penalty (1e-4) on standardized columns.
inline LinearModel fit_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                double penalty = 0.0) {
    if (X.rows() != y.size()) throw ValidationError("fit_logistic: row mismatch");
    bool both = false, any1 = false, any0 = false;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        if (y[i] == 1.0) any1 = true;
        else if (y[i] == 0.0) any0 = true;
        else throw ValidationError("fit_logistic: target not in {0,1}");
    }
    both = any1 && any0;
    if (!both) throw ValidationError("fit_logistic: single-class probability target");

    Standardizer std_;
    std_.fit(X);
    const Eigen::MatrixXd Xs = std_.apply(X);
    Eigen::MatrixXd Xi(X.rows(), X.cols() + 1);
    Xi.col(0).setOnes();
    Xi.rightCols(X.cols()) = Xs;

    bool diverged = false;
    Eigen::VectorXd beta = detail::irls_core(Xi, y, penalty, 1e-8, 50, &diverged);
    if (diverged && penalty < 1e-4)
        beta = detail::irls_core(Xi, y, 1e-4, 1e-8, 50, &diverged);

    LinearModel m;
    m.coef = beta.tail(X.cols());
    for (Eigen::Index j = 0; j < m.coef.size(); ++j)
        m.coef[j] /= std_.scale[static_cast<std::size_t>(j)];
    m.intercept = beta[0];
    for (Eigen::Index j = 0; j < m.coef.size(); ++j)
        m.intercept -= m.coef[j] * std_.center[static_cast<std::size_t>(j)];
    return m;
}

// One-parameter, intercept-free logistic regression of a [0,1] response
// on a single covariate with a fixed offset: Newton with step halving.
// Returns the fluctuation coefficient; throws if 100 iterations do not
// converge.
inline double fit_logistic_fluctuation(const Eigen::VectorXd& y01, const Eigen::VectorXd& h,
                                       const Eigen::VectorXd& offset) {
    const Eigen::Index n = y01.size();
    if (h.size() != n || offset.size() != n)
        throw ValidationError("fluctuation: length mismatch");
    auto negloglik = [&](double e) {
        double nll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mu =
                std::min(1.0 - 1e-12, std::max(1e-12, expit(offset[i] + e * h[i])));
            nll -= y01[i] * std::log(mu) + (1.0 - y01[i]) * std::log(1.0 - mu);
        }
        return nll;
    };
    double eps = 0.0;
    double nll = negloglik(0.0);
    const double score_tol = 1e-10 * static_cast<double>(n);
    for (int it = 0; it < 100; ++it) {
        double score = 0.0, info = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mu = expit(offset[i] + eps * h[i]);
            score += h[i] * (y01[i] - mu);
            info += h[i] * h[i] * mu * (1.0 - mu);
        }
        if (std::fabs(score) < score_tol) return eps;
        if (info < 1e-300) throw EstimationError("fluctuation: zero curvature");
        double step = score / info;
        double eps_new = eps + step;
        double nll_new = negloglik(eps_new);
        int halvings = 0;
        while (nll_new > nll + 1e-14 && halvings < 60) {
            step *= 0.5;
            eps_new = eps + step;
            nll_new = negloglik(eps_new);
            ++halvings;
        }
        if (std::fabs(eps_new - eps) < 1e-14 * (std::fabs(eps) + 1.0)) return eps_new;
        eps = eps_new;
        nll = nll_new;
    }
    throw EstimationError("fluctuation: IRLS did not converge in 100 iterations");
}

}  // namespace acekit
