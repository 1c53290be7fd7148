#pragma once

#include <Eigen/Dense>

#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "acekit/design.hpp"
#include "acekit/elastic_net.hpp"
#include "acekit/errors.hpp"
#include "acekit/glm.hpp"
#include "acekit/rng.hpp"
#include "acekit/trees.hpp"

namespace acekit {

enum class LearnerKind {
    kMeanOnly,
    kFrozen,
    kGlmMain,
    kGlmInteractions,
    kRidgeGlm,
    kSplineGlm,
    kElasticNet,
    kRandomForest,
    kGradientBoosting,
};

enum class Task { kRegression, kProbability };

struct LearnerSpec {
    LearnerKind kind = LearnerKind::kGlmMain;

    double alpha = 1.0;                  // elastic net mixing
    std::optional<double> lambda;        // fixed elastic-net penalty (skips CV)
    double ridge_lambda = 1e-2;          // ridge-glm penalty
    int spline_knots = 3;                // interior knots per continuous column
    int trees = 500;                     // forest size
    int max_depth = -1;                  // forest depth; -1 unlimited, 0 root only
    int min_leaf = 5;
    int mtry = 0;                        // 0 resolves to floor(sqrt(q))
    int rounds = 100;                    // boosting rounds
    double learning_rate = 0.1;
    int boost_depth = 3;
    double frozen_value = 0.0;           // data-independent constant prediction

    void validate() const {
        if (alpha < 0.0 || alpha > 1.0) throw ValidationError("learner: alpha outside [0,1]");
        if (lambda && *lambda < 0.0) throw ValidationError("learner: negative lambda");
        if (ridge_lambda <= 0.0) throw ValidationError("learner: ridge lambda must be positive");
        if (spline_knots < 1) throw ValidationError("learner: spline knots must be >= 1");
        if (trees < 1) throw ValidationError("learner: tree count must be >= 1");
        if (min_leaf < 1) throw ValidationError("learner: min leaf must be >= 1");
        if (rounds < 1) throw ValidationError("learner: boosting rounds must be >= 1");
        if (learning_rate <= 0.0 || learning_rate > 1.0)
            throw ValidationError("learner: learning rate outside (0,1]");
        if (boost_depth < 1) throw ValidationError("learner: boosting depth must be >= 1");
    }

    std::string name() const {
        std::ostringstream os;
        switch (kind) {
            case LearnerKind::kMeanOnly: os << "mean-only"; break;
            case LearnerKind::kFrozen: os << "frozen(" << frozen_value << ")"; break;
            case LearnerKind::kGlmMain: os << "glm-main"; break;
            case LearnerKind::kGlmInteractions: os << "glm-interactions"; break;
            case LearnerKind::kRidgeGlm: os << "ridge-glm(" << ridge_lambda << ")"; break;
            case LearnerKind::kSplineGlm: os << "spline-glm(k=" << spline_knots << ")"; break;
            case LearnerKind::kElasticNet:
                os << "elastic-net(alpha=" << alpha;
                if (lambda) os << ",lambda=" << *lambda;
                os << ")";
                break;
            case LearnerKind::kRandomForest:
                os << "random-forest(" << trees << ")";
                break;
            case LearnerKind::kGradientBoosting:
                os << "gradient-boosted-trees(" << rounds << ")";
                break;
        }
        return os.str();
    }
};

inline std::string to_string(LearnerKind k) {
    switch (k) {
        case LearnerKind::kMeanOnly: return "mean-only";
        case LearnerKind::kFrozen: return "frozen";
        case LearnerKind::kGlmMain: return "glm-main";
        case LearnerKind::kGlmInteractions: return "glm-interactions";
        case LearnerKind::kRidgeGlm: return "ridge-glm";
        case LearnerKind::kSplineGlm: return "spline-glm";
        case LearnerKind::kElasticNet: return "elastic-net";
        case LearnerKind::kRandomForest: return "random-forest";
        case LearnerKind::kGradientBoosting: return "gradient-boosted-trees";
    }
    return "?";
}

inline LearnerKind learner_kind_from_string(const std::string& s) {
    if (s == "mean-only") return LearnerKind::kMeanOnly;
    if (s == "frozen") return LearnerKind::kFrozen;
    if (s == "glm-main") return LearnerKind::kGlmMain;
    if (s == "glm-interactions") return LearnerKind::kGlmInteractions;
    if (s == "ridge-glm") return LearnerKind::kRidgeGlm;
    if (s == "spline-glm") return LearnerKind::kSplineGlm;
    if (s == "elastic-net") return LearnerKind::kElasticNet;
    if (s == "random-forest") return LearnerKind::kRandomForest;
    if (s == "gradient-boosted-trees") return LearnerKind::kGradientBoosting;
    throw ValidationError("unknown learner kind: " + s);
}

inline nlohmann::json to_json(const LearnerSpec& s) {
    nlohmann::json j;
    j["kind"] = to_string(s.kind);
    switch (s.kind) {
        case LearnerKind::kFrozen: j["value"] = s.frozen_value; break;
        case LearnerKind::kRidgeGlm: j["lambda"] = s.ridge_lambda; break;
        case LearnerKind::kSplineGlm: j["knots"] = s.spline_knots; break;
        case LearnerKind::kElasticNet:
            j["alpha"] = s.alpha;
            if (s.lambda) j["lambda"] = *s.lambda;
            break;
        case LearnerKind::kRandomForest:
            j["trees"] = s.trees;
            j["max_depth"] = s.max_depth;
            j["min_leaf"] = s.min_leaf;
            j["mtry"] = s.mtry;
            break;
        case LearnerKind::kGradientBoosting:
            j["rounds"] = s.rounds;
            j["learning_rate"] = s.learning_rate;
            j["depth"] = s.boost_depth;
            break;
        default: break;
    }
    return j;
}

inline LearnerSpec learner_spec_from_json(const nlohmann::json& j) {
    LearnerSpec s;
    s.kind = learner_kind_from_string(j.at("kind").get<std::string>());
    if (j.contains("value")) s.frozen_value = j.at("value").get<double>();
    if (j.contains("alpha")) s.alpha = j.at("alpha").get<double>();
    if (j.contains("lambda")) {
        if (s.kind == LearnerKind::kRidgeGlm) s.ridge_lambda = j.at("lambda").get<double>();
        else s.lambda = j.at("lambda").get<double>();
    }
    if (j.contains("knots")) s.spline_knots = j.at("knots").get<int>();
    if (j.contains("trees")) s.trees = j.at("trees").get<int>();
    if (j.contains("max_depth")) s.max_depth = j.at("max_depth").get<int>();
    if (j.contains("min_leaf")) s.min_leaf = j.at("min_leaf").get<int>();
    if (j.contains("mtry")) s.mtry = j.at("mtry").get<int>();
    if (j.contains("rounds")) s.rounds = j.at("rounds").get<int>();
    if (j.contains("learning_rate")) s.learning_rate = j.at("learning_rate").get<double>();
    if (j.contains("depth")) s.boost_depth = j.at("depth").get<int>();
    s.validate();
    return s;
}

namespace detail {

struct MeanPayload {
    double value = 0.0;
};
struct FrozenPayload {
    double value = 0.0;
};
struct LinearPayload {
    FeatureMap map;
    LinearModel model;
};
struct EnetPayload {
    ElasticNetFit fit;
};
struct ForestPayload {
    ForestModel model;
};
struct BoostPayload {
    BoostModel model;
};

}  // namespace detail

// Immutable fitted learner. Carries the training design contract (width
// and provenance) and rejects prediction inputs that do not match it.
class FittedLearner {
public:
    using Payload = std::variant<detail::MeanPayload, detail::FrozenPayload,
                                 detail::LinearPayload, detail::EnetPayload,
                                 detail::ForestPayload, detail::BoostPayload>;

    FittedLearner(LearnerSpec spec, Task task, Eigen::Index input_cols,
                  std::vector<ColumnRole> provenance, Payload payload)
        : spec_(std::move(spec)),
          task_(task),
          input_cols_(input_cols),
          provenance_(std::move(provenance)),
          payload_(std::move(payload)) {}

    const LearnerSpec& spec() const { return spec_; }
    Task task() const { return task_; }

    Eigen::VectorXd predict(const DesignMatrix& design) const {
        check_contract(design);
        Eigen::VectorXd out = raw_predict(design.values);
        if (task_ == Task::kProbability)
            for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = clamp_probability(out[i]);
        return out;
    }

private:
    void check_contract(const DesignMatrix& design) const {
        if (design.cols() != input_cols_)
            throw ValidationError("predict: design has " + std::to_string(design.cols()) +
                                  " columns, training contract expects " +
                                  std::to_string(input_cols_));
        if (design.provenance.size() != provenance_.size())
            throw ValidationError("predict: design provenance mismatch");
        for (std::size_t i = 0; i < provenance_.size(); ++i)
            if (design.provenance[i] != provenance_[i])
                throw ValidationError("predict: design provenance mismatch at column " +
                                      std::to_string(i));
    }

    Eigen::VectorXd raw_predict(const Eigen::MatrixXd& base) const {
        const Eigen::Index n = base.rows();
        if (const auto* m = std::get_if<detail::MeanPayload>(&payload_))
            return Eigen::VectorXd::Constant(n, m->value);
        if (const auto* f = std::get_if<detail::FrozenPayload>(&payload_))
            return Eigen::VectorXd::Constant(n, f->value);
        if (const auto* l = std::get_if<detail::LinearPayload>(&payload_)) {
            const Eigen::VectorXd eta = l->model.linear(l->map.apply(base));
            if (task_ == Task::kProbability)
                return eta.unaryExpr([](double e) { return expit(e); });
            return eta;
        }
        if (const auto* e = std::get_if<detail::EnetPayload>(&payload_)) {
            const Eigen::VectorXd eta = e->fit.linear(base);
            if (task_ == Task::kProbability)
                return eta.unaryExpr([](double v) { return expit(v); });
            return eta;
        }
        if (const auto* fo = std::get_if<detail::ForestPayload>(&payload_)) {
            Eigen::VectorXd out(n);
            std::vector<double> row(static_cast<std::size_t>(base.cols()));
            for (Eigen::Index i = 0; i < n; ++i) {
                for (Eigen::Index j = 0; j < base.cols(); ++j)
                    row[static_cast<std::size_t>(j)] = base(i, j);
                out[i] = fo->model.predict_row(row.data());
            }
            return out;
        }
        const auto& b = std::get<detail::BoostPayload>(payload_);
        Eigen::VectorXd out(n);
        std::vector<double> row(static_cast<std::size_t>(base.cols()));
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < base.cols(); ++j)
                row[static_cast<std::size_t>(j)] = base(i, j);
            out[i] = b.model.predict_row(row.data());
        }
        return out;
    }

    LearnerSpec spec_;
    Task task_;
    Eigen::Index input_cols_;
    std::vector<ColumnRole> provenance_;
    Payload payload_;
};

// Fits one learner on a base design. Expansion (interactions, splines)
// and standardization happen inside the learner and are replayed at
// prediction time from stored constants.
inline FittedLearner fit_learner(const LearnerSpec& spec, const DesignMatrix& design,
                                 const Eigen::VectorXd& target, Task task, RngStream rng) {
    spec.validate();
    if (design.rows() != target.size()) throw ValidationError("fit_learner: row mismatch");
    if (design.rows() == 0 || design.cols() == 0)
        throw ValidationError("fit_learner: empty design");
    if (!target.allFinite()) throw ValidationError("fit_learner: non-finite target");
    if (task == Task::kProbability) {
        bool any0 = false, any1 = false;
        for (Eigen::Index i = 0; i < target.size(); ++i) {
            if (target[i] == 0.0) any0 = true;
            else if (target[i] == 1.0) any1 = true;
            else throw ValidationError("fit_learner: probability target not in {0,1}");
        }
        if (spec.kind != LearnerKind::kFrozen && (!any0 || !any1))
            throw ValidationError("fit_learner: single-class probability target");
    }

    const Eigen::MatrixXd& base = design.values;
    auto made = [&](FittedLearner::Payload payload) {
        return FittedLearner(spec, task, design.cols(), design.provenance, std::move(payload));
    };

    switch (spec.kind) {
        case LearnerKind::kMeanOnly:
            return made(detail::MeanPayload{target.mean()});
        case LearnerKind::kFrozen:
            return made(detail::FrozenPayload{spec.frozen_value});
        case LearnerKind::kGlmMain: {
            detail::LinearPayload p;
            p.map = fit_feature_map(base, Expansion::kMain);
            p.model = task == Task::kRegression ? fit_ols(base, target)
                                                : fit_logistic(base, target);
            return made(std::move(p));
        }
        case LearnerKind::kGlmInteractions: {
            detail::LinearPayload p;
            p.map = fit_feature_map(base, Expansion::kPairwise);
            const Eigen::MatrixXd expanded = p.map.apply(base);
            p.model = task == Task::kRegression ? fit_ols(expanded, target)
                                                : fit_logistic(expanded, target);
            return made(std::move(p));
        }
        case LearnerKind::kRidgeGlm: {
            detail::LinearPayload p;
            p.map = fit_feature_map(base, Expansion::kMain);
            p.model = task == Task::kRegression ? fit_ridge(base, target, spec.ridge_lambda)
                                                : fit_logistic(base, target, spec.ridge_lambda);
            return made(std::move(p));
        }
        case LearnerKind::kSplineGlm: {
            detail::LinearPayload p;
            p.map = fit_feature_map(base, Expansion::kSpline, spec.spline_knots);
            const Eigen::MatrixXd expanded = p.map.apply(base);
            p.model = task == Task::kRegression ? fit_ols(expanded, target)
                                                : fit_logistic(expanded, target);
            return made(std::move(p));
        }
        case LearnerKind::kElasticNet: {
            ElasticNetParams params;
            params.alpha = spec.alpha;
            params.fixed_lambda = spec.lambda;
            params.binomial = task == Task::kProbability;
            detail::EnetPayload p{fit_elastic_net(base, target, params, rng.derive(1))};
            return made(std::move(p));
        }
        case LearnerKind::kRandomForest: {
            ForestParams params;
            params.trees = spec.trees;
            params.tree.max_depth = spec.max_depth;
            params.tree.min_leaf = spec.min_leaf;
            params.tree.mtry = spec.mtry;
            detail::ForestPayload p{fit_forest(base, target, params, rng.derive(1))};
            return made(std::move(p));
        }
        case LearnerKind::kGradientBoosting: {
            BoostParams params;
            params.rounds = spec.rounds;
            params.learning_rate = spec.learning_rate;
            params.depth = spec.boost_depth;
            params.min_leaf = spec.min_leaf;
            params.logit = task == Task::kProbability;
            detail::BoostPayload p{fit_boost(base, target, params, rng.derive(1))};
            return made(std::move(p));
        }
    }
    throw ValidationError("fit_learner: unknown kind");
}

inline Eigen::VectorXd predict_learner(const FittedLearner& fit, const DesignMatrix& design) {
    return fit.predict(design);
}

}  // namespace acekit
