#pragma once

// Maximum simulated likelihood estimation: BFGS ascent with Armijo
// backtracking over the analytic score, covariance of the estimates, and
// the Wald statistics reported in the tables.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixlogit/dataset.hpp"
#include "mixlogit/halton.hpp"
#include "mixlogit/likelihood.hpp"
#include "mixlogit/linalg.hpp"
#include "mixlogit/math.hpp"
#include "mixlogit/model_spec.hpp"

namespace mixlogit {

enum class CovarianceMethod { numerical_hessian, bhhh };

inline std::string to_string(CovarianceMethod m) {
    return m == CovarianceMethod::numerical_hessian ? "numerical_hessian" : "bhhh";
}

inline CovarianceMethod covariance_method_from_string(const std::string& s) {
    if (s == "numerical_hessian") return CovarianceMethod::numerical_hessian;
    if (s == "bhhh") return CovarianceMethod::bhhh;
    throw std::runtime_error("unknown covariance method '" + s + "'");
}

struct EstimationOptions {
    int n_draws = 500;
    int max_iterations = 500;
    double gradient_tolerance = 1e-6;  // max-norm of the score
    double step_tolerance = 1e-10;     // max-norm of the accepted step
    CovarianceMethod covariance_method = CovarianceMethod::numerical_hessian;
    int skip = kDefaultHaltonSkip;
    unsigned n_threads = 1;

    void validate() const {
        if (n_draws < 1 || max_iterations < 1 || skip < 0 || gradient_tolerance <= 0.0 ||
            step_tolerance <= 0.0) {
            throw std::invalid_argument("estimation options must be positive");
        }
    }
};

enum class StopReason { gradient, step, iteration_limit };

inline std::string to_string(StopReason r) {
    switch (r) {
        case StopReason::gradient: return "gradient";
        case StopReason::step: return "step";
        case StopReason::iteration_limit: return "iteration_limit";
    }
    throw std::logic_error("invalid StopReason");
}

struct TraceEntry {
    int iteration = 0;
    double ll = 0.0;
    double grad_norm = 0.0;  // max-norm
    double step_size = 0.0;  // max-norm of the accepted step
};

struct EstimationResult {
    std::vector<std::string> slot_names;
    std::vector<double> theta_hat;
    Matrix covariance;
    std::vector<double> std_errors;
    std::vector<double> t_stats;
    std::vector<double> p_values;
    std::vector<bool> retained;  // |t| >= 1.645, the 90% two-tailed cut
    double ll_zero = 0.0;
    double ll_converged = 0.0;
    double rho_squared = 0.0;
    int iterations = 0;
    bool converged = false;
    StopReason stop_reason = StopReason::iteration_limit;
    std::size_t n_obs = 0;
    int n_draws_used = 0;
    int halton_skip = static_cast<int>(kDefaultHaltonSkip);
    std::string fingerprint;
    std::vector<TraceEntry> trace;
    ModelSpec spec;
    Stratum stratum = Stratum::pooled;
};

inline constexpr double kRetentionT = 1.645;

// ---------------------------------------------------------------------------
// Fit and Wald statistics
// ---------------------------------------------------------------------------

inline double pseudo_r2(double ll_zero, double ll_converged) {
    if (ll_zero == 0.0) throw std::invalid_argument("pseudo_r2: ll_zero is zero");
    return 1.0 - ll_converged / ll_zero;
}

struct WaldStats {
    std::vector<double> std_errors;
    std::vector<double> t_stats;
    std::vector<double> p_values;
    std::vector<bool> retained;
};

// se = sqrt(diag), t = theta/se, p from the standard normal two-tailed
// approximation. A zero standard error leaves t and p undefined (NaN) and
// the parameter unretained.
inline WaldStats wald_stats(const std::vector<double>& theta, const Matrix& covariance) {
    if (covariance.rows != theta.size() || covariance.cols != theta.size()) {
        throw std::invalid_argument("wald_stats: covariance shape mismatch");
    }
    const double nan = std::numeric_limits<double>::quiet_NaN();
    WaldStats w;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        const double var = covariance(k, k);
        if (var < 0.0) throw std::runtime_error("wald_stats: negative variance at slot " + std::to_string(k));
        const double se = std::sqrt(var);
        w.std_errors.push_back(se);
        if (se == 0.0) {
            w.t_stats.push_back(nan);
            w.p_values.push_back(nan);
            w.retained.push_back(false);
            continue;
        }
        const double t = theta[k] / se;
        w.t_stats.push_back(t);
        w.p_values.push_back(std::erfc(std::fabs(t) / kSqrt2));
        w.retained.push_back(std::fabs(t) >= kRetentionT);
    }
    return w;
}

// ---------------------------------------------------------------------------
// Covariance
// ---------------------------------------------------------------------------

// Central-difference Jacobian of a gradient callback, symmetrized. Used both
// on the model score and directly in tests with analytic gradients.
template <typename ScoreFn>
Matrix numerical_hessian(ScoreFn&& score, const std::vector<double>& theta) {
    const std::size_t p = theta.size();
    Matrix h(p, p);
    std::vector<double> probe = theta;
    for (std::size_t k = 0; k < p; ++k) {
        const double step = std::max(1e-4, 1e-4 * std::fabs(theta[k]));
        probe[k] = theta[k] + step;
        const std::vector<double> gp = score(probe);
        probe[k] = theta[k] - step;
        const std::vector<double> gm = score(probe);
        probe[k] = theta[k];
        for (std::size_t j = 0; j < p; ++j) h(j, k) = (gp[j] - gm[j]) / (2.0 * step);
    }
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i + 1; j < p; ++j) {
            const double s = 0.5 * (h(i, j) + h(j, i));
            h(i, j) = s;
            h(j, i) = s;
        }
    }
    return h;
}

// Covariance from a score callback: inverse of the negated numerical
// Hessian.
template <typename ScoreFn>
Matrix covariance_from_score(ScoreFn&& score, const std::vector<double>& theta) {
    Matrix h = numerical_hessian(score, theta);
    for (double& v : h.a) v = -v;
    return invert_spd(h, "negative Hessian");
}

inline Matrix compute_covariance(const CompiledModel& model, const std::vector<double>& theta,
                                 const DrawMatrix& draws, CovarianceMethod method,
                                 unsigned n_threads = 1) {
    if (method == CovarianceMethod::numerical_hessian) {
        auto score = [&](const std::vector<double>& t) {
            ScoreEval e = eval_ll_and_score(model, t, draws, n_threads);
            if (!e.ok) throw std::runtime_error("score not finite while differencing the Hessian");
            return e.gradient;
        };
        return covariance_from_score(score, theta);
    }
    const std::size_t p = model.n_params();
    const std::vector<double> rows = observation_scores(model, theta, draws, n_threads);
    Matrix b(p, p);
    for (std::size_t n = 0; n < model.n_obs(); ++n) {
        const double* g = rows.data() + n * p;
        for (std::size_t i = 0; i < p; ++i) {
            for (std::size_t j = i; j < p; ++j) b(i, j) += g[i] * g[j];
        }
    }
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = i; j < p; ++j) b(j, i) = b(i, j);
    }
    return invert_spd(b, "score outer-product matrix");
}

// ---------------------------------------------------------------------------
// Config fingerprint
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t hash, const std::string& s) {
    for (unsigned char c : s) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Stable hash of everything that determines an estimation: spec, stratum,
// observation count, and options. Two results with equal fingerprints came
// from the same configuration.
inline std::string config_fingerprint(const ModelSpec& spec, const Dataset& data,
                                      const EstimationOptions& options) {
    std::uint64_t h = 1469598103934665603ULL;
    h = detail::fnv1a(h, spec_to_json(spec).dump());
    h = detail::fnv1a(h, to_string(data.stratum));
    h = detail::fnv1a(h, std::to_string(data.observations.size()));
    h = detail::fnv1a(h, std::to_string(options.n_draws));
    h = detail::fnv1a(h, std::to_string(options.max_iterations));
    h = detail::fnv1a(h, detail::format_double(options.gradient_tolerance));
    h = detail::fnv1a(h, detail::format_double(options.step_tolerance));
    h = detail::fnv1a(h, to_string(options.covariance_method));
    h = detail::fnv1a(h, std::to_string(options.skip));
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// BFGS maximization
// ---------------------------------------------------------------------------

// Start point: zeros, with random-parameter scale slots at 0.1. The
// likelihood is even in each raw scale, so the origin is a stationary
// plateau in those directions; nudging them off zero lets the line search
// make progress.
inline std::vector<double> start_point(const ParameterLayout& layout) {
    std::vector<double> theta(layout.size(), 0.0);
    for (const auto& e : layout.entries) {
        if (e.random) theta[e.sd_slot] = 0.1;
    }
    return theta;
}

inline EstimationResult estimate(const ModelSpec& spec, const Dataset& data,
                                 const EstimationOptions& options,
                                 const DrawMatrix* shared_draws = nullptr) {
    options.validate();
    const CompiledModel model = compile_model(data, spec);
    const std::size_t p = model.n_params();

    DrawMatrix local_draws;
    const DrawMatrix* draws = &local_draws;
    if (model.n_random > 0) {
        if (shared_draws != nullptr) {
            draws = shared_draws;
        } else {
            local_draws = build_draws(model.n_obs(), static_cast<std::size_t>(options.n_draws),
                                      model.n_random, static_cast<std::size_t>(options.skip));
        }
    }

    // Evenness in every sd slot confines the search to sigma >= 0, making
    // zero a bound: a slot pinned there with an inward gradient is frozen,
    // optimality is judged by the projected gradient, and steps that would
    // cross are clamped onto the bound instead of landing past the kink.
    std::vector<char> is_sd_slot(p, 0);
    for (const auto& e : model.layout.entries) {
        if (e.random) is_sd_slot[static_cast<std::size_t>(e.sd_slot)] = 1;
    }

    std::vector<double> theta = start_point(model.layout);
    ScoreEval cur = eval_ll_and_score(model, theta, *draws, options.n_threads);
    if (!cur.ok) throw std::runtime_error("log likelihood is not finite at the start point");

    std::vector<double> masked(p);
    auto mask_gradient = [&](const std::vector<double>& th, const std::vector<double>& g) {
        for (std::size_t i = 0; i < p; ++i) {
            masked[i] = is_sd_slot[i] && th[i] == 0.0 && g[i] <= 0.0 ? 0.0 : g[i];
        }
        return masked;
    };
    auto bound_pattern = [&](const std::vector<double>& th) {
        std::vector<char> at(p, 0);
        for (std::size_t i = 0; i < p; ++i) at[i] = is_sd_slot[i] && th[i] == 0.0;
        return at;
    };

    EstimationResult result;
    result.slot_names = model.layout.slot_names;
    result.spec = spec;
    result.stratum = data.stratum;
    result.n_obs = model.n_obs();
    result.n_draws_used = model.n_random > 0 ? static_cast<int>(draws->n_draws) : 0;
    result.halton_skip = options.skip;
    result.fingerprint = config_fingerprint(spec, data, options);
    result.ll_zero = null_log_likelihood(model.n_obs());

    auto projected_norm = [&]() {
        double m = 0.0;
        const auto& g = mask_gradient(theta, cur.gradient);
        for (double v : g) m = std::max(m, std::fabs(v));
        return m;
    };

    result.trace.push_back({0, cur.value, projected_norm(), 0.0});

    Matrix h_inv = Matrix::identity(p);  // inverse Hessian approximation of -ll
    std::vector<double> direction(p), theta_new(p), s(p), y(p), hy(p), gm(p);
    std::vector<char> bound = bound_pattern(theta);
    bool stopped = false;
    StopReason reason = StopReason::iteration_limit;
    int iter = 0;

    if (projected_norm() < options.gradient_tolerance) {
        stopped = true;
        reason = StopReason::gradient;
    }

    while (!stopped && iter < options.max_iterations) {
        ++iter;

        // Ascent direction d = H * grad(ll) over the free slots; fall back
        // to steepest ascent when the approximation loses positive
        // definiteness.
        gm = mask_gradient(theta, cur.gradient);
        double dir_dot_grad = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
            double v = 0.0;
            for (std::size_t j = 0; j < p; ++j) v += h_inv(i, j) * gm[j];
            direction[i] = v;
        }
        for (std::size_t i = 0; i < p; ++i) dir_dot_grad += direction[i] * gm[i];
        if (!(dir_dot_grad > 0.0)) {
            h_inv = Matrix::identity(p);
            direction = gm;
            dir_dot_grad = 0.0;
            for (std::size_t i = 0; i < p; ++i) dir_dot_grad += direction[i] * gm[i];
        }

        // Armijo backtracking on the likelihood, each trial point projected
        // back onto the sigma >= 0 half-space.
        constexpr double kArmijoC = 1e-4;
        double alpha = 1.0;
        double ll_new = -std::numeric_limits<double>::infinity();
        bool accepted = false;
        for (int halvings = 0; halvings < 60; ++halvings) {
            for (std::size_t i = 0; i < p; ++i) {
                theta_new[i] = theta[i] + alpha * direction[i];
                if (is_sd_slot[i] && theta_new[i] < 0.0) theta_new[i] = 0.0;
            }
            const LikelihoodEval trial =
                eval_log_likelihood(model, theta_new, *draws, options.n_threads);
            if (trial.ok && trial.value >= cur.value + kArmijoC * alpha * dir_dot_grad) {
                ll_new = trial.value;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            stopped = true;
            reason = StopReason::step;
            --iter;
            break;
        }

        double step_norm = 0.0;
        for (std::size_t i = 0; i < p; ++i) {
            s[i] = theta_new[i] - theta[i];
            step_norm = std::max(step_norm, std::fabs(s[i]));
        }

        ScoreEval next = eval_ll_and_score(model, theta_new, *draws, options.n_threads);
        if (!next.ok) throw std::runtime_error("score not finite at an accepted step");
        next.value = ll_new;

        for (std::size_t i = 0; i < p; ++i) y[i] = next.gradient[i] - cur.gradient[i];
        theta = theta_new;
        cur = std::move(next);

        result.trace.push_back({iter, cur.value, projected_norm(), step_norm});

        if (projected_norm() < options.gradient_tolerance) {
            stopped = true;
            reason = StopReason::gradient;
            break;
        }
        if (step_norm < options.step_tolerance) {
            stopped = true;
            reason = StopReason::step;
            break;
        }

        // Entering or leaving the bound invalidates the curvature history.
        std::vector<char> bound_now = bound_pattern(theta);
        if (bound_now != bound) {
            bound = std::move(bound_now);
            h_inv = Matrix::identity(p);
            continue;
        }
        for (std::size_t i = 0; i < p; ++i) {
            if (bound[i]) y[i] = 0.0;
        }

        // BFGS update of the inverse Hessian of -ll. In ascent variables
        // the curvature condition is s'y < 0; skip the update otherwise.
        double sy = 0.0;
        for (std::size_t i = 0; i < p; ++i) sy += s[i] * y[i];
        if (sy < -1e-12) {
            const double rho = 1.0 / (-sy);
            for (std::size_t i = 0; i < p; ++i) {
                double v = 0.0;
                for (std::size_t j = 0; j < p; ++j) v += h_inv(i, j) * y[j];
                hy[i] = v;
            }
            double yhy = 0.0;
            for (std::size_t i = 0; i < p; ++i) yhy += y[i] * hy[i];
            const double c = (1.0 + rho * yhy) * rho;
            for (std::size_t i = 0; i < p; ++i) {
                for (std::size_t j = 0; j < p; ++j) {
                    h_inv(i, j) += c * s[i] * s[j] + rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
        }
    }

    result.iterations = iter;
    result.stop_reason = reason;
    result.converged = reason != StopReason::iteration_limit;
    result.theta_hat = theta;
    result.ll_converged = cur.value;
    result.rho_squared = pseudo_r2(result.ll_zero, result.ll_converged);

    result.covariance =
        compute_covariance(model, theta, *draws, options.covariance_method, options.n_threads);
    WaldStats w = wald_stats(theta, result.covariance);
    result.std_errors = std::move(w.std_errors);
    result.t_stats = std::move(w.t_stats);
    result.p_values = std::move(w.p_values);
    result.retained = std::move(w.retained);
    return result;
}

// ---------------------------------------------------------------------------
// Result JSON round trip
// ---------------------------------------------------------------------------

namespace detail {

inline json double_or_null(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

inline double double_from(const json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    return j.get<double>();
}

}  // namespace detail

inline json result_to_json(const EstimationResult& r) {
    json j;
    j["slot_names"] = r.slot_names;
    j["theta_hat"] = r.theta_hat;
    j["std_errors"] = r.std_errors;
    j["t_stats"] = json::array();
    j["p_values"] = json::array();
    for (double t : r.t_stats) j["t_stats"].push_back(detail::double_or_null(t));
    for (double pv : r.p_values) j["p_values"].push_back(detail::double_or_null(pv));
    j["retained"] = json::array();
    for (bool b : r.retained) j["retained"].push_back(b);
    j["covariance"] = json::array();
    for (std::size_t i = 0; i < r.covariance.rows; ++i) {
        json row = json::array();
        for (std::size_t k = 0; k < r.covariance.cols; ++k) row.push_back(r.covariance(i, k));
        j["covariance"].push_back(std::move(row));
    }
    j["ll_zero"] = r.ll_zero;
    j["ll_converged"] = r.ll_converged;
    j["rho_squared"] = r.rho_squared;
    j["iterations"] = r.iterations;
    j["converged"] = r.converged;
    j["stop_reason"] = to_string(r.stop_reason);
    j["n_obs"] = r.n_obs;
    j["n_draws"] = r.n_draws_used;
    j["halton_skip"] = r.halton_skip;
    j["fingerprint"] = r.fingerprint;
    j["stratum"] = to_string(r.stratum);
    j["spec"] = spec_to_json(r.spec);
    j["trace"] = json::array();
    for (const auto& t : r.trace) {
        j["trace"].push_back({{"iteration", t.iteration},
                              {"ll", t.ll},
                              {"grad_norm", t.grad_norm},
                              {"step_size", t.step_size}});
    }
    return j;
}

inline EstimationResult result_from_json(const json& j) {
    EstimationResult r;
    r.slot_names = j.at("slot_names").get<std::vector<std::string>>();
    r.theta_hat = j.at("theta_hat").get<std::vector<double>>();
    r.std_errors = j.at("std_errors").get<std::vector<double>>();
    for (const auto& v : j.at("t_stats")) r.t_stats.push_back(detail::double_from(v));
    for (const auto& v : j.at("p_values")) r.p_values.push_back(detail::double_from(v));
    for (const auto& v : j.at("retained")) r.retained.push_back(v.get<bool>());
    const auto& cov = j.at("covariance");
    r.covariance = Matrix(cov.size(), cov.empty() ? 0 : cov.at(0).size());
    for (std::size_t i = 0; i < r.covariance.rows; ++i) {
        for (std::size_t k = 0; k < r.covariance.cols; ++k) {
            r.covariance(i, k) = cov.at(i).at(k).get<double>();
        }
    }
    r.ll_zero = j.at("ll_zero").get<double>();
    r.ll_converged = j.at("ll_converged").get<double>();
    r.rho_squared = j.at("rho_squared").get<double>();
    r.iterations = j.at("iterations").get<int>();
    r.converged = j.at("converged").get<bool>();
    const std::string reason = j.at("stop_reason").get<std::string>();
    if (reason == "gradient") r.stop_reason = StopReason::gradient;
    else if (reason == "step") r.stop_reason = StopReason::step;
    else r.stop_reason = StopReason::iteration_limit;
    r.n_obs = j.at("n_obs").get<std::size_t>();
    r.n_draws_used = j.at("n_draws").get<int>();
    r.halton_skip = j.value("halton_skip", static_cast<int>(kDefaultHaltonSkip));
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.stratum = stratum_from_string(j.at("stratum").get<std::string>());
    r.spec = spec_from_json(j.at("spec"));
    if (j.contains("trace")) {
        for (const auto& t : j.at("trace")) {
            r.trace.push_back({t.at("iteration").get<int>(), t.at("ll").get<double>(),
                               t.at("grad_norm").get<double>(), t.at("step_size").get<double>()});
        }
    }
    return r;
}

}  // namespace mixlogit
