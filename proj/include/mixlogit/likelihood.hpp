#pragma once

// Simulated log likelihood for the three-level injury severity model and its
// analytic score. A model with no random parameters collapses to plain
// multinomial logit and ignores the draw matrix.

#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mixlogit/dataset.hpp"
#include "mixlogit/halton.hpp"
#include "mixlogit/math.hpp"
#include "mixlogit/model_spec.hpp"

namespace mixlogit {

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

struct CompiledTerm {
    int level = 0;             // utility the term enters
    int column = -1;           // covariate column, -1 for a constant
    bool random = false;
    MixingDistribution dist = MixingDistribution::normal;
    std::size_t mean_slot = 0;
    std::size_t sd_slot = 0;
    std::size_t draw_dim = 0;  // random terms only
};

struct CompiledModel {
    const Dataset* data = nullptr;
    ModelSpec spec;
    ParameterLayout layout;
    std::vector<CompiledTerm> terms;
    std::size_t n_random = 0;

    std::size_t n_obs() const { return data->observations.size(); }
    std::size_t n_params() const { return layout.size(); }
};

// Binds a spec to a dataset: resolves indicator columns and assigns each
// random parameter a draw dimension in definition order.
inline CompiledModel compile_model(const Dataset& data, const ModelSpec& spec) {
    require_valid_spec(spec, data.indicator_names);
    CompiledModel model;
    model.data = &data;
    model.spec = spec;
    model.layout = build_layout(spec);

    std::size_t dim = 0;
    for (std::size_t i = 0; i < spec.defs.size(); ++i) {
        const ParameterDef& def = spec.defs[i];
        const ParameterLayout::Entry& entry = model.layout.entries[i];
        CompiledTerm t;
        t.level = static_cast<int>(def.target_level);
        t.column = def.is_constant() ? -1 : data.indicator_index(def.variable);
        t.random = entry.random;
        t.dist = def.distribution;
        t.mean_slot = entry.mean_slot;
        t.sd_slot = entry.sd_slot;
        if (t.random) t.draw_dim = dim++;
        model.terms.push_back(t);
    }
    model.n_random = dim;
    return model;
}

// ---------------------------------------------------------------------------
// Mixing transforms
// ---------------------------------------------------------------------------

// Coefficient realized from a standard normal draw, with derivatives w.r.t.
// the location and the absolute scale. The scale enters every distribution
// through its absolute value, so the likelihood is even in the raw scale
// parameter.
struct CoefDraw {
    double beta = 0.0;
    double dmean = 1.0;
    double dscale = 0.0;
};

inline CoefDraw mixed_coefficient(MixingDistribution dist, double mean, double scale_abs, double z) {
    switch (dist) {
        case MixingDistribution::normal:
            return {mean + scale_abs * z, 1.0, z};
        case MixingDistribution::lognormal: {
            const double b = std::exp(mean + scale_abs * z);
            return {b, b, b * z};
        }
        case MixingDistribution::uniform: {
            const double t = 2.0 * normal_cdf(z) - 1.0;
            return {mean + scale_abs * t, 1.0, t};
        }
        case MixingDistribution::triangular: {
            const double u = normal_cdf(z);
            const double t = u < 0.5 ? std::sqrt(2.0 * u) - 1.0 : 1.0 - std::sqrt(2.0 * (1.0 - u));
            return {mean + scale_abs * t, 1.0, t};
        }
    }
    throw std::logic_error("invalid MixingDistribution");
}

// ---------------------------------------------------------------------------
// Evaluation results
// ---------------------------------------------------------------------------

struct LikelihoodEval {
    double value = 0.0;
    bool ok = true;
    std::vector<std::size_t> bad_obs;  // observations whose probability vanished
};

struct ScoreEval {
    double value = 0.0;
    std::vector<double> gradient;
    bool ok = true;
    std::vector<std::size_t> bad_obs;
};

inline double null_log_likelihood(std::size_t n_obs) {
    return -static_cast<double>(n_obs) * std::log(static_cast<double>(kNumLevels));
}

namespace detail {

// Fixed-block work splitting whose partial results are combined in block
// order, so totals are bit-identical for any thread count.
inline constexpr std::size_t kReductionBlock = 2048;

template <typename Partial, typename BlockFn>
std::vector<Partial> run_blocks(std::size_t n_items, unsigned n_threads, BlockFn fn) {
    const std::size_t n_blocks = (n_items + kReductionBlock - 1) / kReductionBlock;
    std::vector<Partial> partials(n_blocks);
    if (n_threads <= 1 || n_blocks <= 1) {
        for (std::size_t b = 0; b < n_blocks; ++b) fn(b, partials[b]);
        return partials;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t b = next.fetch_add(1); b < n_blocks; b = next.fetch_add(1)) {
            fn(b, partials[b]);
        }
    };
    std::vector<std::thread> pool;
    const std::size_t n = std::min<std::size_t>(n_threads, n_blocks);
    pool.reserve(n);
    for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    return partials;
}

// Parameter-dependent per-term state hoisted out of the observation loop.
struct TermState {
    double mean = 0.0;
    double scale_abs = 0.0;
    double scale_sign = 0.0;
};

inline std::vector<TermState> term_states(const CompiledModel& model,
                                          const std::vector<double>& theta) {
    std::vector<TermState> states(model.terms.size());
    for (std::size_t t = 0; t < model.terms.size(); ++t) {
        const CompiledTerm& term = model.terms[t];
        TermState s;
        s.mean = theta[term.mean_slot];
        if (term.random) {
            const double raw = theta[term.sd_slot];
            s.scale_abs = std::fabs(raw);
            s.scale_sign = raw > 0.0 ? 1.0 : (raw < 0.0 ? -1.0 : 0.0);
        }
        states[t] = s;
    }
    return states;
}

inline void check_eval_inputs(const CompiledModel& model, const std::vector<double>& theta,
                              const DrawMatrix& draws) {
    if (model.data == nullptr) throw std::invalid_argument("model is not compiled");
    if (model.data->observations.empty()) {
        throw std::invalid_argument("likelihood of an empty dataset");
    }
    if (theta.size() != model.n_params()) {
        throw std::invalid_argument("parameter vector has " + std::to_string(theta.size()) +
                                    " entries, layout has " + std::to_string(model.n_params()));
    }
    if (model.n_random == 0) return;
    if (draws.n_draws == 0) {
        throw std::invalid_argument("model has random parameters but no draws were supplied");
    }
    if (draws.n_obs != model.n_obs()) {
        throw std::invalid_argument("draw matrix covers " + std::to_string(draws.n_obs) +
                                    " observations, dataset has " + std::to_string(model.n_obs()));
    }
    if (draws.n_dims < model.n_random) {
        throw std::invalid_argument("draw matrix has " + std::to_string(draws.n_dims) +
                                    " dimensions, model needs " + std::to_string(model.n_random));
    }
}

// Simulated choice probability and per-slot score numerator for one
// observation. Returns the draw-summed chosen probability; grad_num, when
// non-null, accumulates sum_r P_r * dv/dtheta terms and must be zeroed by
// the caller. Workspace vectors are caller-owned to keep the loop
// allocation-free.
struct ObsWorkspace {
    std::vector<double> xval;
    std::vector<double> dmean;
    std::vector<double> dscale;
};

inline double simulate_obs(const CompiledModel& model, const std::vector<TermState>& states,
                           const DrawMatrix& draws, std::size_t n, const double* covariates,
                           int chosen, double* grad_num, ObsWorkspace& ws) {
    const std::size_t n_terms = model.terms.size();
    ws.xval.resize(n_terms);
    ws.dmean.resize(n_terms);
    ws.dscale.resize(n_terms);

    for (std::size_t t = 0; t < n_terms; ++t) {
        const int col = model.terms[t].column;
        ws.xval[t] = col < 0 ? 1.0 : covariates[col];
    }

    const bool mixed = model.n_random > 0;
    const std::size_t n_r = mixed ? draws.n_draws : 1;
    const double* zblock = mixed ? draws.obs_block(n) : nullptr;

    double sum_p = 0.0;
    for (std::size_t r = 0; r < n_r; ++r) {
        std::array<double, kNumLevels> v{};
        for (std::size_t t = 0; t < n_terms; ++t) {
            const CompiledTerm& term = model.terms[t];
            const TermState& s = states[t];
            double beta;
            if (term.random) {
                const double z = zblock[r * draws.n_dims + term.draw_dim];
                const CoefDraw c = mixed_coefficient(term.dist, s.mean, s.scale_abs, z);
                beta = c.beta;
                ws.dmean[t] = c.dmean;
                ws.dscale[t] = c.dscale;
            } else {
                beta = s.mean;
                ws.dmean[t] = 1.0;
            }
            v[static_cast<std::size_t>(term.level)] += beta * ws.xval[t];
        }

        double vmax = v[0];
        for (int i = 1; i < kNumLevels; ++i) vmax = std::max(vmax, v[i]);
        std::array<double, kNumLevels> e{};
        double denom = 0.0;
        for (int i = 0; i < kNumLevels; ++i) {
            e[static_cast<std::size_t>(i)] = std::exp(v[static_cast<std::size_t>(i)] - vmax);
            denom += e[static_cast<std::size_t>(i)];
        }
        const double p_chosen = e[static_cast<std::size_t>(chosen)] / denom;
        sum_p += p_chosen;

        if (grad_num != nullptr) {
            for (std::size_t t = 0; t < n_terms; ++t) {
                const CompiledTerm& term = model.terms[t];
                const double p_level = e[static_cast<std::size_t>(term.level)] / denom;
                const double indicator = term.level == chosen ? 1.0 : 0.0;
                const double f = p_chosen * ws.xval[t] * (indicator - p_level);
                grad_num[term.mean_slot] += f * ws.dmean[t];
                if (term.random) {
                    grad_num[term.sd_slot] += f * ws.dscale[t] * states[t].scale_sign;
                }
            }
        }
    }
    return sum_p;
}

struct ScorePartial {
    double ll = 0.0;
    std::vector<double> grad;
    std::vector<std::size_t> bad;
};

// Draw-averaged probability of every level for one observation in a single
// sweep over the draw block.
inline std::array<double, kNumLevels> average_probabilities(const CompiledModel& model,
                                                            const std::vector<TermState>& states,
                                                            const DrawMatrix& draws, std::size_t n,
                                                            const double* covariates,
                                                            ObsWorkspace& ws) {
    const std::size_t n_terms = model.terms.size();
    ws.xval.resize(n_terms);
    for (std::size_t t = 0; t < n_terms; ++t) {
        const int col = model.terms[t].column;
        ws.xval[t] = col < 0 ? 1.0 : covariates[col];
    }

    const bool mixed = model.n_random > 0;
    const std::size_t n_r = mixed ? draws.n_draws : 1;
    const double* zblock = mixed ? draws.obs_block(n) : nullptr;

    std::array<double, kNumLevels> sum{};
    for (std::size_t r = 0; r < n_r; ++r) {
        std::array<double, kNumLevels> v{};
        for (std::size_t t = 0; t < n_terms; ++t) {
            const CompiledTerm& term = model.terms[t];
            const TermState& s = states[t];
            double beta = s.mean;
            if (term.random) {
                const double z = zblock[r * draws.n_dims + term.draw_dim];
                beta = mixed_coefficient(term.dist, s.mean, s.scale_abs, z).beta;
            }
            v[static_cast<std::size_t>(term.level)] += beta * ws.xval[t];
        }
        double vmax = v[0];
        for (int i = 1; i < kNumLevels; ++i) vmax = std::max(vmax, v[i]);
        double denom = 0.0;
        std::array<double, kNumLevels> e{};
        for (int i = 0; i < kNumLevels; ++i) {
            e[static_cast<std::size_t>(i)] = std::exp(v[static_cast<std::size_t>(i)] - vmax);
            denom += e[static_cast<std::size_t>(i)];
        }
        for (int i = 0; i < kNumLevels; ++i) sum[static_cast<std::size_t>(i)] += e[static_cast<std::size_t>(i)] / denom;
    }
    for (int i = 0; i < kNumLevels; ++i) sum[static_cast<std::size_t>(i)] /= static_cast<double>(n_r);
    return sum;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public evaluation entry points
// ---------------------------------------------------------------------------

// Plain logit kernel: probabilities at the degenerate mixing limit (every
// scale taken to zero), so random coefficients collapse onto their location
// transform.
inline std::array<double, kNumLevels> mnl_probabilities(const CompiledModel& model,
                                                        const std::vector<double>& theta,
                                                        const double* covariates) {
    if (theta.size() != model.n_params()) {
        throw std::invalid_argument("parameter vector does not match the layout");
    }
    std::array<double, kNumLevels> v{};
    for (const CompiledTerm& term : model.terms) {
        const double x = term.column < 0 ? 1.0 : covariates[term.column];
        double beta = theta[term.mean_slot];
        if (term.random) beta = mixed_coefficient(term.dist, beta, 0.0, 0.0).beta;
        v[static_cast<std::size_t>(term.level)] += beta * x;
    }
    double vmax = v[0];
    for (int i = 1; i < kNumLevels; ++i) vmax = std::max(vmax, v[i]);
    std::array<double, kNumLevels> p{};
    double denom = 0.0;
    for (int i = 0; i < kNumLevels; ++i) {
        p[static_cast<std::size_t>(i)] = std::exp(v[static_cast<std::size_t>(i)] - vmax);
        denom += p[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < kNumLevels; ++i) p[static_cast<std::size_t>(i)] /= denom;
    return p;
}

// Simulated probability of each level for one observation, averaged over its
// draw block. `covariates` overrides the stored covariate row when non-null
// (used for counterfactual probing); it must have one entry per indicator.
inline std::array<double, kNumLevels> level_probabilities(const CompiledModel& model,
                                                          const std::vector<double>& theta,
                                                          const DrawMatrix& draws, std::size_t n,
                                                          const double* covariates = nullptr) {
    detail::check_eval_inputs(model, theta, draws);
    if (n >= model.n_obs()) throw std::out_of_range("observation index out of range");
    const auto states = detail::term_states(model, theta);
    const double* x = covariates != nullptr ? covariates : model.data->observations[n].covariates.data();
    detail::ObsWorkspace ws;
    return detail::average_probabilities(model, states, draws, n, x, ws);
}

inline ScoreEval eval_ll_and_score(const CompiledModel& model, const std::vector<double>& theta,
                                   const DrawMatrix& draws, unsigned n_threads = 1) {
    detail::check_eval_inputs(model, theta, draws);
    const auto states = detail::term_states(model, theta);
    const std::size_t n_obs = model.n_obs();
    const std::size_t n_params = model.n_params();
    const double n_r = model.n_random > 0 ? static_cast<double>(draws.n_draws) : 1.0;
    const double log_r = std::log(n_r);

    auto block_fn = [&](std::size_t b, detail::ScorePartial& out) {
        const std::size_t begin = b * detail::kReductionBlock;
        const std::size_t end = std::min(n_obs, begin + detail::kReductionBlock);
        out.grad.assign(n_params, 0.0);
        detail::ObsWorkspace ws;
        std::vector<double> grad_num(n_params);
        for (std::size_t n = begin; n < end; ++n) {
            const ChoiceObservation& obs = model.data->observations[n];
            std::fill(grad_num.begin(), grad_num.end(), 0.0);
            const double sum_p =
                detail::simulate_obs(model, states, draws, n, obs.covariates.data(),
                                     static_cast<int>(obs.chosen), grad_num.data(), ws);
            if (!(sum_p > 0.0) || !std::isfinite(sum_p)) {
                out.bad.push_back(n);
                continue;
            }
            out.ll += std::log(sum_p) - log_r;
            for (std::size_t k = 0; k < n_params; ++k) out.grad[k] += grad_num[k] / sum_p;
        }
    };

    const auto partials =
        detail::run_blocks<detail::ScorePartial>(n_obs, n_threads, block_fn);

    ScoreEval result;
    result.gradient.assign(n_params, 0.0);
    for (const auto& p : partials) {
        result.value += p.ll;
        for (std::size_t k = 0; k < n_params; ++k) result.gradient[k] += p.grad[k];
        result.bad_obs.insert(result.bad_obs.end(), p.bad.begin(), p.bad.end());
    }
    result.ok = result.bad_obs.empty() && std::isfinite(result.value);
    return result;
}

inline LikelihoodEval eval_log_likelihood(const CompiledModel& model,
                                          const std::vector<double>& theta,
                                          const DrawMatrix& draws, unsigned n_threads = 1) {
    detail::check_eval_inputs(model, theta, draws);
    const auto states = detail::term_states(model, theta);
    const std::size_t n_obs = model.n_obs();
    const double n_r = model.n_random > 0 ? static_cast<double>(draws.n_draws) : 1.0;
    const double log_r = std::log(n_r);

    auto block_fn = [&](std::size_t b, detail::ScorePartial& out) {
        const std::size_t begin = b * detail::kReductionBlock;
        const std::size_t end = std::min(n_obs, begin + detail::kReductionBlock);
        detail::ObsWorkspace ws;
        for (std::size_t n = begin; n < end; ++n) {
            const ChoiceObservation& obs = model.data->observations[n];
            const double sum_p =
                detail::simulate_obs(model, states, draws, n, obs.covariates.data(),
                                     static_cast<int>(obs.chosen), nullptr, ws);
            if (!(sum_p > 0.0) || !std::isfinite(sum_p)) {
                out.bad.push_back(n);
                continue;
            }
            out.ll += std::log(sum_p) - log_r;
        }
    };

    const auto partials =
        detail::run_blocks<detail::ScorePartial>(n_obs, n_threads, block_fn);

    LikelihoodEval result;
    for (const auto& p : partials) {
        result.value += p.ll;
        result.bad_obs.insert(result.bad_obs.end(), p.bad.begin(), p.bad.end());
    }
    result.ok = result.bad_obs.empty() && std::isfinite(result.value);
    return result;
}

// Throwing wrapper for callers that treat a vanished probability as fatal.
inline double log_likelihood(const CompiledModel& model, const std::vector<double>& theta,
                             const DrawMatrix& draws, unsigned n_threads = 1) {
    const LikelihoodEval eval = eval_log_likelihood(model, theta, draws, n_threads);
    if (!eval.ok) {
        std::string msg = "log likelihood is not finite";
        if (!eval.bad_obs.empty()) {
            msg += ": simulated probability vanished for observation " +
                   std::to_string(eval.bad_obs.front());
        }
        throw std::runtime_error(msg);
    }
    return eval.value;
}

// Per-observation score rows (n_obs x n_params, row major), the input to the
// outer-product covariance estimate.
inline std::vector<double> observation_scores(const CompiledModel& model,
                                              const std::vector<double>& theta,
                                              const DrawMatrix& draws, unsigned n_threads = 1) {
    detail::check_eval_inputs(model, theta, draws);
    const auto states = detail::term_states(model, theta);
    const std::size_t n_obs = model.n_obs();
    const std::size_t n_params = model.n_params();

    std::vector<double> rows(n_obs * n_params, 0.0);
    struct BadObs {
        std::vector<std::size_t> bad;
    };
    auto block_fn = [&](std::size_t b, BadObs& out) {
        const std::size_t begin = b * detail::kReductionBlock;
        const std::size_t end = std::min(n_obs, begin + detail::kReductionBlock);
        detail::ObsWorkspace ws;
        std::vector<double> grad_num(n_params);
        for (std::size_t n = begin; n < end; ++n) {
            const ChoiceObservation& obs = model.data->observations[n];
            std::fill(grad_num.begin(), grad_num.end(), 0.0);
            const double sum_p =
                detail::simulate_obs(model, states, draws, n, obs.covariates.data(),
                                     static_cast<int>(obs.chosen), grad_num.data(), ws);
            if (!(sum_p > 0.0) || !std::isfinite(sum_p)) {
                out.bad.push_back(n);
                continue;
            }
            double* row = rows.data() + n * n_params;
            for (std::size_t k = 0; k < n_params; ++k) row[k] = grad_num[k] / sum_p;
        }
    };
    const auto partials = detail::run_blocks<BadObs>(n_obs, n_threads, block_fn);
    for (const auto& p : partials) {
        if (!p.bad.empty()) {
            throw std::runtime_error("simulated probability vanished for observation " +
                                     std::to_string(p.bad.front()));
        }
    }
    return rows;
}

}  // namespace mixlogit
