#pragma once

// Post-estimation inference: marginal effects of the indicator variables,
// the below-zero share of a random coefficient, and the likelihood-ratio
// tests for pooling and transferability.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixlogit/dataset.hpp"
#include "mixlogit/likelihood.hpp"
#include "mixlogit/math.hpp"
#include "mixlogit/model_spec.hpp"

namespace mixlogit {

// ---------------------------------------------------------------------------
// Chi-square survival
// ---------------------------------------------------------------------------

inline double chi_square_sf(double x, int df) {
    if (x < 0.0) throw std::domain_error("chi_square_sf: x must be >= 0");
    if (df < 1) throw std::domain_error("chi_square_sf: df must be >= 1");
    return regularized_gamma_q(0.5 * static_cast<double>(df), 0.5 * x);
}

// ---------------------------------------------------------------------------
// Random-parameter distribution share
// ---------------------------------------------------------------------------

// Mass of a normal mixing distribution below zero: the fraction of
// observations whose coefficient is negative.
inline double share_below_zero(double mu, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("share_below_zero: sigma must be > 0");
    return normal_cdf(-mu / sigma);
}

// ---------------------------------------------------------------------------
// Likelihood-ratio tests
// ---------------------------------------------------------------------------

enum class LRKind { pooled_vs_strata, transferability };

inline std::string to_string(LRKind k) {
    return k == LRKind::pooled_vs_strata ? "pooled_vs_strata" : "transferability";
}

struct LRTestResult {
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
    LRKind kind = LRKind::pooled_vs_strata;
};

namespace detail {

inline LRTestResult finish_lr(double statistic, int df, LRKind kind, const char* worse_msg) {
    if (df < 1) throw std::invalid_argument("likelihood-ratio test: df must be >= 1");
    if (statistic < -1e-6) throw std::runtime_error(worse_msg);
    LRTestResult r;
    r.statistic = std::max(statistic, 0.0);
    r.df = df;
    r.p_value = chi_square_sf(r.statistic, df);
    r.kind = kind;
    return r;
}

}  // namespace detail

// Pooled model against separate stratum models: -2 [ LL(full) - sum of
// stratum LLs ], df = extra parameters the strata spend.
inline LRTestResult lr_pooled_test(double ll_full, const std::vector<double>& ll_strata, int df) {
    double sum = 0.0;
    for (double ll : ll_strata) sum += ll;
    return detail::finish_lr(-2.0 * (ll_full - sum), df, LRKind::pooled_vs_strata,
                             "strata fit worse than pooled: specification mismatch");
}

// One stratum's specification re-estimated on another stratum's data,
// against that stratum's own converged fit; df = parameter count of the
// transferred specification.
inline LRTestResult lr_transferability(double ll_a_on_b_data, double ll_b, int df) {
    return detail::finish_lr(-2.0 * (ll_a_on_b_data - ll_b), df, LRKind::transferability,
                             "transferred spec beats the stratum's own fit: inputs inconsistent");
}

inline json lr_to_json(const LRTestResult& r) {
    json j;
    j["kind"] = to_string(r.kind);
    j["statistic"] = r.statistic;
    j["df"] = r.df;
    j["p_value"] = r.p_value;
    return j;
}

// ---------------------------------------------------------------------------
// Marginal effects
// ---------------------------------------------------------------------------

struct MarginalEffectsTable {
    std::vector<std::string> variables;
    std::vector<std::array<double, kNumLevels>> effects;  // per variable, by level

    int variable_index(const std::string& name) const {
        for (std::size_t i = 0; i < variables.size(); ++i) {
            if (variables[i] == name) return static_cast<int>(i);
        }
        return -1;
    }
};

namespace detail {

inline const IndicatorGroup* group_of(const Dataset& data, const std::string& variable) {
    for (const auto& g : data.groups) {
        for (const auto& m : g.members) {
            if (m == variable) return &g;
        }
    }
    return nullptr;
}

// Counterfactual covariate rows for flipping one indicator on and off while
// keeping its mutually exclusive group consistent.
inline void toggle_rows(const Dataset& data, const std::vector<double>& original, int col,
                        const IndicatorGroup* group, std::vector<double>& on_row,
                        std::vector<double>& off_row) {
    on_row = original;
    off_row = original;

    on_row[static_cast<std::size_t>(col)] = 1.0;
    if (group != nullptr) {
        for (const auto& m : group->members) {
            const int mc = data.indicator_index(m);
            if (mc >= 0 && mc != col) on_row[static_cast<std::size_t>(mc)] = 0.0;
        }
    }

    if (original[static_cast<std::size_t>(col)] != 0.0) {
        off_row[static_cast<std::size_t>(col)] = 0.0;
        if (group != nullptr) {
            // Fall back to the group's reference category; when the toggled
            // variable is itself the reference (or the group has none), pick
            // the first other member so exhaustive groups stay one-hot.
            std::string fallback = group->reference;
            if (fallback.empty() || fallback == data.indicator_names[static_cast<std::size_t>(col)]) {
                fallback.clear();
                if (group->exhaustive()) {
                    for (const auto& m : group->members) {
                        if (m != data.indicator_names[static_cast<std::size_t>(col)]) {
                            fallback = m;
                            break;
                        }
                    }
                }
            }
            if (!fallback.empty()) {
                const int fc = data.indicator_index(fallback);
                if (fc >= 0) off_row[static_cast<std::size_t>(fc)] = 1.0;
            }
        }
    }
}

}  // namespace detail

// Sample-averaged discrete probability changes: for each variable, the mean
// over observations of P(level | variable on) - P(level | variable off),
// probabilities simulated at theta with the shared draws. Defaults to every
// non-constant variable in the spec, in first-appearance order.
inline MarginalEffectsTable marginal_effects(const CompiledModel& model,
                                             const std::vector<double>& theta,
                                             const DrawMatrix& draws,
                                             std::vector<std::string> variables = {}) {
    detail::check_eval_inputs(model, theta, draws);
    const Dataset& data = *model.data;

    std::vector<std::string> spec_vars;
    for (const auto& def : model.spec.defs) {
        if (def.is_constant()) continue;
        bool seen = false;
        for (const auto& v : spec_vars) {
            if (v == def.variable) { seen = true; break; }
        }
        if (!seen) spec_vars.push_back(def.variable);
    }
    if (variables.empty()) {
        variables = spec_vars;
    } else {
        for (const auto& v : variables) {
            bool in_spec = false;
            for (const auto& sv : spec_vars) {
                if (sv == v) { in_spec = true; break; }
            }
            if (!in_spec) {
                throw std::invalid_argument("marginal effects: variable '" + v +
                                            "' is not in the model spec");
            }
        }
    }

    const auto states = detail::term_states(model, theta);
    const double n = static_cast<double>(model.n_obs());

    MarginalEffectsTable table;
    detail::ObsWorkspace ws;
    std::vector<double> on_row, off_row;
    for (const auto& variable : variables) {
        const int col = data.indicator_index(variable);
        if (col < 0) {
            throw std::invalid_argument("marginal effects: variable '" + variable +
                                        "' is not an indicator of the dataset");
        }
        const IndicatorGroup* group = detail::group_of(data, variable);

        std::array<double, kNumLevels> acc{};
        for (std::size_t i = 0; i < model.n_obs(); ++i) {
            detail::toggle_rows(data, data.observations[i].covariates, col, group, on_row, off_row);
            const auto p_on = detail::average_probabilities(model, states, draws, i, on_row.data(), ws);
            const auto p_off = detail::average_probabilities(model, states, draws, i, off_row.data(), ws);
            for (int k = 0; k < kNumLevels; ++k) {
                acc[static_cast<std::size_t>(k)] += p_on[static_cast<std::size_t>(k)] - p_off[static_cast<std::size_t>(k)];
            }
        }
        for (int k = 0; k < kNumLevels; ++k) acc[static_cast<std::size_t>(k)] /= n;
        table.variables.push_back(variable);
        table.effects.push_back(acc);
    }
    return table;
}

inline json margins_to_json(const MarginalEffectsTable& t) {
    json j = json::array();
    for (std::size_t i = 0; i < t.variables.size(); ++i) {
        json row;
        row["variable"] = t.variables[i];
        for (int k = 0; k < kNumLevels; ++k) {
            row[to_string(static_cast<Level>(k))] = t.effects[i][static_cast<std::size_t>(k)];
        }
        j.push_back(std::move(row));
    }
    return j;
}

inline MarginalEffectsTable margins_from_json(const json& j) {
    MarginalEffectsTable t;
    for (const auto& row : j) {
        t.variables.push_back(row.at("variable").get<std::string>());
        std::array<double, kNumLevels> e{};
        for (int k = 0; k < kNumLevels; ++k) {
            e[static_cast<std::size_t>(k)] = row.at(to_string(static_cast<Level>(k))).get<double>();
        }
        t.effects.push_back(e);
    }
    return t;
}

}  // namespace mixlogit
