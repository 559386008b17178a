#pragma once

// Synthetic choice data from known parameters, plus a quadrature oracle for
// the mixing integral. The generator runs on a seeded pseudo-random stream,
// deliberately unrelated to the Halton draws used in estimation.

#include <array>
#include <cmath>
#include <random>
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
// Covariate law
// ---------------------------------------------------------------------------

struct CovariateLaw {
    struct Single {
        std::string name;
        double rate = 0.5;  // independent Bernoulli
    };
    struct Group {
        std::vector<std::string> members;  // one-hot categorical
        std::vector<double> probs;         // aligned with members; shortfall to 1 = no member set
        std::string reference;             // carried onto the dataset's group table
    };
    std::vector<Single> singles;
    std::vector<Group> groups;
};

struct GenConfig {
    ModelSpec spec;
    std::vector<double> theta_true;  // laid out per build_layout(spec)
    std::size_t n_obs = 0;
    std::uint64_t seed = 0;
    CovariateLaw law;
    Stratum stratum = Stratum::pooled;

    void validate() const {
        if (n_obs == 0) throw std::invalid_argument("generator: n_obs must be >= 1");
        for (const auto& s : law.singles) {
            if (s.rate < 0.0 || s.rate > 1.0) {
                throw std::invalid_argument("generator: rate for '" + s.name + "' outside [0,1]");
            }
        }
        for (const auto& g : law.groups) {
            if (g.members.size() != g.probs.size()) {
                throw std::invalid_argument("generator: group probs do not align with members");
            }
            double sum = 0.0;
            for (double p : g.probs) {
                if (p < 0.0 || p > 1.0) throw std::invalid_argument("generator: group prob outside [0,1]");
                sum += p;
            }
            if (sum > 1.0 + 1e-9) throw std::invalid_argument("generator: group probs exceed 1");
        }
    }
};

namespace detail {

// Uniform in (0,1) built from the top 53 bits of the engine output, so the
// stream does not depend on library distribution internals.
inline double next_uniform(std::mt19937_64& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double next_normal(std::mt19937_64& rng) {
    return standard_normal_quantile(next_uniform(rng));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

// Draws covariates from the law, realizes each random coefficient from its
// mixing distribution, and samples the chosen level from the resulting
// logit probabilities. Identical seeds give identical datasets.
inline Dataset generate_dataset(const GenConfig& config) {
    config.validate();

    Dataset data;
    data.stratum = config.stratum;
    for (const auto& s : config.law.singles) data.indicator_names.push_back(s.name);
    for (const auto& g : config.law.groups) {
        for (const auto& m : g.members) data.indicator_names.push_back(m);
        data.groups.push_back({g.members, g.reference});
    }

    require_valid_spec(config.spec, data.indicator_names);
    const ParameterLayout layout = build_layout(config.spec);
    if (config.theta_true.size() != layout.size()) {
        throw std::invalid_argument("generator: theta_true has " +
                                    std::to_string(config.theta_true.size()) + " entries, layout has " +
                                    std::to_string(layout.size()));
    }

    struct GenTerm {
        int level;
        int column;
        bool random;
        MixingDistribution dist;
        double mean;
        double scale_abs;
    };
    std::vector<GenTerm> terms;
    for (std::size_t i = 0; i < config.spec.defs.size(); ++i) {
        const ParameterDef& def = config.spec.defs[i];
        const ParameterLayout::Entry& e = layout.entries[i];
        GenTerm t;
        t.level = static_cast<int>(def.target_level);
        t.column = def.is_constant() ? -1 : data.indicator_index(def.variable);
        t.random = e.random;
        t.dist = def.distribution;
        t.mean = config.theta_true[e.mean_slot];
        t.scale_abs = e.random ? std::fabs(config.theta_true[e.sd_slot]) : 0.0;
        terms.push_back(t);
    }

    std::mt19937_64 rng(config.seed);
    data.observations.reserve(config.n_obs);
    for (std::size_t n = 0; n < config.n_obs; ++n) {
        ChoiceObservation obs;
        obs.covariates.assign(data.indicator_names.size(), 0.0);

        std::size_t col = 0;
        for (const auto& s : config.law.singles) {
            obs.covariates[col++] = detail::next_uniform(rng) < s.rate ? 1.0 : 0.0;
        }
        for (const auto& g : config.law.groups) {
            const double u = detail::next_uniform(rng);
            double cum = 0.0;
            std::size_t pick = g.members.size();  // past-the-end: no member set
            for (std::size_t k = 0; k < g.members.size(); ++k) {
                cum += g.probs[k];
                if (u < cum) { pick = k; break; }
            }
            for (std::size_t k = 0; k < g.members.size(); ++k) {
                obs.covariates[col + k] = k == pick ? 1.0 : 0.0;
            }
            col += g.members.size();
        }

        std::array<double, kNumLevels> v{};
        for (const auto& t : terms) {
            double beta = t.mean;
            if (t.random) {
                beta = mixed_coefficient(t.dist, t.mean, t.scale_abs, detail::next_normal(rng)).beta;
            }
            const double x = t.column < 0 ? 1.0 : obs.covariates[static_cast<std::size_t>(t.column)];
            v[static_cast<std::size_t>(t.level)] += beta * x;
        }

        double vmax = v[0];
        for (int i = 1; i < kNumLevels; ++i) vmax = std::max(vmax, v[i]);
        std::array<double, kNumLevels> p{};
        double denom = 0.0;
        for (int i = 0; i < kNumLevels; ++i) {
            p[static_cast<std::size_t>(i)] = std::exp(v[static_cast<std::size_t>(i)] - vmax);
            denom += p[static_cast<std::size_t>(i)];
        }

        const double u = detail::next_uniform(rng) * denom;
        double cum = 0.0;
        int chosen = kNumLevels - 1;
        for (int i = 0; i < kNumLevels; ++i) {
            cum += p[static_cast<std::size_t>(i)];
            if (u < cum) { chosen = i; break; }
        }
        obs.chosen = static_cast<Level>(chosen);
        data.observations.push_back(std::move(obs));
    }
    return data;
}

// ---------------------------------------------------------------------------
// Config JSON
// ---------------------------------------------------------------------------

inline GenConfig gen_config_from_json(const json& j) {
    GenConfig c;
    c.spec = spec_from_json(j.at("spec"));
    c.theta_true = j.at("theta_true").get<std::vector<double>>();
    c.n_obs = j.at("n_obs").get<std::size_t>();
    c.seed = j.value("seed", 0ULL);
    if (j.contains("stratum")) c.stratum = stratum_from_string(j.at("stratum").get<std::string>());
    if (j.contains("law")) {
        const json& jl = j.at("law");
        if (jl.contains("singles")) {
            for (const auto& js : jl.at("singles")) {
                c.law.singles.push_back({js.at("name").get<std::string>(), js.at("rate").get<double>()});
            }
        }
        if (jl.contains("groups")) {
            for (const auto& jg : jl.at("groups")) {
                CovariateLaw::Group g;
                g.members = jg.at("members").get<std::vector<std::string>>();
                g.probs = jg.at("probs").get<std::vector<double>>();
                g.reference = jg.value("reference", "");
                c.law.groups.push_back(std::move(g));
            }
        }
    }
    return c;
}

inline json gen_config_to_json(const GenConfig& c) {
    json j;
    j["spec"] = spec_to_json(c.spec);
    j["theta_true"] = c.theta_true;
    j["n_obs"] = c.n_obs;
    j["seed"] = c.seed;
    j["stratum"] = to_string(c.stratum);
    json singles = json::array();
    for (const auto& s : c.law.singles) singles.push_back({{"name", s.name}, {"rate", s.rate}});
    json groups = json::array();
    for (const auto& g : c.law.groups) {
        json jg;
        jg["members"] = g.members;
        jg["probs"] = g.probs;
        if (!g.reference.empty()) jg["reference"] = g.reference;
        groups.push_back(std::move(jg));
    }
    j["law"] = {{"singles", std::move(singles)}, {"groups", std::move(groups)}};
    return j;
}

// ---------------------------------------------------------------------------
// Quadrature oracle
// ---------------------------------------------------------------------------

// Mixing integral by trapezoid quadrature on [-8, 8] standard deviations,
// tensor product across random dimensions. Smooth Gaussian-weighted
// integrands make the trapezoid rule effectively spectrally accurate here.
// Supports at most two random dimensions; grids of 201 points give the
// reference accuracy used by the tests.
inline std::array<double, kNumLevels> brute_force_mixed_prob(const CompiledModel& model,
                                                             const std::vector<double>& theta,
                                                             const double* covariates,
                                                             int n_grid = 201) {
    if (theta.size() != model.n_params()) {
        throw std::invalid_argument("parameter vector does not match the layout");
    }
    if (n_grid < 51) throw std::invalid_argument("quadrature grid must have at least 51 points");
    if (model.n_random > 2) {
        throw std::invalid_argument("quadrature oracle supports at most 2 random dimensions");
    }
    if (model.n_random == 0) return mnl_probabilities(model, theta, covariates);

    const double lo = -8.0, hi = 8.0;
    const double h = (hi - lo) / static_cast<double>(n_grid - 1);
    auto node = [&](int k) { return lo + h * static_cast<double>(k); };
    auto weight = [&](int k) {
        const double w = (k == 0 || k == n_grid - 1) ? 0.5 * h : h;
        return w * normal_pdf(node(k));
    };

    auto probs_at = [&](double z0, double z1) {
        std::array<double, kNumLevels> v{};
        for (const CompiledTerm& term : model.terms) {
            const double x = term.column < 0 ? 1.0 : covariates[term.column];
            double beta = theta[term.mean_slot];
            if (term.random) {
                const double z = term.draw_dim == 0 ? z0 : z1;
                beta = mixed_coefficient(term.dist, beta, std::fabs(theta[term.sd_slot]), z).beta;
            }
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
    };

    std::array<double, kNumLevels> acc{};
    if (model.n_random == 1) {
        for (int k = 0; k < n_grid; ++k) {
            const auto p = probs_at(node(k), 0.0);
            const double w = weight(k);
            for (int i = 0; i < kNumLevels; ++i) acc[static_cast<std::size_t>(i)] += w * p[static_cast<std::size_t>(i)];
        }
    } else {
        for (int k0 = 0; k0 < n_grid; ++k0) {
            const double w0 = weight(k0);
            for (int k1 = 0; k1 < n_grid; ++k1) {
                const auto p = probs_at(node(k0), node(k1));
                const double w = w0 * weight(k1);
                for (int i = 0; i < kNumLevels; ++i) acc[static_cast<std::size_t>(i)] += w * p[static_cast<std::size_t>(i)];
            }
        }
    }
    return acc;
}

}  // namespace mixlogit
