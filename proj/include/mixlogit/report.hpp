#pragma once

// Human-readable estimation tables and the cross-stratum comparison matrix.
// The JSON report is the machine contract; these renderers are presentation
// only and must stay deterministic (no timestamps, fixed formatting).

#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixlogit/estimator.hpp"
#include "mixlogit/inference.hpp"
#include "mixlogit/model_spec.hpp"

namespace mixlogit {

namespace detail {

inline std::string format_fixed(double v, int decimals, bool thousands = false) {
    if (std::isnan(v)) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    std::string s = buf;
    if (!thousands) return s;
    const std::size_t dot = s.find('.');
    std::size_t end = dot == std::string::npos ? s.size() : dot;
    std::size_t begin = s[0] == '-' ? 1 : 0;
    std::string out = s.substr(0, begin);
    const std::size_t digits = end - begin;
    for (std::size_t i = 0; i < digits; ++i) {
        if (i > 0 && (digits - i) % 3 == 0) out.push_back(',');
        out.push_back(s[begin + i]);
    }
    out += s.substr(end);
    return out;
}

inline std::string pad_left(const std::string& s, std::size_t width) {
    if (s.size() >= width) return s;
    return std::string(width - s.size(), ' ') + s;
}

inline std::string pad_right(const std::string& s, std::size_t width) {
    if (s.size() >= width) return s;
    return s + std::string(width - s.size(), ' ');
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Estimation table
// ---------------------------------------------------------------------------

inline std::string level_block_heading(Level level) {
    switch (level) {
        case Level::major: return "Defined for major injury";
        case Level::minor: return "Defined for minor injury";
        case Level::none: return "Defined for no injury";
    }
    throw std::logic_error("invalid Level");
}

// Renders one stratum's results in the tables' shape: rows grouped by the
// level they enter, coefficient / t / p columns, marginal effects per level,
// random-parameter spread sub-rows, and the model statistics block.
inline std::string render_estimation_table(const EstimationResult& r,
                                           const MarginalEffectsTable& margins) {
    for (const auto& v : margins.variables) {
        bool in_spec = false;
        for (const auto& def : r.spec.defs) {
            if (def.variable == v) { in_spec = true; break; }
        }
        if (!in_spec) {
            throw std::runtime_error("margins carry variable '" + v + "' that is not in the spec");
        }
    }

    constexpr std::size_t kName = 28;
    constexpr std::size_t kNum = 12;
    const ParameterLayout layout = build_layout(r.spec);

    std::string out;
    out += to_string(r.stratum) + " conditions\n";
    out += detail::pad_right("Variable", kName);
    for (const char* head : {"Coefficient", "t-stat", "p-value", "ME major", "ME minor", "ME none"}) {
        out += detail::pad_left(head, kNum);
    }
    out += "\n";

    for (Level level : {Level::major, Level::minor, Level::none}) {
        if (level == r.spec.base_level) continue;
        bool any = false;
        for (const auto& def : r.spec.defs) {
            if (def.target_level == level) { any = true; break; }
        }
        if (!any) continue;

        out += "\n" + level_block_heading(level) + "\n";
        for (std::size_t i = 0; i < r.spec.defs.size(); ++i) {
            const ParameterDef& def = r.spec.defs[i];
            if (def.target_level != level) continue;
            const ParameterLayout::Entry& e = layout.entries[i];

            out += detail::pad_right("  " + def.name, kName);
            out += detail::pad_left(detail::format_fixed(r.theta_hat[e.mean_slot], 4), kNum);
            out += detail::pad_left(detail::format_fixed(r.t_stats[e.mean_slot], 2), kNum);
            out += detail::pad_left(detail::format_fixed(r.p_values[e.mean_slot], 3), kNum);

            const int mi = def.is_constant() ? -1 : margins.variable_index(def.variable);
            for (int k = 0; k < kNumLevels; ++k) {
                out += mi < 0 ? detail::pad_left("", kNum)
                              : detail::pad_left(
                                    detail::format_fixed(
                                        margins.effects[static_cast<std::size_t>(mi)][static_cast<std::size_t>(k)], 3),
                                    kNum);
            }
            out += "\n";

            if (e.random) {
                out += "    (standard deviation of parameter distribution)\n";
                out += detail::pad_right("", kName);
                out += detail::pad_left(detail::format_fixed(std::fabs(r.theta_hat[e.sd_slot]), 4), kNum);
                out += detail::pad_left(detail::format_fixed(std::fabs(r.t_stats[e.sd_slot]), 2), kNum);
                out += detail::pad_left(detail::format_fixed(r.p_values[e.sd_slot], 3), kNum);
                out += "\n";
                const double sd = std::fabs(r.theta_hat[e.sd_slot]);
                if (def.distribution == MixingDistribution::normal && sd > 0.0) {
                    const double share = share_below_zero(r.theta_hat[e.mean_slot], sd);
                    out += "    share of distribution below zero: " +
                           detail::format_fixed(100.0 * share, 1) + "%\n";
                }
            }
        }
    }

    out += "\nModel statistics\n";
    out += detail::pad_right("  Number of observations", 34) +
           detail::pad_left(detail::format_fixed(static_cast<double>(r.n_obs), 0, true), 14) + "\n";
    out += detail::pad_right("  Log-likelihood at zero", 34) +
           detail::pad_left(detail::format_fixed(r.ll_zero, 2, true), 14) + "\n";
    out += detail::pad_right("  Log-likelihood at convergence", 34) +
           detail::pad_left(detail::format_fixed(r.ll_converged, 2, true), 14) + "\n";
    out += detail::pad_right("  rho-squared", 34) +
           detail::pad_left(detail::format_fixed(pseudo_r2(r.ll_zero, r.ll_converged), 2), 14) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Comparison matrix
// ---------------------------------------------------------------------------

enum class Arrow { up, down, absent };

inline std::string to_string(Arrow a) {
    switch (a) {
        case Arrow::up: return "up";
        case Arrow::down: return "down";
        case Arrow::absent: return "absent";
    }
    throw std::logic_error("invalid Arrow");
}

struct ComparisonMatrix {
    std::vector<std::string> variables;
    std::vector<Stratum> strata;
    std::vector<std::vector<std::array<Arrow, kNumLevels>>> cells;  // [variable][stratum][level]
};

// Direction of each variable's marginal effect per stratum and level,
// reported only where the variable was estimated and retained (any of its
// slots at |t| >= threshold).
inline ComparisonMatrix comparison_matrix(const std::vector<const EstimationResult*>& results,
                                          const std::vector<const MarginalEffectsTable*>& margins,
                                          double t_threshold = kRetentionT) {
    if (results.size() != margins.size() || results.size() < 2) {
        throw std::invalid_argument("comparison needs matching results and margins for >= 2 strata");
    }

    ComparisonMatrix m;
    for (const auto* r : results) m.strata.push_back(r->stratum);
    for (const auto* mg : margins) {
        for (const auto& v : mg->variables) {
            bool seen = false;
            for (const auto& u : m.variables) {
                if (u == v) { seen = true; break; }
            }
            if (!seen) m.variables.push_back(v);
        }
    }

    for (const auto& variable : m.variables) {
        std::vector<std::array<Arrow, kNumLevels>> row;
        for (std::size_t s = 0; s < results.size(); ++s) {
            const EstimationResult& r = *results[s];
            const ParameterLayout layout = build_layout(r.spec);

            bool significant = false;
            for (std::size_t i = 0; i < r.spec.defs.size(); ++i) {
                if (r.spec.defs[i].variable != variable) continue;
                const auto& e = layout.entries[i];
                const double t_mean = r.t_stats[e.mean_slot];
                if (!std::isnan(t_mean) && std::fabs(t_mean) >= t_threshold) significant = true;
                if (e.random) {
                    const double t_sd = r.t_stats[e.sd_slot];
                    if (!std::isnan(t_sd) && std::fabs(t_sd) >= t_threshold) significant = true;
                }
            }

            std::array<Arrow, kNumLevels> cell;
            cell.fill(Arrow::absent);
            const int mi = margins[s]->variable_index(variable);
            if (significant && mi >= 0) {
                for (int k = 0; k < kNumLevels; ++k) {
                    const double effect = margins[s]->effects[static_cast<std::size_t>(mi)][static_cast<std::size_t>(k)];
                    if (effect > 0.0) cell[static_cast<std::size_t>(k)] = Arrow::up;
                    else if (effect < 0.0) cell[static_cast<std::size_t>(k)] = Arrow::down;
                }
            }
            row.push_back(cell);
        }
        m.cells.push_back(std::move(row));
    }
    return m;
}

inline std::string render_comparison(const ComparisonMatrix& m) {
    constexpr std::size_t kName = 28;
    constexpr std::size_t kCell = 7;
    std::string out = "Effect direction by stratum (significant variables only)\n";

    out += detail::pad_right("", kName);
    for (Stratum s : m.strata) {
        out += detail::pad_left(to_string(s), 3 * kCell);
    }
    out += "\n" + detail::pad_right("Variable", kName);
    for (std::size_t s = 0; s < m.strata.size(); ++s) {
        for (int k = 0; k < kNumLevels; ++k) {
            out += detail::pad_left(to_string(static_cast<Level>(k)), kCell);
        }
    }
    out += "\n";

    for (std::size_t v = 0; v < m.variables.size(); ++v) {
        out += detail::pad_right(m.variables[v], kName);
        for (std::size_t s = 0; s < m.strata.size(); ++s) {
            for (int k = 0; k < kNumLevels; ++k) {
                const Arrow a = m.cells[v][s][static_cast<std::size_t>(k)];
                const char* mark = a == Arrow::up ? "+" : (a == Arrow::down ? "-" : "");
                out += detail::pad_left(mark, kCell);
            }
        }
        out += "\n";
    }
    out += "\n'+' raises the level's probability, '-' lowers it; blank means not significant or not in the model.\n";
    return out;
}

inline json comparison_to_json(const ComparisonMatrix& m) {
    json j;
    j["strata"] = json::array();
    for (Stratum s : m.strata) j["strata"].push_back(to_string(s));
    j["variables"] = m.variables;
    j["cells"] = json::array();
    for (std::size_t v = 0; v < m.variables.size(); ++v) {
        json row;
        row["variable"] = m.variables[v];
        for (std::size_t s = 0; s < m.strata.size(); ++s) {
            json cell;
            for (int k = 0; k < kNumLevels; ++k) {
                cell[to_string(static_cast<Level>(k))] =
                    to_string(m.cells[v][s][static_cast<std::size_t>(k)]);
            }
            row[to_string(m.strata[s])] = std::move(cell);
        }
        j["cells"].push_back(std::move(row));
    }
    return j;
}

}  // namespace mixlogit
