#pragma once

// Config-driven orchestration: ingest -> stratify -> estimate per stratum ->
// margins -> likelihood-ratio tests -> reports. Also the 3x3 transferability
// matrix. Everything written to the output directory is deterministic for a
// fixed config and inputs.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mixlogit/crash_data.hpp"
#include "mixlogit/dataset.hpp"
#include "mixlogit/estimator.hpp"
#include "mixlogit/inference.hpp"
#include "mixlogit/model_spec.hpp"
#include "mixlogit/report.hpp"

namespace mixlogit {

// ---------------------------------------------------------------------------
// Transfer matrix
// ---------------------------------------------------------------------------

struct TransferCell {
    Stratum spec_stratum = Stratum::normal;  // whose specification
    Stratum data_stratum = Stratum::normal;  // whose data it is re-estimated on
    double ll_transferred = 0.0;
    double ll_own = 0.0;
    LRTestResult test;
};

struct TransferMatrix {
    std::vector<Stratum> strata;
    std::vector<TransferCell> cells;  // off-diagonal, row-major in strata order
};

// Re-estimates every stratum's specification on every other stratum's data
// and tests it against that stratum's own converged fit. df is the
// transferred specification's parameter count.
inline TransferMatrix transfer_matrix(const std::map<Stratum, ModelSpec>& specs,
                                      const std::map<Stratum, const Dataset*>& datasets,
                                      const std::map<Stratum, double>& ll_own,
                                      const EstimationOptions& options) {
    TransferMatrix m;
    for (const auto& [stratum, spec] : specs) m.strata.push_back(stratum);

    for (Stratum a : m.strata) {
        const ModelSpec& spec_a = specs.at(a);
        const int df = static_cast<int>(build_layout(spec_a).size());
        for (Stratum b : m.strata) {
            if (a == b) continue;
            const EstimationResult fit = estimate(spec_a, *datasets.at(b), options);
            if (!fit.converged) {
                throw std::runtime_error("transfer estimation (" + to_string(a) + " spec on " +
                                         to_string(b) + " data) did not converge");
            }
            TransferCell cell;
            cell.spec_stratum = a;
            cell.data_stratum = b;
            cell.ll_transferred = fit.ll_converged;
            cell.ll_own = ll_own.at(b);
            cell.test = lr_transferability(cell.ll_transferred, cell.ll_own, df);
            m.cells.push_back(cell);
        }
    }
    return m;
}

inline json transfer_to_json(const TransferMatrix& m) {
    json j;
    j["strata"] = json::array();
    for (Stratum s : m.strata) j["strata"].push_back(to_string(s));
    j["cells"] = json::array();
    for (const auto& c : m.cells) {
        json jc;
        jc["spec_stratum"] = to_string(c.spec_stratum);
        jc["data_stratum"] = to_string(c.data_stratum);
        jc["ll_transferred"] = c.ll_transferred;
        jc["ll_own"] = c.ll_own;
        jc["statistic"] = c.test.statistic;
        jc["df"] = c.test.df;
        jc["p_value"] = c.test.p_value;
        j["cells"].push_back(std::move(jc));
    }
    return j;
}

inline std::string render_transfer(const TransferMatrix& m) {
    constexpr std::size_t kCell = 18;
    std::string out = "Transferability tests (row specification re-estimated on column data)\n";
    out += detail::pad_right("", 10);
    for (Stratum s : m.strata) out += detail::pad_left(to_string(s), kCell);
    out += "\n";
    for (Stratum a : m.strata) {
        out += detail::pad_right(to_string(a), 10);
        for (Stratum b : m.strata) {
            if (a == b) {
                out += detail::pad_left("--", kCell);
                continue;
            }
            const TransferCell* cell = nullptr;
            for (const auto& c : m.cells) {
                if (c.spec_stratum == a && c.data_stratum == b) { cell = &c; break; }
            }
            if (cell == nullptr) {
                out += detail::pad_left("", kCell);
                continue;
            }
            out += detail::pad_left(detail::format_fixed(cell->test.statistic, 2) + " (df " +
                                        std::to_string(cell->test.df) + ")",
                                    kCell);
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Pipeline config
// ---------------------------------------------------------------------------

struct PipelineConfig {
    std::string input;   // crash CSV; empty when datasets are given directly
    std::string schema;  // schema JSON for the CSV; empty = identity schema
    std::map<Stratum, std::string> dataset_paths;
    std::string output_dir = "out";
    std::vector<Stratum> strata = {Stratum::normal, Stratum::rain, Stratum::snow};
    std::map<Stratum, ModelSpec> specs;  // may include Stratum::pooled
    EstimationOptions options;
    std::set<std::string> stages = {"ingest", "estimate", "margins", "lrtest", "report"};
};

namespace detail {

inline std::string resolve_path(const std::string& base_dir, const std::string& path) {
    std::filesystem::path p(path);
    if (p.is_absolute() || base_dir.empty()) return path;
    return (std::filesystem::path(base_dir) / p).string();
}

inline int verbosity() {
    const char* env = std::getenv("MIXLOGIT_VERBOSITY");
    if (env == nullptr || *env == '\0') return 1;
    return std::atoi(env);
}

inline void log_info(const std::string& stage, const std::string& msg) {
    if (verbosity() >= 1) std::cerr << "[" << stage << "] " << msg << "\n";
}

}  // namespace detail

inline EstimationOptions options_from_json(const json& j) {
    EstimationOptions o;
    for (const auto& [key, value] : j.items()) {
        if (key == "n_draws") o.n_draws = value.get<int>();
        else if (key == "max_iterations") o.max_iterations = value.get<int>();
        else if (key == "gradient_tolerance") o.gradient_tolerance = value.get<double>();
        else if (key == "step_tolerance") o.step_tolerance = value.get<double>();
        else if (key == "covariance_method") o.covariance_method = covariance_method_from_string(value.get<std::string>());
        else if (key == "skip") o.skip = value.get<int>();
        else if (key == "threads") o.n_threads = value.get<unsigned>();
        else throw std::runtime_error("config: unknown option '" + key + "'");
    }
    o.validate();
    return o;
}

inline PipelineConfig load_pipeline_config(const json& j, const std::string& base_dir) {
    PipelineConfig c;
    for (const auto& [key, value] : j.items()) {
        if (key == "input") c.input = detail::resolve_path(base_dir, value.get<std::string>());
        else if (key == "schema") c.schema = detail::resolve_path(base_dir, value.get<std::string>());
        else if (key == "output_dir") c.output_dir = detail::resolve_path(base_dir, value.get<std::string>());
        else if (key == "datasets") {
            for (const auto& [name, path] : value.items()) {
                c.dataset_paths[stratum_from_string(name)] =
                    detail::resolve_path(base_dir, path.get<std::string>());
            }
        } else if (key == "strata") {
            c.strata.clear();
            for (const auto& s : value) c.strata.push_back(stratum_from_string(s.get<std::string>()));
        } else if (key == "specs") {
            for (const auto& [name, spec] : value.items()) {
                const Stratum stratum = stratum_from_string(name);
                c.specs[stratum] = spec.is_string()
                                       ? load_spec_file(detail::resolve_path(base_dir, spec.get<std::string>()))
                                       : spec_from_json(spec);
            }
        } else if (key == "options") {
            c.options = options_from_json(value);
        } else if (key == "stages") {
            c.stages.clear();
            for (const auto& s : value) c.stages.insert(s.get<std::string>());
        } else {
            throw std::runtime_error("config: unknown key '" + key + "'");
        }
    }
    for (const auto& s : c.stages) {
        if (s != "ingest" && s != "estimate" && s != "margins" && s != "lrtest" &&
            s != "transfer" && s != "report") {
            throw std::runtime_error("config: unknown stage '" + s + "'");
        }
    }
    if (c.input.empty() && c.dataset_paths.empty()) {
        throw std::runtime_error("config: needs either 'input' (CSV) or 'datasets'");
    }
    return c;
}

// ---------------------------------------------------------------------------
// Pipeline driver
// ---------------------------------------------------------------------------

namespace detail {

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << content;
}

inline void write_json_file(const std::string& path, const json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline json summary_to_json(const SummaryTable& s) {
    json j;
    j["n_obs"] = s.n_obs;
    j["levels"] = json::array();
    for (const auto& l : s.levels) {
        j["levels"].push_back({{"level", to_string(l.level)},
                               {"count", l.count},
                               {"percentage", l.percentage}});
    }
    j["indicators"] = json::array();
    for (const auto& ind : s.indicators) {
        j["indicators"].push_back({{"name", ind.name}, {"mean", ind.mean}, {"sd", ind.sd}});
    }
    return j;
}

}  // namespace detail

// Executes the configured stages. Exit code 0 on success, 1 on any
// validation or data error, 2 when everything ran but at least one
// estimation failed to converge (artifacts are still written).
inline int run_pipeline(const PipelineConfig& config) {
    namespace fs = std::filesystem;
    std::string stage = "config";
    try {
        fs::create_directories(config.output_dir);
        const auto out_path = [&](const std::string& name) {
            return (fs::path(config.output_dir) / name).string();
        };

        // Data acquisition: CSV ingest or pre-coded dataset files.
        stage = "ingest";
        std::map<Stratum, Dataset> datasets;
        if (config.stages.count("ingest") && !config.input.empty()) {
            std::ifstream in(config.input);
            if (!in) throw std::runtime_error("cannot open input '" + config.input + "'");
            const Schema schema =
                config.schema.empty() ? Schema::canonical() : load_schema_file(config.schema);
            const ParseReport parsed = parse_records(in, schema);
            StratifyResult strat = stratify(parsed.records);

            json ingest;
            ingest["input"] = fs::path(config.input).filename().string();
            ingest["rows_parsed"] = parsed.records.size();
            ingest["rows_rejected"] = parsed.rejects.size();
            ingest["rows_filtered"] = parsed.filtered.size();
            ingest["records_excluded"] = strat.excluded.size();
            json rejects = json::array();
            for (const auto& r : parsed.rejects) {
                rejects.push_back({{"row", r.row}, {"reason", r.reason}});
            }
            ingest["rejects"] = std::move(rejects);
            datasets[Stratum::normal] = std::move(strat.normal);
            datasets[Stratum::rain] = std::move(strat.rain);
            datasets[Stratum::snow] = std::move(strat.snow);
            datasets[Stratum::pooled] = std::move(strat.pooled);
            json strata_counts;
            for (const auto& [s, ds] : datasets) {
                strata_counts[to_string(s)] = ds.observations.size();
                if (!ds.observations.empty()) {
                    ingest["summary_" + to_string(s)] = detail::summary_to_json(summarize(ds));
                }
            }
            ingest["strata"] = std::move(strata_counts);
            detail::write_json_file(out_path("ingest.json"), ingest);
            for (const auto& [s, ds] : datasets) {
                if (!ds.observations.empty()) {
                    write_dataset_file(out_path("dataset_" + to_string(s) + ".jsonl"), ds);
                }
            }
            detail::log_info(stage, std::to_string(parsed.records.size()) + " records, " +
                                        std::to_string(parsed.rejects.size()) + " rejected, " +
                                        std::to_string(strat.excluded.size()) + " excluded");
        } else {
            for (const auto& [s, path] : config.dataset_paths) {
                datasets[s] = read_dataset_file(path);
                datasets[s].stratum = s;
            }
            if (!datasets.count(Stratum::pooled)) {
                Dataset pooled;
                pooled.stratum = Stratum::pooled;
                for (Stratum s : config.strata) {
                    if (!datasets.count(s)) continue;
                    const Dataset& ds = datasets.at(s);
                    if (pooled.indicator_names.empty()) {
                        pooled.indicator_names = ds.indicator_names;
                        pooled.groups = ds.groups;
                    } else if (pooled.indicator_names != ds.indicator_names) {
                        throw std::runtime_error("datasets disagree on indicator columns");
                    }
                    pooled.observations.insert(pooled.observations.end(), ds.observations.begin(),
                                               ds.observations.end());
                }
                datasets[Stratum::pooled] = std::move(pooled);
            }
        }
        for (Stratum s : config.strata) {
            if (!datasets.count(s) || datasets.at(s).observations.empty()) {
                detail::log_info(stage, "stratum " + to_string(s) + " has no observations");
            }
        }

        // Estimation per stratum.
        stage = "estimate";
        std::map<Stratum, EstimationResult> results;
        std::map<Stratum, MarginalEffectsTable> margins;
        bool all_converged = true;
        if (config.stages.count("estimate")) {
            for (Stratum s : config.strata) {
                if (!config.specs.count(s)) {
                    throw std::runtime_error("no spec configured for stratum " + to_string(s));
                }
                if (!datasets.count(s) || datasets.at(s).observations.empty()) {
                    throw std::runtime_error("stratum " + to_string(s) + " has no observations");
                }
                const Dataset& data = datasets.at(s);
                const ModelSpec& spec = config.specs.at(s);
                const CompiledModel model = compile_model(data, spec);

                DrawMatrix draws;
                if (model.n_random > 0) {
                    draws = build_draws(data.observations.size(),
                                        static_cast<std::size_t>(config.options.n_draws),
                                        model.n_random, static_cast<std::size_t>(config.options.skip));
                }
                EstimationResult result = estimate(spec, data, config.options, &draws);
                all_converged = all_converged && result.converged;
                detail::log_info(stage, to_string(s) + ": ll " +
                                            detail::format_fixed(result.ll_converged, 2) + ", " +
                                            std::to_string(result.iterations) + " iterations, " +
                                            (result.converged ? "converged" : "NOT converged"));

                detail::write_json_file(out_path("result_" + to_string(s) + ".json"),
                                        result_to_json(result));
                std::string trace;
                for (const auto& t : result.trace) {
                    char line[128];
                    std::snprintf(line, sizeof(line), "%4d  %20.8f  %14.6e  %14.6e\n", t.iteration,
                                  t.ll, t.grad_norm, t.step_size);
                    trace += line;
                }
                detail::write_text_file(out_path("trace_" + to_string(s) + ".log"), trace);

                if (config.stages.count("margins")) {
                    margins[s] = marginal_effects(model, result.theta_hat, draws);
                    detail::write_json_file(out_path("margins_" + to_string(s) + ".json"),
                                            margins_to_json(margins[s]));
                }
                results[s] = std::move(result);
            }
        }

        // Pooled-versus-strata likelihood ratio.
        stage = "lrtest";
        json lr_json;
        bool have_lr = false;
        if (config.stages.count("lrtest") && config.specs.count(Stratum::pooled) &&
            config.stages.count("estimate")) {
            const Dataset& pooled = datasets.at(Stratum::pooled);
            const EstimationResult pooled_fit =
                estimate(config.specs.at(Stratum::pooled), pooled, config.options);
            all_converged = all_converged && pooled_fit.converged;
            detail::write_json_file(out_path("result_pooled.json"), result_to_json(pooled_fit));

            int df = -static_cast<int>(build_layout(config.specs.at(Stratum::pooled)).size());
            std::vector<double> strata_ll;
            for (Stratum s : config.strata) {
                strata_ll.push_back(results.at(s).ll_converged);
                df += static_cast<int>(build_layout(config.specs.at(s)).size());
            }
            const LRTestResult lr = lr_pooled_test(pooled_fit.ll_converged, strata_ll, df);
            lr_json = lr_to_json(lr);
            lr_json["ll_pooled"] = pooled_fit.ll_converged;
            detail::write_json_file(out_path("lr_pooled.json"), lr_json);
            have_lr = true;
            detail::log_info(stage, "statistic " + detail::format_fixed(lr.statistic, 2) + ", df " +
                                        std::to_string(lr.df));
        }

        // Transferability matrix.
        stage = "transfer";
        TransferMatrix transfers;
        bool have_transfer = false;
        if (config.stages.count("transfer") && config.stages.count("estimate")) {
            std::map<Stratum, ModelSpec> specs;
            std::map<Stratum, const Dataset*> data_ptrs;
            std::map<Stratum, double> ll_own;
            for (Stratum s : config.strata) {
                specs[s] = config.specs.at(s);
                data_ptrs[s] = &datasets.at(s);
                ll_own[s] = results.at(s).ll_converged;
            }
            transfers = transfer_matrix(specs, data_ptrs, ll_own, config.options);
            detail::write_json_file(out_path("transfer.json"), transfer_to_json(transfers));
            have_transfer = true;
        }

        // Reports.
        stage = "report";
        if (config.stages.count("report") && config.stages.count("estimate")) {
            std::string text;
            json report;
            report["strata"] = json::array();
            for (Stratum s : config.strata) {
                const EstimationResult& r = results.at(s);
                const MarginalEffectsTable table =
                    margins.count(s) ? margins.at(s) : MarginalEffectsTable{};
                if (!r.converged) {
                    text += "WARNING: " + to_string(s) +
                            " estimation stopped at the iteration limit without converging\n";
                }
                text += render_estimation_table(r, table) + "\n";
                json js;
                js["stratum"] = to_string(s);
                js["result"] = result_to_json(r);
                js["margins"] = margins_to_json(table);
                report["strata"].push_back(std::move(js));
            }
            if (have_lr) {
                text += "Pooled-model likelihood-ratio test: statistic " +
                        detail::format_fixed(lr_json.at("statistic").get<double>(), 2) + ", df " +
                        std::to_string(lr_json.at("df").get<int>()) +
                        (lr_json.at("p_value").get<double>() < 0.001
                             ? ", p < 0.001"
                             : ", p = " + detail::format_fixed(lr_json.at("p_value").get<double>(), 3)) +
                        "\n\n";
                report["lr_pooled"] = lr_json;
            }
            if (have_transfer) {
                text += render_transfer(transfers) + "\n";
                report["transfer"] = transfer_to_json(transfers);
            }
            if (results.size() >= 2 && !margins.empty()) {
                std::vector<const EstimationResult*> rs;
                std::vector<const MarginalEffectsTable*> ms;
                for (Stratum s : config.strata) {
                    if (results.count(s) && margins.count(s)) {
                        rs.push_back(&results.at(s));
                        ms.push_back(&margins.at(s));
                    }
                }
                if (rs.size() >= 2) {
                    const ComparisonMatrix cmp = comparison_matrix(rs, ms);
                    text += render_comparison(cmp);
                    report["comparison"] = comparison_to_json(cmp);
                }
            }
            detail::write_text_file(out_path("report.txt"), text);
            detail::write_json_file(out_path("report.json"), report);
            detail::log_info(stage, "wrote " + out_path("report.txt"));
        }

        return all_converged ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "[" << stage << "] error: " << e.what() << "\n";
        return 1;
    }
}

inline int run_pipeline_file(const std::string& config_path) {
    json j;
    try {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("cannot open config '" + config_path + "'");
        j = json::parse(in);
    } catch (const std::exception& e) {
        std::cerr << "[config] error: " << e.what() << "\n";
        return 1;
    }
    try {
        const PipelineConfig config =
            load_pipeline_config(j, std::filesystem::path(config_path).parent_path().string());
        return run_pipeline(config);
    } catch (const std::exception& e) {
        std::cerr << "[config] error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace mixlogit
