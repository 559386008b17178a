// Command-line front end: ingestion, estimation, inference, simulation, and
// the full pipeline, all driven by JSON configs and the shared headers.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <mixlogit/mixlogit.hpp>

namespace ml = mixlogit;
using ml::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    return json::parse(in);
}

void add_option_flags(CLI::App* cmd, ml::EstimationOptions& options, std::string& covariance) {
    cmd->add_option("--draws", options.n_draws, "number of draws per observation");
    cmd->add_option("--skip", options.skip, "leading Halton indices to skip");
    cmd->add_option("--max-iterations", options.max_iterations, "iteration cap");
    cmd->add_option("--gradient-tolerance", options.gradient_tolerance, "score max-norm stop");
    cmd->add_option("--step-tolerance", options.step_tolerance, "step max-norm stop");
    cmd->add_option("--covariance", covariance, "numerical_hessian or bhhh");
    cmd->add_option("--threads", options.n_threads, "worker threads for likelihood sums");
}

int cmd_ingest(const std::string& input, const std::string& schema, const std::string& output_dir) {
    ml::PipelineConfig config;
    config.input = input;
    config.schema = schema;
    config.output_dir = output_dir;
    config.stages = {"ingest"};
    return ml::run_pipeline(config);
}

int cmd_summarize(const std::string& dataset_path, bool as_json) {
    const ml::Dataset data = ml::read_dataset_file(dataset_path);
    const ml::SummaryTable summary = ml::summarize(data);
    if (as_json) {
        std::cout << ml::detail::summary_to_json(summary).dump(2) << "\n";
        return 0;
    }
    std::cout << ml::to_string(data.stratum) << " stratum, " << summary.n_obs << " observations\n\n";
    for (const auto& l : summary.levels) {
        std::printf("  %-8s %8zu  %5.1f%%\n", ml::to_string(l.level).c_str(), l.count, l.percentage);
    }
    std::cout << "\n  indicator means (sd)\n";
    for (const auto& ind : summary.indicators) {
        std::printf("  %-16s %7.4f  (%.4f)\n", ind.name.c_str(), ind.mean, ind.sd);
    }
    return 0;
}

int cmd_estimate(const std::string& dataset_path, const std::string& spec_path,
                 const std::string& out_path, const ml::EstimationOptions& options) {
    const ml::Dataset data = ml::read_dataset_file(dataset_path);
    const ml::ModelSpec spec = ml::load_spec_file(spec_path);
    const ml::EstimationResult result = ml::estimate(spec, data, options);
    {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + out_path + "' for writing");
        out << ml::result_to_json(result).dump(2) << "\n";
    }
    std::cout << ml::render_estimation_table(result, ml::MarginalEffectsTable{});
    std::cout << "\nresult written to " << out_path << "\n";
    return result.converged ? 0 : 2;
}

int cmd_margins(const std::string& dataset_path, const std::string& result_path,
                const std::string& out_path) {
    const ml::Dataset data = ml::read_dataset_file(dataset_path);
    const ml::EstimationResult result = ml::result_from_json(load_json_file(result_path));
    const ml::CompiledModel model = ml::compile_model(data, result.spec);
    ml::DrawMatrix draws;
    if (model.n_random > 0) {
        draws = ml::build_draws(data.observations.size(),
                                static_cast<std::size_t>(result.n_draws_used), model.n_random,
                                static_cast<std::size_t>(result.halton_skip));
    }
    const ml::MarginalEffectsTable table = ml::marginal_effects(model, result.theta_hat, draws);
    const json j = ml::margins_to_json(table);
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + out_path + "' for writing");
        out << j.dump(2) << "\n";
    }
    for (std::size_t i = 0; i < table.variables.size(); ++i) {
        std::printf("  %-16s %8.3f %8.3f %8.3f\n", table.variables[i].c_str(), table.effects[i][0],
                    table.effects[i][1], table.effects[i][2]);
    }
    return 0;
}

int cmd_lrtest(const std::string& kind, double full_ll, const std::vector<double>& strata_ll,
               double transferred_ll, double own_ll, int df, const std::string& out_path) {
    ml::LRTestResult r;
    if (kind == "pooled") {
        r = ml::lr_pooled_test(full_ll, strata_ll, df);
    } else if (kind == "transfer") {
        r = ml::lr_transferability(transferred_ll, own_ll, df);
    } else {
        throw std::runtime_error("unknown test kind '" + kind + "' (use pooled or transfer)");
    }
    std::printf("statistic %.4f  df %d  p %.6g\n", r.statistic, r.df, r.p_value);
    if (!out_path.empty()) {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + out_path + "' for writing");
        out << ml::lr_to_json(r).dump(2) << "\n";
    }
    return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& out_path,
                 const std::string& theta_out, bool seed_set, std::uint64_t seed) {
    ml::GenConfig config = ml::gen_config_from_json(load_json_file(config_path));
    if (seed_set) config.seed = seed;
    const ml::Dataset data = ml::generate_dataset(config);
    ml::write_dataset_file(out_path, data);

    json sidecar;
    sidecar["theta_true"] = config.theta_true;
    sidecar["slot_names"] = ml::build_layout(config.spec).slot_names;
    sidecar["seed"] = config.seed;
    sidecar["n_obs"] = config.n_obs;
    sidecar["spec"] = ml::spec_to_json(config.spec);
    const std::string theta_path = theta_out.empty() ? out_path + ".theta.json" : theta_out;
    {
        std::ofstream out(theta_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + theta_path + "' for writing");
        out << sidecar.dump(2) << "\n";
    }

    const ml::SummaryTable summary = ml::summarize(data);
    std::cout << data.observations.size() << " observations written to " << out_path << "\n";
    for (const auto& l : summary.levels) {
        std::printf("  %-8s %5.1f%%\n", ml::to_string(l.level).c_str(), l.percentage);
    }
    std::cout << "true parameters written to " << theta_path << "\n";
    return 0;
}

int cmd_report(const std::string& result_path, const std::string& margins_path,
               const std::string& out_path) {
    const ml::EstimationResult result = ml::result_from_json(load_json_file(result_path));
    ml::MarginalEffectsTable margins;
    if (!margins_path.empty()) margins = ml::margins_from_json(load_json_file(margins_path));
    const std::string text = ml::render_estimation_table(result, margins);
    if (out_path.empty()) {
        std::cout << text;
    } else {
        std::ofstream out(out_path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open '" + out_path + "' for writing");
        out << text;
    }
    return 0;
}

int cmd_draws(std::size_t n_obs, std::size_t n_draws, std::size_t n_dims, std::size_t skip,
              const std::string& out_path) {
    const ml::DrawMatrix draws = ml::build_draws(n_obs, n_draws, n_dims, skip);
    std::ofstream file;
    std::ostream* out = &std::cout;
    if (!out_path.empty()) {
        file.open(out_path, std::ios::binary);
        if (!file) throw std::runtime_error("cannot open '" + out_path + "' for writing");
        out = &file;
    }
    *out << "obs,draw";
    for (std::size_t d = 0; d < n_dims; ++d) *out << ",dim" << d;
    *out << "\n";
    char buf[32];
    for (std::size_t n = 0; n < n_obs; ++n) {
        for (std::size_t r = 0; r < n_draws; ++r) {
            *out << n << "," << r;
            for (std::size_t d = 0; d < n_dims; ++d) {
                std::snprintf(buf, sizeof(buf), "%.17g", draws.at(n, r, d));
                *out << "," << buf;
            }
            *out << "\n";
        }
    }
    return 0;
}

int cmd_run(const std::string& config_path, bool draws_set, int draws, bool skip_set, int skip,
            bool transfer_on) {
    const json j = load_json_file(config_path);
    ml::PipelineConfig config = ml::load_pipeline_config(
        j, std::filesystem::path(config_path).parent_path().string());
    if (draws_set) config.options.n_draws = draws;
    if (skip_set) config.options.skip = skip;
    if (transfer_on) config.stages.insert("transfer");
    config.options.validate();
    return ml::run_pipeline(config);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crash injury severity estimation toolkit (mixed logit over Halton draws)"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "parse a crash CSV and write stratified datasets");
    std::string in_input, in_schema, in_outdir = "out";
    ingest->add_option("--input", in_input, "crash CSV file")->required();
    ingest->add_option("--schema", in_schema, "column schema JSON");
    ingest->add_option("--output-dir", in_outdir, "output directory");

    // summarize
    auto* summarize = app.add_subcommand("summarize", "level shares and indicator means of a dataset");
    std::string su_dataset;
    bool su_json = false;
    summarize->add_option("--dataset", su_dataset, "dataset JSONL file")->required();
    summarize->add_flag("--json", su_json, "emit JSON instead of text");

    // estimate
    auto* est = app.add_subcommand("estimate", "fit a model spec on a dataset");
    std::string es_dataset, es_spec, es_out = "result.json", es_cov;
    ml::EstimationOptions es_options;
    est->add_option("--dataset", es_dataset, "dataset JSONL file")->required();
    est->add_option("--spec", es_spec, "model spec JSON")->required();
    est->add_option("--out", es_out, "result JSON path");
    add_option_flags(est, es_options, es_cov);

    // margins
    auto* margins = app.add_subcommand("margins", "marginal effects at a saved estimate");
    std::string ma_dataset, ma_result, ma_out;
    margins->add_option("--dataset", ma_dataset, "dataset JSONL file")->required();
    margins->add_option("--result", ma_result, "estimation result JSON")->required();
    margins->add_option("--out", ma_out, "margins JSON path");

    // lrtest
    auto* lrtest = app.add_subcommand("lrtest", "likelihood-ratio test from log-likelihood values");
    std::string lr_kind = "pooled", lr_out;
    double lr_full = 0.0, lr_transferred = 0.0, lr_own = 0.0;
    std::vector<double> lr_strata;
    int lr_df = 0;
    lrtest->add_option("--kind", lr_kind, "pooled or transfer");
    lrtest->add_option("--full", lr_full, "pooled-model log-likelihood");
    lrtest->add_option("--strata", lr_strata, "stratum log-likelihoods");
    lrtest->add_option("--transferred", lr_transferred, "foreign spec's log-likelihood on this data");
    lrtest->add_option("--own", lr_own, "stratum's own converged log-likelihood");
    lrtest->add_option("--df", lr_df, "degrees of freedom")->required();
    lrtest->add_option("--out", lr_out, "result JSON path");

    // transfer
    auto* transfer = app.add_subcommand("transfer", "cross-stratum transferability matrix");
    std::string tr_config;
    transfer->add_option("--config", tr_config, "pipeline config JSON")->required();

    // simulate
    auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset from known parameters");
    std::string si_config, si_out = "synthetic.jsonl", si_theta;
    std::uint64_t si_seed = 0;
    simulate->add_option("--config", si_config, "generator config JSON")->required();
    simulate->add_option("--out", si_out, "dataset JSONL path");
    simulate->add_option("--theta-out", si_theta, "true-parameter sidecar path");
    auto* si_seed_opt = simulate->add_option("--seed", si_seed, "override the config seed");

    // report
    auto* report = app.add_subcommand("report", "render a saved result as a text table");
    std::string re_result, re_margins, re_out;
    report->add_option("--result", re_result, "estimation result JSON")->required();
    report->add_option("--margins", re_margins, "margins JSON");
    report->add_option("--out", re_out, "output path (default stdout)");

    // draws
    auto* draws = app.add_subcommand("draws", "export a Halton draw matrix as CSV");
    std::size_t dr_obs = 1, dr_draws = 100, dr_dims = 1, dr_skip = ml::kDefaultHaltonSkip;
    std::string dr_out;
    draws->add_option("--n-obs", dr_obs, "observations");
    draws->add_option("--n-draws", dr_draws, "draws per observation");
    draws->add_option("--dims", dr_dims, "dimensions");
    draws->add_option("--skip", dr_skip, "leading indices to skip");
    draws->add_option("--out", dr_out, "output path (default stdout)");

    // run
    auto* run = app.add_subcommand("run", "full pipeline from a config file");
    std::string ru_config;
    int ru_draws = 0, ru_skip = 0;
    bool ru_transfer = false;
    run->add_option("--config", ru_config, "pipeline config JSON")->required();
    auto* ru_draws_opt = run->add_option("--draws", ru_draws, "override draw count");
    auto* ru_skip_opt = run->add_option("--skip", ru_skip, "override Halton skip");
    run->add_flag("--transfer", ru_transfer, "also run the transferability matrix");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (ingest->parsed()) return cmd_ingest(in_input, in_schema, in_outdir);
        if (summarize->parsed()) return cmd_summarize(su_dataset, su_json);
        if (est->parsed()) {
            if (!es_cov.empty()) es_options.covariance_method = ml::covariance_method_from_string(es_cov);
            es_options.validate();
            return cmd_estimate(es_dataset, es_spec, es_out, es_options);
        }
        if (margins->parsed()) return cmd_margins(ma_dataset, ma_result, ma_out);
        if (lrtest->parsed()) {
            return cmd_lrtest(lr_kind, lr_full, lr_strata, lr_transferred, lr_own, lr_df, lr_out);
        }
        if (transfer->parsed()) return cmd_run(tr_config, false, 0, false, 0, true);
        if (simulate->parsed()) {
            return cmd_simulate(si_config, si_out, si_theta, si_seed_opt->count() > 0, si_seed);
        }
        if (report->parsed()) return cmd_report(re_result, re_margins, re_out);
        if (draws->parsed()) return cmd_draws(dr_obs, dr_draws, dr_dims, dr_skip, dr_out);
        if (run->parsed()) {
            return cmd_run(ru_config, ru_draws_opt->count() > 0, ru_draws,
                           ru_skip_opt->count() > 0, ru_skip, ru_transfer);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
