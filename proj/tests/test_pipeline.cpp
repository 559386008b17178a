#include <catch2/catch_amalgamated.hpp>

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <mixlogit/mixlogit.hpp>

#include "helpers.hpp"

using namespace mixlogit;
namespace fs = std::filesystem;
using testutil::fixed_def;
using testutil::random_def;

namespace {

struct TempDir {
    fs::path path;

    TempDir() {
        static std::atomic<int> counter{0};
        path = fs::temp_directory_path() /
               ("mixlogit_pipeline_" + std::to_string(counter.fetch_add(1)) + "_" +
                std::to_string(static_cast<unsigned>(::getpid())));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// Deterministic crash CSV: 60 normal, 30 rain, 30 snow rows with every
// severity level and both sexes present in every stratum, plus two
// intersection rows and one unknown-weather row that stratification drops.
std::string synthetic_csv() {
    std::string csv =
        "crash_id,severity5,weather,area,alignment,manner,harmful_event,lighting,truck_type,"
        "speed_limit,lane_count,aadt,surface,route,crash_time,day,driver_sex,restraint_used,"
        "location_type\n";
    int id = 0;
    auto append = [&](const std::string& weather, int n) {
        for (int j = 0; j < n; ++j) {
            const int m = j % 10;
            const std::string severity = m == 0 ? (j % 20 == 0 ? "fatal" : "disabling")
                                                : (m <= 3 ? (j % 2 ? "evident" : "possible") : "none");
            csv += "c" + std::to_string(id++) + "," + severity + "," + weather + "," +
                   (j % 5 == 0 ? "rural" : "urban") + ",straight," +
                   (j % 7 == 0 ? "rear_end" : "other_manner") + ",other_event,daylight," +
                   (j % 2 ? "tractor_semi" : "single_unit") + ",55,2," +
                   std::to_string(12000 + 900 * j) + ",asphalt,non_interstate," +
                   std::to_string(400 + 9 * j) + "," + (j % 6 == 0 ? "weekend" : "weekday") + "," +
                   (j % 3 ? "male" : "female") + "," + (j % 4 ? "1" : "0") + ",segment\n";
        }
    };
    append("normal", 60);
    append("rain", 30);
    append("snow", 30);
    csv += "x1,none,normal,urban,straight,other_manner,other_event,daylight,tractor_semi,"
           "55,2,9000,asphalt,non_interstate,700,weekday,male,1,intersection\n";
    csv += "x2,evident,rain,urban,straight,other_manner,other_event,daylight,tractor_semi,"
           "55,2,9000,asphalt,non_interstate,700,weekday,female,1,intersection\n";
    csv += "x3,none,other,urban,straight,other_manner,other_event,daylight,tractor_semi,"
           "55,2,9000,asphalt,non_interstate,700,weekday,male,1,segment\n";
    return csv;
}

// One shared specification keeps the pooled and transferability statistics
// non-negative by construction.
ModelSpec shared_spec() {
    ModelSpec spec;
    spec.defs.push_back(fixed_def("const_major", Level::major, kConstantVariable));
    spec.defs.push_back(fixed_def("const_minor", Level::minor, kConstantVariable));
    spec.defs.push_back(fixed_def("male_major", Level::major, "male"));
    return spec;
}

PipelineConfig csv_config(const TempDir& dir, const std::string& out_name) {
    PipelineConfig config;
    config.input = dir.file("crashes.csv");
    config.output_dir = dir.file(out_name);
    for (Stratum s : {Stratum::normal, Stratum::rain, Stratum::snow, Stratum::pooled}) {
        config.specs[s] = shared_spec();
    }
    config.options.n_draws = 10;
    config.stages = {"ingest", "estimate", "margins", "lrtest", "transfer", "report"};
    return config;
}

}  // namespace

TEST_CASE("estimation options parse from json and reject strangers", "[pipeline]") {
    const json j = {{"n_draws", 250},          {"max_iterations", 80},
                    {"gradient_tolerance", 1e-5}, {"step_tolerance", 1e-9},
                    {"covariance_method", "bhhh"}, {"skip", 31},
                    {"threads", 2}};
    const EstimationOptions o = options_from_json(j);
    CHECK(o.n_draws == 250);
    CHECK(o.max_iterations == 80);
    CHECK(o.gradient_tolerance == 1e-5);
    CHECK(o.step_tolerance == 1e-9);
    CHECK(o.covariance_method == CovarianceMethod::bhhh);
    CHECK(o.skip == 31);
    CHECK(o.n_threads == 2);

    CHECK_THROWS_AS(options_from_json(json{{"draws", 100}}), std::runtime_error);
    CHECK_THROWS_AS(options_from_json(json{{"n_draws", 0}}), std::invalid_argument);
}

TEST_CASE("pipeline config resolves relative paths against its own directory", "[pipeline]") {
    json j;
    j["input"] = "data/crashes.csv";
    j["schema"] = "/abs/schema.json";
    j["output_dir"] = "out";
    j["strata"] = {"normal", "rain"};
    j["stages"] = {"ingest", "estimate"};
    j["specs"]["normal"] = spec_to_json(shared_spec());
    j["options"] = {{"n_draws", 50}};

    const PipelineConfig c = load_pipeline_config(j, "/base");
    CHECK(c.input == "/base/data/crashes.csv");
    CHECK(c.schema == "/abs/schema.json");
    CHECK(c.output_dir == "/base/out");
    CHECK(c.strata == std::vector<Stratum>{Stratum::normal, Stratum::rain});
    CHECK(c.stages == std::set<std::string>{"ingest", "estimate"});
    CHECK(c.specs.at(Stratum::normal).defs.size() == 3);
    CHECK(c.options.n_draws == 50);

    json bad_key = j;
    bad_key["notes"] = "hello";
    CHECK_THROWS_AS(load_pipeline_config(bad_key, ""), std::runtime_error);

    json bad_stage = j;
    bad_stage["stages"] = {"ingest", "publish"};
    CHECK_THROWS_AS(load_pipeline_config(bad_stage, ""), std::runtime_error);

    json no_data = j;
    no_data.erase("input");
    CHECK_THROWS_AS(load_pipeline_config(no_data, ""), std::runtime_error);
}

TEST_CASE("the csv pipeline writes every artifact and runs reproducibly", "[pipeline]") {
    TempDir dir;
    {
        std::ofstream out(dir.file("crashes.csv"), std::ios::binary);
        out << synthetic_csv();
    }

    const PipelineConfig config = csv_config(dir, "out_a");
    REQUIRE(run_pipeline(config) == 0);

    const std::vector<std::string> artifacts = {
        "ingest.json",        "dataset_normal.jsonl", "dataset_rain.jsonl",
        "dataset_snow.jsonl", "dataset_pooled.jsonl", "result_normal.json",
        "result_rain.json",   "result_snow.json",     "result_pooled.json",
        "trace_normal.log",   "margins_normal.json",  "margins_snow.json",
        "lr_pooled.json",     "transfer.json",        "report.txt",
        "report.json"};
    for (const auto& name : artifacts) {
        INFO("artifact " << name);
        CHECK(fs::exists(fs::path(config.output_dir) / name));
    }

    const json ingest = json::parse(read_file(dir.file("out_a/ingest.json")));
    CHECK(ingest.at("rows_parsed") == 123);
    CHECK(ingest.at("rows_rejected") == 0);
    CHECK(ingest.at("records_excluded") == 3);
    CHECK(ingest.at("strata").at("normal") == 60);
    CHECK(ingest.at("strata").at("rain") == 30);
    CHECK(ingest.at("strata").at("snow") == 30);
    CHECK(ingest.at("strata").at("pooled") == 120);

    const json result = json::parse(read_file(dir.file("out_a/result_normal.json")));
    CHECK(result.at("converged") == true);
    CHECK(result.at("n_obs") == 60);

    // The shared specification makes the pooled test a pure restriction:
    // the statistic is non-negative and its df is the freed parameter count.
    const json lr = json::parse(read_file(dir.file("out_a/lr_pooled.json")));
    CHECK(lr.at("df") == 6);
    CHECK(lr.at("statistic").get<double>() >= 0.0);

    // Transferring a stratum's specification onto another stratum's data
    // re-finds that stratum's own fit here, so every statistic collapses.
    const json transfer = json::parse(read_file(dir.file("out_a/transfer.json")));
    REQUIRE(transfer.at("cells").size() == 6);
    for (const auto& cell : transfer.at("cells")) {
        CHECK(cell.at("df") == 3);
        CHECK(cell.at("statistic").get<double>() == 0.0);
        CHECK(cell.at("p_value").get<double>() == 1.0);
        CHECK(cell.at("spec_stratum") != cell.at("data_stratum"));
    }

    const std::string report = read_file(dir.file("out_a/report.txt"));
    CHECK(report.find("normal conditions") != std::string::npos);
    CHECK(report.find("rain conditions") != std::string::npos);
    CHECK(report.find("snow conditions") != std::string::npos);
    CHECK(report.find("Pooled-model likelihood-ratio test") != std::string::npos);
    CHECK(report.find("Transferability tests") != std::string::npos);
    CHECK(report.find("Effect direction by stratum") != std::string::npos);
    CHECK(report.find("WARNING") == std::string::npos);

    // A second run into a fresh directory reproduces every artifact byte
    // for byte.
    PipelineConfig again = csv_config(dir, "out_b");
    REQUIRE(run_pipeline(again) == 0);
    for (const auto& name : artifacts) {
        INFO("artifact " << name);
        CHECK(read_file(dir.file("out_a/" + name)) == read_file(dir.file("out_b/" + name)));
    }
}

TEST_CASE("the pipeline reads pre-coded datasets and pools them in order", "[pipeline]") {
    TempDir dir;
    const Dataset normal = testutil::two_indicator_data(300, 11);
    const Dataset rain = testutil::two_indicator_data(200, 12, {0.1, -0.2, -0.4, 0.8});
    write_dataset_file(dir.file("normal.jsonl"), normal);
    write_dataset_file(dir.file("rain.jsonl"), rain);

    PipelineConfig config;
    config.dataset_paths[Stratum::normal] = dir.file("normal.jsonl");
    config.dataset_paths[Stratum::rain] = dir.file("rain.jsonl");
    config.strata = {Stratum::normal, Stratum::rain};
    config.output_dir = dir.file("out");
    for (Stratum s : {Stratum::normal, Stratum::rain, Stratum::pooled}) {
        config.specs[s] = testutil::two_indicator_spec();
    }
    config.options.n_draws = 10;
    config.stages = {"estimate", "margins", "lrtest", "report"};
    REQUIRE(run_pipeline(config) == 0);

    const json pooled = json::parse(read_file(dir.file("out/result_pooled.json")));
    CHECK(pooled.at("n_obs") == 500);
    const json lr = json::parse(read_file(dir.file("out/lr_pooled.json")));
    CHECK(lr.at("df") == 4);
    CHECK(lr.at("statistic").get<double>() >= 0.0);

    const json report = json::parse(read_file(dir.file("out/report.json")));
    CHECK(report.at("strata").size() == 2);
    CHECK(report.at("strata")[0].at("stratum") == "normal");
    CHECK(report.at("comparison").at("strata").size() == 2);
    CHECK_FALSE(report.contains("transfer"));
}

TEST_CASE("a random coefficient flows through the pipeline stages", "[pipeline]") {
    TempDir dir;
    ModelSpec spec;
    spec.defs.push_back(fixed_def("const_major", Level::major, kConstantVariable));
    spec.defs.push_back(fixed_def("const_minor", Level::minor, kConstantVariable));
    spec.defs.push_back(random_def("x_major", Level::major, "x"));

    GenConfig gen;
    gen.spec = spec;
    gen.theta_true = {0.5, 0.3, 0.9, 0.7};
    gen.n_obs = 400;
    gen.seed = 99;
    gen.law.singles.push_back({"x", 0.5});
    write_dataset_file(dir.file("normal.jsonl"), generate_dataset(gen));

    PipelineConfig config;
    config.dataset_paths[Stratum::normal] = dir.file("normal.jsonl");
    config.strata = {Stratum::normal};
    config.output_dir = dir.file("out");
    config.specs[Stratum::normal] = spec;
    config.options.n_draws = 50;
    config.stages = {"estimate", "margins", "report"};
    REQUIRE(run_pipeline(config) == 0);

    const json result = json::parse(read_file(dir.file("out/result_normal.json")));
    CHECK(result.at("n_draws") == 50);
    CHECK(result.at("slot_names").size() == 4);

    const json margins = json::parse(read_file(dir.file("out/margins_normal.json")));
    REQUIRE(margins.size() == 1);
    CHECK(margins[0].at("variable") == "x");

    const std::string report = read_file(dir.file("out/report.txt"));
    CHECK(report.find("(standard deviation of parameter distribution)") != std::string::npos);
}

TEST_CASE("pipeline failures map to distinct exit codes", "[pipeline]") {
    TempDir dir;

    PipelineConfig missing_input = csv_config(dir, "out_missing");
    REQUIRE(run_pipeline(missing_input) == 1);

    {
        std::ofstream out(dir.file("crashes.csv"), std::ios::binary);
        out << synthetic_csv();
    }

    PipelineConfig no_spec = csv_config(dir, "out_nospec");
    no_spec.specs.erase(Stratum::rain);
    REQUIRE(run_pipeline(no_spec) == 1);

    PipelineConfig capped = csv_config(dir, "out_capped");
    capped.stages = {"ingest", "estimate", "margins", "report"};
    capped.options.max_iterations = 1;
    REQUIRE(run_pipeline(capped) == 2);
    const json result = json::parse(read_file(dir.file("out_capped/result_normal.json")));
    CHECK(result.at("converged") == false);
    const std::string report = read_file(dir.file("out_capped/report.txt"));
    CHECK(report.find("WARNING") != std::string::npos);
}

TEST_CASE("a config file drives the pipeline end to end", "[pipeline]") {
    TempDir dir;
    {
        std::ofstream out(dir.file("crashes.csv"), std::ios::binary);
        out << synthetic_csv();
    }
    {
        std::ofstream out(dir.file("spec.json"), std::ios::binary);
        out << spec_to_json(shared_spec()).dump(2) << "\n";
    }
    json config;
    config["input"] = "crashes.csv";
    config["output_dir"] = "out";
    config["strata"] = {"normal", "rain", "snow"};
    config["specs"]["normal"] = "spec.json";
    config["specs"]["rain"] = spec_to_json(shared_spec());
    config["specs"]["snow"] = "spec.json";
    config["options"] = {{"n_draws", 10}};
    config["stages"] = {"ingest", "estimate", "margins", "report"};
    {
        std::ofstream out(dir.file("config.json"), std::ios::binary);
        out << config.dump(2) << "\n";
    }

    REQUIRE(run_pipeline_file(dir.file("config.json")) == 0);
    CHECK(fs::exists(dir.path / "out" / "report.txt"));
    CHECK(fs::exists(dir.path / "out" / "report.json"));

    REQUIRE(run_pipeline_file(dir.file("nonexistent.json")) == 1);
}
