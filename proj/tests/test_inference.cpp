#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <mixlogit/mixlogit.hpp>

#include "helpers.hpp"

using namespace mixlogit;
using testutil::fixed_def;
using testutil::random_def;

TEST_CASE("chi-square survival matches closed forms", "[inference]") {
    // Two degrees of freedom: exp(-x/2). Four: (1 + x/2) exp(-x/2).
    for (double x : {0.5, 2.0, 5.99, 10.0}) {
        CHECK_THAT(chi_square_sf(x, 2), Catch::Matchers::WithinRel(std::exp(-0.5 * x), 1e-12));
        CHECK_THAT(chi_square_sf(x, 4),
                   Catch::Matchers::WithinRel((1.0 + 0.5 * x) * std::exp(-0.5 * x), 1e-12));
        CHECK_THAT(chi_square_sf(x, 1),
                   Catch::Matchers::WithinRel(std::erfc(std::sqrt(0.5 * x)), 1e-12));
    }
    CHECK_THAT(chi_square_sf(2.77259, 2), Catch::Matchers::WithinAbs(0.25, 1e-4));
    CHECK_THAT(chi_square_sf(5.99, 2), Catch::Matchers::WithinAbs(0.050, 0.001));
    CHECK(chi_square_sf(0.0, 5) == 1.0);
    CHECK(chi_square_sf(801.78, 26) < 1e-100);
}

TEST_CASE("chi-square survival is monotone in both arguments", "[inference]") {
    double prev = 1.0;
    for (double x = 1.0; x <= 40.0; x += 1.0) {
        const double q = chi_square_sf(x, 7);
        CHECK(q < prev);
        prev = q;
    }
    for (int df = 1; df < 20; ++df) {
        CHECK(chi_square_sf(10.0, df) < chi_square_sf(10.0, df + 1));
    }
    CHECK_THROWS_AS(chi_square_sf(-1.0, 2), std::domain_error);
    CHECK_THROWS_AS(chi_square_sf(1.0, 0), std::domain_error);
}

TEST_CASE("share below zero is the normal cdf at the sign boundary", "[inference]") {
    CHECK_THAT(share_below_zero(-1.91, 2.54),
               Catch::Matchers::WithinAbs(normal_cdf(1.91 / 2.54), 1e-15));
    CHECK(share_below_zero(0.0, 1.0) == 0.5);
    for (double mu : {0.3, 1.2, 2.5}) {
        CHECK_THAT(share_below_zero(mu, 1.7) + share_below_zero(-mu, 1.7),
                   Catch::Matchers::WithinAbs(1.0, 1e-12));
    }
    CHECK_THROWS_AS(share_below_zero(1.0, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(share_below_zero(1.0, -2.0), std::invalid_argument);
}

TEST_CASE("pooled likelihood-ratio test arithmetic", "[inference]") {
    const LRTestResult r = lr_pooled_test(-1000.0, {-600.0, -250.0, -130.0}, 26);
    CHECK_THAT(r.statistic, Catch::Matchers::WithinAbs(40.0, 1e-10));
    CHECK(r.df == 26);
    CHECK_THAT(r.p_value, Catch::Matchers::WithinRel(chi_square_sf(40.0, 26), 1e-12));
    CHECK(r.kind == LRKind::pooled_vs_strata);

    // Identical fits: statistic zero, p-value one.
    const LRTestResult zero = lr_pooled_test(-500.0, {-500.0}, 3);
    CHECK(zero.statistic == 0.0);
    CHECK(zero.p_value == 1.0);

    // Rounding slightly past zero is clamped; genuinely negative is an error.
    const LRTestResult clamped = lr_pooled_test(-500.0, {-500.0 - 4e-7}, 3);
    CHECK(clamped.statistic == 0.0);
    CHECK_THROWS_AS(lr_pooled_test(-500.0, {-501.0}, 3), std::runtime_error);
    CHECK_THROWS_AS(lr_pooled_test(-500.0, {-499.0}, 0), std::invalid_argument);
}

TEST_CASE("transferability test arithmetic", "[inference]") {
    const LRTestResult r = lr_transferability(-1000.0, -950.0, 10);
    CHECK_THAT(r.statistic, Catch::Matchers::WithinAbs(100.0, 1e-10));
    CHECK(r.df == 10);
    CHECK(r.kind == LRKind::transferability);
    CHECK_THROWS_AS(lr_transferability(-949.0, -950.0, 10), std::runtime_error);

    const json j = lr_to_json(r);
    CHECK(j.at("kind") == "transferability");
    CHECK(j.at("statistic") == 100.0);
    CHECK(j.at("df") == 10);
}

namespace {

// Fixture: two grouped indicators with a reference plus one free indicator.
Dataset grouped_dataset() {
    Dataset ds;
    ds.stratum = Stratum::normal;
    ds.indicator_names = {"low", "high", "flag", "tag"};
    ds.groups.push_back({{"low", "high"}, "low"});    // exhaustive, reference low
    ds.groups.push_back({{"tag"}, ""});               // non-exhaustive
    ds.observations = {
        {Level::major, {1.0, 0.0, 1.0, 0.0}},
        {Level::minor, {0.0, 1.0, 0.0, 1.0}},
        {Level::none, {1.0, 0.0, 0.0, 0.0}},
        {Level::none, {0.0, 1.0, 1.0, 1.0}},
        {Level::major, {1.0, 0.0, 0.0, 1.0}},
    };
    return ds;
}

ModelSpec grouped_spec() {
    ModelSpec spec;
    spec.defs.push_back(fixed_def("const_major", Level::major, kConstantVariable));
    spec.defs.push_back(fixed_def("high_major", Level::major, "high"));
    spec.defs.push_back(fixed_def("flag_minor", Level::minor, "flag"));
    spec.defs.push_back(random_def("tag_major", Level::major, "tag"));
    return spec;
}

}  // namespace

TEST_CASE("marginal effects match an independent reimplementation", "[inference]") {
    const Dataset data = grouped_dataset();
    const CompiledModel model = compile_model(data, grouped_spec());
    const DrawMatrix draws = build_draws(data.size(), 32, 1);
    const std::vector<double> theta = {0.3, -0.6, 0.8, 0.4, 0.5};

    const MarginalEffectsTable table = marginal_effects(model, theta, draws);
    REQUIRE(table.variables == std::vector<std::string>{"high", "flag", "tag"});

    // Reimplementation: explicit counterfactual rows fed through the public
    // per-observation probability API.
    auto averaged = [&](const std::vector<std::vector<double>>& rows) {
        std::array<double, kNumLevels> mean{};
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto p = level_probabilities(model, theta, draws, i, rows[i].data());
            for (int k = 0; k < kNumLevels; ++k) {
                mean[static_cast<std::size_t>(k)] += p[static_cast<std::size_t>(k)] / rows.size();
            }
        }
        return mean;
    };

    // "high" belongs to {low, high} with reference low: on zeroes low, off
    // restores it.
    {
        std::vector<std::vector<double>> on, off;
        for (const auto& obs : data.observations) {
            auto row = obs.covariates;
            row[0] = 0.0; row[1] = 1.0;
            on.push_back(row);
            row = obs.covariates;
            if (row[1] != 0.0) { row[1] = 0.0; row[0] = 1.0; }
            off.push_back(row);
        }
        const auto expect_on = averaged(on);
        const auto expect_off = averaged(off);
        const int v = table.variable_index("high");
        for (int k = 0; k < kNumLevels; ++k) {
            CHECK_THAT(table.effects[static_cast<std::size_t>(v)][static_cast<std::size_t>(k)],
                       Catch::Matchers::WithinAbs(
                           expect_on[static_cast<std::size_t>(k)] - expect_off[static_cast<std::size_t>(k)], 1e-13));
        }
    }

    // "tag" has a non-exhaustive singleton group: off simply clears it.
    {
        std::vector<std::vector<double>> on, off;
        for (const auto& obs : data.observations) {
            auto row = obs.covariates;
            row[3] = 1.0;
            on.push_back(row);
            row = obs.covariates;
            row[3] = 0.0;
            off.push_back(row);
        }
        const auto expect_on = averaged(on);
        const auto expect_off = averaged(off);
        const int v = table.variable_index("tag");
        for (int k = 0; k < kNumLevels; ++k) {
            CHECK_THAT(table.effects[static_cast<std::size_t>(v)][static_cast<std::size_t>(k)],
                       Catch::Matchers::WithinAbs(
                           expect_on[static_cast<std::size_t>(k)] - expect_off[static_cast<std::size_t>(k)], 1e-13));
        }
    }
}

TEST_CASE("marginal effects sum to zero across levels", "[inference]") {
    const Dataset data = grouped_dataset();
    const CompiledModel model = compile_model(data, grouped_spec());
    const DrawMatrix draws = build_draws(data.size(), 32, 1);
    const MarginalEffectsTable table =
        marginal_effects(model, {0.3, -0.6, 0.8, 0.4, 0.5}, draws);
    for (const auto& e : table.effects) {
        CHECK(std::fabs(e[0] + e[1] + e[2]) < 1e-10);
    }
}

TEST_CASE("toggling the reference member falls back to its first alternative", "[inference]") {
    const Dataset data = grouped_dataset();
    ModelSpec spec;
    spec.defs.push_back(fixed_def("low_major", Level::major, "low"));
    const CompiledModel model = compile_model(data, spec);
    const DrawMatrix draws = build_draws(data.size(), 1, 1);
    const std::vector<double> theta = {0.7};

    const MarginalEffectsTable table = marginal_effects(model, theta, draws, {"low"});

    // Off state for observations with low = 1 must move them to high.
    std::array<double, kNumLevels> acc{};
    for (const auto& obs : data.observations) {
        auto on = obs.covariates;
        on[0] = 1.0; on[1] = 0.0;
        auto off = obs.covariates;
        if (off[0] != 0.0) { off[0] = 0.0; off[1] = 1.0; }
        const auto p_on = mnl_probabilities(model, theta, on.data());
        const auto p_off = mnl_probabilities(model, theta, off.data());
        for (int k = 0; k < kNumLevels; ++k) {
            acc[static_cast<std::size_t>(k)] +=
                (p_on[static_cast<std::size_t>(k)] - p_off[static_cast<std::size_t>(k)]) /
                static_cast<double>(data.size());
        }
    }
    for (int k = 0; k < kNumLevels; ++k) {
        CHECK_THAT(table.effects[0][static_cast<std::size_t>(k)],
                   Catch::Matchers::WithinAbs(acc[static_cast<std::size_t>(k)], 1e-15));
    }
}

TEST_CASE("a coefficient of zero yields an exactly zero effect", "[inference]") {
    const Dataset data = grouped_dataset();
    ModelSpec spec;
    spec.defs.push_back(fixed_def("flag_minor", Level::minor, "flag"));
    spec.defs.push_back(fixed_def("tag_major", Level::major, "tag"));
    const CompiledModel model = compile_model(data, spec);
    const DrawMatrix draws = build_draws(data.size(), 1, 1);

    const MarginalEffectsTable table = marginal_effects(model, {0.9, 0.0}, draws, {"tag"});
    CHECK(table.effects[0] == std::array<double, kNumLevels>{0.0, 0.0, 0.0});
}

TEST_CASE("marginal effects reject variables outside the spec", "[inference]") {
    const Dataset data = grouped_dataset();
    const CompiledModel model = compile_model(data, grouped_spec());
    const DrawMatrix draws = build_draws(data.size(), 8, 1);
    try {
        marginal_effects(model, {0.3, -0.6, 0.8, 0.4, 0.5}, draws, {"low"});
        FAIL("expected a throw");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("'low'") != std::string::npos);
    }
}

TEST_CASE("marginal effects tables round-trip through json", "[inference]") {
    const Dataset data = grouped_dataset();
    const CompiledModel model = compile_model(data, grouped_spec());
    const DrawMatrix draws = build_draws(data.size(), 16, 1);
    const MarginalEffectsTable table =
        marginal_effects(model, {0.3, -0.6, 0.8, 0.4, 0.5}, draws);

    const json j = margins_to_json(table);
    REQUIRE(j.is_array());
    CHECK(j[0].at("variable") == "high");
    CHECK(j[0].contains("major"));
    CHECK(j[0].contains("minor"));
    CHECK(j[0].contains("none"));

    const MarginalEffectsTable back = margins_from_json(j);
    CHECK(back.variables == table.variables);
    CHECK(back.effects == table.effects);
}

TEST_CASE("a reported effects row parses and cancels to zero", "[inference]") {
    const json row = json::array({{{"variable", "male"},
                                   {"major", -0.048},
                                   {"minor", 0.004},
                                   {"none", 0.044}}});
    const MarginalEffectsTable table = margins_from_json(row);
    REQUIRE(table.variables == std::vector<std::string>{"male"});
    const auto& e = table.effects[0];
    CHECK(std::fabs(e[0] + e[1] + e[2]) < 1e-10);
}
