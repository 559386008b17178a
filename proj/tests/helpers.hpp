#pragma once

// Shared fixture builders for the test suite.

#include <string>
#include <vector>

#include <mixlogit/mixlogit.hpp>

namespace testutil {

using namespace mixlogit;

inline ParameterDef fixed_def(const std::string& name, Level level, const std::string& variable) {
    ParameterDef d;
    d.name = name;
    d.target_level = level;
    d.variable = variable;
    d.kind = ParamKind::fixed;
    return d;
}

inline ParameterDef random_def(const std::string& name, Level level, const std::string& variable,
                               MixingDistribution dist = MixingDistribution::normal) {
    ParameterDef d;
    d.name = name;
    d.target_level = level;
    d.variable = variable;
    d.kind = ParamKind::random;
    d.distribution = dist;
    return d;
}

// Two independent Bernoulli indicators plus a two-level constant block.
inline ModelSpec two_indicator_spec() {
    ModelSpec spec;
    spec.defs.push_back(fixed_def("const_major", Level::major, kConstantVariable));
    spec.defs.push_back(fixed_def("const_minor", Level::minor, kConstantVariable));
    spec.defs.push_back(fixed_def("x_major", Level::major, "x"));
    spec.defs.push_back(fixed_def("y_minor", Level::minor, "y"));
    return spec;
}

inline CovariateLaw two_indicator_law() {
    CovariateLaw law;
    law.singles.push_back({"x", 0.5});
    law.singles.push_back({"y", 0.4});
    return law;
}

// Deterministic synthetic dataset for the spec above.
inline Dataset two_indicator_data(std::size_t n_obs, std::uint64_t seed,
                                  std::vector<double> theta_true = {0.4, 0.2, -0.7, 0.5}) {
    GenConfig config;
    config.spec = two_indicator_spec();
    config.theta_true = std::move(theta_true);
    config.n_obs = n_obs;
    config.seed = seed;
    config.law = two_indicator_law();
    return generate_dataset(config);
}

// Hand-built four-observation dataset, no generator involved.
inline Dataset micro_dataset() {
    Dataset ds;
    ds.stratum = Stratum::normal;
    ds.indicator_names = {"x", "y"};
    ds.observations = {
        {Level::major, {1.0, 0.0}},
        {Level::minor, {0.0, 1.0}},
        {Level::none, {1.0, 1.0}},
        {Level::none, {0.0, 0.0}},
    };
    return ds;
}

}  // namespace testutil
