#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <stdexcept>

#include <mixlogit/dataset.hpp>

#include "helpers.hpp"

using namespace mixlogit;

TEST_CASE("level and stratum names round-trip", "[dataset]") {
    for (Level l : {Level::major, Level::minor, Level::none}) {
        CHECK(level_from_string(to_string(l)) == l);
    }
    for (Stratum s : {Stratum::normal, Stratum::rain, Stratum::snow, Stratum::pooled}) {
        CHECK(stratum_from_string(to_string(s)) == s);
    }
    CHECK_THROWS_AS(level_from_string("fatal"), std::invalid_argument);
    CHECK_THROWS_AS(stratum_from_string("wet"), std::invalid_argument);
}

TEST_CASE("dataset serialization round-trips", "[dataset]") {
    Dataset ds = testutil::micro_dataset();
    ds.groups.push_back({{"x", "y"}, "y"});

    std::stringstream buf;
    write_dataset(buf, ds);
    const Dataset back = read_dataset(buf);

    CHECK(back.stratum == ds.stratum);
    CHECK(back.indicator_names == ds.indicator_names);
    REQUIRE(back.groups.size() == 1);
    CHECK(back.groups[0].members == ds.groups[0].members);
    CHECK(back.groups[0].reference == "y");
    REQUIRE(back.observations.size() == ds.observations.size());
    for (std::size_t i = 0; i < ds.observations.size(); ++i) {
        CHECK(back.observations[i].chosen == ds.observations[i].chosen);
        CHECK(back.observations[i].covariates == ds.observations[i].covariates);
    }
}

TEST_CASE("non-exhaustive groups serialize with a null reference", "[dataset]") {
    Dataset ds = testutil::micro_dataset();
    ds.groups.push_back({{"x"}, ""});
    std::stringstream buf;
    write_dataset(buf, ds);
    CHECK(buf.str().find("\"reference\":null") != std::string::npos);
    const Dataset back = read_dataset(buf);
    REQUIRE(back.groups.size() == 1);
    CHECK_FALSE(back.groups[0].exhaustive());
}

TEST_CASE("dataset reader rejects foreign streams", "[dataset]") {
    std::stringstream empty;
    CHECK_THROWS_AS(read_dataset(empty), std::runtime_error);

    std::stringstream wrong("{\"type\":\"something.else\"}\n");
    CHECK_THROWS_AS(read_dataset(wrong), std::runtime_error);
}

TEST_CASE("dataset reader reports a missing indicator with its line", "[dataset]") {
    std::stringstream buf(
        "{\"type\":\"mixlogit.dataset\",\"stratum\":\"normal\",\"indicators\":[\"x\"],"
        "\"groups\":[]}\n"
        "{\"chosen\":\"major\",\"covariates\":{\"x\":1}}\n"
        "{\"chosen\":\"minor\",\"covariates\":{\"y\":1}}\n");
    try {
        read_dataset(buf);
        FAIL("expected a throw");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("line 3") != std::string::npos);
        CHECK(msg.find("'x'") != std::string::npos);
    }
}

TEST_CASE("indicator lookup by name", "[dataset]") {
    const Dataset ds = testutil::micro_dataset();
    CHECK(ds.indicator_index("x") == 0);
    CHECK(ds.indicator_index("y") == 1);
    CHECK(ds.indicator_index("z") == -1);
    CHECK(ds.covariate(2, "x") == 1.0);
    CHECK_THROWS_AS(ds.covariate(0, "z"), std::invalid_argument);
}

TEST_CASE("summaries report counts, shares, and sample moments", "[dataset]") {
    const Dataset ds = testutil::micro_dataset();
    const SummaryTable t = summarize(ds);

    CHECK(t.n_obs == 4);
    REQUIRE(t.levels.size() == 3);
    CHECK(t.levels[0].count == 1);   // major
    CHECK(t.levels[1].count == 1);   // minor
    CHECK(t.levels[2].count == 2);   // none
    CHECK_THAT(t.levels[2].percentage, Catch::Matchers::WithinAbs(50.0, 1e-12));

    // x takes values 1,0,1,0: mean 1/2, sample variance (4 * 1/4) / 3 = 1/3.
    REQUIRE(t.indicators.size() == 2);
    CHECK(t.indicators[0].name == "x");
    CHECK_THAT(t.indicators[0].mean, Catch::Matchers::WithinAbs(0.5, 1e-15));
    CHECK_THAT(t.indicators[0].sd, Catch::Matchers::WithinAbs(std::sqrt(1.0 / 3.0), 1e-15));
}

TEST_CASE("summarizing an empty dataset is an error", "[dataset]") {
    Dataset ds;
    ds.indicator_names = {"x"};
    CHECK_THROWS_AS(summarize(ds), std::runtime_error);
}
