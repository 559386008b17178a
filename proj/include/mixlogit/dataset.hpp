#pragma once

// Coded choice data: one observation per crash with a chosen injury level
// and a 0/1 covariate vector aligned to the dataset's indicator list.
// Datasets are immutable after construction and safe to share across
// threads. The canonical on-disk form is JSON lines: a metadata header
// line followed by one observation per line, in stable field order.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace mixlogit {

using json = nlohmann::ordered_json;

// Consolidated injury severity, also the choice levels of every model.
enum class Level : int { major = 0, minor = 1, none = 2 };
inline constexpr int kNumLevels = 3;

inline std::string to_string(Level level) {
    switch (level) {
        case Level::major: return "major";
        case Level::minor: return "minor";
        case Level::none: return "none";
    }
    throw std::logic_error("invalid Level");
}

inline Level level_from_string(const std::string& s) {
    if (s == "major") return Level::major;
    if (s == "minor") return Level::minor;
    if (s == "none") return Level::none;
    throw std::invalid_argument("unknown injury level '" + s + "'");
}

enum class Stratum : int { normal = 0, rain = 1, snow = 2, pooled = 3 };

inline std::string to_string(Stratum s) {
    switch (s) {
        case Stratum::normal: return "normal";
        case Stratum::rain: return "rain";
        case Stratum::snow: return "snow";
        case Stratum::pooled: return "pooled";
    }
    throw std::logic_error("invalid Stratum");
}

inline Stratum stratum_from_string(const std::string& s) {
    if (s == "normal") return Stratum::normal;
    if (s == "rain") return Stratum::rain;
    if (s == "snow") return Stratum::snow;
    if (s == "pooled") return Stratum::pooled;
    throw std::invalid_argument("unknown stratum '" + s + "'");
}

struct ChoiceObservation {
    Level chosen = Level::none;
    std::vector<double> covariates;  // aligned to Dataset::indicator_names
};

// Mutually exclusive indicator group. When the members exhaust the
// underlying categories the group designates a reference member used to
// rebuild a valid observation when a member is counterfactually cleared;
// non-exhaustive groups fall back to an implicit "other" category and
// need none.
struct IndicatorGroup {
    std::vector<std::string> members;
    std::string reference;  // empty for non-exhaustive groups

    bool exhaustive() const { return !reference.empty(); }
};

struct Dataset {
    Stratum stratum = Stratum::pooled;
    std::vector<std::string> indicator_names;
    std::vector<IndicatorGroup> groups;
    std::vector<ChoiceObservation> observations;

    std::size_t size() const { return observations.size(); }

    int indicator_index(const std::string& name) const {
        for (std::size_t i = 0; i < indicator_names.size(); ++i) {
            if (indicator_names[i] == name) return static_cast<int>(i);
        }
        return -1;
    }

    double covariate(std::size_t obs, const std::string& name) const {
        const int idx = indicator_index(name);
        if (idx < 0) throw std::invalid_argument("unknown indicator '" + name + "'");
        return observations[obs].covariates[idx];
    }
};

// ---------------------------------------------------------------------------
// Canonical JSON-lines serialization
// ---------------------------------------------------------------------------

inline void write_dataset(std::ostream& out, const Dataset& ds) {
    json header;
    header["type"] = "mixlogit.dataset";
    header["stratum"] = to_string(ds.stratum);
    header["indicators"] = ds.indicator_names;
    json jgroups = json::array();
    for (const auto& g : ds.groups) {
        json jg;
        jg["members"] = g.members;
        if (g.exhaustive()) {
            jg["reference"] = g.reference;
        } else {
            jg["reference"] = nullptr;
        }
        jgroups.push_back(jg);
    }
    header["groups"] = jgroups;
    out << header.dump() << '\n';

    for (const auto& obs : ds.observations) {
        json line;
        line["chosen"] = to_string(obs.chosen);
        json cov;
        for (std::size_t i = 0; i < ds.indicator_names.size(); ++i) {
            cov[ds.indicator_names[i]] = static_cast<int>(obs.covariates[i]);
        }
        line["covariates"] = cov;
        out << line.dump() << '\n';
    }
}

inline void write_dataset_file(const std::string& path, const Dataset& ds) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    write_dataset(out, ds);
}

inline Dataset read_dataset(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) {
        throw std::runtime_error("dataset stream is empty");
    }
    json header = json::parse(line);
    if (header.value("type", "") != "mixlogit.dataset") {
        throw std::runtime_error("not a mixlogit dataset (missing header line)");
    }

    Dataset ds;
    ds.stratum = stratum_from_string(header.at("stratum").get<std::string>());
    ds.indicator_names = header.at("indicators").get<std::vector<std::string>>();
    for (const auto& jg : header.at("groups")) {
        IndicatorGroup g;
        g.members = jg.at("members").get<std::vector<std::string>>();
        if (!jg.at("reference").is_null()) g.reference = jg.at("reference").get<std::string>();
        ds.groups.push_back(std::move(g));
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line);
        ChoiceObservation obs;
        obs.chosen = level_from_string(j.at("chosen").get<std::string>());
        const json& cov = j.at("covariates");
        obs.covariates.resize(ds.indicator_names.size());
        for (std::size_t i = 0; i < ds.indicator_names.size(); ++i) {
            const auto it = cov.find(ds.indicator_names[i]);
            if (it == cov.end()) {
                throw std::runtime_error("dataset line " + std::to_string(line_no) +
                                         ": missing indicator '" + ds.indicator_names[i] + "'");
            }
            obs.covariates[i] = it->get<double>();
        }
        ds.observations.push_back(std::move(obs));
    }
    return ds;
}

inline Dataset read_dataset_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset file '" + path + "'");
    return read_dataset(in);
}

// ---------------------------------------------------------------------------
// Descriptive summaries
// ---------------------------------------------------------------------------

struct SummaryTable {
    struct IndicatorStats {
        std::string name;
        double mean = 0.0;
        double sd = 0.0;  // sample SD, n-1 denominator
    };
    struct LevelStats {
        Level level = Level::none;
        std::size_t count = 0;
        double percentage = 0.0;
    };
    std::size_t n_obs = 0;
    std::vector<IndicatorStats> indicators;
    std::vector<LevelStats> levels;
};

inline SummaryTable summarize(const Dataset& ds) {
    if (ds.observations.empty()) {
        throw std::runtime_error("summarize: no observations");
    }
    const std::size_t n = ds.observations.size();
    SummaryTable table;
    table.n_obs = n;

    std::vector<std::size_t> level_counts(kNumLevels, 0);
    for (const auto& obs : ds.observations) {
        ++level_counts[static_cast<int>(obs.chosen)];
    }
    for (int l = 0; l < kNumLevels; ++l) {
        SummaryTable::LevelStats ls;
        ls.level = static_cast<Level>(l);
        ls.count = level_counts[l];
        ls.percentage = 100.0 * static_cast<double>(level_counts[l]) / static_cast<double>(n);
        table.levels.push_back(ls);
    }

    for (std::size_t i = 0; i < ds.indicator_names.size(); ++i) {
        double sum = 0.0;
        for (const auto& obs : ds.observations) sum += obs.covariates[i];
        const double mean = sum / static_cast<double>(n);
        double ss = 0.0;
        for (const auto& obs : ds.observations) {
            const double d = obs.covariates[i] - mean;
            ss += d * d;
        }
        SummaryTable::IndicatorStats st;
        st.name = ds.indicator_names[i];
        st.mean = mean;
        st.sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
        table.indicators.push_back(st);
    }
    return table;
}

}  // namespace mixlogit
