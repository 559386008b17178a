#pragma once

// Raw crash records and their coding into the indicator scheme used by the
// models: CSV ingestion against a user-supplied schema, severity
// consolidation, indicator derivation, and weather stratification.

#include <array>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "mixlogit/dataset.hpp"

namespace mixlogit {

// ---------------------------------------------------------------------------
// Raw record
// ---------------------------------------------------------------------------

enum class Severity5 { fatal, disabling, evident, possible, none };
enum class Weather { normal, rain, snow, other };
enum class Area { rural, urban };
enum class Alignment { straight, curve };
enum class Manner { rear_end, sideswipe, other_manner };
enum class HarmfulEvent { motor_vehicle_in_transport, fixed_or_other_object, ran_off_road, other_event };
enum class Lighting { daylight, dark_lighted, dark_unlighted, other_light };
enum class TruckType { single_unit, truck_trailer, tractor_semi, tractor_double };
enum class Surface { asphalt, other_surface };
enum class Route { interstate, non_interstate };
enum class DayType { weekday, weekend };
enum class DriverSex { male, female };
enum class LocationType { segment, intersection };

struct CrashRecord {
    std::string crash_id;
    Severity5 severity5 = Severity5::none;
    Weather weather = Weather::normal;
    Area area = Area::urban;
    Alignment alignment = Alignment::straight;
    Manner manner = Manner::other_manner;
    HarmfulEvent harmful_event = HarmfulEvent::other_event;
    Lighting lighting = Lighting::daylight;
    TruckType truck_type = TruckType::tractor_semi;
    int speed_limit = 0;   // mph, valid range [5, 85]
    int lane_count = 0;    // >= 1
    int aadt = 0;          // vehicles/day, >= 0
    Surface surface = Surface::asphalt;
    Route route = Route::non_interstate;
    int crash_time = 0;    // minutes since midnight, [0, 1439]
    DayType day = DayType::weekday;
    DriverSex driver_sex = DriverSex::male;
    bool restraint_used = false;
    LocationType location_type = LocationType::segment;
};

// Major injury pools fatal and disabling outcomes; minor pools evident and
// possible; no injury maps to itself.
inline Level consolidate_severity(Severity5 s) {
    switch (s) {
        case Severity5::fatal:
        case Severity5::disabling: return Level::major;
        case Severity5::evident:
        case Severity5::possible: return Level::minor;
        case Severity5::none: return Level::none;
    }
    throw std::logic_error("invalid Severity5");
}

// ---------------------------------------------------------------------------
// Indicator scheme
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& canonical_indicator_names() {
    static const std::vector<std::string> names = {
        "male",        "restraint",   "rural",          "urban",         "curve",
        "rear_end",    "sideswipe",   "object",         "mvit",          "ran_off",
        "daylight",    "dark_lighted", "dark_unlighted", "single_unit",  "truck_trailer",
        "truck_semi",  "speed1",      "speed2",         "speed3",        "lane1",
        "lane2",       "aadt1",       "aadt2",          "aadt3",         "aadt4",
        "asphalt",     "interstate",  "time1",          "time2",         "time3",
        "time4",       "weekday",     "weekend"};
    return names;
}

// Mutually exclusive indicator groups. Exhaustive groups carry a designated
// reference member (the category an observation falls back to when a member
// is counterfactually cleared); groups whose underlying category set extends
// beyond the listed indicators have none.
inline const std::vector<IndicatorGroup>& canonical_indicator_groups() {
    static const std::vector<IndicatorGroup> groups = {
        {{"rural", "urban"}, "urban"},
        {{"rear_end", "sideswipe"}, ""},
        {{"object", "mvit", "ran_off"}, ""},
        {{"daylight", "dark_lighted", "dark_unlighted"}, ""},
        {{"single_unit", "truck_trailer", "truck_semi"}, ""},
        {{"speed1", "speed2", "speed3"}, "speed2"},
        {{"lane1", "lane2"}, "lane2"},
        {{"aadt1", "aadt2", "aadt3", "aadt4"}, "aadt2"},
        {{"asphalt"}, ""},
        {{"interstate"}, ""},
        {{"time1", "time2", "time3", "time4"}, "time2"},
        {{"weekday", "weekend"}, "weekday"},
    };
    return groups;
}

// Codes one record into the canonical indicator vector. Speed bins follow
// the 5-mph reporting granularity: a limit in the open gap (40, 45) falls
// into speed2, and (60, 65) into speed3, keeping the bins a partition.
inline std::vector<double> derive_indicators(const CrashRecord& r) {
    std::vector<double> x(canonical_indicator_names().size(), 0.0);
    auto set = [&x](int idx) { x[static_cast<std::size_t>(idx)] = 1.0; };

    if (r.driver_sex == DriverSex::male) set(0);
    if (r.restraint_used) set(1);
    set(r.area == Area::rural ? 2 : 3);
    if (r.alignment == Alignment::curve) set(4);
    if (r.manner == Manner::rear_end) set(5);
    if (r.manner == Manner::sideswipe) set(6);
    if (r.harmful_event == HarmfulEvent::fixed_or_other_object) set(7);
    if (r.harmful_event == HarmfulEvent::motor_vehicle_in_transport) set(8);
    if (r.harmful_event == HarmfulEvent::ran_off_road) set(9);
    if (r.lighting == Lighting::daylight) set(10);
    if (r.lighting == Lighting::dark_lighted) set(11);
    if (r.lighting == Lighting::dark_unlighted) set(12);
    if (r.truck_type == TruckType::single_unit) set(13);
    if (r.truck_type == TruckType::truck_trailer) set(14);
    if (r.truck_type == TruckType::tractor_semi) set(15);

    if (r.speed_limit <= 40) set(16);
    else if (r.speed_limit <= 60) set(17);
    else set(18);

    set(r.lane_count < 4 ? 19 : 20);

    if (r.aadt <= 15000) set(21);
    else if (r.aadt <= 50000) set(22);
    else if (r.aadt <= 100000) set(23);
    else set(24);

    if (r.surface == Surface::asphalt) set(25);
    if (r.route == Route::interstate) set(26);

    if (r.crash_time >= 420 && r.crash_time <= 599) set(27);        // 7:00-9:59
    else if (r.crash_time >= 600 && r.crash_time <= 959) set(28);   // 10:00-15:59
    else if (r.crash_time >= 960 && r.crash_time <= 1139) set(29);  // 16:00-18:59
    else set(30);                                                   // 19:00-6:59

    set(r.day == DayType::weekday ? 31 : 32);
    return x;
}

inline ChoiceObservation code_observation(const CrashRecord& r) {
    return ChoiceObservation{consolidate_severity(r.severity5), derive_indicators(r)};
}

// ---------------------------------------------------------------------------
// CSV reading
// ---------------------------------------------------------------------------

// Reads one CSV record (RFC 4180 quoting, CRLF tolerant). Returns false at
// end of stream.
inline bool read_csv_row(std::istream& in, std::vector<std::string>& row) {
    row.clear();
    int c = in.get();
    if (c == EOF) return false;

    std::string cell;
    bool quoted = false;
    while (true) {
        if (quoted) {
            if (c == EOF) throw std::runtime_error("csv: unterminated quoted cell");
            if (c == '"') {
                const int next = in.peek();
                if (next == '"') {
                    cell.push_back('"');
                    in.get();
                } else {
                    quoted = false;
                }
            } else {
                cell.push_back(static_cast<char>(c));
            }
        } else {
            if (c == '"' && cell.empty()) {
                quoted = true;
            } else if (c == ',') {
                row.push_back(std::move(cell));
                cell.clear();
            } else if (c == '\n' || c == EOF) {
                if (!cell.empty() && cell.back() == '\r') cell.pop_back();
                row.push_back(std::move(cell));
                return true;
            } else {
                cell.push_back(static_cast<char>(c));
            }
        }
        c = in.get();
    }
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

// Maps CSV columns to CrashRecord fields. Enum fields may recode raw cell
// values via "codes" and may exclude whole rows via "drop" (the vehicle-type
// filter); the day field may instead be derived from an ISO calendar date
// with {"format": "date"}, Saturday and Sunday counting as weekend.
struct Schema {
    struct Field {
        std::string column;
        std::map<std::string, std::string> codes;        // raw cell -> canonical token
        std::unordered_set<std::string> drop;            // raw cells excluding the row
        bool date_format = false;                        // day field only
    };
    std::map<std::string, Field> fields;  // keyed by CrashRecord field name

    // Identity schema: columns named after record fields, cells holding
    // canonical tokens (enums), integers, or 0/1 (restraint_used).
    static Schema canonical();
};

inline const std::vector<std::string>& crash_record_field_names() {
    static const std::vector<std::string> names = {
        "crash_id",  "severity5",    "weather",    "area",       "alignment",
        "manner",    "harmful_event", "lighting",  "truck_type", "speed_limit",
        "lane_count", "aadt",        "surface",    "route",      "crash_time",
        "day",       "driver_sex",   "restraint_used", "location_type"};
    return names;
}

inline Schema Schema::canonical() {
    Schema s;
    for (const auto& f : crash_record_field_names()) s.fields[f] = Field{f, {}, {}, false};
    return s;
}

inline Schema load_schema(const json& j) {
    Schema s = Schema::canonical();
    if (!j.is_object()) throw std::runtime_error("schema: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key != "fields") throw std::runtime_error("schema: unknown key '" + key + "'");
    }
    if (!j.contains("fields")) return s;
    for (const auto& [field_name, jf] : j.at("fields").items()) {
        auto it = s.fields.find(field_name);
        if (it == s.fields.end()) {
            throw std::runtime_error("schema: unknown record field '" + field_name + "'");
        }
        for (const auto& [key, unused] : jf.items()) {
            if (key != "column" && key != "codes" && key != "drop" && key != "format") {
                throw std::runtime_error("schema: unknown field key '" + key + "'");
            }
        }
        Schema::Field f;
        f.column = jf.value("column", field_name);
        if (jf.contains("codes")) {
            for (const auto& [raw, tok] : jf.at("codes").items()) {
                f.codes[raw] = tok.get<std::string>();
            }
        }
        if (jf.contains("drop")) {
            for (const auto& d : jf.at("drop")) f.drop.insert(d.get<std::string>());
        }
        f.date_format = jf.value("format", "") == "date";
        if (f.date_format && field_name != "day") {
            throw std::runtime_error("schema: format 'date' is only valid for field 'day'");
        }
        it->second = std::move(f);
    }
    return s;
}

inline Schema load_schema_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open schema file '" + path + "'");
    return load_schema(json::parse(in));
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct RowIssue {
    std::size_t row = 0;  // physical CSV row, header = 1
    std::string reason;
};

struct ParseReport {
    std::vector<CrashRecord> records;
    std::vector<RowIssue> rejects;   // malformed rows
    std::vector<RowIssue> filtered;  // rows excluded by schema drop lists
};

namespace detail {

struct CellError {
    std::string reason;
};

template <typename Enum>
Enum parse_enum(const std::string& token, const std::vector<std::pair<const char*, Enum>>& table,
                const char* field) {
    for (const auto& [name, value] : table) {
        if (token == name) return value;
    }
    throw CellError{std::string(field) + " unparseable"};
}

inline std::string apply_codes(const Schema::Field& f, const std::string& raw, const char* field) {
    if (f.codes.empty()) return raw;
    const auto it = f.codes.find(raw);
    if (it == f.codes.end()) throw CellError{std::string(field) + " unparseable"};
    return it->second;
}

inline int parse_int(const std::string& raw, const char* field) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(raw, &pos);
        if (pos != raw.size()) throw CellError{std::string(field) + " unparseable"};
        return v;
    } catch (const CellError&) {
        throw;
    } catch (...) {
        throw CellError{std::string(field) + " unparseable"};
    }
}

inline DayType day_from_date(const std::string& raw) {
    int y = 0, m = 0, d = 0;
    if (std::sscanf(raw.c_str(), "%d-%d-%d", &y, &m, &d) != 3) {
        throw CellError{"day unparseable"};
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{unsigned(m)},
                                          std::chrono::day{unsigned(d)}};
    if (!ymd.ok()) throw CellError{"day unparseable"};
    const std::chrono::weekday wd{std::chrono::sys_days{ymd}};
    return (wd == std::chrono::Saturday || wd == std::chrono::Sunday) ? DayType::weekend
                                                                      : DayType::weekday;
}

}  // namespace detail

// Parses crash rows against the schema. A missing column is fatal; a bad
// cell rejects only its row. Rows matching a schema drop list are reported
// separately as filtered. Output order follows input order.
inline ParseReport parse_records(std::istream& in, const Schema& schema) {
    std::vector<std::string> header;
    if (!read_csv_row(in, header)) {
        throw std::runtime_error("csv: empty input, expected a header row");
    }

    std::unordered_map<std::string, std::size_t> col_index;
    for (std::size_t i = 0; i < header.size(); ++i) col_index[header[i]] = i;

    std::unordered_map<std::string, std::size_t> field_col;
    for (const auto& [field, f] : schema.fields) {
        const auto it = col_index.find(f.column);
        if (it == col_index.end()) {
            throw std::runtime_error("csv schema error: missing column '" + f.column +
                                     "' (field '" + field + "')");
        }
        field_col[field] = it->second;
    }

    ParseReport report;
    std::vector<std::string> row;
    std::size_t row_no = 1;
    while (read_csv_row(in, row)) {
        ++row_no;
        if (row.size() == 1 && row[0].empty()) continue;  // trailing blank line
        if (row.size() != header.size()) {
            report.rejects.push_back({row_no, "row has " + std::to_string(row.size()) +
                                                  " cells, expected " +
                                                  std::to_string(header.size())});
            continue;
        }

        try {
            CrashRecord r;
            bool dropped = false;
            std::string drop_field;
            auto cell = [&](const char* field) -> const std::string& {
                return row[field_col.at(field)];
            };
            auto coded = [&](const char* field) -> std::string {
                const Schema::Field& f = schema.fields.at(field);
                const std::string& raw = cell(field);
                if (f.drop.count(raw)) {
                    dropped = true;
                    drop_field = field;
                    return raw;
                }
                return detail::apply_codes(f, raw, field);
            };

            using detail::parse_enum;
            r.crash_id = cell("crash_id");

            const std::string sev = coded("severity5");
            const std::string wea = coded("weather");
            const std::string are = coded("area");
            const std::string ali = coded("alignment");
            const std::string man = coded("manner");
            const std::string hev = coded("harmful_event");
            const std::string lig = coded("lighting");
            const std::string trk = coded("truck_type");
            const std::string sur = coded("surface");
            const std::string rou = coded("route");
            const std::string sex = coded("driver_sex");
            const std::string loc = coded("location_type");
            if (dropped) {
                report.filtered.push_back({row_no, "filtered by " + drop_field});
                continue;
            }

            r.severity5 = parse_enum<Severity5>(sev,
                {{"fatal", Severity5::fatal}, {"disabling", Severity5::disabling},
                 {"evident", Severity5::evident}, {"possible", Severity5::possible},
                 {"none", Severity5::none}}, "severity5");
            r.weather = parse_enum<Weather>(wea,
                {{"normal", Weather::normal}, {"rain", Weather::rain},
                 {"snow", Weather::snow}, {"other", Weather::other}}, "weather");
            r.area = parse_enum<Area>(are, {{"rural", Area::rural}, {"urban", Area::urban}}, "area");
            r.alignment = parse_enum<Alignment>(ali,
                {{"straight", Alignment::straight}, {"curve", Alignment::curve}}, "alignment");
            r.manner = parse_enum<Manner>(man,
                {{"rear_end", Manner::rear_end}, {"sideswipe", Manner::sideswipe},
                 {"other_manner", Manner::other_manner}}, "manner");
            r.harmful_event = parse_enum<HarmfulEvent>(hev,
                {{"motor_vehicle_in_transport", HarmfulEvent::motor_vehicle_in_transport},
                 {"fixed_or_other_object", HarmfulEvent::fixed_or_other_object},
                 {"ran_off_road", HarmfulEvent::ran_off_road},
                 {"other_event", HarmfulEvent::other_event}}, "harmful_event");
            r.lighting = parse_enum<Lighting>(lig,
                {{"daylight", Lighting::daylight}, {"dark_lighted", Lighting::dark_lighted},
                 {"dark_unlighted", Lighting::dark_unlighted},
                 {"other_light", Lighting::other_light}}, "lighting");
            r.truck_type = parse_enum<TruckType>(trk,
                {{"single_unit", TruckType::single_unit}, {"truck_trailer", TruckType::truck_trailer},
                 {"tractor_semi", TruckType::tractor_semi},
                 {"tractor_double", TruckType::tractor_double}}, "truck_type");
            r.surface = parse_enum<Surface>(sur,
                {{"asphalt", Surface::asphalt}, {"other_surface", Surface::other_surface}}, "surface");
            r.route = parse_enum<Route>(rou,
                {{"interstate", Route::interstate}, {"non_interstate", Route::non_interstate}}, "route");
            r.driver_sex = parse_enum<DriverSex>(sex,
                {{"male", DriverSex::male}, {"female", DriverSex::female}}, "driver_sex");
            r.location_type = parse_enum<LocationType>(loc,
                {{"segment", LocationType::segment}, {"intersection", LocationType::intersection}},
                "location_type");

            const Schema::Field& day_field = schema.fields.at("day");
            if (day_field.date_format) {
                r.day = detail::day_from_date(cell("day"));
            } else {
                r.day = parse_enum<DayType>(detail::apply_codes(day_field, cell("day"), "day"),
                    {{"weekday", DayType::weekday}, {"weekend", DayType::weekend}}, "day");
            }

            const std::string restraint =
                detail::apply_codes(schema.fields.at("restraint_used"), cell("restraint_used"),
                                    "restraint_used");
            if (restraint == "1" || restraint == "true") r.restraint_used = true;
            else if (restraint == "0" || restraint == "false") r.restraint_used = false;
            else throw detail::CellError{"restraint_used unparseable"};

            r.speed_limit = detail::parse_int(cell("speed_limit"), "speed_limit");
            r.lane_count = detail::parse_int(cell("lane_count"), "lane_count");
            r.aadt = detail::parse_int(cell("aadt"), "aadt");
            r.crash_time = detail::parse_int(cell("crash_time"), "crash_time");

            if (r.speed_limit < 5 || r.speed_limit > 85) throw detail::CellError{"speed_limit out of range"};
            if (r.lane_count < 1) throw detail::CellError{"lane_count out of range"};
            if (r.aadt < 0) throw detail::CellError{"aadt out of range"};
            if (r.crash_time < 0 || r.crash_time > 1439) throw detail::CellError{"crash_time out of range"};

            report.records.push_back(std::move(r));
        } catch (const detail::CellError& e) {
            report.rejects.push_back({row_no, e.reason});
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Stratification
// ---------------------------------------------------------------------------

struct StratifyResult {
    Dataset normal;
    Dataset rain;
    Dataset snow;
    Dataset pooled;
    std::vector<RowIssue> excluded;  // index into the record list, with reason

    const Dataset& stratum(Stratum s) const {
        switch (s) {
            case Stratum::normal: return normal;
            case Stratum::rain: return rain;
            case Stratum::snow: return snow;
            case Stratum::pooled: return pooled;
        }
        throw std::logic_error("invalid Stratum");
    }
};

// Splits coded observations by weather condition. Intersection crashes and
// weather conditions outside {normal, rain, snow} are excluded and counted;
// the pooled dataset is the union of the three strata in input order.
inline StratifyResult stratify(const std::vector<CrashRecord>& records) {
    StratifyResult out;
    for (Dataset* ds : {&out.normal, &out.rain, &out.snow, &out.pooled}) {
        ds->indicator_names = canonical_indicator_names();
        ds->groups = canonical_indicator_groups();
    }
    out.normal.stratum = Stratum::normal;
    out.rain.stratum = Stratum::rain;
    out.snow.stratum = Stratum::snow;
    out.pooled.stratum = Stratum::pooled;

    for (std::size_t i = 0; i < records.size(); ++i) {
        const CrashRecord& r = records[i];
        if (r.location_type == LocationType::intersection) {
            out.excluded.push_back({i, "intersection"});
            continue;
        }
        if (r.weather == Weather::other) {
            out.excluded.push_back({i, "weather other"});
            continue;
        }
        ChoiceObservation obs = code_observation(r);
        switch (r.weather) {
            case Weather::normal: out.normal.observations.push_back(obs); break;
            case Weather::rain: out.rain.observations.push_back(obs); break;
            case Weather::snow: out.snow.observations.push_back(obs); break;
            case Weather::other: break;
        }
        out.pooled.observations.push_back(std::move(obs));
    }
    return out;
}

}  // namespace mixlogit
