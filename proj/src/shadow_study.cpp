#include "dosing/shadow_study.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"

#include "dosing/config.hpp"

namespace dosing {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<std::string> Study::patient_ids() const {
    std::vector<std::string> ids;
    for (const auto& p : points)
        if (std::find(ids.begin(), ids.end(), p.patient_id) == ids.end()) ids.push_back(p.patient_id);
    return ids;
}

std::string Study::to_json() const {
    ordered_json j;
    j["study_id"] = study_id;
    j["points"] = json::array();
    for (const auto& p : points) j["points"].push_back(ordered_json{{"patient_id", p.patient_id}, {"time_index", p.time_index}});
    return j.dump(2) + "\n";
}

Study Study::from_json(const std::string& text) {
    Study s;
    try {
        const json j = json::parse(text);
        s.study_id = j.at("study_id").get<std::string>();
        for (const auto& p : j.at("points")) s.points.push_back({p.at("patient_id").get<std::string>(), p.at("time_index").get<int>()});
    } catch (const json::exception& e) {
        throw DataError(std::string("study file: ") + e.what());
    }
    std::set<std::pair<std::string, int>> seen;
    for (const auto& p : s.points)
        if (!seen.insert({p.patient_id, p.time_index}).second)
            throw DataError("study file: duplicate point " + p.patient_id + " t=" + std::to_string(p.time_index));
    return s;
}

Study Study::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open study file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

void Study::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write study file " + path.string());
    out << to_json();
}

Study make_study(const Cohort& cohort, std::size_t n_patients, std::size_t points_per_patient, std::uint64_t seed,
                 std::size_t min_length, const std::string& study_id) {
    Rng rng = stream_rng(seed, 0);
    const auto patients = select_validation_patients(cohort, n_patients, rng, min_length);
    Study s;
    s.study_id = study_id;
    for (const auto& a : patients) {
        std::vector<int> times(a.length());
        for (std::size_t t = 0; t < times.size(); ++t) times[t] = a.steps[t].time_index;
        std::shuffle(times.begin(), times.end(), rng);
        times.resize(std::min(points_per_patient, times.size()));
        std::sort(times.begin(), times.end());
        for (int t : times) s.points.push_back({a.id, t});
    }
    return s;
}

BaselineActions read_baseline_actions(std::istream& in) {
    BaselineActions out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (n == 1) {
            if (line != "patient_id,time_index,vasopressor,iv_fluid")
                throw DataError("baseline actions: expected header patient_id,time_index,vasopressor,iv_fluid", n);
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 4) throw DataError("baseline actions: expected 4 fields", n);
        try {
            const int t = std::stoi(cells[1]);
            DoseAction a{std::stod(cells[2]), std::stod(cells[3])};
            if (!(a.vasopressor >= 0.0) || !(a.iv_fluid >= 0.0)) throw DataError("baseline actions: negative dose", n);
            if (!out.emplace(std::make_pair(cells[0], t), a).second)
                throw DataError("baseline actions: duplicate point", n);
        } catch (const std::logic_error&) {
            throw DataError("baseline actions: bad number", n);
        }
    }
    return out;
}

BaselineActions read_baseline_actions(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open baseline actions " + path.string());
    return read_baseline_actions(in);
}

void write_baseline_actions(std::ostream& out, const BaselineActions& actions) {
    out << "patient_id,time_index,vasopressor,iv_fluid\n";
    for (const auto& [key, a] : actions)
        out << key.first << ',' << key.second << ',' << format_double(a.vasopressor) << ','
            << format_double(a.iv_fluid) << '\n';
}

namespace {

ordered_json drug_json(const DrugRecommendation& d) { return {{"mean", d.mean}, {"variance", d.variance}}; }

DrugRecommendation drug_from(const json& j) { return {j.at("mean").get<double>(), j.at("variance").get<double>()}; }

}  // namespace

std::string log_line(const SessionRecord& r) {
    ordered_json j{{"type", "session"},
                   {"session_id", r.session_id},
                   {"clinician_id", r.clinician_id},
                   {"token", r.token},
                   {"created_at", r.created_at}};
    return j.dump();
}

std::string log_line(const RecommendationRecord& r) {
    ordered_json j{{"type", "recommendation"},
                   {"record_id", r.record_id},
                   {"session_id", r.session_id},
                   {"patient_id", r.patient_id},
                   {"time_index", r.time_index},
                   {"vasopressor", drug_json(r.vasopressor)},
                   {"iv_fluid", drug_json(r.iv_fluid)},
                   {"submitted_at", r.submitted_at}};
    return j.dump();
}

ShadowLog ShadowLog::read(std::istream& in) {
    ShadowLog log;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            const auto type = j.at("type").get<std::string>();
            if (type == "session") {
                log.sessions.push_back({j.at("session_id").get<std::string>(), j.at("clinician_id").get<std::string>(),
                                        j.value("token", std::string()), j.value("created_at", std::string())});
            } else if (type == "recommendation") {
                RecommendationRecord r;
                r.record_id = j.at("record_id").get<std::size_t>();
                r.session_id = j.at("session_id").get<std::string>();
                r.patient_id = j.at("patient_id").get<std::string>();
                r.time_index = j.at("time_index").get<int>();
                r.vasopressor = drug_from(j.at("vasopressor"));
                r.iv_fluid = drug_from(j.at("iv_fluid"));
                r.submitted_at = j.value("submitted_at", std::string());
                log.recommendations.push_back(r);
            } else {
                throw DataError("shadow log: unknown record type '" + type + "'", n);
            }
        } catch (const json::exception& e) {
            throw DataError(std::string("shadow log: ") + e.what(), n);
        }
    }
    return log;
}

ShadowLog ShadowLog::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open shadow log " + path.string());
    return read(in);
}

const Admission* find_admission(const Cohort& cohort, const std::string& id) {
    for (const auto& a : cohort.admissions)
        if (a.id == id) return &a;
    return nullptr;
}

std::vector<EvaluationPoint> assemble_points(const Study& study, const Cohort& cohort,
                                             const std::vector<RecommendationRecord>& recommendations,
                                             const BaselineActions* baseline, const DeployedPolicy* policy) {
    std::vector<EvaluationPoint> points;
    for (const auto& sp : study.points) {
        const std::string where = sp.patient_id + " t=" + std::to_string(sp.time_index);
        const Admission* adm = find_admission(cohort, sp.patient_id);
        if (!adm) throw DataError("study point " + where + ": patient not in cohort");
        std::size_t step = adm->length();
        for (std::size_t t = 0; t < adm->length(); ++t)
            if (adm->steps[t].time_index == sp.time_index) step = t;
        if (step == adm->length()) throw DataError("study point " + where + ": no such hour");

        EvaluationPoint pt;
        pt.patient_id = sp.patient_id;
        pt.time_index = sp.time_index;
        for (const auto& r : recommendations)
            if (r.patient_id == sp.patient_id && r.time_index == sp.time_index)
                pt.recommendations.push_back({r.session_id, r.vasopressor, r.iv_fluid});
        if (pt.recommendations.empty()) throw DataError("study point " + where + ": no recommendations submitted");

        pt.actions[ActionSource::Record] = adm->steps[step].action;
        if (!baseline) throw DataError("no discrete-baseline action file given");
        const auto it = baseline->find({sp.patient_id, sp.time_index});
        if (it == baseline->end()) throw DataError("study point " + where + ": missing discrete-baseline action");
        pt.actions[ActionSource::DiscreteBaseline] = it->second;
        if (!policy) throw DataError("no pomdp policy checkpoint given");
        pt.actions[ActionSource::Pomdp] = recommended_dose(*policy, *adm, step);
        points.push_back(std::move(pt));
    }
    return points;
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

}  // namespace dosing
