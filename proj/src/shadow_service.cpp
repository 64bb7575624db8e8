#include "dosing/shadow_service.hpp"

#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include <httplib.h>

#include "dosing/log.hpp"

namespace dosing {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

ServiceResponse error(int status, const std::string& message) { return {status, ordered_json{{"error", message}}}; }

std::string random_token() {
    std::random_device rd;
    std::ostringstream out;
    for (int i = 0; i < 4; ++i) out << std::hex << std::setw(8) << std::setfill('0') << rd();
    return out.str();
}

ordered_json dose_json(const DoseAction& a) { return {{"vasopressor", a.vasopressor}, {"iv_fluid", a.iv_fluid}}; }

bool read_drug(const json& j, const char* key, DrugRecommendation& out, std::string& why) {
    if (!j.contains(key) || !j[key].is_object()) {
        why = std::string("missing '") + key + "' object";
        return false;
    }
    const json& d = j[key];
    if (!d.contains("mean") || !d["mean"].is_number() || !d.contains("variance") || !d["variance"].is_number()) {
        why = std::string(key) + ": need numeric 'mean' and 'variance'";
        return false;
    }
    out.mean = d["mean"].get<double>();
    out.variance = d["variance"].get<double>();
    if (!std::isfinite(out.mean) || out.mean < 0.0) {
        why = std::string(key) + ": mean must be a finite non-negative dose";
        return false;
    }
    if (!std::isfinite(out.variance) || !(out.variance > 0.0)) {
        why = std::string(key) + ": variance must be positive";
        return false;
    }
    return true;
}

ordered_json table_json(const ScoreTable& table) {
    ordered_json rows = json::array();
    static const char* names[] = {"P-Score", "C-Score", "Zero Count"};
    for (Drug d : kDrugs)
        for (int row = 0; row < 3; ++row) {
            ordered_json r{{"action", drug_label(d)}, {"score", names[row]}};
            for (ActionSource s : kSources) {
                const ScoreCell& c = table.at(d, s);
                r[source_label(s)] = row == 0 ? c.p_score : row == 1 ? c.c_score : c.zero_count;
            }
            rows.push_back(r);
        }
    return rows;
}

}  // namespace

ShadowService::ShadowService(Cohort cohort, Study study, std::optional<DeployedPolicy> policy,
                             std::optional<BaselineActions> baseline, std::filesystem::path log_path)
    : cohort_(std::move(cohort)),
      study_(std::move(study)),
      policy_(std::move(policy)),
      baseline_(std::move(baseline)),
      log_path_(std::move(log_path)) {
    for (const auto& p : study_.points) {
        const Admission* a = find_admission(cohort_, p.patient_id);
        if (!a) throw DataError("study point " + p.patient_id + ": patient not in cohort");
        bool found = false;
        for (const auto& s : a->steps) found = found || s.time_index == p.time_index;
        if (!found) throw DataError("study point " + p.patient_id + " t=" + std::to_string(p.time_index) + ": no such hour");
    }
    if (std::filesystem::exists(log_path_)) {
        const ShadowLog replay = ShadowLog::read(log_path_);
        for (const auto& s : replay.sessions) apply(s);
        for (const auto& r : replay.recommendations) apply(r);
        log_info("shadow-service: replayed " + std::to_string(replay.sessions.size()) + " sessions and " +
                 std::to_string(replay.recommendations.size()) + " recommendations");
    }
    log_.open(log_path_, std::ios::app);
    if (!log_) throw DataError("cannot open shadow log " + log_path_.string() + " for appending");
}

void ShadowService::apply(const SessionRecord& r) {
    if (sessions_.count(r.session_id)) throw DataError("shadow log: duplicate session " + r.session_id);
    sessions_[r.session_id] = Session{r, 0};
}

void ShadowService::apply(const RecommendationRecord& r) {
    auto it = sessions_.find(r.session_id);
    if (it == sessions_.end()) throw DataError("shadow log: recommendation for unknown session " + r.session_id);
    Session& s = it->second;
    if (s.next_point >= study_.points.size() ||
        !(study_.points[s.next_point] == StudyPoint{r.patient_id, r.time_index}))
        throw DataError("shadow log: out-of-order recommendation " + std::to_string(r.record_id));
    ++s.next_point;
    recommendations_.push_back(r);
    next_record_id_ = std::max(next_record_id_, r.record_id + 1);
}

void ShadowService::append(const std::string& line) {
    log_ << line << '\n';
    log_.flush();
    if (!log_) throw std::runtime_error("shadow log write failed");
}

std::size_t ShadowService::session_count() const {
    std::shared_lock lock(mutex_);
    return sessions_.size();
}

ServiceResponse ShadowService::list_patients() const {
    ordered_json out = json::array();
    for (const auto& id : study_.patient_ids()) {
        const Admission* a = find_admission(cohort_, id);
        out.push_back({{"patient_id", id}, {"length", a->length()}, {"vasopressor_exposed", a->vasopressor_exposed()}});
    }
    return {200, ordered_json{{"study_id", study_.study_id}, {"patients", out}}};
}

ordered_json ShadowService::session_json(const Session& s) const {
    ordered_json points = json::array();
    for (const auto& p : study_.points) points.push_back({{"patient_id", p.patient_id}, {"time_index", p.time_index}});
    ordered_json j{{"session_id", s.record.session_id},
                   {"clinician_id", s.record.clinician_id},
                   {"study_id", study_.study_id},
                   {"points", points},
                   {"next_point", s.next_point},
                   {"complete", s.next_point >= study_.points.size()}};
    return j;
}

ServiceResponse ShadowService::create_session(const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception&) {
        return error(400, "body must be JSON");
    }
    if (!j.is_object() || !j.contains("clinician_id") || !j["clinician_id"].is_string() ||
        j["clinician_id"].get<std::string>().empty())
        return error(400, "need a non-empty 'clinician_id'");
    std::unique_lock lock(mutex_);
    std::ostringstream id;
    id << 's' << std::setw(4) << std::setfill('0') << sessions_.size() + 1;
    SessionRecord r{id.str(), j["clinician_id"].get<std::string>(), random_token(), utc_timestamp()};
    try {
        append(log_line(r));
    } catch (const std::exception& e) {
        return error(500, e.what());
    }
    apply(r);
    ordered_json out = session_json(sessions_.at(r.session_id));
    out["token"] = r.token;
    return {201, out};
}

const ShadowService::Session* ShadowService::authorize(const std::string& session_id, const std::string& token,
                                                       ServiceResponse& err) const {
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) {
        err = error(404, "unknown session '" + session_id + "'");
        return nullptr;
    }
    if (token != it->second.record.token) {
        err = error(401, "missing or wrong session token");
        return nullptr;
    }
    return &it->second;
}

ServiceResponse ShadowService::get_session(const std::string& session_id, const std::string& token) const {
    std::shared_lock lock(mutex_);
    ServiceResponse err;
    const Session* s = authorize(session_id, token, err);
    if (!s) return err;
    return {200, session_json(*s)};
}

ServiceResponse ShadowService::window(const std::string& patient_id, const std::string& t_text,
                                      const std::string& session_id, const std::string& token) const {
    std::shared_lock lock(mutex_);
    ServiceResponse err;
    const Session* s = authorize(session_id, token, err);
    if (!s) return err;

    int t = 0;
    try {
        std::size_t used = 0;
        t = std::stoi(t_text, &used);
        if (used != t_text.size()) throw std::invalid_argument("t");
    } catch (const std::exception&) {
        return error(400, "query parameter t must be an integer hour");
    }
    const Admission* adm = nullptr;
    for (const auto& id : study_.patient_ids())
        if (id == patient_id) adm = find_admission(cohort_, id);
    if (!adm) return error(404, "unknown patient '" + patient_id + "'");
    bool in_stay = false;
    for (const auto& st : adm->steps) in_stay = in_stay || st.time_index == t;
    if (!in_stay) return error(400, "t=" + std::to_string(t) + " is not an hour of this stay");

    // Reached points of this patient bound what may be shown.
    bool allowed = false, submitted = false;
    const std::size_t reached = std::min(s->next_point + 1, study_.points.size());
    for (std::size_t i = 0; i < reached; ++i) {
        const auto& p = study_.points[i];
        if (p.patient_id != patient_id) continue;
        if (t <= p.time_index) allowed = true;
        if (t == p.time_index && i < s->next_point) submitted = true;
    }
    if (!allowed) return error(403, "blinded: this session has not reached hour " + std::to_string(t) + " of " + patient_id);

    ordered_json steps = json::array();
    const Step* current = nullptr;
    for (const auto& st : adm->steps) {
        if (st.time_index > t) break;
        ordered_json cont = json::array();
        for (std::size_t k = 0; k < st.observation.continuous.size(); ++k)
            cont.push_back(st.observation.missing[k] ? ordered_json(nullptr) : ordered_json(st.observation.continuous[k]));
        ordered_json js{{"time_index", st.time_index},
                        {"continuous", cont},
                        {"missing", st.observation.missing},
                        {"binary", st.observation.binary}};
        if (st.time_index < t) js["action"] = dose_json(st.action);
        else current = &st;
        steps.push_back(js);
    }
    ordered_json out{{"patient_id", patient_id}, {"time_index", t}, {"steps", steps}};
    if (submitted && current) {
        ordered_json rev{{"record", dose_json(current->action)}};
        if (baseline_) {
            auto it = baseline_->find({patient_id, t});
            if (it != baseline_->end()) rev["discrete-baseline"] = dose_json(it->second);
        }
        if (policy_) {
            const auto step = static_cast<std::size_t>(current - adm->steps.data());
            rev["pomdp"] = dose_json(recommended_dose(*policy_, *adm, step));
        }
        out["revealed"] = rev;
    }
    return {200, out};
}

ServiceResponse ShadowService::submit(const std::string& session_id, const std::string& token, const std::string& body) {
    json j;
    try {
        j = json::parse(body);
    } catch (const json::exception&) {
        return error(400, "body must be JSON");
    }
    if (!j.is_object() || !j.contains("patient_id") || !j["patient_id"].is_string() || !j.contains("time_index") ||
        !j["time_index"].is_number_integer())
        return error(400, "need 'patient_id' (string) and 'time_index' (integer)");
    RecommendationRecord r;
    r.session_id = session_id;
    r.patient_id = j["patient_id"].get<std::string>();
    r.time_index = j["time_index"].get<int>();
    std::string why;
    if (!read_drug(j, "vasopressor", r.vasopressor, why) || !read_drug(j, "iv_fluid", r.iv_fluid, why))
        return error(400, why);

    std::unique_lock lock(mutex_);
    ServiceResponse err;
    const Session* s = authorize(session_id, token, err);
    if (!s) return err;
    const StudyPoint point{r.patient_id, r.time_index};
    for (std::size_t i = 0; i < s->next_point; ++i)
        if (study_.points[i] == point) return error(409, "duplicate: this point was already submitted");
    if (s->next_point >= study_.points.size()) return error(409, "session complete");
    if (!(study_.points[s->next_point] == point))
        return error(409, "out of order: the current point is " + study_.points[s->next_point].patient_id + " t=" +
                              std::to_string(study_.points[s->next_point].time_index));
    r.record_id = next_record_id_;
    r.submitted_at = utc_timestamp();
    try {
        append(log_line(r));
    } catch (const std::exception& e) {
        return error(500, e.what());
    }
    apply(r);
    ordered_json out = json::parse(log_line(r));
    out.erase("type");
    out["next_point"] = sessions_.at(session_id).next_point;
    return {201, out};
}

std::string score_csv(const Study& study, const Cohort& cohort, const ShadowLog& log, const BaselineActions* baseline,
                      const DeployedPolicy* policy, std::string* detail_csv) {
    const auto table = score_table(assemble_points(study, cohort, log.recommendations, baseline, policy));
    std::ostringstream out;
    table.write(out);
    if (detail_csv) {
        std::ostringstream d;
        table.write_detail(d);
        *detail_csv = d.str();
    }
    return out.str();
}

ServiceResponse ShadowService::scores(const std::string& study_id) const {
    if (study_id != study_.study_id) return error(404, "unknown study '" + study_id + "'");
    std::shared_lock lock(mutex_);
    try {
        const auto table = score_table(assemble_points(study_, cohort_, recommendations_, baseline_ ? &*baseline_ : nullptr,
                                                       policy_ ? &*policy_ : nullptr));
        std::ostringstream csv;
        table.write(csv);
        ordered_json detail = json::array();
        for (const auto& p : table.detail)
            detail.push_back({{"patient_id", p.patient_id},
                              {"time_index", p.time_index},
                              {"drug", drug_label(p.drug)},
                              {"source", source_label(p.source)},
                              {"dose", p.dose},
                              {"p_score", p.p_score},
                              {"c_score", p.c_score},
                              {"recommenders", p.recommenders}});
        return {200, ordered_json{{"study_id", study_.study_id}, {"table", table_json(table)}, {"detail", detail}, {"csv", csv.str()}}};
    } catch (const DataError& e) {
        return error(409, std::string("incomplete study: ") + e.what());
    }
}

void ShadowService::mount(httplib::Server& server) {
    auto send = [](httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    auto token = [](const httplib::Request& req) { return req.get_header_value("X-Session-Token"); };

    server.Get("/api/patients", [this, send](const httplib::Request&, httplib::Response& res) { send(res, list_patients()); });
    server.Get("/api/patients/:id/window", [this, send, token](const httplib::Request& req, httplib::Response& res) {
        if (!req.has_param("t") || !req.has_param("session")) {
            send(res, error(400, "query parameters t and session are required"));
            return;
        }
        send(res, window(req.path_params.at("id"), req.get_param_value("t"), req.get_param_value("session"), token(req)));
    });
    server.Post("/api/sessions", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, create_session(req.body));
    });
    server.Get("/api/sessions/:id", [this, send, token](const httplib::Request& req, httplib::Response& res) {
        send(res, get_session(req.path_params.at("id"), token(req)));
    });
    server.Post("/api/sessions/:id/recommendations", [this, send, token](const httplib::Request& req, httplib::Response& res) {
        send(res, submit(req.path_params.at("id"), token(req), req.body));
    });
    server.Get("/api/studies/:id/scores", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, scores(req.path_params.at("id")));
    });
    server.set_exception_handler([send](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        send(res, error(500, what));
    });
}

}  // namespace dosing
