#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "dosing/shadow_study.hpp"

namespace httplib {
class Server;
}

namespace dosing {

struct ServiceResponse {
    int status = 200;
    nlohmann::ordered_json body;
};

/// Shadow-mode study state. Handlers are plain methods so they can be driven without a
/// socket; mount() wires them to an httplib server.
///
/// Blinding: a session may read a window (patient, t) only when t is at or before a study
/// point of that patient that the session has already reached (current or submitted).
/// Actions are returned for hours < t; the recorded, baseline and policy doses at t itself
/// are revealed only after the session has submitted that point.
class ShadowService {
  public:
    ShadowService(Cohort cohort, Study study, std::optional<DeployedPolicy> policy,
                  std::optional<BaselineActions> baseline, std::filesystem::path log_path);

    ServiceResponse list_patients() const;
    ServiceResponse create_session(const std::string& body);
    ServiceResponse get_session(const std::string& session_id, const std::string& token) const;
    ServiceResponse window(const std::string& patient_id, const std::string& t, const std::string& session_id,
                           const std::string& token) const;
    ServiceResponse submit(const std::string& session_id, const std::string& token, const std::string& body);
    ServiceResponse scores(const std::string& study_id) const;

    void mount(httplib::Server& server);

    const Study& study() const { return study_; }
    std::size_t session_count() const;

  private:
    struct Session {
        SessionRecord record;
        std::size_t next_point = 0;  // index of the current point
    };

    // Callers hold mutex_.
    const Session* authorize(const std::string& session_id, const std::string& token, ServiceResponse& err) const;
    nlohmann::ordered_json session_json(const Session& s) const;
    void apply(const SessionRecord& r);
    void apply(const RecommendationRecord& r);
    void append(const std::string& line);

    Cohort cohort_;
    Study study_;
    std::optional<DeployedPolicy> policy_;
    std::optional<BaselineActions> baseline_;
    std::filesystem::path log_path_;
    std::ofstream log_;

    mutable std::shared_mutex mutex_;
    std::map<std::string, Session> sessions_;
    std::vector<RecommendationRecord> recommendations_;
    std::size_t next_record_id_ = 1;
};

/// Table-1 CSV of the scores the service would report, computed offline from a log.
std::string score_csv(const Study& study, const Cohort& cohort, const ShadowLog& log, const BaselineActions* baseline,
                      const DeployedPolicy* policy, std::string* detail_csv = nullptr);

}  // namespace dosing
