#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dosing/cohort.hpp"
#include "dosing/pipeline.hpp"
#include "dosing/shadow_metrics.hpp"

namespace dosing {

struct StudyPoint {
    std::string patient_id;
    int time_index = 0;

    bool operator==(const StudyPoint&) const = default;
};

/// Ordered evaluation points every session walks through.
struct Study {
    std::string study_id = "study";
    std::vector<StudyPoint> points;

    /// Patients in first-appearance order.
    std::vector<std::string> patient_ids() const;

    static Study load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
    std::string to_json() const;
    static Study from_json(const std::string& text);
};

/// `n_patients` validation patients (select_validation_patients) with `points_per_patient`
/// distinct time indices each, sorted by time within a patient.
Study make_study(const Cohort& cohort, std::size_t n_patients, std::size_t points_per_patient, std::uint64_t seed,
                 std::size_t min_length = 48, const std::string& study_id = "study");

/// Discrete-baseline ("MDP") doses keyed by (patient_id, time_index). CSV with header
/// patient_id,time_index,vasopressor,iv_fluid.
using BaselineActions = std::map<std::pair<std::string, int>, DoseAction>;
BaselineActions read_baseline_actions(const std::filesystem::path& path);
BaselineActions read_baseline_actions(std::istream& in);
void write_baseline_actions(std::ostream& out, const BaselineActions& actions);

struct SessionRecord {
    std::string session_id;
    std::string clinician_id;
    std::string token;
    std::string created_at;
};

struct RecommendationRecord {
    std::size_t record_id = 0;
    std::string session_id;
    std::string patient_id;
    int time_index = 0;
    DrugRecommendation vasopressor;
    DrugRecommendation iv_fluid;
    std::string submitted_at;
};

/// Append-only JSONL log: one {"type": "session"|"recommendation", ...} object per line.
struct ShadowLog {
    std::vector<SessionRecord> sessions;
    std::vector<RecommendationRecord> recommendations;

    static ShadowLog read(const std::filesystem::path& path);
    static ShadowLog read(std::istream& in);
};

std::string log_line(const SessionRecord& r);
std::string log_line(const RecommendationRecord& r);

/// Study points with every recommendation submitted for them plus the three action
/// sources. Throws DataError for a point without recommendations, an unknown patient,
/// or a missing baseline / policy action.
std::vector<EvaluationPoint> assemble_points(const Study& study, const Cohort& cohort,
                                             const std::vector<RecommendationRecord>& recommendations,
                                             const BaselineActions* baseline, const DeployedPolicy* policy);

const Admission* find_admission(const Cohort& cohort, const std::string& id);

std::string utc_timestamp();

}  // namespace dosing
