#pragma once

#include <array>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dosing/cohort.hpp"

namespace dosing {

inline constexpr double kAcceptDensity = 0.01;

/// One clinician's dose distribution for a single drug, raw units.
struct DrugRecommendation {
    double mean = 0.0;
    double variance = 1.0;
};

struct Recommendation {
    std::string clinician_id;
    DrugRecommendation vasopressor;
    DrugRecommendation iv_fluid;
};

enum class Drug { IvFluid = 0, Vasopressor = 1 };
enum class ActionSource { Record = 0, DiscreteBaseline = 1, Pomdp = 2 };

inline constexpr std::array<Drug, 2> kDrugs{Drug::IvFluid, Drug::Vasopressor};
inline constexpr std::array<ActionSource, 3> kSources{ActionSource::Record, ActionSource::DiscreteBaseline,
                                                      ActionSource::Pomdp};

const char* drug_label(Drug d);             // "IV Fluids", "Vasopressors"
const char* source_label(ActionSource s);   // "MIMIC", "MDP", "POMDP"
const char* source_key(ActionSource s);     // "record", "discrete-baseline", "pomdp"
ActionSource parse_source(const std::string& key);

double dose_of(const DoseAction& a, Drug d);
const DrugRecommendation& recommendation_for(const Recommendation& r, Drug d);

double gaussian_density(double x, double mean, double variance);

/// (1/N) Σ_i N(a; μ_i, σ_i²). Throws std::invalid_argument for N = 0 or a non-positive variance.
double p_score(double dose, std::span<const DrugRecommendation> recs);
/// (1/N) Σ_i 1[N(a; μ_i, σ_i²) ≥ 0.01].
double c_score(double dose, std::span<const DrugRecommendation> recs);
/// Fraction of C-scores equal to zero. Throws std::invalid_argument when empty.
double zero_count_rate(std::span<const double> c_scores);

/// Joint two-drug variant with diagonal covariance (product of the per-drug densities).
double p_score_joint(const DoseAction& a, std::span<const Recommendation> recs);
double c_score_joint(const DoseAction& a, std::span<const Recommendation> recs);

struct EvaluationPoint {
    std::string patient_id;
    int time_index = 0;
    std::vector<Recommendation> recommendations;
    std::map<ActionSource, DoseAction> actions;
};

struct ScoreCell {
    double p_score = 0.0;
    double c_score = 0.0;
    double zero_count = 0.0;
    std::size_t points = 0;
    std::size_t recommenders = 0;  // total over points
};

struct PointScore {
    std::string patient_id;
    int time_index = 0;
    Drug drug = Drug::IvFluid;
    ActionSource source = ActionSource::Record;
    double dose = 0.0;
    double p_score = 0.0;
    double c_score = 0.0;
    std::size_t recommenders = 0;
};

struct ScoreTable {
    std::array<std::array<ScoreCell, 3>, 2> cells{};  // [drug][source]
    std::vector<PointScore> detail;

    const ScoreCell& at(Drug d, ActionSource s) const {
        return cells[static_cast<int>(d)][static_cast<int>(s)];
    }
    /// ACTION,SCORE,MIMIC,MDP,POMDP with rows IV Fluids / Vasopressors × P-Score / C-Score / Zero Count.
    void write(std::ostream& out) const;
    void write_detail(std::ostream& out) const;
};

/// Mean P, mean C and zero-count rate per (drug, source). Throws DataError when a point has
/// no recommendations or lacks one of the three source actions.
ScoreTable score_table(const std::vector<EvaluationPoint>& points);

}  // namespace dosing
