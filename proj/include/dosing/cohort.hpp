#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dosing/nn/rng.hpp"

namespace dosing {

/// Raised for malformed trajectory files and schema violations. Carries the 1-based
/// line number where the problem was found (0 when not line-specific).
class DataError : public std::runtime_error {
  public:
    DataError(const std::string& what, std::size_t line = 0);
    std::size_t line() const { return line_; }

  private:
    std::size_t line_;
};

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A loss or parameter became non-finite during training.
class TrainingError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Hourly dose: vasopressor in µg/kg/min norepinephrine-equivalent, IV fluid in mL/h.
struct DoseAction {
    double vasopressor = 0.0;
    double iv_fluid = 0.0;

    bool operator==(const DoseAction&) const = default;
};

struct ObservationVector {
    std::vector<double> continuous;
    std::vector<double> binary;          // 0 or 1
    std::vector<std::uint8_t> missing;   // 1 = continuous feature not measured this hour

    bool operator==(const ObservationVector&) const = default;
};

struct Step {
    int time_index = 0;
    ObservationVector observation;
    DoseAction action;
    double reward = 0.0;

    bool operator==(const Step&) const = default;
};

enum class Outcome { Unknown, Survived, Died };

struct Admission {
    std::string id;
    Outcome outcome = Outcome::Unknown;
    std::vector<Step> steps;

    std::size_t length() const { return steps.size(); }
    bool vasopressor_exposed() const;
    bool operator==(const Admission&) const = default;
};

struct Cohort {
    std::size_t n_continuous = 0;
    std::size_t n_binary = 0;
    std::vector<Admission> admissions;

    std::size_t size() const { return admissions.size(); }
    bool empty() const { return admissions.empty(); }
    bool operator==(const Cohort&) const = default;
};

inline constexpr double kSurvivalReward = 10.0;
inline constexpr double kDeathReward = -10.0;

enum class CohortFormat { Jsonl, Csv };

CohortFormat parse_cohort_format(const std::string& name);
/// Picks the format from the extension (.csv/.tsv → Csv, anything else → Jsonl).
CohortFormat guess_cohort_format(const std::filesystem::path& path);

/// Reads, validates, and assigns rewards. Throws DataError with the offending line.
Cohort ingest_cohort(const std::filesystem::path& path, CohortFormat format);
Cohort read_cohort(std::istream& in, CohortFormat format);
void export_cohort(const std::filesystem::path& path, const Cohort& cohort, CohortFormat format);
void write_cohort(std::ostream& out, const Cohort& cohort, CohortFormat format);

/// Checks field widths, binary values, dose signs, and strictly increasing time.
void validate_admission(const Admission& admission, std::size_t n_continuous, std::size_t n_binary,
                        std::size_t line = 0);

/// Zero reward everywhere except the last step: +10 survived, -10 died.
Admission assign_rewards(Admission admission);

std::pair<Cohort, Cohort> split_cohort(const Cohort& cohort, std::size_t n_test, Rng& rng);

/// n admissions of at least `min_length` hourly steps, of which at least ⌈n/2⌉ received a
/// vasopressor at some step. Throws DataError when the cohort cannot satisfy this.
std::vector<Admission> select_validation_patients(const Cohort& cohort, std::size_t n, Rng& rng,
                                                  std::size_t min_length = 48);

/// Vasopressor potency table: norepinephrine-equivalent = factor·dose + offset.
struct DoseCorrespondence {
    struct Rule {
        double factor = 1.0;
        double offset = 0.0;
    };
    std::map<std::string, Rule> rules;

    /// Parses `drug = factor [offset]` lines; '#' starts a comment.
    static DoseCorrespondence parse(std::istream& in);
};

double vaso_to_norepi_equivalent(const std::string& drug, double dose, const DoseCorrespondence& table);

}  // namespace dosing
