#include "dosing/shadow_metrics.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "dosing/config.hpp"

namespace dosing {

const char* drug_label(Drug d) { return d == Drug::IvFluid ? "IV Fluids" : "Vasopressors"; }

const char* source_label(ActionSource s) {
    switch (s) {
        case ActionSource::Record: return "MIMIC";
        case ActionSource::DiscreteBaseline: return "MDP";
        case ActionSource::Pomdp: return "POMDP";
    }
    return "?";
}

const char* source_key(ActionSource s) {
    switch (s) {
        case ActionSource::Record: return "record";
        case ActionSource::DiscreteBaseline: return "discrete-baseline";
        case ActionSource::Pomdp: return "pomdp";
    }
    return "?";
}

ActionSource parse_source(const std::string& key) {
    for (ActionSource s : kSources)
        if (key == source_key(s)) return s;
    throw DataError("unknown action source '" + key + "'");
}

double dose_of(const DoseAction& a, Drug d) { return d == Drug::IvFluid ? a.iv_fluid : a.vasopressor; }

const DrugRecommendation& recommendation_for(const Recommendation& r, Drug d) {
    return d == Drug::IvFluid ? r.iv_fluid : r.vasopressor;
}

double gaussian_density(double x, double mean, double variance) {
    const double z = x - mean;
    return std::exp(-0.5 * z * z / variance) / std::sqrt(2.0 * std::numbers::pi * variance);
}

namespace {

void check_recs(std::size_t n) {
    if (n == 0) throw std::invalid_argument("score: no recommendations");
}

void check_variance(double v) {
    if (!(v > 0.0)) throw std::invalid_argument("score: variance must be positive");
}

}  // namespace

double p_score(double dose, std::span<const DrugRecommendation> recs) {
    check_recs(recs.size());
    double sum = 0.0;
    for (const auto& r : recs) {
        check_variance(r.variance);
        sum += gaussian_density(dose, r.mean, r.variance);
    }
    return sum / static_cast<double>(recs.size());
}

double c_score(double dose, std::span<const DrugRecommendation> recs) {
    check_recs(recs.size());
    std::size_t hits = 0;
    for (const auto& r : recs) {
        check_variance(r.variance);
        if (gaussian_density(dose, r.mean, r.variance) >= kAcceptDensity) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(recs.size());
}

double zero_count_rate(std::span<const double> c_scores) {
    if (c_scores.empty()) throw std::invalid_argument("zero_count_rate: no evaluation points");
    std::size_t zeros = 0;
    for (double c : c_scores)
        if (c == 0.0) ++zeros;
    return static_cast<double>(zeros) / static_cast<double>(c_scores.size());
}

double p_score_joint(const DoseAction& a, std::span<const Recommendation> recs) {
    check_recs(recs.size());
    double sum = 0.0;
    for (const auto& r : recs)
        sum += gaussian_density(a.vasopressor, r.vasopressor.mean, r.vasopressor.variance) *
               gaussian_density(a.iv_fluid, r.iv_fluid.mean, r.iv_fluid.variance);
    return sum / static_cast<double>(recs.size());
}

double c_score_joint(const DoseAction& a, std::span<const Recommendation> recs) {
    check_recs(recs.size());
    std::size_t hits = 0;
    for (const auto& r : recs)
        if (gaussian_density(a.vasopressor, r.vasopressor.mean, r.vasopressor.variance) *
                gaussian_density(a.iv_fluid, r.iv_fluid.mean, r.iv_fluid.variance) >=
            kAcceptDensity)
            ++hits;
    return static_cast<double>(hits) / static_cast<double>(recs.size());
}

ScoreTable score_table(const std::vector<EvaluationPoint>& points) {
    ScoreTable table;
    std::array<std::array<std::vector<double>, 3>, 2> c_values;
    for (const auto& pt : points) {
        if (pt.recommendations.empty())
            throw DataError("score_table: no recommendations at " + pt.patient_id + " t=" + std::to_string(pt.time_index));
        for (ActionSource s : kSources)
            if (!pt.actions.count(s))
                throw DataError("score_table: missing " + std::string(source_key(s)) + " action at " + pt.patient_id +
                                " t=" + std::to_string(pt.time_index));
        for (Drug d : kDrugs) {
            std::vector<DrugRecommendation> recs;
            for (const auto& r : pt.recommendations) recs.push_back(recommendation_for(r, d));
            for (ActionSource s : kSources) {
                PointScore ps;
                ps.patient_id = pt.patient_id;
                ps.time_index = pt.time_index;
                ps.drug = d;
                ps.source = s;
                ps.dose = dose_of(pt.actions.at(s), d);
                ps.p_score = p_score(ps.dose, recs);
                ps.c_score = c_score(ps.dose, recs);
                ps.recommenders = recs.size();
                ScoreCell& cell = table.cells[static_cast<int>(d)][static_cast<int>(s)];
                cell.p_score += ps.p_score;
                cell.c_score += ps.c_score;
                cell.points += 1;
                cell.recommenders += recs.size();
                c_values[static_cast<int>(d)][static_cast<int>(s)].push_back(ps.c_score);
                table.detail.push_back(ps);
            }
        }
    }
    for (Drug d : kDrugs)
        for (ActionSource s : kSources) {
            ScoreCell& cell = table.cells[static_cast<int>(d)][static_cast<int>(s)];
            if (cell.points == 0) continue;
            cell.p_score /= static_cast<double>(cell.points);
            cell.c_score /= static_cast<double>(cell.points);
            cell.zero_count = zero_count_rate(c_values[static_cast<int>(d)][static_cast<int>(s)]);
        }
    return table;
}

void ScoreTable::write(std::ostream& out) const {
    out << "ACTION,SCORE,MIMIC,MDP,POMDP\n";
    for (Drug d : kDrugs) {
        for (int row = 0; row < 3; ++row) {
            static const char* names[] = {"P-Score", "C-Score", "Zero Count"};
            out << drug_label(d) << ',' << names[row];
            for (ActionSource s : kSources) {
                const ScoreCell& c = at(d, s);
                out << ',' << format_double(row == 0 ? c.p_score : row == 1 ? c.c_score : c.zero_count);
            }
            out << '\n';
        }
    }
}

void ScoreTable::write_detail(std::ostream& out) const {
    out << "patient_id,time_index,drug,source,dose,p_score,c_score,recommenders\n";
    for (const auto& p : detail)
        out << p.patient_id << ',' << p.time_index << ',' << drug_label(p.drug) << ',' << source_label(p.source) << ','
            << format_double(p.dose) << ',' << format_double(p.p_score) << ',' << format_double(p.c_score) << ','
            << p.recommenders << '\n';
}

}  // namespace dosing
