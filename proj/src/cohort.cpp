#include "dosing/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dosing/config.hpp"
#include "json.hpp"

namespace dosing {

using nlohmann::json;

DataError::DataError(const std::string& what, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

bool Admission::vasopressor_exposed() const {
    return std::any_of(steps.begin(), steps.end(), [](const Step& s) { return s.action.vasopressor > 0.0; });
}

CohortFormat parse_cohort_format(const std::string& name) {
    if (name == "jsonl" || name == "json") return CohortFormat::Jsonl;
    if (name == "csv") return CohortFormat::Csv;
    throw ConfigError("unknown cohort format '" + name + "' (expected jsonl or csv)");
}

CohortFormat guess_cohort_format(const std::filesystem::path& path) {
    const auto ext = path.extension().string();
    return ext == ".csv" ? CohortFormat::Csv : CohortFormat::Jsonl;
}

void validate_admission(const Admission& admission, std::size_t n_continuous, std::size_t n_binary,
                        std::size_t line) {
    if (admission.id.empty()) throw DataError("admission id is empty", line);
    if (admission.steps.empty()) throw DataError("admission " + admission.id + " has no steps", line);
    for (std::size_t i = 0; i < admission.steps.size(); ++i) {
        const Step& s = admission.steps[i];
        const auto& o = s.observation;
        if (o.continuous.size() != n_continuous || o.missing.size() != n_continuous) {
            throw DataError("admission " + admission.id + ": continuous/mask width mismatch at step " +
                                std::to_string(i),
                            line);
        }
        if (o.binary.size() != n_binary) {
            throw DataError("admission " + admission.id + ": binary width mismatch at step " + std::to_string(i), line);
        }
        for (double b : o.binary) {
            if (b != 0.0 && b != 1.0) throw DataError("admission " + admission.id + ": binary value not 0/1", line);
        }
        for (std::uint8_t m : o.missing) {
            if (m > 1) throw DataError("admission " + admission.id + ": mask value not 0/1", line);
        }
        for (double c : o.continuous) {
            if (!std::isfinite(c)) throw DataError("admission " + admission.id + ": non-finite observation", line);
        }
        const auto& a = s.action;
        if (!std::isfinite(a.vasopressor) || !std::isfinite(a.iv_fluid) || a.vasopressor < 0.0 || a.iv_fluid < 0.0) {
            throw DataError("admission " + admission.id + ": dose must be finite and non-negative", line);
        }
        if (i > 0 && s.time_index <= admission.steps[i - 1].time_index) {
            throw DataError("admission " + admission.id + ": non-monotone time at step " + std::to_string(i), line);
        }
    }
}

Admission assign_rewards(Admission admission) {
    if (admission.outcome == Outcome::Unknown) {
        throw DataError("admission " + admission.id + " has no outcome");
    }
    for (Step& s : admission.steps) s.reward = 0.0;
    if (!admission.steps.empty()) {
        admission.steps.back().reward = admission.outcome == Outcome::Survived ? kSurvivalReward : kDeathReward;
    }
    return admission;
}

namespace {

Outcome parse_outcome(const std::string& s, std::size_t line) {
    if (s == "survived") return Outcome::Survived;
    if (s == "died") return Outcome::Died;
    throw DataError("outcome must be 'survived' or 'died', got '" + s + "'", line);
}

const char* outcome_name(Outcome o) {
    switch (o) {
        case Outcome::Survived: return "survived";
        case Outcome::Died: return "died";
        case Outcome::Unknown: break;
    }
    throw DataError("cannot export admission without outcome");
}

Admission admission_from_json(const json& j, std::size_t line) {
    Admission a;
    try {
        a.id = j.at("id").get<std::string>();
        a.outcome = parse_outcome(j.at("outcome").get<std::string>(), line);
        for (const auto& js : j.at("steps")) {
            Step s;
            s.time_index = js.at("t").get<int>();
            s.observation.continuous = js.at("obs_cont").get<std::vector<double>>();
            s.observation.binary = js.at("obs_bin").get<std::vector<double>>();
            s.observation.missing = js.at("obs_mask").get<std::vector<std::uint8_t>>();
            s.action.vasopressor = js.at("vaso").get<double>();
            s.action.iv_fluid = js.at("fluid").get<double>();
            a.steps.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("schema violation: ") + e.what(), line);
    }
    return a;
}

json admission_to_json(const Admission& a) {
    json steps = json::array();
    for (const Step& s : a.steps) {
        steps.push_back({{"t", s.time_index},
                         {"obs_cont", s.observation.continuous},
                         {"obs_bin", s.observation.binary},
                         {"obs_mask", s.observation.missing},
                         {"vaso", s.action.vasopressor},
                         {"fluid", s.action.iv_fluid}});
    }
    return {{"id", a.id}, {"outcome", outcome_name(a.outcome)}, {"steps", std::move(steps)}};
}

void finish_admission(Cohort& cohort, Admission a, std::size_t line) {
    if (cohort.empty() && !a.steps.empty()) {
        cohort.n_continuous = a.steps.front().observation.continuous.size();
        cohort.n_binary = a.steps.front().observation.binary.size();
    }
    validate_admission(a, cohort.n_continuous, cohort.n_binary, line);
    cohort.admissions.push_back(assign_rewards(std::move(a)));
}

Cohort read_jsonl(std::istream& in) {
    Cohort cohort;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j;
        try {
            j = json::parse(text);
        } catch (const json::parse_error& e) {
            throw DataError(std::string("parse error: ") + e.what(), line);
        }
        finish_admission(cohort, admission_from_json(j, line), line);
    }
    return cohort;
}

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, std::size_t line) {
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad number '" + s + "'", line);
    return v;
}

int parse_int(const std::string& s, std::size_t line) {
    int v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DataError("bad integer '" + s + "'", line);
    return v;
}

// Header: id,outcome,t,vaso,fluid,c0..c{C-1},b0..b{B-1},m0..m{C-1}; one row per step,
// rows of one admission contiguous.
Cohort read_csv(std::istream& in) {
    Cohort cohort;
    std::string text;
    if (!std::getline(in, text)) return cohort;
    const auto header = split_fields(text);
    const std::vector<std::string> fixed = {"id", "outcome", "t", "vaso", "fluid"};
    if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin())) {
        throw DataError("csv header must start with id,outcome,t,vaso,fluid", 1);
    }
    std::size_t n_c = 0, n_b = 0, n_m = 0;
    for (std::size_t i = fixed.size(); i < header.size(); ++i) {
        const char kind = header[i].empty() ? '?' : header[i][0];
        if (kind == 'c' && n_b == 0 && n_m == 0) {
            ++n_c;
        } else if (kind == 'b' && n_m == 0) {
            ++n_b;
        } else if (kind == 'm') {
            ++n_m;
        } else {
            throw DataError("unexpected csv column '" + header[i] + "'", 1);
        }
    }
    if (n_m != n_c) throw DataError("csv needs one mask column per continuous column", 1);
    cohort.n_continuous = n_c;
    cohort.n_binary = n_b;

    Admission current;
    std::size_t current_line = 0;
    std::size_t line = 1;
    while (std::getline(in, text)) {
        ++line;
        if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = split_fields(text);
        if (f.size() != header.size()) throw DataError("wrong number of csv fields", line);
        if (!current.steps.empty() && f[0] != current.id) {
            finish_admission(cohort, std::move(current), current_line);
            current = Admission{};
        }
        if (current.steps.empty()) {
            current.id = f[0];
            current.outcome = parse_outcome(f[1], line);
            current_line = line;
        } else if (parse_outcome(f[1], line) != current.outcome) {
            throw DataError("outcome changes within admission " + current.id, line);
        }
        Step s;
        s.time_index = parse_int(f[2], line);
        s.action.vasopressor = parse_double(f[3], line);
        s.action.iv_fluid = parse_double(f[4], line);
        std::size_t k = fixed.size();
        for (std::size_t i = 0; i < n_c; ++i) s.observation.continuous.push_back(parse_double(f[k++], line));
        for (std::size_t i = 0; i < n_b; ++i) s.observation.binary.push_back(parse_double(f[k++], line));
        for (std::size_t i = 0; i < n_m; ++i) {
            s.observation.missing.push_back(static_cast<std::uint8_t>(parse_int(f[k++], line)));
        }
        if (!current.steps.empty() && s.time_index <= current.steps.back().time_index) {
            throw DataError("admission " + current.id + ": non-monotone time", line);
        }
        current.steps.push_back(std::move(s));
    }
    if (!current.steps.empty()) finish_admission(cohort, std::move(current), current_line);
    return cohort;
}

void write_csv(std::ostream& out, const Cohort& cohort) {
    out << "id,outcome,t,vaso,fluid";
    for (std::size_t i = 0; i < cohort.n_continuous; ++i) out << ",c" << i;
    for (std::size_t i = 0; i < cohort.n_binary; ++i) out << ",b" << i;
    for (std::size_t i = 0; i < cohort.n_continuous; ++i) out << ",m" << i;
    out << '\n';
    for (const Admission& a : cohort.admissions) {
        for (const Step& s : a.steps) {
            out << a.id << ',' << outcome_name(a.outcome) << ',' << s.time_index << ','
                << format_double(s.action.vasopressor) << ',' << format_double(s.action.iv_fluid);
            for (double v : s.observation.continuous) out << ',' << format_double(v);
            for (double v : s.observation.binary) out << ',' << format_double(v);
            for (std::uint8_t m : s.observation.missing) out << ',' << static_cast<int>(m);
            out << '\n';
        }
    }
}

}  // namespace

Cohort read_cohort(std::istream& in, CohortFormat format) {
    return format == CohortFormat::Csv ? read_csv(in) : read_jsonl(in);
}

void write_cohort(std::ostream& out, const Cohort& cohort, CohortFormat format) {
    if (format == CohortFormat::Csv) {
        write_csv(out, cohort);
        return;
    }
    for (const Admission& a : cohort.admissions) out << admission_to_json(a).dump() << '\n';
}

Cohort ingest_cohort(const std::filesystem::path& path, CohortFormat format) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path.string());
    return read_cohort(in, format);
}

void export_cohort(const std::filesystem::path& path, const Cohort& cohort, CohortFormat format) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    write_cohort(out, cohort, format);
}

std::pair<Cohort, Cohort> split_cohort(const Cohort& cohort, std::size_t n_test, Rng& rng) {
    if (n_test > cohort.size() || (n_test == cohort.size() && n_test > 0)) {
        throw DataError("n_test (" + std::to_string(n_test) + ") must be smaller than the cohort size (" +
                        std::to_string(cohort.size()) + ")");
    }
    std::vector<std::size_t> order(cohort.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<bool> is_test(cohort.size(), false);
    for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

    Cohort train{cohort.n_continuous, cohort.n_binary, {}};
    Cohort test{cohort.n_continuous, cohort.n_binary, {}};
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        (is_test[i] ? test : train).admissions.push_back(cohort.admissions[i]);
    }
    return {std::move(train), std::move(test)};
}

std::vector<Admission> select_validation_patients(const Cohort& cohort, std::size_t n, Rng& rng,
                                                  std::size_t min_length) {
    if (n == 0) return {};
    std::vector<std::size_t> exposed, other;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const Admission& a = cohort.admissions[i];
        if (a.length() < min_length) continue;
        (a.vasopressor_exposed() ? exposed : other).push_back(i);
    }
    const std::size_t need_exposed = (n + 1) / 2;
    if (exposed.size() < need_exposed || exposed.size() + other.size() < n) {
        throw DataError("cannot select " + std::to_string(n) + " validation patients: " +
                        std::to_string(exposed.size()) + " vasopressor-exposed and " +
                        std::to_string(other.size()) + " other admissions of at least " +
                        std::to_string(min_length) + " hours");
    }
    std::shuffle(exposed.begin(), exposed.end(), rng);
    std::vector<std::size_t> chosen(exposed.begin(), exposed.begin() + static_cast<std::ptrdiff_t>(need_exposed));
    std::vector<std::size_t> rest(exposed.begin() + static_cast<std::ptrdiff_t>(need_exposed), exposed.end());
    rest.insert(rest.end(), other.begin(), other.end());
    std::sort(rest.begin(), rest.end());
    std::shuffle(rest.begin(), rest.end(), rng);
    chosen.insert(chosen.end(), rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n - need_exposed));
    std::sort(chosen.begin(), chosen.end());

    std::vector<Admission> out;
    out.reserve(n);
    for (std::size_t i : chosen) out.push_back(cohort.admissions[i]);
    return out;
}

DoseCorrespondence DoseCorrespondence::parse(std::istream& in) {
    DoseCorrespondence table;
    std::string text;
    std::size_t line = 0;
    while (std::getline(in, text)) {
        ++line;
        if (auto hash = text.find('#'); hash != std::string::npos) text.erase(hash);
        const auto eq = text.find('=');
        if (eq == std::string::npos) {
            if (text.find_first_not_of(" \t\r") != std::string::npos) throw DataError("expected 'drug = factor'", line);
            continue;
        }
        std::string drug = text.substr(0, eq);
        drug.erase(0, drug.find_first_not_of(" \t"));
        drug.erase(drug.find_last_not_of(" \t") + 1);
        std::istringstream rhs(text.substr(eq + 1));
        Rule rule;
        if (!(rhs >> rule.factor)) throw DataError("missing factor for " + drug, line);
        rhs >> rule.offset;
        table.rules[drug] = rule;
    }
    return table;
}

double vaso_to_norepi_equivalent(const std::string& drug, double dose, const DoseCorrespondence& table) {
    auto it = table.rules.find(drug);
    if (it == table.rules.end()) throw ConfigError("no norepinephrine correspondence for drug '" + drug + "'");
    return it->second.factor * dose + it->second.offset;
}

}  // namespace dosing
