#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "dosing/cohort.hpp"
#include "dosing/config.hpp"
#include "dosing/preprocess.hpp"
#include "helpers.hpp"

using namespace dosing;

namespace {

Admission tiny_admission(const std::string& id, Outcome outcome, std::size_t n) {
    Admission a;
    a.id = id;
    a.outcome = outcome;
    for (std::size_t t = 0; t < n; ++t) {
        Step s;
        s.time_index = static_cast<int>(t);
        s.observation.continuous = {1.0 + t, 2.0};
        s.observation.missing = {0, static_cast<std::uint8_t>(t % 2)};
        s.observation.binary = {static_cast<double>(t % 2)};
        s.action = {0.1 * t, 50.0};
        a.steps.push_back(s);
    }
    return a;
}

}  // namespace

TEST_CASE("jsonl and csv round trip preserve the cohort") {
    const Cohort c = testing_util::small_cohort(6, 3);
    for (auto fmt : {CohortFormat::Jsonl, CohortFormat::Csv}) {
        std::stringstream ss;
        write_cohort(ss, c, fmt);
        const Cohort back = read_cohort(ss, fmt);
        CHECK(back == c);
    }
}

TEST_CASE("ingest assigns terminal rewards only") {
    const Cohort c = testing_util::small_cohort(40, 5);
    for (const auto& a : c.admissions) {
        for (std::size_t t = 0; t + 1 < a.length(); ++t) CHECK(a.steps[t].reward == 0.0);
        const double last = a.steps.back().reward;
        CHECK(last == (a.outcome == Outcome::Died ? kDeathReward : kSurvivalReward));
    }
    Admission a = tiny_admission("x", Outcome::Died, 3);
    a.steps[0].reward = 4.0;
    const Admission r = assign_rewards(a);
    CHECK(r.steps[0].reward == 0.0);
    CHECK(r.steps[2].reward == -10.0);
}

TEST_CASE("malformed jsonl reports the offending line") {
    const Cohort c = testing_util::small_cohort(3, 2);
    std::stringstream ss;
    write_cohort(ss, c, CohortFormat::Jsonl);
    std::string text = ss.str() + "{\"id\":\"bad\",\"outcome\":\"maybe\",\"steps\":[]}\n";
    std::stringstream in(text);
    try {
        read_cohort(in, CohortFormat::Jsonl);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        CHECK(e.line() == 4);
    }
}

TEST_CASE("validation rejects bad admissions") {
    Admission a = tiny_admission("a", Outcome::Survived, 3);
    CHECK_NOTHROW(validate_admission(a, 2, 1));
    CHECK_THROWS_AS(validate_admission(a, 3, 1), DataError);
    Admission neg = a;
    neg.steps[1].action.vasopressor = -1.0;
    CHECK_THROWS_AS(validate_admission(neg, 2, 1), DataError);
    Admission time = a;
    time.steps[2].time_index = 1;
    CHECK_THROWS_AS(validate_admission(time, 2, 1), DataError);
    Admission bin = a;
    bin.steps[0].observation.binary[0] = 0.5;
    CHECK_THROWS_AS(validate_admission(bin, 2, 1), DataError);
    Admission none = a;
    none.outcome = Outcome::Unknown;
    CHECK_THROWS_AS(assign_rewards(none), DataError);
}

TEST_CASE("split is a disjoint partition") {
    const Cohort c = testing_util::small_cohort(30, 4);
    Rng rng = stream_rng(9, 0);
    const auto [train, test] = split_cohort(c, 7, rng);
    CHECK(test.size() == 7);
    CHECK(train.size() == 23);
    std::set<std::string> ids;
    for (const auto& a : train.admissions) ids.insert(a.id);
    for (const auto& a : test.admissions) CHECK(ids.insert(a.id).second);
    CHECK(ids.size() == 30);
}

TEST_CASE("validation patients are long and half exposed") {
    SimConfig cfg;
    cfg.finalize();
    Simulator sim(cfg);
    ScriptedClinician clin(cfg);
    const Cohort c = simulate_cohort(sim, clin, 200, 11);
    Rng rng = stream_rng(1, 0);
    const auto picked = select_validation_patients(c, 10, rng, 24);
    REQUIRE(picked.size() == 10);
    std::size_t exposed = 0;
    for (const auto& a : picked) {
        CHECK(a.length() >= 24);
        exposed += a.vasopressor_exposed();
    }
    CHECK(exposed >= 5);
    Rng rng2 = stream_rng(1, 0);
    CHECK_THROWS_AS(select_validation_patients(c, 10, rng2, 10000), DataError);
}

TEST_CASE("dose correspondence table") {
    std::istringstream in("# potency\nnorepinephrine = 1\nvasopressin = 2.5 0.1\n");
    const auto table = DoseCorrespondence::parse(in);
    CHECK(vaso_to_norepi_equivalent("norepinephrine", 0.3, table) == doctest::Approx(0.3));
    CHECK(vaso_to_norepi_equivalent("vasopressin", 0.04, table) == doctest::Approx(2.5 * 0.04 + 0.1));
    CHECK_THROWS(vaso_to_norepi_equivalent("unknown", 1.0, table));
}

TEST_CASE("equalizer matches the midrank empirical cdf") {
    const Equalizer eq = Equalizer::from_references(1, {{1.0, 2.0, 2.0, 5.0}, {0.0, 1.0}, {3.0}});
    // (#{ref < v} + ½·#{ref = v}) / n, computed by hand
    CHECK(eq.apply(0, 0.0) == 0.0);
    CHECK(eq.apply(0, 1.0) == 0.125);
    CHECK(eq.apply(0, 2.0) == 0.5);
    CHECK(eq.apply(0, 3.0) == 0.75);
    CHECK(eq.apply(0, 9.0) == 1.0);
    CHECK(eq.inverse(0, 0.125) == doctest::Approx(1.0));
    CHECK(eq.inverse(0, 0.0) == doctest::Approx(1.0));
    CHECK(eq.inverse(0, 1.0) == doctest::Approx(5.0));
    CHECK(eq.inverse(0, 0.75) == doctest::Approx(3.5));
}

TEST_CASE("prepared values stay in the unit interval") {
    const Cohort train = testing_util::small_cohort(50, 6);
    const Cohort test = testing_util::small_cohort(20, 99);
    const Preprocessor pre = Preprocessor::fit(train);
    for (const auto& a : test.admissions) {
        const auto p = pre.prepare(a);
        REQUIRE(p.length() == a.length());
        for (std::size_t t = 0; t < p.length(); ++t) {
            for (double v : p.inputs[t]) CHECK((v >= 0.0 && v <= 1.0));
            for (double v : p.actions[t]) CHECK((v >= 0.0 && v <= 1.0));
            for (std::size_t i = 0; i < p.missing[t].size(); ++i)
                CHECK(p.missing[t][i] == static_cast<double>(a.steps[t].observation.missing[i]));
        }
    }
}

TEST_CASE("sample and hold imputation") {
    std::vector<ObservationVector> series(3);
    series[0] = {{5.0, 7.0}, {}, {1, 0}};
    series[1] = {{6.0, 0.0}, {}, {0, 1}};
    series[2] = {{0.0, 0.0}, {}, {1, 1}};
    const std::vector<double> medians = {100.0, 200.0};
    const auto out = impute_sample_and_hold(series, medians);
    CHECK(out[0].continuous == std::vector<double>{100.0, 7.0});
    CHECK(out[1].continuous == std::vector<double>{6.0, 7.0});
    CHECK(out[2].continuous == std::vector<double>{6.0, 7.0});
    for (const auto& o : out) CHECK(o.missing == std::vector<std::uint8_t>{0, 0});
    CHECK(impute_sample_and_hold(out, medians) == out);
}

TEST_CASE("streaming imputation matches batch preparation") {
    const Cohort c = testing_util::small_cohort(10, 8);
    const Preprocessor pre = Preprocessor::fit(c);
    for (const auto& a : c.admissions) {
        const auto p = pre.prepare(a);
        ObservationStream stream(pre);
        for (std::size_t t = 0; t < a.length(); ++t) CHECK(stream.push(a.steps[t].observation) == p.inputs[t]);
    }
}

TEST_CASE("preprocessor params round trip and raw action clamping") {
    const Cohort c = testing_util::small_cohort(30, 2);
    const Preprocessor pre = Preprocessor::fit(c);
    const Preprocessor back = Preprocessor::from_params(pre.to_params());
    CHECK(back.medians() == pre.medians());
    for (std::size_t f = 0; f < pre.equalizer().n_features(); ++f)
        CHECK(back.equalizer().reference(f) == pre.equalizer().reference(f));
    const std::size_t before = clamped_action_count();
    const DoseAction hi = pre.raw_action({1.7, -0.2});
    CHECK(clamped_action_count() == before + 2);
    CHECK(hi.vasopressor == pre.raw_action({1.0, 0.0}).vasopressor);
    CHECK(hi.iv_fluid == pre.raw_action({1.0, 0.0}).iv_fluid);
}

TEST_CASE("key value config") {
    std::istringstream in("# c\na = 1\nb = x y\nv = 1,2.5\na = 3\n");
    auto kv = KeyValueConfig::parse(in);
    CHECK(kv.get_int("a", 0) == 3);
    CHECK(kv.get_string("b", "") == "x y");
    CHECK(kv.get_doubles("v", {}) == std::vector<double>{1.0, 2.5});
    CHECK(kv.get_double("missing", 0.25) == 0.25);
    CHECK_THROWS_AS(kv.reject_unknown({"a", "b"}), ConfigError);
    CHECK_NOTHROW(kv.reject_unknown({"a", "b", "v"}));
    CHECK(format_double(0.1) == "0.1");
    std::istringstream again(kv.dump());
    CHECK(KeyValueConfig::parse(again).entries() == kv.entries());
}
