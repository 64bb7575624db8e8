#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "dosing/pipeline.hpp"
#include "dosing/shadow_service.hpp"
#include "helpers.hpp"

using namespace dosing;
using nlohmann::json;

namespace {

struct Fixture {
    Cohort cohort;
    Study study;
    DeployedPolicy policy;
    BaselineActions baseline;
    std::filesystem::path log;

    Fixture() {
        SimConfig cfg;
        cfg.horizon = 40;
        cfg.finalize();
        Simulator sim(cfg);
        ScriptedClinician clin(cfg);
        cohort = simulate_cohort(sim, clin, 80, 17);
        study = make_study(cohort, 2, 2, 5, 12, "pilot");
        StateReprConfig sc;
        sc.belief_width = 8;
        sc.embed_hidden = 8;
        sc.obs_embed = 4;
        sc.act_embed = 4;
        sc.latent_dim = 2;
        sc.cvae_hidden = 8;
        const auto state = init_state_models(cfg.n_continuous, cfg.n_binary, sc, 1);
        Rng rng = stream_rng(3, 0);
        PolicyNetConfig pc;
        pc.hidden = 8;
        policy = {Preprocessor::fit(cohort), {"full", state.encoder, PolicyValueNet::create(8, pc, rng)}};
        for (const auto& p : study.points) baseline[{p.patient_id, p.time_index}] = {0.2, 150.0};
        log = std::filesystem::temp_directory_path() /
              ("shadow_test_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)) + ".jsonl");
        std::filesystem::remove(log);
    }
    ~Fixture() { std::filesystem::remove(log); }

    ShadowService service() const { return ShadowService(cohort, study, policy, baseline, log); }
};

std::string rec_body(const StudyPoint& p, double vm = 0.1, double vv = 0.01, double fm = 200.0, double fv = 900.0) {
    return json{{"patient_id", p.patient_id},
                {"time_index", p.time_index},
                {"vasopressor", {{"mean", vm}, {"variance", vv}}},
                {"iv_fluid", {{"mean", fm}, {"variance", fv}}}}
        .dump();
}

}  // namespace

TEST_CASE("study files round trip and reject duplicates") {
    Fixture f;
    REQUIRE(f.study.points.size() == 4);
    CHECK(f.study.patient_ids().size() == 2);
    const Study back = Study::from_json(f.study.to_json());
    CHECK(back.study_id == "pilot");
    CHECK(back.points == f.study.points);
    CHECK(make_study(f.cohort, 2, 2, 5, 12, "pilot").points == f.study.points);
    for (std::size_t i = 1; i < f.study.points.size(); ++i)
        if (f.study.points[i].patient_id == f.study.points[i - 1].patient_id)
            CHECK(f.study.points[i].time_index > f.study.points[i - 1].time_index);
    CHECK_THROWS_AS(Study::from_json(R"({"study_id":"x","points":[{"patient_id":"a","time_index":1},)"
                                     R"({"patient_id":"a","time_index":1}]})"),
                    DataError);
}

TEST_CASE("baseline action csv round trip") {
    BaselineActions a{{{"p1", 3}, {0.25, 100.0}}, {{"p2", 0}, {0.0, 12.5}}};
    std::stringstream ss;
    write_baseline_actions(ss, a);
    CHECK(read_baseline_actions(ss) == a);
    std::istringstream bad("pid,t,v,f\n");
    CHECK_THROWS_AS(read_baseline_actions(bad), DataError);
}

TEST_CASE("log lines round trip") {
    RecommendationRecord r{7, "s0001", "adm1", 12, {0.125, 0.0625}, {250.0, 1e4}, "2026-01-01T00:00:00Z"};
    SessionRecord s{"s0001", "dr-a", "tok", "2026-01-01T00:00:00Z"};
    std::istringstream in(log_line(s) + "\n" + log_line(r) + "\n");
    const ShadowLog log = ShadowLog::read(in);
    REQUIRE(log.sessions.size() == 1);
    REQUIRE(log.recommendations.size() == 1);
    const auto& b = log.recommendations[0];
    CHECK(b.record_id == 7);
    CHECK(b.vasopressor.mean == 0.125);
    CHECK(b.iv_fluid.variance == 1e4);
    std::istringstream bad("{\"type\":\"other\"}\n");
    CHECK_THROWS_AS(ShadowLog::read(bad), DataError);
}

TEST_CASE("session walk through, blinding and scoring") {
    Fixture f;
    ShadowService svc = f.service();
    const auto& pts = f.study.points;

    CHECK(svc.create_session("{}").status == 400);
    const auto created = svc.create_session(R"({"clinician_id":"dr-a"})");
    REQUIRE(created.status == 201);
    const std::string sid = created.body["session_id"], tok = created.body["token"];
    CHECK(created.body["next_point"] == 0);

    CHECK(svc.get_session(sid, "nope").status == 401);
    CHECK(svc.get_session("s9999", tok).status == 404);
    CHECK(svc.get_session(sid, tok).status == 200);

    const auto patients = svc.list_patients();
    CHECK(patients.body["patients"].size() == 2);
    CHECK(!patients.body["patients"][0].contains("steps"));

    // current point: visible up to t, action at t hidden, nothing revealed
    const auto w = svc.window(pts[0].patient_id, std::to_string(pts[0].time_index), sid, tok);
    REQUIRE(w.status == 200);
    CHECK(w.body["steps"].back()["time_index"] == pts[0].time_index);
    CHECK(!w.body["steps"].back().contains("action"));
    CHECK(!w.body.contains("revealed"));
    // future hours, other patients' unreached points, and bad input
    CHECK(svc.window(pts[0].patient_id, std::to_string(pts[0].time_index + 1), sid, tok).status == 403);
    CHECK(svc.window(pts[2].patient_id, std::to_string(pts[2].time_index), sid, tok).status == 403);
    CHECK(svc.window(pts[0].patient_id, "abc", sid, tok).status == 400);
    CHECK(svc.window("nobody", "0", sid, tok).status == 404);
    CHECK(svc.window(pts[0].patient_id, "0", sid, "bad").status == 401);

    CHECK(svc.submit(sid, tok, rec_body(pts[1])).status == 409);          // out of order
    CHECK(svc.submit(sid, tok, rec_body(pts[0], 0.1, 0.0)).status == 400);  // variance must be > 0
    CHECK(svc.submit(sid, tok, rec_body(pts[0], -1.0)).status == 400);
    CHECK(svc.scores("pilot").status == 409);
    CHECK(svc.scores("other").status == 404);

    const auto first = svc.submit(sid, tok, rec_body(pts[0], 0.125, 0.015625, 210.5, 400.25));
    REQUIRE(first.status == 201);
    CHECK(first.body["next_point"] == 1);
    CHECK(svc.submit(sid, tok, rec_body(pts[0])).status == 409);  // duplicate

    const auto after = svc.window(pts[0].patient_id, std::to_string(pts[0].time_index), sid, tok);
    REQUIRE(after.status == 200);
    REQUIRE(after.body.contains("revealed"));
    CHECK(after.body["revealed"].contains("record"));
    CHECK(after.body["revealed"].contains("discrete-baseline"));
    CHECK(after.body["revealed"].contains("pomdp"));

    for (std::size_t i = 1; i < pts.size(); ++i) REQUIRE(svc.submit(sid, tok, rec_body(pts[i])).status == 201);
    CHECK(svc.submit(sid, tok, rec_body(pts[0])).status == 409);
    CHECK(svc.get_session(sid, tok).body["complete"] == true);

    const auto scores = svc.scores("pilot");
    REQUIRE(scores.status == 200);
    CHECK(scores.body["table"].size() == 6);

    // verbatim persistence, offline scores, replay
    const ShadowLog log = ShadowLog::read(f.log);
    REQUIRE(log.recommendations.size() == pts.size());
    CHECK(log.recommendations[0].vasopressor.mean == 0.125);
    CHECK(log.recommendations[0].vasopressor.variance == 0.015625);
    CHECK(log.recommendations[0].iv_fluid.mean == 210.5);
    CHECK(log.recommendations[0].iv_fluid.variance == 400.25);
    CHECK(score_csv(f.study, f.cohort, log, &f.baseline, &f.policy) == scores.body["csv"].get<std::string>());

    ShadowService again = f.service();
    CHECK(again.session_count() == 1);
    CHECK(again.get_session(sid, tok).body["complete"] == true);
    CHECK(again.scores("pilot").body["csv"] == scores.body["csv"]);
    const auto second = again.create_session(R"({"clinician_id":"dr-b"})");
    CHECK(second.body["session_id"] == "s0002");
}

TEST_CASE("http routes") {
    Fixture f;
    ShadowService svc = f.service();
    httplib::Server server;
    svc.mount(server);
    const int port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    httplib::Client cli("127.0.0.1", port);
    auto res = cli.Post("/api/sessions", R"({"clinician_id":"dr-http"})", "application/json");
    REQUIRE(res);
    CHECK(res->status == 201);
    const json s = json::parse(res->body);
    const std::string sid = s["session_id"], tok = s["token"];
    const httplib::Headers auth{{"X-Session-Token", tok}};
    const auto& p0 = f.study.points[0];

    res = cli.Get("/api/patients");
    REQUIRE(res);
    CHECK(res->status == 200);
    res = cli.Get("/api/patients/" + p0.patient_id + "/window?t=" + std::to_string(p0.time_index) + "&session=" + sid,
                  auth);
    REQUIRE(res);
    CHECK(res->status == 200);
    res = cli.Get("/api/patients/" + p0.patient_id + "/window?t=" + std::to_string(p0.time_index + 1) +
                      "&session=" + sid,
                  auth);
    REQUIRE(res);
    CHECK(res->status == 403);
    res = cli.Post("/api/sessions/" + sid + "/recommendations", auth, rec_body(p0), "application/json");
    REQUIRE(res);
    CHECK(res->status == 201);
    res = cli.Get("/api/sessions/" + sid, auth);
    REQUIRE(res);
    CHECK(json::parse(res->body)["next_point"] == 1);
    res = cli.Get("/api/studies/pilot/scores");
    REQUIRE(res);
    CHECK(res->status == 409);

    server.stop();
    th.join();
}
