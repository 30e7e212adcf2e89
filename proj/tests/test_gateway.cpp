#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "raglc/gateway.hpp"
#include "raglc/tokenizer.hpp"

using namespace raglc;
using namespace raglc::gateway;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

corpus::Corpus small_corpus(int cases = 4) {
    corpus::Corpus corp;
    corpus::Document d;
    d.doc_id = "chronicle";
    d.title = "The Kessel Chronicle";
    d.doc_type = corpus::DocType::parse("novel");
    d.body =
        "The stone bridge across the Kessel had stood unfinished for a decade. "
        "By the autumn of 1866 the last arch was keyed. "
        "The toll house opened the following year and trade resumed. "
        "Barges carried grain downstream every market day thereafter. "
        "The ferryman retired once the carts no longer needed him.";
    corp.add_document(d, default_tokenizer());

    for (int i = 1; i <= cases; ++i) {
        corpus::QueryCase c;
        c.id = "q" + std::to_string(i);
        c.query = "When did the toll house open? (variant " + std::to_string(i) + ")";
        c.doc_id = "chronicle";
        c.task_type = corpus::TaskType::parse("location");
        c.context_bucket = corpus::ContextBucket::from_tokens(48000);
        c.ground_truth = "the year after the arch was keyed";
        corp.add_case(c);
    }
    corp.finalize();
    return corp;
}

GatewayConfig mock_config() {
    GatewayConfig cfg;
    cfg.router.model = "qwen3-1.7b";
    cfg.answerer.model = "qwen3-235b";
    cfg.judge.model = "qwen3-235b";
    cfg.rag.chunk_size = 12;
    cfg.rag.chunk_overlap = 2;
    cfg.rag.rerank_size = 2;
    cfg.port = 0;
    cfg.seed = 5;
    return cfg;
}

std::string decision_text(Route r) {
    return std::string("<thinking>\n  <step1>scan</step1>\n  <decision>") +
           (r == Route::RAG ? "RAG" : "LONG_CONTEXT") + "</decision>\n</thinking>";
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

struct EnvGuard {
    std::string name;
    EnvGuard(const std::string& n, const std::string& value) : name(n) {
        ::setenv(n.c_str(), value.c_str(), 1);
    }
    ~EnvGuard() { ::unsetenv(name.c_str()); }
};

}  // namespace

TEST_CASE("config JSON fills every documented knob") {
    const std::string text = R"({
        "router": {"kind": "mock", "model": "qwen3-1.7b", "script": "", "temperature": 0.7},
        "answerer": {"kind": "mock", "model": "qwen3-235b", "max_output_tokens": 900},
        "judge": {"kind": "mock", "model": "qwen3-235b"},
        "policy": "selfroute",
        "meta_mode": "head_only",
        "head_tokens": 64,
        "answer_window": 32000,
        "model_windows": {"qwen3-235b": 131072},
        "max_in_flight": 2,
        "seed": 7,
        "host": "0.0.0.0",
        "port": 9100,
        "answer_budget": 512,
        "rag": {"chunk_size": 500, "chunk_overlap": 50, "rerank_size": 3, "vector_ratio": 0.25}
    })";
    const auto cfg = config_from_json_text(text);
    CHECK(cfg.router.model == "qwen3-1.7b");
    CHECK(cfg.router.temperature == doctest::Approx(0.7));
    CHECK(cfg.answerer.max_output_tokens == 900);
    CHECK(cfg.policy == "selfroute");
    CHECK(cfg.meta_mode == corpus::MetaMode::head_only);
    CHECK(cfg.head_tokens == 64);
    CHECK(cfg.answer_window == 32000);
    CHECK(cfg.window_for("qwen3-235b") == 131072);
    CHECK(cfg.window_for("unlisted-model") == 32000);
    CHECK(cfg.max_in_flight == 2);
    CHECK(cfg.seed == 7);
    CHECK(cfg.host == "0.0.0.0");
    CHECK(cfg.port == 9100);
    CHECK(cfg.answer_budget == 512);
    CHECK(cfg.rag.chunk_size == 500);
    CHECK(cfg.rag.vector_ratio == doctest::Approx(0.25));
}

TEST_CASE("environment variables override the config file") {
    EnvGuard policy("RAGLC_POLICY", "always_lc");
    EnvGuard port("RAGLC_PORT", "0");
    EnvGuard seed("RAGLC_SEED", "99");
    const auto cfg = config_from_json_text(R"({"policy": "preroute", "port": 9100, "seed": 1})");
    CHECK(cfg.policy == "always_lc");
    CHECK(cfg.port == 0);
    CHECK(cfg.seed == 99);
}

TEST_CASE("config validation rejects bad wiring up front") {
    CHECK_THROWS_AS(config_from_json_text("{nope"), SchemaError);
    CHECK_THROWS_AS(config_from_json_text(R"({"policy": "coinflip"})"), SchemaError);
    CHECK_THROWS_AS(config_from_json_text(R"({"head_tokens": 0})"), SchemaError);
    CHECK_THROWS_AS(config_from_json_text(R"({"router": {"kind": "carrier-pigeon"}})"),
                    SchemaError);
    // A priced model tag that the pricing table cannot resolve fails at
    // startup, not halfway through a run.
    CHECK_THROWS_AS(config_from_json_text(R"({"router": {"model": "mystery-model"}})"),
                    econ::UnknownModel);
    // ...unless cost accounting is off.
    CHECK_NOTHROW(config_from_json_text(
        R"({"router": {"model": "mystery-model"}, "cost_accounting": false})"));
}

TEST_CASE("mock backends load scripted replies from a file") {
    const auto dir = fresh_dir("raglc_backend_test");
    const auto script = dir / "script.jsonl";
    {
        std::ofstream out(script);
        out << R"({"key": "router_decision/q1", "text": "<decision>RAG</decision>", "repeat": 2})"
            << "\n";
    }
    BackendConfig bc;
    bc.kind = "mock";
    bc.model = "qwen3-1.7b";
    bc.script_path = script.string();
    auto client = make_backend(bc);

    pipeline::ChatRequest req;
    req.model = "qwen3-1.7b";
    req.messages.push_back({"user", "route this"});
    req.key = "router_decision/q1";
    CHECK(client->complete(req).text == "<decision>RAG</decision>");
    CHECK(client->complete(req).text == "<decision>RAG</decision>");
    CHECK_THROWS_AS(client->complete(req), pipeline::ChatError);

    bc.script_path = (dir / "missing.jsonl").string();
    CHECK_THROWS_AS(make_backend(bc), SchemaError);
}

// ---------------------------------------------------------------------------
// Live HTTP service
// ---------------------------------------------------------------------------

TEST_CASE("the service answers health, routing, answering, judging, and metrics") {
    auto router = std::make_shared<pipeline::MockChatClient>();
    auto answerer = std::make_shared<pipeline::MockChatClient>();
    auto judge = std::make_shared<pipeline::MockChatClient>();

    router->add_keyed("router_decision/q1", {decision_text(Route::RAG)});
    router->add_keyed("router_decision/adhoc", {decision_text(Route::LC)});
    router->add_keyed("router_decision/q2", {decision_text(Route::RAG)});
    answerer->add_keyed("selfroute_qa/q1", {"It opened the year after the arch was keyed."});
    answerer->add_keyed_sequence("selfroute_qa/q2", {{"Unanswerable."}});
    answerer->add_keyed("lc_answer/q2", {"The toll house opened the following year."});
    judge->add_keyed("judge_standard/q1",
                     {R"({"analysis": "both close", "score_a": 4, "score_b": 2})"});

    Gateway gw(mock_config());
    gw.set_router(router);
    gw.set_answerer(answerer);
    gw.set_judge(judge);
    gw.set_corpus(small_corpus());
    gw.start();
    REQUIRE(gw.port() > 0);

    httplib::Client cli("127.0.0.1", gw.port());

    SUBCASE("health and liveness") {
        auto res = cli.Get("/healthz");
        REQUIRE(res);
        CHECK(res->status == 200);
        CHECK(json::parse(res->body).at("status") == "ok");
    }

    SUBCASE("routing is a pure decision: no retrieval, no answer call") {
        auto res = cli.Post("/route", R"({"case_id": "q1"})", "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 200);
        const json j = json::parse(res->body);
        CHECK(j.at("route") == "RAG");
        CHECK(j.at("policy") == "preroute");
        CHECK(j.at("decision_source") == "router_model");
        CHECK(j.at("parse_status") == "clean");
        CHECK(j.at("trace").at("step1") == "scan");
        REQUIRE(j.at("legs").size() == 1);
        CHECK(j.at("legs")[0].at("leg") == "route");
        CHECK(j.at("legs")[0].at("model") == "qwen3-1.7b");
        CHECK(j.at("usd_total").get<double>() > 0.0);
        CHECK(answerer->calls() == 0);  // the decision endpoint never answers
        CHECK(router->calls() == 1);
    }

    SUBCASE("an inline case plus explicit metadata routes without a corpus hit") {
        const json body{
            {"case", {{"query", "When did the toll house open?"}, {"task_type", "location"}}},
            {"meta",
             {{"title", "The Kessel Chronicle"},
              {"doc_type", "novel"},
              {"token_length", 96452},
              {"head_snippet", "The stone bridge across the Kessel."},
              {"fits_window", true}}}};
        auto res = cli.Post("/route", body.dump(), "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 200);
        CHECK(json::parse(res->body).at("route") == "LC");
    }

    SUBCASE("unknown cases, bad masks, and malformed bodies are 400s") {
        auto res = cli.Post("/route", R"({"case_id": "nope"})", "application/json");
        REQUIRE(res);
        CHECK(res->status == 400);

        res = cli.Post("/route", R"({"case_id": "q1", "exclude": ["step9"]})",
                       "application/json");
        REQUIRE(res);
        CHECK(res->status == 400);

        res = cli.Post("/route", "{truncated", "application/json");
        REQUIRE(res);
        CHECK(res->status == 400);
        CHECK(json::parse(res->body).at("error").get<std::string>().find("malformed") !=
              std::string::npos);
    }

    SUBCASE("answering runs the requested policy end to end") {
        auto res = cli.Post("/answer", R"({"case_id": "q1", "policy": "always_rag"})",
                            "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 200);
        const json j = json::parse(res->body);
        CHECK(j.at("policy") == "always_rag");
        CHECK(j.at("route") == "RAG");
        CHECK(j.at("answer") == "It opened the year after the arch was keyed.");
        REQUIRE(j.at("legs").size() == 2);
        CHECK(j.at("legs")[0].at("leg") == "retrieval");
        CHECK(j.at("legs")[1].at("leg") == "answer_rag");
        CHECK(j.at("failed") == false);
    }

    SUBCASE("self-route escalation shows up in the legs") {
        auto res = cli.Post("/answer", R"({"case_id": "q2", "policy": "selfroute"})",
                            "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 200);
        const json j = json::parse(res->body);
        CHECK(j.at("route") == "LC");
        CHECK(j.at("answer") == "The toll house opened the following year.");
        CHECK(j.at("legs").size() == 3);
    }

    SUBCASE("an unknown policy is a schema error") {
        auto res = cli.Post("/answer", R"({"case_id": "q1", "policy": "dice"})",
                            "application/json");
        REQUIRE(res);
        CHECK(res->status == 400);
    }

    SUBCASE("judging returns per-arm scores keyed to the arms, not the slots") {
        const json body{{"case_id", "q1"},
                        {"answer_rag", "It opened in 1867."},
                        {"answer_lc", "No date is given."}};
        auto res = cli.Post("/judge", body.dump(), "application/json");
        REQUIRE(res);
        REQUIRE(res->status == 200);
        const json j = json::parse(res->body);
        CHECK(j.at("case_id") == "q1");
        const double hi = std::max(j.at("u_rag").get<double>(), j.at("u_lc").get<double>());
        const double lo = std::min(j.at("u_rag").get<double>(), j.at("u_lc").get<double>());
        CHECK(hi == doctest::Approx(4.0));
        CHECK(lo == doctest::Approx(2.0));
        CHECK(j.at("clamped") == false);
        CHECK(j.contains("rag_in_slot_a"));
    }

    SUBCASE("the metrics endpoint counts what actually happened") {
        cli.Post("/route", R"({"case_id": "q1"})", "application/json");
        cli.Post("/answer", R"({"case_id": "q1", "policy": "always_rag"})", "application/json");
        cli.Post("/route", R"({"case_id": "missing"})", "application/json");
        auto res = cli.Get("/metrics");
        REQUIRE(res);
        REQUIRE(res->status == 200);
        const json j = json::parse(res->body);
        CHECK(j.at("requests").at("route").get<int>() == 2);
        CHECK(j.at("requests").at("answer").get<int>() == 1);
        CHECK(j.at("parse").at("clean").get<int>() == 1);
        CHECK(j.at("routes").at("rag").get<int>() == 2);
        CHECK(j.at("failures").get<int>() == 1);
    }

    gw.stop();
}

TEST_CASE("the service picks a fresh ephemeral port per instance") {
    auto cfg = mock_config();
    Gateway a(cfg), b(cfg);
    a.set_corpus(small_corpus());
    b.set_corpus(small_corpus());
    a.start();
    b.start();
    CHECK(a.port() > 0);
    CHECK(b.port() > 0);
    CHECK(a.port() != b.port());
    a.stop();
    b.stop();
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

TEST_CASE("an experiment over four policies with pre-judged arms") {
    const auto out_dir = fresh_dir("raglc_experiment_a");
    const auto corp = small_corpus(4);

    ExperimentBackends backends;
    auto router = std::make_shared<pipeline::MockChatClient>();
    auto answerer = std::make_shared<pipeline::MockChatClient>();
    backends.router = router;
    backends.answerer = answerer;

    // Scripted decisions: RAG, RAG, LC, RAG — matching the ideal labels
    // derived from the paired fixture below except on nothing (all ideal).
    router->add_keyed("router_decision/q1", {decision_text(Route::RAG)});
    router->add_keyed("router_decision/q2", {decision_text(Route::RAG)});
    router->add_keyed("router_decision/q3", {decision_text(Route::LC)});
    router->add_keyed("router_decision/q4", {decision_text(Route::RAG)});

    // Per-case consumption, in policy order (always_rag, always_lc,
    // selfroute, preroute): the retrieval arm answers three times for the
    // RAG-decided cases, twice for q3 (whose self-route reply escalates).
    for (const std::string id : {"q1", "q2", "q4"}) {
        answerer->add_keyed_sequence("selfroute_qa/" + id,
                                     {{"found the date"}, {"found the date"}, {"found the date"}});
        answerer->add_keyed("lc_answer/" + id, {"full read answer"});
    }
    answerer->add_keyed_sequence("selfroute_qa/q3", {{"found the date"}, {"Unanswerable."}});
    answerer->add_keyed_sequence("lc_answer/q3",
                                 {{"full read answer"}, {"full read answer"}, {"full read answer"}});

    ExperimentOptions opts;
    opts.policies = {"always_rag", "always_lc", "selfroute", "preroute"};
    opts.out_dir = out_dir;
    auto mk = [](const char* id, double u_rag, double u_lc) {
        eval::PairedOutcome po;
        po.case_id = id;
        po.u_rag = u_rag;
        po.u_lc = u_lc;
        return po;
    };
    opts.paired = {{"q1", mk("q1", 4, 2)},
                   {"q2", mk("q2", 2, 2)},
                   {"q3", mk("q3", 2, 4)},
                   {"q4", mk("q4", 3, 1)}};

    const auto report = run_experiment(mock_config(), corp, opts, backends);

    REQUIRE(report.policies.size() == 4);
    CHECK(report.judged_cases == 0);  // arms were pre-judged

    const auto& always_rag = report.policies[0];
    CHECK(always_rag.policy == "always_rag");
    CHECK(always_rag.metrics.n == 4);
    CHECK(always_rag.metrics.qa_score == doctest::Approx(2.75));
    CHECK(always_rag.metrics.lc_rate == doctest::Approx(0.0));
    CHECK(always_rag.metrics.route_accuracy == doctest::Approx(0.75));
    CHECK(always_rag.cost.p_lc == doctest::Approx(0.0));
    CHECK(always_rag.cost.mean_total > 0.0);
    CHECK(always_rag.cost.decomposition_gap == doctest::Approx(0.0).epsilon(1e-12));

    const auto& always_lc = report.policies[1];
    CHECK(always_lc.metrics.qa_score == doctest::Approx(2.25));
    CHECK(always_lc.metrics.lc_rate == doctest::Approx(1.0));
    CHECK(always_lc.metrics.route_accuracy == doctest::Approx(0.25));
    CHECK(always_lc.cost.p_lc == doctest::Approx(1.0));
    CHECK(always_lc.cost.mean_answer_lc > 0.0);
    CHECK(always_lc.cost.mean_answer_rag == doctest::Approx(0.0));

    const auto& selfroute = report.policies[2];
    CHECK(selfroute.metrics.qa_score == doctest::Approx(3.25));
    CHECK(selfroute.metrics.lc_rate == doctest::Approx(0.25));
    CHECK(selfroute.metrics.route_accuracy == doctest::Approx(1.0));

    const auto& preroute = report.policies[3];
    CHECK(preroute.metrics.qa_score == doctest::Approx(3.25));
    CHECK(preroute.metrics.lc_rate == doctest::Approx(0.25));
    CHECK(preroute.metrics.route_accuracy == doctest::Approx(1.0));
    // The router leg shows up in the cost decomposition.
    CHECK(preroute.cost.mean_route > 0.0);

    // Everything lands on disk for later inspection.
    CHECK(fs::exists(out_dir / "table.txt"));
    for (const auto& policy : opts.policies) {
        CAPTURE(policy);
        CHECK(fs::exists(out_dir / policy / "outcomes.jsonl"));
        CHECK(fs::exists(out_dir / policy / "metrics.json"));
        CHECK(fs::exists(out_dir / policy / "costs.json"));
    }
    std::ifstream outcomes(out_dir / "preroute" / "outcomes.jsonl");
    std::string line;
    std::size_t rows = 0;
    while (std::getline(outcomes, line)) {
        const json j = json::parse(line);
        CHECK(j.at("policy") == "preroute");
        ++rows;
    }
    CHECK(rows == 4);

    CHECK(report.table.find("always_rag") != std::string::npos);
    CHECK(report.table.find("2.75") != std::string::npos);
    CHECK(report.table.find("2.25") != std::string::npos);
    CHECK(report.table.find("100.0") != std::string::npos);
    CHECK(report.table.find("QA") != std::string::npos);
}

TEST_CASE("without pre-judged arms the runner judges live and skips failures") {
    const auto out_dir = fresh_dir("raglc_experiment_b");
    const auto corp = small_corpus(3);  // q3 gets no scripts: it must fail gracefully

    ExperimentBackends backends;
    auto answerer = std::make_shared<pipeline::MockChatClient>();
    auto judge = std::make_shared<pipeline::MockChatClient>();
    backends.answerer = answerer;
    backends.judge = judge;

    for (const std::string id : {"q1", "q2"}) {
        answerer->add_keyed_sequence("selfroute_qa/" + id,
                                     {{"retrieved answer"}, {"retrieved answer"}});
        answerer->add_keyed("lc_answer/" + id, {"full document answer"});
    }
    judge->add_keyed("judge_standard/q1",
                     {R"({"analysis": "close call", "score_a": 3, "score_b": 2})"});
    judge->add_keyed("judge_standard/q2",
                     {R"({"analysis": "overshoot", "score_a": 9, "score_b": 1})"});

    ExperimentOptions opts;
    opts.policies = {"always_rag"};
    opts.out_dir = out_dir;

    const auto report = run_experiment(mock_config(), corp, opts, backends);
    CHECK(report.judged_cases == 2);
    CHECK(report.judge_clamp_events == 1);
    REQUIRE(report.policies.size() == 1);
    CHECK(report.policies[0].metrics.n == 2);
    CHECK(report.policies[0].metrics.failures == 1);  // q3 had no scripted answer
    CHECK(report.policies[0].cost.cases == 2);
}

TEST_CASE("experiments refuse to start without the backends they need") {
    const auto corp = small_corpus(1);
    ExperimentOptions opts;
    opts.policies = {"always_rag"};
    opts.out_dir = fresh_dir("raglc_experiment_c");

    ExperimentBackends none;
    // No answerer at all.
    CHECK_THROWS_AS(run_experiment(mock_config(), corp, opts, none), std::invalid_argument);

    // Judging requested (no paired) but no judge wired.
    ExperimentBackends only_answerer;
    only_answerer.answerer = std::make_shared<pipeline::MockChatClient>();
    CHECK_THROWS_AS(run_experiment(mock_config(), corp, opts, only_answerer),
                    std::invalid_argument);

    // No policies.
    ExperimentBackends full;
    full.answerer = std::make_shared<pipeline::MockChatClient>();
    full.judge = std::make_shared<pipeline::MockChatClient>();
    ExperimentOptions empty_policies;
    empty_policies.out_dir = opts.out_dir;
    CHECK_THROWS_AS(run_experiment(mock_config(), corp, empty_policies, full),
                    std::invalid_argument);
}
