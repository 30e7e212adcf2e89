#include <memory>

#include "doctest.h"
#include "raglc/pipeline.hpp"
#include "raglc/policy.hpp"
#include "raglc/promptkit.hpp"
#include "raglc/types.hpp"

using namespace raglc;
using namespace raglc::policy;

namespace {

corpus::QueryCase mini_case(const std::string& id = "q1") {
    corpus::QueryCase c;
    c.id = id;
    c.query = "When did the toll house open?";
    c.doc_id = "chronicle";
    c.task_type = corpus::TaskType::parse("location");
    c.ground_truth = "the year after the arch was keyed";
    return c;
}

corpus::Document mini_doc() {
    corpus::Document d;
    d.doc_id = "chronicle";
    d.title = "The Kessel Chronicle";
    d.doc_type = corpus::DocType::parse("novel");
    d.body =
        "The stone bridge across the Kessel had stood unfinished for a decade. "
        "By the autumn of 1866 the last arch was keyed. "
        "The toll house opened the following year and trade resumed. "
        "Barges carried grain downstream every market day thereafter.";
    d.token_length = default_tokenizer().count(d.body);
    return d;
}

corpus::DocumentMeta mini_meta() {
    corpus::DocumentMeta m;
    m.title = "The Kessel Chronicle";
    m.doc_type = "novel";
    m.token_length = 96452;
    m.head_snippet = "The stone bridge across the Kessel had stood unfinished for a decade.";
    m.fits_window = true;
    return m;
}

pipeline::RagConfig mini_rag() {
    pipeline::RagConfig cfg;
    cfg.chunk_size = 12;
    cfg.chunk_overlap = 2;
    cfg.rerank_size = 2;
    return cfg;
}

struct CountingRetriever {
    int calls = 0;
    RetrieveFn wrap(const pipeline::RagConfig& cfg) {
        auto inner = make_retriever(cfg);
        return [this, inner](const corpus::QueryCase& c, const corpus::Document& d) {
            ++calls;
            return inner(c, d);
        };
    }
};

AnswerEnv mini_env(pipeline::ChatClient* answerer, RetrieveFn retrieve) {
    AnswerEnv env;
    env.answerer = answerer;
    env.answer_model = "qwen3-235b";
    env.retrieve = std::move(retrieve);
    env.rag = mini_rag();
    env.window = 128000;
    env.answer_budget = 64;
    return env;
}

}  // namespace

TEST_CASE("fixed policies stamp their route and make no calls") {
    const auto rag = route_always(Route::RAG, mini_case());
    CHECK(rag.policy == "always_rag");
    CHECK(rag.route == Route::RAG);
    CHECK(rag.decision_source == DecisionSource::fixed);
    CHECK(rag.legs.empty());
    CHECK_FALSE(rag.failed);

    const auto lc = route_always(Route::LC, mini_case());
    CHECK(lc.policy == "always_lc");
    CHECK(lc.route == Route::LC);
}

TEST_CASE("executing a RAG answer retrieves once and answers over the chunks") {
    pipeline::MockChatClient mock;
    mock.add_keyed("selfroute_qa/q1", {"the following year"});
    CountingRetriever counter;
    auto env = mini_env(&mock, counter.wrap(mini_rag()));

    auto outcome = route_always(Route::RAG, mini_case());
    execute_answer(outcome, mini_case(), mini_doc(), env);

    CHECK_FALSE(outcome.failed);
    CHECK(outcome.answer == "the following year");
    CHECK(counter.calls == 1);
    REQUIRE(outcome.legs.size() == 2);
    CHECK(outcome.legs[0].leg == econ::Leg::retrieval);
    CHECK(outcome.legs[1].leg == econ::Leg::answer_rag);
    CHECK(outcome.legs[1].model == "qwen3-235b");
    CHECK(outcome.legs[1].input_tokens > 0);
}

TEST_CASE("executing an LC answer feeds the whole document, no retrieval") {
    pipeline::MockChatClient mock;
    mock.add_keyed("lc_answer/q1", {"the year after the arch"});
    CountingRetriever counter;
    auto env = mini_env(&mock, counter.wrap(mini_rag()));

    auto outcome = route_always(Route::LC, mini_case());
    execute_answer(outcome, mini_case(), mini_doc(), env);

    CHECK_FALSE(outcome.failed);
    CHECK(counter.calls == 0);
    REQUIRE(outcome.legs.size() == 1);
    CHECK(outcome.legs[0].leg == econ::Leg::answer_lc);
    CHECK_FALSE(outcome.lc_truncated);
}

TEST_CASE("answer backend failure marks the outcome failed, never throws") {
    pipeline::MockChatClient mock;  // empty script
    CountingRetriever counter;
    auto env = mini_env(&mock, counter.wrap(mini_rag()));
    auto outcome = route_always(Route::RAG, mini_case());
    execute_answer(outcome, mini_case(), mini_doc(), env);
    CHECK(outcome.failed);
    CHECK_FALSE(outcome.error.empty());
}

TEST_CASE("self-route stays on RAG when the answer is usable") {
    pipeline::MockChatClient mock;
    mock.add_keyed("selfroute_qa/q1", {"the following year"});
    CountingRetriever counter;
    auto env = mini_env(&mock, counter.wrap(mini_rag()));

    const auto outcome = route_selfroute(mini_case(), mini_doc(), env);
    CHECK(outcome.route == Route::RAG);
    CHECK(outcome.policy == "selfroute");
    CHECK(outcome.decision_source == DecisionSource::failure_fallback);
    CHECK(outcome.answer == "the following year");
    CHECK(counter.calls == 1);
    REQUIRE(outcome.legs.size() == 2);  // retrieval + RAG answer, no LC leg
}

TEST_CASE("self-route escalates to LC on an unanswerable reply, keeping both legs") {
    pipeline::MockChatClient mock;
    mock.add_keyed("selfroute_qa/q1", {"Unanswerable."});
    mock.add_keyed("lc_answer/q1", {"the year after the arch was keyed"});
    CountingRetriever counter;
    auto env = mini_env(&mock, counter.wrap(mini_rag()));

    const auto outcome = route_selfroute(mini_case(), mini_doc(), env);
    CHECK(outcome.route == Route::LC);
    CHECK(outcome.decision_source == DecisionSource::failure_fallback);
    CHECK(outcome.answer == "the year after the arch was keyed");
    CHECK(counter.calls == 1);
    REQUIRE(outcome.legs.size() == 3);
    CHECK(outcome.legs[0].leg == econ::Leg::retrieval);
    CHECK(outcome.legs[1].leg == econ::Leg::answer_rag);
    CHECK(outcome.legs[2].leg == econ::Leg::answer_lc);
}

TEST_CASE("the unanswerable trigger is a case-insensitive substring") {
    CHECK(is_unanswerable("unanswerable"));
    CHECK(is_unanswerable("The question is UNANSWERABLE based on the text."));
    CHECK(is_unanswerable("\"Unanswerable\"."));
    CHECK_FALSE(is_unanswerable("The toll house opened in 1867."));
    CHECK_FALSE(is_unanswerable(""));
}

// ---------------------------------------------------------------------------
// Pre-Route
// ---------------------------------------------------------------------------

namespace {

RouterEnv mini_router_env(pipeline::ChatClient* router) {
    RouterEnv env;
    env.router = router;
    env.router_model = "qwen3-1.7b";
    env.answer_model = "qwen3-235b";
    env.answer_window = 128000;
    env.rag = mini_rag();
    return env;
}

}  // namespace

TEST_CASE("pre-route makes exactly one router call and no retrieval") {
    pipeline::MockChatClient mock;
    mock.add_keyed("router_decision/q1",
                   {"<thinking>\n  <step1>localized fact</step1>\n  "
                    "<reflection>retrieval will find it</reflection>\n  "
                    "<decision>RAG</decision>\n</thinking>"});

    const auto outcome = route_preroute(mini_case(), mini_meta(), mini_router_env(&mock));
    CHECK(outcome.route == Route::RAG);
    CHECK(outcome.policy == "preroute");
    CHECK(outcome.decision_source == DecisionSource::router_model);
    REQUIRE(outcome.parse_status.has_value());
    CHECK(*outcome.parse_status == promptkit::ParseStatus::clean);
    REQUIRE(outcome.trace.has_value());
    CHECK(outcome.trace->steps[0] == "localized fact");
    CHECK(mock.calls() == 1);
    REQUIRE(outcome.legs.size() == 1);
    CHECK(outcome.legs[0].leg == econ::Leg::route);
    CHECK(outcome.legs[0].model == "qwen3-1.7b");
}

TEST_CASE("a LONG_CONTEXT decision routes to LC") {
    pipeline::MockChatClient mock;
    mock.add_keyed("router_decision/q1", {"<decision>LONG_CONTEXT</decision>"});
    const auto outcome = route_preroute(mini_case(), mini_meta(), mini_router_env(&mock));
    CHECK(outcome.route == Route::LC);
}

TEST_CASE("garbled router output repairs from the tail, never throws") {
    pipeline::MockChatClient mock;
    mock.add_keyed("router_decision/q1", {"after much thought the best choice is LC"});
    const auto outcome = route_preroute(mini_case(), mini_meta(), mini_router_env(&mock));
    CHECK(outcome.route == Route::LC);
    CHECK(*outcome.parse_status == promptkit::ParseStatus::repaired);
    CHECK(outcome.decision_source == DecisionSource::router_model);
}

TEST_CASE("router backend failure falls back to RAG and records the error") {
    pipeline::MockChatClient mock;  // empty: complete() throws
    const auto outcome = route_preroute(mini_case(), mini_meta(), mini_router_env(&mock));
    CHECK(outcome.route == Route::RAG);
    CHECK(outcome.decision_source == DecisionSource::failure_fallback);
    REQUIRE(outcome.parse_status.has_value());
    CHECK(*outcome.parse_status == promptkit::ParseStatus::fallback);
    CHECK_FALSE(outcome.failed);  // the policy still produced a route
    CHECK_FALSE(outcome.error.empty());
    CHECK(outcome.legs.empty());  // nothing billable happened
}

TEST_CASE("the router request carries the env's sampling parameters") {
    pipeline::MockChatClient mock;
    mock.add_keyed("router_decision/q1", {"<decision>RAG</decision>"});
    auto env = mini_router_env(&mock);
    env.temperature = 0.3;
    env.max_output_tokens = 512;
    const auto outcome = route_preroute(mini_case(), mini_meta(), env);
    CHECK(outcome.route == Route::RAG);
    // The mock consumed the keyed entry, proving the key scheme matched.
    CHECK(mock.calls_for_key("router_decision/q1") == 1);
}

// ---------------------------------------------------------------------------
// Best-of-N
// ---------------------------------------------------------------------------

TEST_CASE("best-of-N draws n times and aggregates by majority") {
    pipeline::MockChatClient mock;
    mock.add_keyed_sequence("router_decision/q1",
                            {{"<decision>RAG</decision>"},
                             {"<decision>LONG_CONTEXT</decision>"},
                             {"<decision>LONG_CONTEXT</decision>"},
                             {"<decision>LONG_CONTEXT</decision>"}});
    BonOptions opts;
    opts.n = 4;
    const auto got = route_bon(mini_case(), mini_meta(), mini_router_env(&mock), opts);
    REQUIRE(got.decisions.size() == 4);
    CHECK(got.decisions[0] == Route::RAG);
    CHECK(got.decisions[1] == Route::LC);
    CHECK(got.aggregate == Route::LC);  // 3 of 4
    CHECK(got.legs.size() == 4);
    CHECK(mock.calls() == 4);
}

TEST_CASE("a 2-2 split prefers RAG") {
    pipeline::MockChatClient mock;
    mock.add_keyed_sequence("router_decision/q1",
                            {{"<decision>LONG_CONTEXT</decision>"},
                             {"<decision>RAG</decision>"},
                             {"<decision>LONG_CONTEXT</decision>"},
                             {"<decision>RAG</decision>"}});
    BonOptions opts;
    opts.n = 4;
    const auto got = route_bon(mini_case(), mini_meta(), mini_router_env(&mock), opts);
    CHECK(got.aggregate == Route::RAG);
}

TEST_CASE("a failed draw aborts the batch") {
    pipeline::MockChatClient mock;
    mock.add_keyed("router_decision/q1", {"<decision>RAG</decision>"});  // only 1 of 2
    BonOptions opts;
    opts.n = 2;
    CHECK_THROWS_AS(route_bon(mini_case(), mini_meta(), mini_router_env(&mock), opts),
                    pipeline::ChatError);
}

TEST_CASE("n must be at least one") {
    pipeline::MockChatClient mock;
    BonOptions opts;
    opts.n = 0;
    CHECK_THROWS_AS(route_bon(mini_case(), mini_meta(), mini_router_env(&mock), opts),
                    std::invalid_argument);
}

TEST_CASE("majority_route tie-breaks toward RAG") {
    CHECK(majority_route(std::vector<Route>{Route::RAG}) == Route::RAG);
    CHECK(majority_route(std::vector<Route>{Route::LC}) == Route::LC);
    CHECK(majority_route(std::vector<Route>{Route::LC, Route::RAG}) == Route::RAG);
    CHECK(majority_route(std::vector<Route>{Route::LC, Route::LC, Route::RAG}) == Route::LC);
}
