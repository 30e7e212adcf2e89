#include "raglc/policy.hpp"

#include <algorithm>

#include "raglc/util.hpp"

namespace raglc::policy {

std::string_view decision_source_str(DecisionSource s) {
    switch (s) {
        case DecisionSource::fixed: return "fixed";
        case DecisionSource::router_model: return "router_model";
        case DecisionSource::failure_fallback: return "failure_fallback";
    }
    return "fixed";
}

RetrieveFn make_retriever(const pipeline::RagConfig& cfg, const Tokenizer& tok) {
    cfg.validate();
    return [cfg, &tok, embed = pipeline::hashed_bag_embedder(),
            rerank = pipeline::token_overlap_reranker()](const corpus::QueryCase& c,
                                                         const corpus::Document& doc) {
        const auto chunks = pipeline::chunk_document(doc, cfg, tok);
        return pipeline::retrieve(c.query, chunks, cfg, embed, rerank);
    };
}

RoutingOutcome route_always(Route fixed, const corpus::QueryCase& c) {
    RoutingOutcome o;
    o.case_id = c.id;
    o.policy = fixed == Route::RAG ? "always_rag" : "always_lc";
    o.route = fixed;
    o.decision_source = DecisionSource::fixed;
    return o;
}

bool is_unanswerable(const std::string& answer) {
    return util::contains_ci(answer, "unanswerable");
}

namespace {

const Tokenizer& env_tokenizer(const AnswerEnv& env) {
    return env.tok ? *env.tok : default_tokenizer();
}

void check_answer_env(const AnswerEnv& env, bool needs_retrieval) {
    if (!env.answerer) throw std::invalid_argument("answer env: answerer backend must be set");
    if (env.answer_model.empty())
        throw std::invalid_argument("answer env: answer_model must be set");
    if (needs_retrieval && !env.retrieve)
        throw std::invalid_argument("answer env: retrieve hook must be set");
}

/// Runs the RAG leg pair (retrieval + grounded answer) and appends its cost
/// legs. Returns the reply text.
std::string answer_with_rag(RoutingOutcome& o, const corpus::QueryCase& c,
                            const corpus::Document& doc, const AnswerEnv& env) {
    const pipeline::RetrievalResult hits = env.retrieve(c, doc);
    std::vector<std::string> texts;
    texts.reserve(hits.chunks.size());
    for (const auto& sc : hits.chunks) texts.push_back(sc.chunk.text);

    const auto bundle = promptkit::render_selfroute_prompt(c, texts, env.flavor);

    pipeline::ChatRequest req;
    req.model = env.answer_model;
    req.messages.push_back({"user", bundle.user});
    req.max_output_tokens = static_cast<int>(env.answer_budget);
    req.key = std::string(promptkit::template_id_str(bundle.template_id)) + "/" + c.id;
    const pipeline::ChatResponse resp = env.answerer->complete(req);

    o.legs.push_back({econ::Leg::retrieval, env.rag.embed_model, 0, 0, 0, 0, 0});
    o.legs.push_back(
        {econ::Leg::answer_rag, env.answer_model, resp.input_tokens, resp.output_tokens, 0, 0, 0});
    return resp.text;
}

/// Runs the long-context leg and appends its cost leg. Returns the reply.
std::string answer_with_lc(RoutingOutcome& o, const corpus::QueryCase& c,
                           const corpus::Document& doc, const AnswerEnv& env) {
    auto assembly =
        pipeline::assemble_lc_prompt(c, doc, env.window, env.answer_budget, env_tokenizer(env));
    o.lc_truncated = assembly.truncated;

    pipeline::ChatRequest req = std::move(assembly.request);
    req.model = env.answer_model;
    req.key = "lc_answer/" + c.id;
    const pipeline::ChatResponse resp = env.answerer->complete(req);

    o.legs.push_back(
        {econ::Leg::answer_lc, env.answer_model, resp.input_tokens, resp.output_tokens, 0, 0, 0});
    return resp.text;
}

}  // namespace

void execute_answer(RoutingOutcome& outcome, const corpus::QueryCase& c,
                    const corpus::Document& doc, const AnswerEnv& env) {
    check_answer_env(env, outcome.route == Route::RAG);
    try {
        outcome.answer = outcome.route == Route::RAG ? answer_with_rag(outcome, c, doc, env)
                                                     : answer_with_lc(outcome, c, doc, env);
    } catch (const std::exception& e) {
        outcome.failed = true;
        outcome.error = e.what();
    }
}

RoutingOutcome route_selfroute(const corpus::QueryCase& c, const corpus::Document& doc,
                               const AnswerEnv& env) {
    check_answer_env(env, true);

    RoutingOutcome o;
    o.case_id = c.id;
    o.policy = "selfroute";
    o.route = Route::RAG;
    o.decision_source = DecisionSource::failure_fallback;

    std::string rag_answer;
    try {
        rag_answer = answer_with_rag(o, c, doc, env);
    } catch (const std::exception& e) {
        o.failed = true;
        o.error = e.what();
        return o;
    }

    if (!is_unanswerable(rag_answer)) {
        o.answer = rag_answer;
        return o;
    }

    // The grounded pass declared the question unanswerable: escalate.
    o.route = Route::LC;
    try {
        o.answer = answer_with_lc(o, c, doc, env);
    } catch (const std::exception& e) {
        o.failed = true;
        o.error = e.what();
    }
    return o;
}

namespace {

void check_router_env(const RouterEnv& env) {
    if (!env.router) throw std::invalid_argument("router env: router backend must be set");
    if (env.router_model.empty())
        throw std::invalid_argument("router env: router_model must be set");
    if (env.answer_model.empty())
        throw std::invalid_argument("router env: answer_model must be set");
}

pipeline::ChatRequest router_request(const corpus::QueryCase& c,
                                     const corpus::DocumentMeta& meta, const RouterEnv& env,
                                     double temperature) {
    const auto bundle = promptkit::render_router_prompt(
        c, meta, {env.rag, env.answer_model, env.answer_window}, env.mask);
    pipeline::ChatRequest req;
    req.model = env.router_model;
    req.messages.push_back({"user", bundle.user});
    req.max_output_tokens = env.max_output_tokens;
    req.temperature = temperature;
    req.thinking = env.thinking;
    req.key = std::string(promptkit::template_id_str(bundle.template_id)) + "/" + c.id;
    return req;
}

}  // namespace

RoutingOutcome route_preroute(const corpus::QueryCase& c, const corpus::DocumentMeta& meta,
                              const RouterEnv& env) {
    check_router_env(env);

    RoutingOutcome o;
    o.case_id = c.id;
    o.policy = "preroute";

    pipeline::ChatResponse resp;
    try {
        resp = env.router->complete(router_request(c, meta, env, env.temperature));
    } catch (const std::exception& e) {
        // A dead router must not kill the query: default to the cheap arm.
        o.route = Route::RAG;
        o.decision_source = DecisionSource::failure_fallback;
        o.parse_status = promptkit::ParseStatus::fallback;
        o.error = e.what();
        return o;
    }

    const auto decision = promptkit::parse_route_decision(resp.text);
    o.route = decision.route;
    o.trace = decision.trace;
    o.parse_status = decision.parse_status;
    o.decision_source = DecisionSource::router_model;
    o.legs.push_back(
        {econ::Leg::route, env.router_model, resp.input_tokens, resp.output_tokens, 0, 0, 0});
    return o;
}

Route majority_route(std::span<const Route> decisions) {
    std::size_t lc = 0;
    for (Route r : decisions)
        if (r == Route::LC) ++lc;
    // Strict majority for LC; ties keep the cheaper arm.
    return lc * 2 > decisions.size() ? Route::LC : Route::RAG;
}

BonOutcome route_bon(const corpus::QueryCase& c, const corpus::DocumentMeta& meta,
                     const RouterEnv& env, const BonOptions& opts) {
    check_router_env(env);
    if (opts.n == 0) throw std::invalid_argument("route_bon: n must be >= 1");

    BonOutcome out;
    out.decisions.reserve(opts.n);
    for (std::size_t i = 0; i < opts.n; ++i) {
        const pipeline::ChatResponse resp =
            env.router->complete(router_request(c, meta, env, opts.temperature));
        const auto decision = promptkit::parse_route_decision(resp.text);
        out.decisions.push_back(decision.route);
        out.statuses.push_back(decision.parse_status);
        out.legs.push_back(
            {econ::Leg::route, env.router_model, resp.input_tokens, resp.output_tokens, 0, 0, 0});
    }
    out.aggregate = majority_route(out.decisions);
    return out;
}

}  // namespace raglc::policy
