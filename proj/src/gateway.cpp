#include "raglc/gateway.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "raglc/distill.hpp"
#include "raglc/util.hpp"

namespace raglc::gateway {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::size_t GatewayConfig::window_for(const std::string& model) const {
    auto it = model_windows.find(model);
    return it == model_windows.end() ? answer_window : it->second;
}

void GatewayConfig::validate() const {
    rag.validate();
    static const char* kPolicies[] = {"always_rag", "always_lc", "selfroute", "preroute"};
    bool known = false;
    for (const char* p : kPolicies) known = known || policy == p;
    if (!known) throw SchemaError("config: unknown policy \"" + policy + "\"");
    if (head_tokens == 0) throw SchemaError("config: head_tokens must be > 0");
    if (answer_window == 0) throw SchemaError("config: answer_window must be > 0");
    if (max_in_flight == 0) throw SchemaError("config: max_in_flight must be > 0");
    if (cost_accounting) {
        // Each priced model tag must resolve; failing at startup beats
        // failing halfway through a run.
        for (const std::string& m : {router.model, answerer.model}) {
            if (m.empty()) continue;
            pricing.lookup(m);  // throws UnknownModel
        }
    }
    for (const auto& b : {&router, &answerer, &judge}) {
        if (b->kind != "mock" && b->kind != "http")
            throw SchemaError("config: backend kind must be \"mock\" or \"http\", got \"" +
                              b->kind + "\"");
    }
}

namespace {

BackendConfig backend_from_json(const json& j) {
    BackendConfig b;
    b.kind = j.value("kind", b.kind);
    b.model = j.value("model", b.model);
    b.base_url = j.value("base_url", b.base_url);
    b.api_key_env = j.value("api_key_env", b.api_key_env);
    b.script_path = j.value("script", b.script_path);
    b.temperature = j.value("temperature", b.temperature);
    b.thinking = j.value("thinking", b.thinking);
    b.max_output_tokens = j.value("max_output_tokens", b.max_output_tokens);
    b.timeout_seconds = j.value("timeout_seconds", b.timeout_seconds);
    b.retries = j.value("retries", b.retries);
    b.min_interval_ms = j.value("min_interval_ms", b.min_interval_ms);
    return b;
}

void apply_env_overrides(GatewayConfig& cfg) {
    auto env = [](const char* name) -> const char* { return std::getenv(name); };
    if (const char* v = env("RAGLC_HOST")) cfg.host = v;
    if (const char* v = env("RAGLC_PORT")) cfg.port = std::atoi(v);
    if (const char* v = env("RAGLC_SEED")) cfg.seed = std::strtoull(v, nullptr, 10);
    if (const char* v = env("RAGLC_POLICY")) cfg.policy = v;
    if (const char* v = env("RAGLC_META_MODE")) cfg.meta_mode = corpus::meta_mode_parse(v);
    if (const char* v = env("RAGLC_ROUTER_URL")) cfg.router.base_url = v;
    if (const char* v = env("RAGLC_ANSWERER_URL")) cfg.answerer.base_url = v;
    if (const char* v = env("RAGLC_JUDGE_URL")) cfg.judge.base_url = v;
}

}  // namespace

GatewayConfig config_from_json_text(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("config: malformed JSON: ") + e.what());
    }

    GatewayConfig cfg;
    if (j.contains("router")) cfg.router = backend_from_json(j["router"]);
    if (j.contains("answerer")) cfg.answerer = backend_from_json(j["answerer"]);
    if (j.contains("judge")) cfg.judge = backend_from_json(j["judge"]);
    if (j.contains("pricing_file")) {
        std::ifstream in(j["pricing_file"].get<std::string>());
        if (!in) throw SchemaError("config: cannot open pricing_file");
        cfg.pricing = econ::PricingTable::from_json_stream(in);
    }
    cfg.cost_accounting = j.value("cost_accounting", cfg.cost_accounting);
    if (j.contains("rag")) {
        const json& r = j["rag"];
        cfg.rag.chunk_size = r.value("chunk_size", cfg.rag.chunk_size);
        cfg.rag.chunk_overlap = r.value("chunk_overlap", cfg.rag.chunk_overlap);
        cfg.rag.embed_model = r.value("embed_model", cfg.rag.embed_model);
        cfg.rag.rerank_model = r.value("rerank_model", cfg.rag.rerank_model);
        cfg.rag.vector_ratio = r.value("vector_ratio", cfg.rag.vector_ratio);
        cfg.rag.rerank_size = r.value("rerank_size", cfg.rag.rerank_size);
    }
    if (j.contains("meta_mode")) cfg.meta_mode = corpus::meta_mode_parse(j["meta_mode"].get<std::string>());
    cfg.policy = j.value("policy", cfg.policy);
    cfg.head_tokens = j.value("head_tokens", cfg.head_tokens);
    cfg.answer_window = j.value("answer_window", cfg.answer_window);
    if (j.contains("model_windows"))
        for (const auto& [model, w] : j["model_windows"].items())
            cfg.model_windows[model] = w.get<std::size_t>();
    cfg.max_in_flight = j.value("max_in_flight", cfg.max_in_flight);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.host = j.value("host", cfg.host);
    cfg.port = j.value("port", cfg.port);
    cfg.answer_budget = j.value("answer_budget", cfg.answer_budget);

    apply_env_overrides(cfg);
    cfg.validate();
    return cfg;
}

GatewayConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("config: cannot open \"" + path.string() + "\"");
    std::stringstream buf;
    buf << in.rdbuf();
    return config_from_json_text(buf.str());
}

std::shared_ptr<pipeline::ChatClient> make_backend(const BackendConfig& cfg) {
    if (cfg.kind == "mock") {
        if (cfg.script_path.empty()) return std::make_shared<pipeline::MockChatClient>();
        std::ifstream in(cfg.script_path);
        if (!in) throw SchemaError("backend: cannot open script \"" + cfg.script_path + "\"");
        return pipeline::mock_backend(in);
    }
    pipeline::HttpBackendOptions opts;
    opts.base_url = cfg.base_url;
    opts.timeout_seconds = cfg.timeout_seconds;
    opts.retries = cfg.retries;
    opts.min_interval_ms = cfg.min_interval_ms;
    if (!cfg.api_key_env.empty())
        if (const char* key = std::getenv(cfg.api_key_env.c_str())) opts.api_key = key;
    return std::make_shared<pipeline::HttpChatClient>(std::move(opts));
}

// ---------------------------------------------------------------------------
// JSON shapes shared by the service and the experiment runner
// ---------------------------------------------------------------------------

namespace {

json trace_to_json(const promptkit::ReasoningTrace& t) {
    json steps = json::object();
    static constexpr const char* kStepTags[6] = {"step1", "step2", "step3",
                                                 "step4", "step5", "step6_efficiency"};
    for (int i = 0; i < 6; ++i)
        if (!t.steps[i].empty()) steps[kStepTags[i]] = t.steps[i];
    if (!t.reflection.empty()) steps["reflection"] = t.reflection;
    if (!t.decision_text.empty()) steps["decision"] = t.decision_text;
    return steps;
}

json cost_to_json(const econ::CostRecord& r) {
    return json{{"leg", std::string(econ::leg_str(r.leg))},
                {"model", r.model},
                {"input_tokens", r.input_tokens},
                {"output_tokens", r.output_tokens},
                {"usd_input", r.usd_input},
                {"usd_output", r.usd_output},
                {"usd_total", r.usd_total}};
}

json outcome_to_json(const policy::RoutingOutcome& o, const econ::PricingTable& pricing) {
    json legs = json::array();
    double total = 0.0;
    for (const auto& leg : o.legs) {
        const auto priced =
            econ::price_leg(leg.leg, leg.model, leg.input_tokens, leg.output_tokens, pricing);
        total += priced.usd_total;
        legs.push_back(cost_to_json(priced));
    }
    json j{{"case_id", o.case_id},
           {"policy", o.policy},
           {"route", std::string(route_str(o.route))},
           {"decision_source", std::string(policy::decision_source_str(o.decision_source))},
           {"legs", legs},
           {"usd_total", total},
           {"failed", o.failed}};
    if (o.parse_status) j["parse_status"] = std::string(promptkit::parse_status_str(*o.parse_status));
    if (o.trace) j["trace"] = trace_to_json(*o.trace);
    if (!o.answer.empty()) j["answer"] = o.answer;
    if (o.lc_truncated) j["lc_truncated"] = true;
    if (!o.error.empty()) j["error"] = o.error;
    return j;
}

corpus::QueryCase case_from_json(const json& j) {
    corpus::QueryCase c;
    c.id = j.value("id", std::string("adhoc"));
    if (!j.contains("query") || !j["query"].is_string() || j["query"].get<std::string>().empty())
        throw SchemaError("case: missing or empty \"query\"");
    c.query = j["query"].get<std::string>();
    c.doc_id = j.value("doc_id", std::string());
    c.task_type = corpus::TaskType::parse(j.value("task_type", std::string("other")));
    if (j.contains("context_bucket"))
        c.context_bucket = corpus::ContextBucket::parse(j["context_bucket"].get<std::string>());
    c.ground_truth = j.value("ground_truth", std::string());
    return c;
}

corpus::DocumentMeta meta_from_json(const json& j) {
    corpus::DocumentMeta m;
    if (j.contains("title") && j["title"].is_string()) m.title = j["title"].get<std::string>();
    if (j.contains("doc_type") && j["doc_type"].is_string())
        m.doc_type = j["doc_type"].get<std::string>();
    if (!j.contains("token_length"))
        throw SchemaError("meta: missing \"token_length\"");
    m.token_length = j["token_length"].get<std::size_t>();
    m.head_snippet = j.value("head_snippet", std::string());
    if (!j.contains("fits_window")) throw SchemaError("meta: missing \"fits_window\"");
    m.fits_window = j["fits_window"].get<bool>();
    if (j.contains("meta_mode")) m.meta_mode = corpus::meta_mode_parse(j["meta_mode"].get<std::string>());
    return m;
}

promptkit::VariantMask mask_from_json(const json& j) {
    promptkit::VariantMask mask = promptkit::VariantMask::all();
    if (!j.contains("exclude")) return mask;
    for (const auto& item : j["exclude"]) {
        const auto name = item.get<std::string>();
        const auto flag = promptkit::section_flag(name);
        if (!flag) throw SchemaError("variant mask: unknown section \"" + name + "\"");
        mask = mask.without(*flag);
    }
    return mask;
}

}  // namespace

// ---------------------------------------------------------------------------
// Gateway service
// ---------------------------------------------------------------------------

struct Gateway::Impl {
    GatewayConfig cfg;
    corpus::Corpus corpus;
    bool have_corpus = false;
    std::shared_ptr<pipeline::ChatClient> router, answerer, judge;

    httplib::Server server;
    std::thread serve_thread;
    int bound_port = 0;

    // /metrics counters
    std::atomic<std::uint64_t> req_route{0}, req_answer{0}, req_judge{0};
    std::atomic<std::uint64_t> routed_rag{0}, routed_lc{0};
    std::atomic<std::uint64_t> parse_clean{0}, parse_repaired{0}, parse_fallback{0};
    std::atomic<std::uint64_t> judge_clamps{0}, failures{0};

    void bump_parse(promptkit::ParseStatus s) {
        switch (s) {
            case promptkit::ParseStatus::clean: ++parse_clean; break;
            case promptkit::ParseStatus::repaired: ++parse_repaired; break;
            case promptkit::ParseStatus::fallback: ++parse_fallback; break;
        }
    }
    void bump_route(Route r) { r == Route::LC ? ++routed_lc : ++routed_rag; }

    policy::RouterEnv router_env(promptkit::VariantMask mask) {
        policy::RouterEnv env;
        env.router = router.get();
        env.router_model = cfg.router.model;
        env.answer_model = cfg.answerer.model;
        env.answer_window = cfg.window_for(cfg.answerer.model);
        env.rag = cfg.rag;
        env.mask = mask;
        env.temperature = cfg.router.temperature;
        env.thinking =
            cfg.router.thinking ? pipeline::ThinkingMode::on : pipeline::ThinkingMode::off;
        env.max_output_tokens = cfg.router.max_output_tokens;
        return env;
    }

    policy::AnswerEnv answer_env() {
        policy::AnswerEnv env;
        env.answerer = answerer.get();
        env.answer_model = cfg.answerer.model;
        env.retrieve = policy::make_retriever(cfg.rag);
        env.rag = cfg.rag;
        env.window = cfg.window_for(cfg.answerer.model);
        env.answer_budget = cfg.answer_budget;
        return env;
    }

    /// Resolves (case, doc) from a request body: by case_id against the
    /// loaded corpus, or from inline case/document objects.
    std::pair<corpus::QueryCase, corpus::Document> resolve(const json& body) {
        if (body.contains("case_id")) {
            if (!have_corpus) throw SchemaError("no corpus loaded; pass inline case + document");
            const auto& c = corpus.case_by_id(body["case_id"].get<std::string>());
            return {c, corpus.document(c.doc_id)};
        }
        if (!body.contains("case")) throw SchemaError("request needs \"case_id\" or \"case\"");
        corpus::QueryCase c = case_from_json(body["case"]);
        corpus::Document d;
        if (body.contains("document")) {
            const json& dj = body["document"];
            d.doc_id = dj.value("doc_id", c.doc_id.empty() ? "adhoc-doc" : c.doc_id);
            d.title = dj.value("title", std::string());
            d.doc_type = corpus::DocType::parse(dj.value("doc_type", std::string()));
            if (!dj.contains("body")) throw SchemaError("document: missing \"body\"");
            d.body = dj["body"].get<std::string>();
            d.token_length = default_tokenizer().count(d.body);
            if (c.doc_id.empty()) c.doc_id = d.doc_id;
        } else if (have_corpus && !c.doc_id.empty()) {
            d = corpus.document(c.doc_id);
        } else {
            throw SchemaError("request needs a \"document\" or a corpus-backed doc_id");
        }
        return {c, d};
    }

    corpus::DocumentMeta meta_for(const json& body, const corpus::Document& doc) {
        if (body.contains("meta")) return meta_from_json(body["meta"]);
        corpus::MetaOptions opts;
        opts.mode = cfg.meta_mode;
        opts.head_tokens = cfg.head_tokens;
        opts.window = cfg.window_for(cfg.answerer.model);
        if (opts.mode == corpus::MetaMode::generated)
            throw SchemaError("generated meta mode needs an explicit \"meta\" object over HTTP");
        return corpus::make_meta(doc, opts);
    }

    void wire_routes();
};

namespace {

void reply_json(httplib::Response& res, int status, const json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& what) {
    reply_json(res, status, json{{"error", what}});
}

json parse_body(const std::string& body) {
    try {
        return json::parse(body);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed request body: ") + e.what());
    }
}

}  // namespace

void Gateway::Impl::wire_routes() {
    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        reply_json(res, 200, json{{"status", "ok"}});
    });

    server.Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
        json j{{"requests",
                {{"route", req_route.load()},
                 {"answer", req_answer.load()},
                 {"judge", req_judge.load()}}},
               {"routes", {{"rag", routed_rag.load()}, {"lc", routed_lc.load()}}},
               {"parse",
                {{"clean", parse_clean.load()},
                 {"repaired", parse_repaired.load()},
                 {"fallback", parse_fallback.load()}}},
               {"judge_clamps", judge_clamps.load()},
               {"failures", failures.load()}};
        reply_json(res, 200, j);
    });

    // Pure decision endpoint: one router call, no retrieval, no answering.
    server.Post("/route", [this](const httplib::Request& req, httplib::Response& res) {
        ++req_route;
        try {
            const json body = parse_body(req.body);
            corpus::QueryCase c;
            corpus::DocumentMeta meta;
            if (body.contains("meta")) {
                if (!body.contains("case")) throw SchemaError("request needs \"case\"");
                c = case_from_json(body["case"]);
                meta = meta_from_json(body["meta"]);
            } else {
                auto [rc, doc] = resolve(body);
                c = rc;
                meta = meta_for(body, doc);
            }
            auto outcome = policy::route_preroute(c, meta, router_env(mask_from_json(body)));
            if (outcome.parse_status) bump_parse(*outcome.parse_status);
            bump_route(outcome.route);
            reply_json(res, 200, outcome_to_json(outcome, cfg.pricing));
        } catch (const SchemaError& e) {
            ++failures;
            reply_error(res, 400, e.what());
        } catch (const std::exception& e) {
            ++failures;
            reply_error(res, 500, e.what());
        }
    });

    server.Post("/answer", [this](const httplib::Request& req, httplib::Response& res) {
        ++req_answer;
        try {
            const json body = parse_body(req.body);
            auto [c, doc] = resolve(body);
            const std::string policy_name = body.value("policy", cfg.policy);

            policy::RoutingOutcome outcome;
            if (policy_name == "always_rag" || policy_name == "always_lc") {
                outcome = policy::route_always(
                    policy_name == "always_rag" ? Route::RAG : Route::LC, c);
                policy::execute_answer(outcome, c, doc, answer_env());
            } else if (policy_name == "selfroute") {
                outcome = policy::route_selfroute(c, doc, answer_env());
            } else if (policy_name == "preroute") {
                const auto meta = meta_for(body, doc);
                outcome = policy::route_preroute(c, meta, router_env(mask_from_json(body)));
                policy::execute_answer(outcome, c, doc, answer_env());
            } else {
                throw SchemaError("unknown policy \"" + policy_name + "\"");
            }
            if (outcome.parse_status) bump_parse(*outcome.parse_status);
            bump_route(outcome.route);
            if (outcome.failed) ++failures;
            reply_json(res, 200, outcome_to_json(outcome, cfg.pricing));
        } catch (const SchemaError& e) {
            ++failures;
            reply_error(res, 400, e.what());
        } catch (const std::exception& e) {
            ++failures;
            reply_error(res, 500, e.what());
        }
    });

    server.Post("/judge", [this](const httplib::Request& req, httplib::Response& res) {
        ++req_judge;
        try {
            const json body = parse_body(req.body);
            corpus::QueryCase c;
            if (body.contains("case_id")) {
                if (!have_corpus) throw SchemaError("no corpus loaded; pass an inline case");
                c = corpus.case_by_id(body["case_id"].get<std::string>());
            } else if (body.contains("case")) {
                c = case_from_json(body["case"]);
            } else {
                throw SchemaError("request needs \"case_id\" or \"case\"");
            }
            if (!body.contains("answer_rag") || !body.contains("answer_lc"))
                throw SchemaError("request needs \"answer_rag\" and \"answer_lc\"");

            eval::JudgeEnv jenv;
            jenv.judge = judge.get();
            jenv.judge_model = cfg.judge.model;
            jenv.max_output_tokens = cfg.judge.max_output_tokens;
            const auto rubric = promptkit::rubric_for(c.task_type);
            const auto judged =
                eval::judge_pair(c, body["answer_rag"].get<std::string>(),
                                 body["answer_lc"].get<std::string>(), rubric, jenv, cfg.seed);
            if (judged.clamped) ++judge_clamps;
            reply_json(res, 200,
                       json{{"case_id", judged.outcome.case_id},
                            {"u_rag", judged.outcome.u_rag},
                            {"u_lc", judged.outcome.u_lc},
                            {"rag_in_slot_a", judged.rag_in_slot_a},
                            {"clamped", judged.clamped},
                            {"rubric", rubric == promptkit::JudgeRubric::standard
                                           ? "standard"
                                           : "hallucination"}});
        } catch (const SchemaError& e) {
            ++failures;
            reply_error(res, 400, e.what());
        } catch (const std::exception& e) {
            ++failures;
            reply_error(res, 500, e.what());
        }
    });
}

Gateway::Gateway(GatewayConfig cfg) : impl_(std::make_unique<Impl>()) {
    cfg.validate();
    impl_->cfg = std::move(cfg);
}

Gateway::~Gateway() { stop(); }

void Gateway::set_router(std::shared_ptr<pipeline::ChatClient> c) { impl_->router = std::move(c); }
void Gateway::set_answerer(std::shared_ptr<pipeline::ChatClient> c) {
    impl_->answerer = std::move(c);
}
void Gateway::set_judge(std::shared_ptr<pipeline::ChatClient> c) { impl_->judge = std::move(c); }
void Gateway::set_corpus(corpus::Corpus c) {
    impl_->corpus = std::move(c);
    impl_->have_corpus = true;
}

void Gateway::start() {
    auto& im = *impl_;
    if (!im.router) im.router = make_backend(im.cfg.router);
    if (!im.answerer) im.answerer = make_backend(im.cfg.answerer);
    if (!im.judge) im.judge = make_backend(im.cfg.judge);
    im.wire_routes();

    if (im.cfg.port == 0) {
        im.bound_port = im.server.bind_to_any_port(im.cfg.host);
        if (im.bound_port <= 0)
            throw std::runtime_error("gateway: failed to bind an ephemeral port on " + im.cfg.host);
    } else {
        if (!im.server.bind_to_port(im.cfg.host, im.cfg.port))
            throw std::runtime_error("gateway: failed to bind " + im.cfg.host + ":" +
                                     std::to_string(im.cfg.port));
        im.bound_port = im.cfg.port;
    }
    im.serve_thread = std::thread([&im] { im.server.listen_after_bind(); });
    im.server.wait_until_ready();
}

void Gateway::stop() {
    auto& im = *impl_;
    if (im.serve_thread.joinable()) {
        im.server.stop();  // stops accepting; worker pool drains handlers
        im.serve_thread.join();
    }
}

int Gateway::port() const { return impl_->bound_port; }

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

namespace {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions inside
/// fn must be handled by fn itself (outcome records carry failures).
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
    workers = std::max<std::size_t>(1, std::min(workers, n));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    for (auto& t : pool) t.join();
}

std::string format_table(const std::vector<PolicyReport>& reports) {
    char buf[160];
    std::string out = "policy        QA^   LC%v   Acc^\n";
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf, "%-12s %5.2f  %5.1f  %5.1f\n", r.policy.c_str(),
                      r.metrics.qa_score, 100.0 * r.metrics.lc_rate,
                      100.0 * r.metrics.route_accuracy);
        out += buf;
    }
    return out;
}

}  // namespace

ExperimentReport run_experiment(const GatewayConfig& cfg, const corpus::Corpus& corpus,
                                const ExperimentOptions& opts,
                                const ExperimentBackends& backends) {
    cfg.validate();
    if (opts.policies.empty())
        throw std::invalid_argument("run_experiment: no policies requested");
    if (!backends.answerer)
        throw std::invalid_argument("run_experiment: answerer backend must be set");

    const auto& cases = corpus.cases();
    std::filesystem::create_directories(opts.out_dir);

    // Shared environments. make_retriever is stateless; safe across threads.
    policy::AnswerEnv answer_env;
    answer_env.answerer = backends.answerer.get();
    answer_env.answer_model = cfg.answerer.model;
    answer_env.retrieve = policy::make_retriever(cfg.rag);
    answer_env.rag = cfg.rag;
    answer_env.window = cfg.window_for(cfg.answerer.model);
    answer_env.answer_budget = cfg.answer_budget;

    ExperimentReport report;

    // Phase 1: paired arm qualities. Use the fixture when given; otherwise
    // execute both arms per case and judge them.
    std::map<std::string, eval::PairedOutcome> paired = opts.paired;
    if (paired.empty()) {
        if (!backends.judge)
            throw std::invalid_argument(
                "run_experiment: need paired outcomes or a judge backend");
        std::vector<eval::PairedOutcome> judged(cases.size());
        std::vector<bool> ok(cases.size(), false);
        std::atomic<std::size_t> clamps{0};
        parallel_for(cases.size(), cfg.max_in_flight, [&](std::size_t i) {
            const auto& c = cases[i];
            const auto& doc = corpus.document(c.doc_id);
            auto rag_leg = policy::route_always(Route::RAG, c);
            auto lc_leg = policy::route_always(Route::LC, c);
            policy::execute_answer(rag_leg, c, doc, answer_env);
            policy::execute_answer(lc_leg, c, doc, answer_env);
            if (rag_leg.failed || lc_leg.failed) return;
            eval::JudgeEnv jenv;
            jenv.judge = backends.judge.get();
            jenv.judge_model = cfg.judge.model;
            jenv.max_output_tokens = cfg.judge.max_output_tokens;
            try {
                const auto jp = eval::judge_pair(c, rag_leg.answer, lc_leg.answer,
                                                 promptkit::rubric_for(c.task_type), jenv,
                                                 cfg.seed);
                judged[i] = jp.outcome;
                ok[i] = true;
                if (jp.clamped) ++clamps;
            } catch (const std::exception&) {
                // Unjudgeable case: downstream policies simply skip it.
            }
        });
        for (std::size_t i = 0; i < cases.size(); ++i)
            if (ok[i]) paired.emplace(judged[i].case_id, judged[i]);
        report.judged_cases = paired.size();
        report.judge_clamp_events = clamps.load();
    }

    // Phase 2: run each policy and score it.
    for (const std::string& policy_name : opts.policies) {
        std::vector<policy::RoutingOutcome> outcomes(cases.size());
        parallel_for(cases.size(), cfg.max_in_flight, [&](std::size_t i) {
            const auto& c = cases[i];
            const auto& doc = corpus.document(c.doc_id);
            policy::RoutingOutcome o;
            try {
                if (policy_name == "always_rag" || policy_name == "always_lc") {
                    o = policy::route_always(
                        policy_name == "always_rag" ? Route::RAG : Route::LC, c);
                    policy::execute_answer(o, c, doc, answer_env);
                } else if (policy_name == "selfroute") {
                    o = policy::route_selfroute(c, doc, answer_env);
                } else if (policy_name == "preroute") {
                    corpus::MetaOptions mopts;
                    mopts.mode = cfg.meta_mode;
                    mopts.head_tokens = cfg.head_tokens;
                    mopts.window = answer_env.window;
                    const auto meta = corpus::make_meta(doc, mopts);
                    policy::RouterEnv renv;
                    renv.router = backends.router.get();
                    renv.router_model = cfg.router.model;
                    renv.answer_model = cfg.answerer.model;
                    renv.answer_window = answer_env.window;
                    renv.rag = cfg.rag;
                    renv.temperature = cfg.router.temperature;
                    renv.max_output_tokens = cfg.router.max_output_tokens;
                    if (!renv.router)
                        throw std::invalid_argument("preroute policy needs a router backend");
                    o = policy::route_preroute(c, meta, renv);
                    policy::execute_answer(o, c, doc, answer_env);
                } else {
                    throw SchemaError("unknown policy \"" + policy_name + "\"");
                }
            } catch (const std::exception& e) {
                o.case_id = c.id;
                o.failed = true;
                o.error = e.what();
            }
            o.policy = policy_name;
            // A case without a paired outcome cannot be scored; record it
            // as failed so metrics stay well-defined.
            if (!o.failed && !paired.count(o.case_id)) {
                o.failed = true;
                o.error = "no paired outcome for case";
            }
            outcomes[i] = std::move(o);
        });

        const auto metrics = eval::compute_metrics(outcomes, paired, report.judge_clamp_events);
        const auto costs = econ::aggregate_costs(outcomes, cfg.pricing);

        PolicyReport pr;
        pr.policy = policy_name;
        pr.metrics = metrics;
        for (const auto& c : costs)
            if (c.policy == policy_name) pr.cost = c;

        const auto policy_dir = opts.out_dir / policy_name;
        std::filesystem::create_directories(policy_dir);
        {
            std::ofstream out(policy_dir / "outcomes.jsonl");
            for (const auto& o : outcomes) out << outcome_to_json(o, cfg.pricing).dump() << '\n';
        }
        {
            std::ofstream out(policy_dir / "metrics.json");
            out << json{{"policy", policy_name},
                        {"qa_score", metrics.qa_score},
                        {"lc_rate", metrics.lc_rate},
                        {"route_accuracy", metrics.route_accuracy},
                        {"n", metrics.n},
                        {"failures", metrics.failures},
                        {"clamp_events", metrics.clamp_events}}
                       .dump(2)
                << '\n';
        }
        {
            std::ofstream out(policy_dir / "costs.json");
            out << json{{"policy", pr.cost.policy},
                        {"cases", pr.cost.cases},
                        {"p_lc", pr.cost.p_lc},
                        {"mean_route_usd", pr.cost.mean_route},
                        {"mean_answer_usd", pr.cost.mean_answer},
                        {"mean_total_usd", pr.cost.mean_total},
                        {"mean_total_milli_usd", econ::to_milli_usd(pr.cost.mean_total)},
                        {"decomposition_gap", pr.cost.decomposition_gap}}
                       .dump(2)
                << '\n';
        }
        report.policies.push_back(std::move(pr));
    }

    report.table = format_table(report.policies);
    std::ofstream table_out(opts.out_dir / "table.txt");
    table_out << report.table;
    return report;
}

}  // namespace raglc::gateway
