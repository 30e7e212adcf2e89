// raglc — command-line front end for the routing gateway library.
//
// Verbs:
//   ingest    validate a corpus stream and report what it holds
//   split     stratified train/val/test assignment -> manifest
//   route     metadata-only routing decisions (no answering)
//   answer    full policy runs (decision + answer legs)
//   evaluate  multi-policy comparison with judged arm qualities
//   bon       best-of-N accuracy from repeated router draws
//   distill   rejection-filter teacher samples, export SFT conversations
//   probe     train/evaluate a linear probe on labelled vectors
//   serve     run the HTTP gateway
//
// File formats are line-delimited JSON throughout; see README.md.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "raglc/corpus.hpp"
#include "raglc/distill.hpp"
#include "raglc/econ.hpp"
#include "raglc/eval.hpp"
#include "raglc/gateway.hpp"
#include "raglc/pipeline.hpp"
#include "raglc/policy.hpp"
#include "raglc/probe.hpp"
#include "raglc/promptkit.hpp"
#include "raglc/types.hpp"
#include "raglc/util.hpp"

namespace {

using namespace raglc;
using nlohmann::json;

std::ifstream open_or_die(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open \"" + path + "\"");
    return in;
}

std::ofstream create_or_die(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot create \"" + path + "\"");
    return out;
}

corpus::Corpus load_corpus(const std::string& path) {
    auto in = open_or_die(path);
    return corpus::ingest_corpus(in);
}

gateway::GatewayConfig load_cfg(const std::string& path) {
    if (path.empty()) {
        gateway::GatewayConfig cfg;
        return cfg;
    }
    return gateway::load_config(path);
}

/// Paired arm-quality rows: {"case_id", "u_rag", "u_lc"} per line.
std::map<std::string, eval::PairedOutcome> load_paired(const std::string& path) {
    auto in = open_or_die(path);
    std::map<std::string, eval::PairedOutcome> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (util::trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("case_id") || !j.contains("u_rag") ||
            !j.contains("u_lc"))
            throw SchemaError("paired file line " + std::to_string(lineno) +
                              ": need case_id, u_rag, u_lc");
        eval::PairedOutcome po;
        po.case_id = j["case_id"].get<std::string>();
        po.u_rag = j["u_rag"].get<double>();
        po.u_lc = j["u_lc"].get<double>();
        po.source = eval::PairedOutcome::Source::fixture;
        out[po.case_id] = po;
    }
    return out;
}

std::map<std::string, Route> ideals_from_paired(
    const std::map<std::string, eval::PairedOutcome>& paired) {
    std::map<std::string, Route> ideals;
    for (const auto& [id, po] : paired) ideals[id] = eval::ideal_label(po);
    return ideals;
}

promptkit::VariantMask mask_from_names(const std::vector<std::string>& names) {
    auto mask = promptkit::VariantMask::all();
    for (const auto& name : names) {
        const auto flag = promptkit::section_flag(name);
        if (!flag) throw SchemaError("unknown prompt section \"" + name + "\"");
        mask = mask.without(*flag);
    }
    return mask;
}

policy::RouterEnv router_env_from(const gateway::GatewayConfig& cfg, pipeline::ChatClient* router,
                                  promptkit::VariantMask mask) {
    policy::RouterEnv env;
    env.router = router;
    env.router_model = cfg.router.model;
    env.answer_model = cfg.answerer.model;
    env.answer_window = cfg.window_for(cfg.answerer.model);
    env.rag = cfg.rag;
    env.mask = mask;
    env.temperature = cfg.router.temperature;
    env.thinking = cfg.router.thinking ? pipeline::ThinkingMode::on : pipeline::ThinkingMode::off;
    env.max_output_tokens = cfg.router.max_output_tokens;
    return env;
}

policy::AnswerEnv answer_env_from(const gateway::GatewayConfig& cfg,
                                  pipeline::ChatClient* answerer) {
    policy::AnswerEnv env;
    env.answerer = answerer;
    env.answer_model = cfg.answerer.model;
    env.retrieve = policy::make_retriever(cfg.rag);
    env.rag = cfg.rag;
    env.window = cfg.window_for(cfg.answerer.model);
    env.answer_budget = cfg.answer_budget;
    return env;
}

corpus::DocumentMeta meta_from(const gateway::GatewayConfig& cfg, const corpus::Document& doc) {
    corpus::MetaOptions opts;
    opts.mode = cfg.meta_mode;
    opts.head_tokens = cfg.head_tokens;
    opts.window = cfg.window_for(cfg.answerer.model);
    return corpus::make_meta(doc, opts);
}

json trace_json(const promptkit::ReasoningTrace& t) {
    static constexpr const char* kTags[6] = {"step1", "step2", "step3",
                                             "step4", "step5", "step6_efficiency"};
    json j = json::object();
    for (int i = 0; i < 6; ++i)
        if (!t.steps[i].empty()) j[kTags[i]] = t.steps[i];
    if (!t.reflection.empty()) j["reflection"] = t.reflection;
    if (!t.decision_text.empty()) j["decision"] = t.decision_text;
    return j;
}

json outcome_json(const policy::RoutingOutcome& o, const econ::PricingTable& pricing) {
    json legs = json::array();
    double total = 0.0;
    for (const auto& leg : o.legs) {
        const auto priced =
            econ::price_leg(leg.leg, leg.model, leg.input_tokens, leg.output_tokens, pricing);
        total += priced.usd_total;
        legs.push_back(json{{"leg", std::string(econ::leg_str(priced.leg))},
                            {"model", priced.model},
                            {"input_tokens", priced.input_tokens},
                            {"output_tokens", priced.output_tokens},
                            {"usd_total", priced.usd_total}});
    }
    json j{{"case_id", o.case_id},
           {"policy", o.policy},
           {"route", std::string(route_str(o.route))},
           {"decision_source", std::string(policy::decision_source_str(o.decision_source))},
           {"legs", legs},
           {"usd_total", total},
           {"failed", o.failed}};
    if (o.parse_status) j["parse_status"] = std::string(promptkit::parse_status_str(*o.parse_status));
    if (o.trace) j["trace"] = trace_json(*o.trace);
    if (!o.answer.empty()) j["answer"] = o.answer;
    if (o.lc_truncated) j["lc_truncated"] = true;
    if (!o.error.empty()) j["error"] = o.error;
    return j;
}

/// Teacher-sample rows for `distill`. Each row freezes the prompt context
/// the teacher saw; see README.md for the full shape.
std::vector<distill::TeacherSample> load_samples(const std::string& path) {
    auto in = open_or_die(path);
    std::vector<distill::TeacherSample> samples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (util::trim(line).empty()) continue;
        json j = json::parse(line, nullptr, false);
        const auto die = [&](const std::string& what) {
            throw SchemaError("samples line " + std::to_string(lineno) + ": " + what);
        };
        if (j.is_discarded()) die("malformed JSON");
        distill::TeacherSample s;
        for (const char* key : {"case_id", "query", "decision"})
            if (!j.contains(key)) die(std::string("missing \"") + key + "\"");
        s.case_id = j["case_id"].get<std::string>();
        s.query = j["query"].get<std::string>();
        s.task_type = corpus::TaskType::parse(j.value("task_type", std::string("other")));
        s.decision = route_parse(j["decision"].get<std::string>());
        s.teacher = j.value("teacher", std::string("teacher"));
        if (!j.contains("meta")) die("missing \"meta\"");
        const json& m = j["meta"];
        if (m.contains("title") && m["title"].is_string())
            s.meta.title = m["title"].get<std::string>();
        if (m.contains("doc_type") && m["doc_type"].is_string())
            s.meta.doc_type = m["doc_type"].get<std::string>();
        if (!m.contains("token_length") || !m.contains("fits_window"))
            die("meta needs token_length and fits_window");
        s.meta.token_length = m["token_length"].get<std::size_t>();
        s.meta.fits_window = m["fits_window"].get<bool>();
        s.meta.head_snippet = m.value("head_snippet", std::string());
        if (m.contains("meta_mode"))
            s.meta.meta_mode = corpus::meta_mode_parse(m["meta_mode"].get<std::string>());
        s.answer_model_context = j.value("answer_model", std::string("qwen3-235b"));
        s.answer_window = j.value("answer_window", s.answer_window);
        if (j.contains("exclude"))
            s.mask = mask_from_names(j["exclude"].get<std::vector<std::string>>());
        if (j.contains("trace")) {
            const json& t = j["trace"];
            static constexpr const char* kTags[6] = {"step1", "step2", "step3",
                                                     "step4", "step5", "step6_efficiency"};
            for (int i = 0; i < 6; ++i)
                if (t.contains(kTags[i])) s.trace.steps[i] = t[kTags[i]].get<std::string>();
            s.trace.reflection = t.value("reflection", std::string());
            s.trace.decision_text = t.value("decision", std::string());
        }
        samples.push_back(std::move(s));
    }
    return samples;
}

std::vector<std::string> split_csv(const std::string& csv) {
    std::vector<std::string> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!util::trim(item).empty()) out.emplace_back(util::trim(item));
    return out;
}

std::atomic<bool> g_stop{false};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RAG / long-context routing toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "seed for every stochastic choice (splits, judge slot order)")
        ->capture_default_str();

    std::string corpus_path, config_path, out_path, paired_path;

    // --- ingest ---------------------------------------------------------
    auto* cmd_ingest = app.add_subcommand("ingest", "validate a corpus and report its contents");
    cmd_ingest->add_option("--corpus", corpus_path, "corpus JSONL (documents + cases)")
        ->required();
    cmd_ingest->callback([&] {
        const auto corpus = load_corpus(corpus_path);
        std::map<std::string, std::size_t> by_bucket, by_task;
        for (const auto& c : corpus.cases()) {
            ++by_bucket[c.context_bucket.str()];
            ++by_task[c.task_type.str()];
        }
        json j{{"documents", corpus.document_count()},
               {"cases", corpus.cases().size()},
               {"by_context_bucket", by_bucket},
               {"by_task_type", by_task}};
        std::cout << j.dump(2) << "\n";
    });

    // --- split ----------------------------------------------------------
    auto* cmd_split = app.add_subcommand("split", "stratified train/val/test assignment");
    corpus::SplitRatios ratios;
    cmd_split->add_option("--corpus", corpus_path)->required();
    cmd_split->add_option("--out", out_path, "manifest JSONL to write")->required();
    cmd_split->add_option("--train", ratios.train)->capture_default_str();
    cmd_split->add_option("--val", ratios.val)->capture_default_str();
    cmd_split->add_option("--test", ratios.test)->capture_default_str();
    cmd_split->callback([&] {
        const auto corpus = load_corpus(corpus_path);
        const auto assignments = corpus::stratified_split(corpus, ratios, seed);
        auto out = create_or_die(out_path);
        corpus::write_split_manifest(out, assignments);
        std::size_t train = 0, val = 0, test = 0;
        for (const auto& a : assignments) {
            if (a.split == corpus::Split::train) ++train;
            else if (a.split == corpus::Split::val) ++val;
            else ++test;
        }
        std::cout << "assigned " << assignments.size() << " cases: " << train << " train, "
                  << val << " val, " << test << " test\n";
    });

    // --- route ----------------------------------------------------------
    auto* cmd_route = app.add_subcommand("route", "metadata-only routing decisions");
    std::string case_id;
    std::vector<std::string> exclude;
    cmd_route->add_option("--corpus", corpus_path)->required();
    cmd_route->add_option("--config", config_path, "gateway config JSON")->required();
    cmd_route->add_option("--case", case_id, "route a single case (default: all)");
    cmd_route->add_option("--exclude", exclude,
                          "prompt sections to drop (repeatable; e.g. decision_rules)");
    cmd_route->add_option("--out", out_path, "outcomes JSONL (default: stdout)");
    cmd_route->callback([&] {
        auto cfg = load_cfg(config_path);
        cfg.seed = seed;
        const auto corpus = load_corpus(corpus_path);
        const auto router = gateway::make_backend(cfg.router);
        const auto env = router_env_from(cfg, router.get(), mask_from_names(exclude));
        std::ofstream file;
        if (!out_path.empty()) file = create_or_die(out_path);
        std::ostream& out = out_path.empty() ? std::cout : file;
        for (const auto& c : corpus.cases()) {
            if (!case_id.empty() && c.id != case_id) continue;
            const auto meta = meta_from(cfg, corpus.document(c.doc_id));
            const auto outcome = policy::route_preroute(c, meta, env);
            out << outcome_json(outcome, cfg.pricing).dump() << "\n";
        }
    });

    // --- answer ---------------------------------------------------------
    auto* cmd_answer = app.add_subcommand("answer", "full policy run (decision + answer)");
    std::string policy_name;
    cmd_answer->add_option("--corpus", corpus_path)->required();
    cmd_answer->add_option("--config", config_path)->required();
    cmd_answer->add_option("--policy", policy_name,
                           "always_rag | always_lc | selfroute | preroute (default: config)");
    cmd_answer->add_option("--case", case_id, "run a single case (default: all)");
    cmd_answer->add_option("--out", out_path, "outcomes JSONL (default: stdout)");
    cmd_answer->callback([&] {
        auto cfg = load_cfg(config_path);
        cfg.seed = seed;
        if (!policy_name.empty()) cfg.policy = policy_name;
        cfg.validate();
        const auto corpus = load_corpus(corpus_path);
        const auto answerer = gateway::make_backend(cfg.answerer);
        const auto aenv = answer_env_from(cfg, answerer.get());
        std::shared_ptr<pipeline::ChatClient> router;
        std::ofstream file;
        if (!out_path.empty()) file = create_or_die(out_path);
        std::ostream& out = out_path.empty() ? std::cout : file;
        for (const auto& c : corpus.cases()) {
            if (!case_id.empty() && c.id != case_id) continue;
            const auto& doc = corpus.document(c.doc_id);
            policy::RoutingOutcome o;
            if (cfg.policy == "always_rag" || cfg.policy == "always_lc") {
                o = policy::route_always(cfg.policy == "always_rag" ? Route::RAG : Route::LC, c);
                policy::execute_answer(o, c, doc, aenv);
            } else if (cfg.policy == "selfroute") {
                o = policy::route_selfroute(c, doc, aenv);
            } else {
                if (!router) router = gateway::make_backend(cfg.router);
                const auto renv =
                    router_env_from(cfg, router.get(), promptkit::VariantMask::all());
                o = policy::route_preroute(c, meta_from(cfg, doc), renv);
                policy::execute_answer(o, c, doc, aenv);
            }
            o.policy = cfg.policy;
            out << outcome_json(o, cfg.pricing).dump() << "\n";
        }
    });

    // --- evaluate -------------------------------------------------------
    auto* cmd_eval = app.add_subcommand("evaluate", "multi-policy comparison");
    std::string policies_csv = "always_rag,always_lc,selfroute,preroute";
    std::string out_dir;
    cmd_eval->add_option("--corpus", corpus_path)->required();
    cmd_eval->add_option("--config", config_path)->required();
    cmd_eval->add_option("--policies", policies_csv, "comma-separated policy list")
        ->capture_default_str();
    cmd_eval->add_option("--out", out_dir, "report directory")->required();
    cmd_eval->add_option("--paired", paired_path,
                         "pre-judged arm qualities JSONL (default: judge live)");
    cmd_eval->callback([&] {
        auto cfg = load_cfg(config_path);
        cfg.seed = seed;
        const auto corpus = load_corpus(corpus_path);
        gateway::ExperimentOptions opts;
        opts.policies = split_csv(policies_csv);
        opts.out_dir = out_dir;
        if (!paired_path.empty()) opts.paired = load_paired(paired_path);
        gateway::ExperimentBackends backends;
        backends.answerer = gateway::make_backend(cfg.answerer);
        bool needs_router = false;
        for (const auto& p : opts.policies) needs_router = needs_router || p == "preroute";
        if (needs_router) backends.router = gateway::make_backend(cfg.router);
        if (opts.paired.empty()) backends.judge = gateway::make_backend(cfg.judge);
        const auto report = gateway::run_experiment(cfg, corpus, opts, backends);
        std::cout << report.table;
        if (report.judged_cases > 0)
            std::cout << "judged " << report.judged_cases << " cases ("
                      << report.judge_clamp_events << " clamped scores)\n";
    });

    // --- bon ------------------------------------------------------------
    auto* cmd_bon = app.add_subcommand("bon", "best-of-N routing accuracy");
    std::string draws_path, ns_csv = "1,2,4,8", aggregation = "majority";
    cmd_bon->add_option("--draws", draws_path,
                        "draw rows {case_id, decisions:[..]} (default: sample live)");
    cmd_bon->add_option("--paired", paired_path, "arm qualities for ideal labels")->required();
    cmd_bon->add_option("--corpus", corpus_path, "needed when sampling live");
    cmd_bon->add_option("--config", config_path, "needed when sampling live");
    cmd_bon->add_option("--n", ns_csv, "N values")->capture_default_str();
    cmd_bon->add_option("--aggregation", aggregation, "majority | oracle")
        ->capture_default_str();
    cmd_bon->callback([&] {
        const auto paired = load_paired(paired_path);
        const auto ideals = ideals_from_paired(paired);
        std::vector<std::size_t> ns;
        for (const auto& s : split_csv(ns_csv)) ns.push_back(std::stoul(s));
        const auto agg = aggregation == "oracle" ? policy::BonAggregation::oracle
                                                 : policy::BonAggregation::majority;
        std::map<std::string, std::vector<Route>> draws;
        if (!draws_path.empty()) {
            auto in = open_or_die(draws_path);
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                if (util::trim(line).empty()) continue;
                json j = json::parse(line, nullptr, false);
                if (j.is_discarded() || !j.contains("case_id") || !j.contains("decisions"))
                    throw SchemaError("draws line " + std::to_string(lineno) +
                                      ": need case_id and decisions");
                auto& d = draws[j["case_id"].get<std::string>()];
                for (const auto& r : j["decisions"]) d.push_back(route_parse(r.get<std::string>()));
            }
        } else {
            if (corpus_path.empty() || config_path.empty())
                throw std::runtime_error("bon: need --draws or both --corpus and --config");
            auto cfg = load_cfg(config_path);
            cfg.seed = seed;
            const auto corpus = load_corpus(corpus_path);
            const auto router = gateway::make_backend(cfg.router);
            policy::BonOptions bopts;
            bopts.n = *std::max_element(ns.begin(), ns.end());
            bopts.aggregation = agg;
            const auto env =
                router_env_from(cfg, router.get(), promptkit::VariantMask::all());
            for (const auto& c : corpus.cases()) {
                if (!ideals.count(c.id)) continue;
                const auto meta = meta_from(cfg, corpus.document(c.doc_id));
                draws[c.id] = policy::route_bon(c, meta, env, bopts).decisions;
            }
        }
        const auto acc = eval::bon_accuracy(draws, ideals, ns, agg);
        std::cout << "N    accuracy (" << aggregation << ")\n";
        for (const auto& [n, a] : acc) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%-4zu %.4f\n", n, a);
            std::cout << buf;
        }
    });

    // --- distill --------------------------------------------------------
    auto* cmd_distill = app.add_subcommand("distill", "filter teacher samples, export SFT data");
    std::string samples_path, split_path, manifest_path;
    cmd_distill->add_option("--samples", samples_path, "teacher sample rows")->required();
    cmd_distill->add_option("--paired", paired_path, "arm qualities for ideal labels")
        ->required();
    cmd_distill->add_option("--split", split_path, "split manifest JSONL")->required();
    cmd_distill->add_option("--out", out_path, "SFT conversations JSONL")->required();
    cmd_distill->add_option("--manifest", manifest_path, "filter/export summary JSON");
    cmd_distill->callback([&] {
        const auto samples = load_samples(samples_path);
        const auto ideals = ideals_from_paired(load_paired(paired_path));
        auto split_in = open_or_die(split_path);
        std::map<std::string, corpus::Split> splits;
        for (const auto& a : corpus::read_split_manifest(split_in)) splits[a.case_id] = a.split;

        const auto filtered = distill::rejection_filter(samples, ideals);
        std::vector<distill::TeacherSample> train_kept;
        for (const auto& s : filtered.kept) {
            auto it = splits.find(s.case_id);
            if (it != splits.end() && it->second == corpus::Split::train)
                train_kept.push_back(s);
        }
        auto out = create_or_die(out_path);
        const auto summary = distill::export_sft(train_kept, ideals, splits, out);
        if (!manifest_path.empty()) {
            auto mout = create_or_die(manifest_path);
            distill::write_distill_manifest(mout, filtered, summary);
        }
        std::cout << "kept " << filtered.kept.size() << "/" << filtered.total << " (retention "
                  << util::format_number(filtered.retention, 4) << "), exported " << summary.records
                  << " train conversations\n";
    });

    // --- probe ----------------------------------------------------------
    auto* cmd_probe = app.add_subcommand("probe", "train a linear probe on labelled vectors");
    std::string vectors_path, target_name = "ideal", report_path;
    probe::TrainOptions topts;
    cmd_probe->add_option("--vectors", vectors_path, "vector file JSONL")->required();
    cmd_probe->add_option("--target", target_name, "ideal | route | doc_type | task_type")
        ->capture_default_str();
    cmd_probe->add_option("--lr", topts.learning_rate)->capture_default_str();
    cmd_probe->add_option("--iterations", topts.iterations)->capture_default_str();
    cmd_probe->add_option("--l2", topts.l2)->capture_default_str();
    cmd_probe->add_option("--report", report_path, "write accuracy/loss JSON");
    cmd_probe->callback([&] {
        const auto target = probe::probe_target_parse(target_name);
        auto in = open_or_die(vectors_path);
        const auto ds = probe::load_vector_file(in, target);
        topts.seed = seed;
        const auto result = probe::train_probe(ds, topts);
        const double train_acc = probe::probe_accuracy(result.model, ds, true);
        bool any_test = false;
        for (const auto b : ds.train_mask) any_test = any_test || !b;
        const double test_acc =
            any_test ? probe::probe_accuracy(result.model, ds, false) : 0.0;
        json j{{"target", std::string(probe::probe_target_str(target))},
               {"rows", ds.size()},
               {"dim", ds.dim},
               {"classes", ds.classes},
               {"initial_loss", result.loss_history.front()},
               {"final_loss", result.loss_history.back()},
               {"train_accuracy", train_acc}};
        if (any_test) j["test_accuracy"] = test_acc;
        if (!report_path.empty()) {
            auto out = create_or_die(report_path);
            out << j.dump(2) << "\n";
        }
        std::cout << j.dump(2) << "\n";
    });

    // --- serve ----------------------------------------------------------
    auto* cmd_serve = app.add_subcommand("serve", "run the HTTP gateway");
    cmd_serve->add_option("--config", config_path)->required();
    cmd_serve->add_option("--corpus", corpus_path, "corpus to serve case lookups from");
    cmd_serve->callback([&] {
        auto cfg = load_cfg(config_path);
        cfg.seed = seed;
        gateway::Gateway gw(cfg);
        if (!corpus_path.empty()) gw.set_corpus(load_corpus(corpus_path));
        gw.start();
        std::cout << "listening on " << cfg.host << ":" << gw.port() << "\n" << std::flush;
        std::signal(SIGINT, [](int) { g_stop = true; });
        std::signal(SIGTERM, [](int) { g_stop = true; });
        while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
        gw.stop();
    });

    try {
        CLI11_PARSE(app, argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
