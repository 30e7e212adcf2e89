#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "raglc/corpus.hpp"
#include "raglc/econ.hpp"
#include "raglc/eval.hpp"
#include "raglc/pipeline.hpp"
#include "raglc/policy.hpp"

namespace raglc::gateway {

/// One backend endpoint: a scripted mock (script path) or an HTTP service.
struct BackendConfig {
    std::string kind = "mock";  ///< "mock" | "http"
    std::string model;
    std::string base_url;
    std::string api_key_env;  ///< name of the env var holding the key
    std::string script_path;  ///< mock: line-delimited scripted replies
    double temperature = 0.0;
    bool thinking = false;
    int max_output_tokens = 2048;
    int timeout_seconds = 60;
    int retries = 1;
    double min_interval_ms = 0.0;
};

struct GatewayConfig {
    BackendConfig router;
    BackendConfig answerer;
    BackendConfig judge;
    econ::PricingTable pricing = econ::PricingTable::defaults();
    bool cost_accounting = true;
    pipeline::RagConfig rag;
    corpus::MetaMode meta_mode = corpus::MetaMode::full;
    std::string policy = "preroute";  ///< default policy for /answer
    std::size_t head_tokens = 256;
    std::size_t answer_window = 128000;
    std::map<std::string, std::size_t> model_windows;  ///< overrides per model tag
    std::size_t max_in_flight = 8;
    std::uint64_t seed = 0;
    std::string host = "127.0.0.1";
    int port = 8080;  ///< 0 = pick an ephemeral port
    std::size_t answer_budget = 1024;

    std::size_t window_for(const std::string& model) const;
    void validate() const;  ///< throws on bad policy/rag/pricing wiring
};

/// Reads a JSON config file and applies RAGLC_* environment overrides
/// (RAGLC_HOST, RAGLC_PORT, RAGLC_SEED, RAGLC_POLICY, RAGLC_META_MODE,
/// RAGLC_ROUTER_URL, RAGLC_ANSWERER_URL, RAGLC_JUDGE_URL).
GatewayConfig load_config(const std::filesystem::path& path);
GatewayConfig config_from_json_text(const std::string& text);  ///< tests / inline configs

/// Builds a chat client from a backend config (mock script or HTTP).
std::shared_ptr<pipeline::ChatClient> make_backend(const BackendConfig& cfg);

/// The HTTP service: POST /route, /answer, /judge; GET /metrics, /healthz.
/// /route never retrieves or answers — it is a pure decision endpoint.
class Gateway {
public:
    explicit Gateway(GatewayConfig cfg);
    ~Gateway();

    Gateway(const Gateway&) = delete;
    Gateway& operator=(const Gateway&) = delete;

    /// Test / embedding hooks; call before start().
    void set_router(std::shared_ptr<pipeline::ChatClient> c);
    void set_answerer(std::shared_ptr<pipeline::ChatClient> c);
    void set_judge(std::shared_ptr<pipeline::ChatClient> c);
    void set_corpus(corpus::Corpus c);

    void start();  ///< binds and serves on a background thread; throws on bind failure
    void stop();   ///< graceful: stops accepting, drains in-flight handlers
    int port() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

struct ExperimentBackends {
    std::shared_ptr<pipeline::ChatClient> router;
    std::shared_ptr<pipeline::ChatClient> answerer;
    std::shared_ptr<pipeline::ChatClient> judge;  ///< optional when paired given
};

struct ExperimentOptions {
    std::vector<std::string> policies;  ///< of "always_rag", "always_lc", "selfroute", "preroute"
    std::filesystem::path out_dir;
    /// Pre-judged arm qualities. When empty, both arms are executed and
    /// judged with the judge backend (which must then be set).
    std::map<std::string, eval::PairedOutcome> paired;
};

struct PolicyReport {
    std::string policy;
    eval::MetricsReport metrics;
    econ::PolicyCostSummary cost;
};

struct ExperimentReport {
    std::vector<PolicyReport> policies;
    std::string table;  ///< the QA / LC% / Acc comparison table
    std::size_t judged_cases = 0;
    std::size_t judge_clamp_events = 0;
};

/// Runs each policy over every corpus case with bounded parallelism, scores
/// outcomes against paired arm qualities, prices the legs, and writes
/// per-policy outcome records plus reports under out_dir
/// (<policy>/outcomes.jsonl, metrics.json, costs.json, and table.txt at the
/// root). Case failures are recorded and skipped, never fatal. Output is a
/// deterministic function of (config, corpus, scripts, seed).
ExperimentReport run_experiment(const GatewayConfig& cfg, const corpus::Corpus& corpus,
                                const ExperimentOptions& opts,
                                const ExperimentBackends& backends);

}  // namespace raglc::gateway
