#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "raglc/corpus.hpp"
#include "raglc/econ.hpp"
#include "raglc/pipeline.hpp"
#include "raglc/promptkit.hpp"
#include "raglc/types.hpp"

namespace raglc::policy {

/// How a routing decision came to be.
///   fixed             — the policy always answers one way
///   router_model      — a metadata-only router call decided
///   failure_fallback  — first attempt failed/unanswerable, escalated
enum class DecisionSource { fixed, router_model, failure_fallback };

std::string_view decision_source_str(DecisionSource s);

/// Everything a policy run produces for one case: the decision, how it was
/// made, the backend legs it consumed (token counts; priced later), and the
/// answer when the answer phase ran.
struct RoutingOutcome {
    std::string case_id;
    std::string policy;  ///< "always_rag" | "always_lc" | "selfroute" | "preroute" | ...
    Route route = Route::RAG;
    DecisionSource decision_source = DecisionSource::fixed;
    std::optional<promptkit::ReasoningTrace> trace;           ///< router-based policies
    std::optional<promptkit::ParseStatus> parse_status;       ///< router-based policies
    std::vector<econ::CostRecord> legs;
    std::string answer;   ///< final answer text when the answer phase ran
    bool lc_truncated = false;  ///< LC prompt had to drop the document tail
    bool failed = false;
    std::string error;
};

/// Retrieval hook: returns the top chunks for a case. Injected so callers
/// can count retrieval passes, cache chunk indexes, or swap scoring.
using RetrieveFn = std::function<pipeline::RetrievalResult(const corpus::QueryCase&,
                                                           const corpus::Document&)>;

/// Builds the standard retrieval hook: chunk the document, embed + rerank
/// with the offline scorers, return the top chunks.
RetrieveFn make_retriever(const pipeline::RagConfig& cfg,
                          const Tokenizer& tok = default_tokenizer());

/// Shared answering context: the answer backend plus retrieval and window
/// parameters. Pointer members are non-owning and must outlive the call.
struct AnswerEnv {
    pipeline::ChatClient* answerer = nullptr;
    std::string answer_model;
    RetrieveFn retrieve;
    pipeline::RagConfig rag;
    std::size_t window = 128000;
    std::size_t answer_budget = 1024;
    promptkit::SelfRouteFlavor flavor = promptkit::SelfRouteFlavor::qa;
    const Tokenizer* tok = nullptr;  ///< null = default tokenizer
};

/// Fixed policies: the decision is the constant `fixed`; no backend call is
/// made here (the answer phase is separate).
RoutingOutcome route_always(Route fixed, const corpus::QueryCase& c);

/// Executes the answer phase for an already-decided outcome: RAG retrieves
/// then asks over the chunks; LC asks over the whole document. Appends the
/// corresponding legs and fills `answer`. Throws nothing: backend failures
/// mark the outcome failed.
void execute_answer(RoutingOutcome& outcome, const corpus::QueryCase& c,
                    const corpus::Document& doc, const AnswerEnv& env);

/// Failure-driven routing: answer with RAG first; when that reply declares
/// the question unanswerable, escalate to one long-context pass. The
/// outcome's legs always include the RAG attempt; after escalation they
/// include the LC leg too.
RoutingOutcome route_selfroute(const corpus::QueryCase& c, const corpus::Document& doc,
                               const AnswerEnv& env);

/// True when a reply declares the question unanswerable (case-insensitive
/// substring, tolerant of quoting/punctuation around it).
bool is_unanswerable(const std::string& answer);

/// Router call context for decision-before-answer routing.
struct RouterEnv {
    pipeline::ChatClient* router = nullptr;
    std::string router_model;
    std::string answer_model;  ///< rendered into the prompt
    std::size_t answer_window = 128000;
    pipeline::RagConfig rag;
    promptkit::VariantMask mask = promptkit::VariantMask::all();
    double temperature = 0.0;
    pipeline::ThinkingMode thinking = pipeline::ThinkingMode::off;
    int max_output_tokens = 2048;
};

/// Decision-before-answer routing: one metadata-only router call, parsed
/// into a route. Parse failures repair or fall back to RAG (never throw);
/// backend failures also fall back to RAG with the error recorded. The
/// returned outcome carries the route leg only — run execute_answer to
/// produce the answer.
RoutingOutcome route_preroute(const corpus::QueryCase& c, const corpus::DocumentMeta& meta,
                              const RouterEnv& env);

/// How multiple router draws combine into one decision.
///   majority — most frequent decision wins, ties prefer RAG
///   oracle   — upper bound: any draw matching the ideal counts as correct
///              (scored in evaluation; the aggregate here is still majority)
enum class BonAggregation { majority, oracle };

struct BonOptions {
    std::size_t n = 4;  ///< number of draws, >= 1
    BonAggregation aggregation = BonAggregation::majority;
    double temperature = 0.7;  ///< draw diversity; overrides env.temperature
};

struct BonOutcome {
    std::vector<Route> decisions;           ///< one per draw, in draw order
    std::vector<promptkit::ParseStatus> statuses;
    Route aggregate = Route::RAG;
    std::vector<econ::CostRecord> legs;     ///< one route leg per draw
};

/// Best-of-N routing: n independent router draws over the same case.
/// Backend failure on any draw aborts the batch (partial draws discarded).
BonOutcome route_bon(const corpus::QueryCase& c, const corpus::DocumentMeta& meta,
                     const RouterEnv& env, const BonOptions& opts);

/// Majority vote with ties preferring RAG.
Route majority_route(std::span<const Route> decisions);

}  // namespace raglc::policy
