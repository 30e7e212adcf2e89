#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "raglc/corpus.hpp"
#include "raglc/pipeline.hpp"
#include "raglc/types.hpp"

namespace raglc::promptkit {

// ---------------------------------------------------------------------------
// Templates
// ---------------------------------------------------------------------------

enum class TemplateId {
    router_decision,       ///< metadata-only routing with structured reasoning
    selfroute_qa,          ///< passage QA with the "unanswerable" escape hatch
    selfroute_mcq,         ///< multiple-choice flavour of the same
    judge_standard,        ///< pairwise 1-4 grading against a reference
    judge_hallucination,   ///< pairwise grading for trap questions
};

std::string_view template_id_str(TemplateId id);
TemplateId template_id_parse(std::string_view s);

/// Raw template text (placeholders intact, no masking). Byte-identical to
/// the matching file under assets/templates/.
const std::string& template_text(TemplateId id);

// ---------------------------------------------------------------------------
// Router prompt variants
// ---------------------------------------------------------------------------

/// Which optional sections of the router prompt are included. Ablation runs
/// subtract sections; rendering never invents new ones. Masking a step
/// removes both its instruction line and its line in the output skeleton
/// (remaining lines keep their original numbering).
struct VariantMask {
    enum Flag : unsigned {
        step1 = 1u << 0,
        step2 = 1u << 1,
        step3 = 1u << 2,
        step4 = 1u << 3,
        step5 = 1u << 4,
        step6 = 1u << 5,
        reflection = 1u << 6,
        decision_rules = 1u << 7,
    };
    unsigned bits = 0xff;

    static VariantMask all() { return {0xff}; }
    bool has(Flag f) const { return bits & f; }
    VariantMask without(Flag f) const { return {bits & ~unsigned(f)}; }
    bool operator==(const VariantMask&) const = default;
};

/// Maps a section name ("step1".."step6_efficiency", "reflection",
/// "decision_rules") to its mask flag; nullopt for anything else.
std::optional<VariantMask::Flag> section_flag(std::string_view name);

/// A rendered prompt plus enough context to reproduce it.
struct PromptBundle {
    std::optional<std::string> system;  ///< unset: template defines no system turn
    std::string user;
    TemplateId template_id = TemplateId::router_decision;
    VariantMask mask = VariantMask::all();
};

/// Everything the router prompt needs besides the case itself.
struct RouterPromptContext {
    pipeline::RagConfig rag;
    std::string answer_model;          ///< tag rendered into the prompt
    std::size_t answer_window = 128000;
};

/// Renders the metadata-only routing prompt. Absent metadata fields render
/// as "(not provided)"; numeric fields use deterministic formatting; the
/// result never contains an unreplaced placeholder.
PromptBundle render_router_prompt(const corpus::QueryCase& c, const corpus::DocumentMeta& meta,
                                  const RouterPromptContext& ctx,
                                  VariantMask mask = VariantMask::all());

enum class SelfRouteFlavor { qa, mcq };

/// Renders the retrieval-grounded answering prompt whose reply may be
/// "unanswerable". `retrieved` chunk texts are joined with blank lines.
PromptBundle render_selfroute_prompt(const corpus::QueryCase& c,
                                     std::span<const std::string> retrieved,
                                     SelfRouteFlavor flavor = SelfRouteFlavor::qa);

enum class JudgeRubric { standard, hallucination };

/// Rubric used for a case: trap questions get the hallucination rubric.
JudgeRubric rubric_for(const corpus::TaskType& task);

/// Renders the pairwise judge prompt (answer A vs answer B against the
/// reference answer).
PromptBundle render_judge_prompt(const std::string& query, const std::string& ground_truth,
                                 const std::string& answer_a, const std::string& answer_b,
                                 JudgeRubric rubric);

// ---------------------------------------------------------------------------
// Reply parsing
// ---------------------------------------------------------------------------

/// How the routing decision was recovered from the reply.
///   clean    — a well-formed <decision> tag parsed directly
///   repaired — tag missing/garbled; keyword scan of the reply tail decided
///   fallback — nothing recognizable; defaulted to RAG
enum class ParseStatus { clean, repaired, fallback };

std::string_view parse_status_str(ParseStatus s);

/// Structured reasoning recovered from a router reply. Absent sections are
/// empty strings.
struct ReasoningTrace {
    std::array<std::string, 6> steps;  ///< step1..step5 + step6 (efficiency)
    std::string reflection;
    std::string decision_text;  ///< raw text inside the final <decision> tag
};

struct RouteDecision {
    Route route = Route::RAG;
    ReasoningTrace trace;
    ParseStatus parse_status = ParseStatus::fallback;
};

/// Extracts the routing decision from a raw model reply. Scans every
/// <decision> tag and keeps the last one that normalizes to RAG or LC
/// (models sometimes emit several; the final answer wins). If no tag
/// normalizes, the last 200 characters are scanned for decision keywords
/// (repaired). Otherwise the decision falls back to RAG. Never throws.
RouteDecision parse_route_decision(const std::string& reply);

/// Normalizes free-form decision text ("`RAG`.", "long-context", "**LC**")
/// to a route; nullopt when the text is not a decision.
std::optional<Route> normalize_route_text(std::string_view raw);

struct JudgeVerdict {
    std::string analysis;
    int score_a = 0;  ///< 1..4 after clamping
    int score_b = 0;
    enum class Better { A, B, Tie } better = Better::Tie;
    bool clamped = false;  ///< a score was outside 1..4 and clamped
};

/// Raised when a judge reply carries no usable verdict.
class VerdictError : public std::runtime_error {
public:
    explicit VerdictError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Extracts the JSON verdict from a judge reply. Tolerates prose around the
/// JSON object (first balanced object with a "score_a" key wins), clamps
/// out-of-range scores to [1, 4] and flags the clamp, and derives "better"
/// from the scores when the field is missing. Missing scores or no JSON at
/// all raise VerdictError.
JudgeVerdict parse_judge_verdict(const std::string& reply);

}  // namespace raglc::promptkit
