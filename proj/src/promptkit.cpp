#include "raglc/promptkit.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include "json.hpp"
#include "raglc/util.hpp"

namespace raglc::promptkit {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Template tables
// ---------------------------------------------------------------------------

namespace {

/// One line of the router template. flag == 0 lines always render; flagged
/// lines render only when the variant mask includes the flag.
struct TemplateLine {
    std::string_view text;
    unsigned flag;
};

constexpr TemplateLine kRouterLines[] = {
    {"## Inputs", 0},
    {"- query: \"{query}\"", 0},
    {"- task_type: {task_type}", 0},
    {"- document_title: \"{doc_title}\"", 0},
    {"- document_type: {doc_type}", 0},
    {"- document_length: {length_str} ({doc_len_tokens} tokens)", 0},
    {"- answering_model: {model}", 0},
    {"- answering_max_window: {max_window_tokens} tokens", 0},
    {"- document_fits_window: {document_fits}", 0},
    {"- document_head content: \"{doc_head}...\"", 0},
    {"## RAG Configuration", 0},
    {"- chunk_size: {chunk_size} tokens", 0},
    {"- chunk_overlap: {chunk_overlap} tokens", 0},
    {"- embed_model: {embed_model}", 0},
    {"- rerank_model: {rerank_model}", 0},
    {"- vector_ratio: {vector_ratio}", 0},
    {"- rerank_size: {rerank_size}", 0},
    {"## Instructions", 0},
    {"You are tasked with choosing the most appropriate strategy -- **RAG**, **LONG_CONTEXT** -- "
     "for answering the user query, based on the characteristics of the query, document, and "
     "model.",
     0},
    {"Please complete the `<thinking>` block below. In each step, provide a clear judgment and "
     "explain how it affects your strategy choice.",
     0},
    {"1. `<step1>`: Identify the question type (e.g., factual, reasoning, comparison, judgment, "
     "etc.) and the document type (e.g., book, article, report). How do these affect the need for "
     "deep context understanding or precise retrieval?",
     VariantMask::step1},
    {"2. `<step2>`: Assess whether the relevant information is likely concentrated in one part of "
     "the document or scattered across multiple sections. How does this affect strategy selection?",
     VariantMask::step2},
    {"3. `<step3>`: Evaluate whether the document can fully fit into the context window, based on "
     "`document_fits_window` above. If not, how does that impact strategy choice?",
     VariantMask::step3},
    {"4. `<step4>`: Consider whether the query can be answered through keyword-based retrieval "
     "(e.g., names, dates), or requires synthesizing implicit logic, analogies, or multi-part "
     "reasoning.",
     VariantMask::step4},
    {"5. `<step5>`: Reflect on the model being used (e.g., {model}). Consider both its context "
     "window size and model capacity (parameters). Although some models may have large context "
     "windows, smaller models may still struggle with effective long-context reasoning due to "
     "limited capacity. How does this influence your strategy recommendation?",
     VariantMask::step5},
    {"6. `<step6_efficiency>`: Compare **expected efficiency** of RAG vs LONG_CONTEXT: expected "
     "context size, retrieval selectivity, latency, and cost. If quality is likely similar, which "
     "strategy is more efficient?",
     VariantMask::step6},
    {"7. `<reflection>`: Based on your reasoning above, state which strategy is more suitable "
     "overall -- **RAG**, **LONG_CONTEXT** -- and explain why.",
     VariantMask::reflection},
    {"8. `<decision>`: Write your final strategy choice clearly as either `RAG`, `LONG_CONTEXT`.",
     0},
    {"### Decision Rules", VariantMask::decision_rules},
    {"- If both strategies are **equally suitable** or quality difference is "
     "**negligible/uncertain**, **prefer RAG for efficiency**.",
     VariantMask::decision_rules},
    {"- Prefer **LONG_CONTEXT** only if (a) the document **fits** in the window **and** (b) the "
     "query requires **global, cross-section synthesis** that retrieval would likely miss.",
     VariantMask::decision_rules},
    {"- Prefer **RAG** when the document **does not fit** the window, or when **high-precision "
     "snippet retrieval** is likely effective (e.g., names, dates, localized facts), or when "
     "**efficiency** is a concern and quality is similar.",
     VariantMask::decision_rules},
    {"## Output Format", 0},
    {"<thinking>", 0},
    {"  <step1>...</step1>", VariantMask::step1},
    {"  <step2>...</step2>", VariantMask::step2},
    {"  <step3>...</step3>", VariantMask::step3},
    {"  <step4>...</step4>", VariantMask::step4},
    {"  <step5>...</step5>", VariantMask::step5},
    {"  <step6_efficiency>...</step6_efficiency>", VariantMask::step6},
    {"  <reflection>...</reflection>", VariantMask::reflection},
    {"  <decision>...</decision>", 0},
    {"</thinking>", 0},
};

constexpr std::string_view kSelfRouteQa =
    "Answer the question based on the given passages. Only give me the answer and do not output "
    "any other words. If the question cannot be answered based on the information in the article, "
    "write \"unanswerable\". The following are given passages. {rag_result} Question: {query} "
    "Answer:";

constexpr std::string_view kSelfRouteMcq =
    "Read the following text and answer briefly. {rag_chunks} Now, answer the following question "
    "based on the above text, only give me the answer and do not output any other words. If the "
    "question cannot be answered based on the information in the article, write \"unanswerable\". "
    "Question: {query} Answer:";

constexpr std::string_view kJudgeStandard =
    R"(You will be given a question, a groundtruth answer, and two AI assistant answers.

Your task:
1. Judge each answer's factual accuracy and completeness relative to the groundtruth.
2. For each answer, assign a score from 1 to 4:
   - 4 = Fully correct (covers all key points, no factual or logical flaws)
   - 3 = Mostly correct (core is right, minor flaws or omissions)
   - 2 = Partially correct (some accurate parts, but notable errors or gaps)
   - 1 = Incorrect or hallucinated (serious flaws, irrelevant, fabricated)
3. Provide a brief comparison explaining your scoring.
4. Choose which assistant is better: "A", "B", or "Tie"

Return your result in the following JSON format:
{
  "analysis": "...",
  "score_a": int,
  "score_b": int,
  "better": "A" | "B" | "Tie"
}

[Question]
{query}

[Groundtruth Answer]
{label}

[Assistant A's Answer]
{pred_a}

[Assistant B's Answer]
{pred_b}

Start your evaluation:)";

constexpr std::string_view kJudgeHallucination =
    R"(You will be given a question, a groundtruth answer, and two answers from AI assistants (Assistant A and Assistant B).
This question may not be directly answerable from the source text.
Your task:
1. Check whether each assistant is hallucinating. If the answer is **consistent** with the groundtruth, and the question is **not present in the original text**, it is considered **not hallucinating**.
2. For each answer, assign a quality score from 1 to 4:
   - 4 = Fully correct (not hallucinating and consistent)
   - 3 = Mostly correct (minor detail missing or uncertain)
   - 2 = Partially correct (some correct points, some hallucination)
   - 1 = Hallucinated, irrelevant, or incorrect
3. Write a brief comparative analysis.
4. Decide who is better: "A", "B", or "Tie"
Return JSON in this format:
{
  "analysis": "...",
  "score_a": int,
  "score_b": int,
  "better": "A" | "B" | "Tie"
}
[Question]
{query}
[Groundtruth Answer]
{label}
[Assistant A's Answer]
{pred_a}
[Assistant B's Answer]
{pred_b}
Start your evaluation:)";

std::string join_router_lines(VariantMask mask) {
    std::string out;
    bool first = true;
    for (const auto& line : kRouterLines) {
        if (line.flag != 0 && !(mask.bits & line.flag)) continue;
        if (!first) out += '\n';
        out += line.text;
        first = false;
    }
    return out;
}

/// Single-pass placeholder substitution: "{name}" is replaced when `name`
/// is a known slot; inserted values are never re-scanned, and unknown
/// braces (e.g. the JSON block in judge templates) pass through verbatim.
std::string substitute(std::string_view tpl, const std::map<std::string, std::string>& slots) {
    std::string out;
    out.reserve(tpl.size());
    std::size_t i = 0;
    while (i < tpl.size()) {
        if (tpl[i] == '{') {
            auto close = tpl.find('}', i + 1);
            if (close != std::string_view::npos) {
                std::string name(tpl.substr(i + 1, close - i - 1));
                auto it = slots.find(name);
                if (it != slots.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += tpl[i++];
    }
    return out;
}

/// "(not provided)" reads naturally in both quoted and bare slots.
constexpr std::string_view kAbsent = "(not provided)";

std::string length_str(std::size_t tokens) {
    const std::size_t kilos = (tokens + 500) / 1000;
    if (kilos == 0) return "<1k";
    return std::to_string(kilos) + "k";
}

}  // namespace

std::string_view template_id_str(TemplateId id) {
    switch (id) {
        case TemplateId::router_decision: return "router_decision";
        case TemplateId::selfroute_qa: return "selfroute_qa";
        case TemplateId::selfroute_mcq: return "selfroute_mcq";
        case TemplateId::judge_standard: return "judge_standard";
        case TemplateId::judge_hallucination: return "judge_hallucination";
    }
    return "router_decision";
}

TemplateId template_id_parse(std::string_view s) {
    const std::string v = util::lower(util::trim(s));
    if (v == "router_decision") return TemplateId::router_decision;
    if (v == "selfroute_qa") return TemplateId::selfroute_qa;
    if (v == "selfroute_mcq") return TemplateId::selfroute_mcq;
    if (v == "judge_standard") return TemplateId::judge_standard;
    if (v == "judge_hallucination") return TemplateId::judge_hallucination;
    throw SchemaError("unknown template id \"" + std::string(s) + "\"");
}

const std::string& template_text(TemplateId id) {
    static const std::string router = join_router_lines(VariantMask::all());
    static const std::string qa{kSelfRouteQa};
    static const std::string mcq{kSelfRouteMcq};
    static const std::string judge_std{kJudgeStandard};
    static const std::string judge_hal{kJudgeHallucination};
    switch (id) {
        case TemplateId::router_decision: return router;
        case TemplateId::selfroute_qa: return qa;
        case TemplateId::selfroute_mcq: return mcq;
        case TemplateId::judge_standard: return judge_std;
        case TemplateId::judge_hallucination: return judge_hal;
    }
    return router;
}

std::optional<VariantMask::Flag> section_flag(std::string_view name) {
    if (name == "step1") return VariantMask::step1;
    if (name == "step2") return VariantMask::step2;
    if (name == "step3") return VariantMask::step3;
    if (name == "step4") return VariantMask::step4;
    if (name == "step5") return VariantMask::step5;
    if (name == "step6_efficiency") return VariantMask::step6;
    if (name == "reflection") return VariantMask::reflection;
    if (name == "decision_rules") return VariantMask::decision_rules;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

PromptBundle render_router_prompt(const corpus::QueryCase& c, const corpus::DocumentMeta& meta,
                                  const RouterPromptContext& ctx, VariantMask mask) {
    ctx.rag.validate();
    if (ctx.answer_model.empty())
        throw std::invalid_argument("render_router_prompt: answer_model must be set");

    std::map<std::string, std::string> slots{
        {"query", c.query},
        {"task_type", c.task_type.str()},
        {"doc_title", meta.title.value_or(std::string(kAbsent))},
        {"doc_type", meta.doc_type.value_or(std::string(kAbsent))},
        {"length_str", length_str(meta.token_length)},
        {"doc_len_tokens", std::to_string(meta.token_length)},
        {"model", ctx.answer_model},
        {"max_window_tokens", std::to_string(ctx.answer_window)},
        {"document_fits", meta.fits_window ? "true" : "false"},
        {"doc_head", meta.head_snippet},
        {"chunk_size", std::to_string(ctx.rag.chunk_size)},
        {"chunk_overlap", std::to_string(ctx.rag.chunk_overlap)},
        {"embed_model", ctx.rag.embed_model},
        {"rerank_model", ctx.rag.rerank_model},
        {"vector_ratio", util::format_number(ctx.rag.vector_ratio)},
        {"rerank_size", std::to_string(ctx.rag.rerank_size)},
    };

    PromptBundle bundle;
    bundle.template_id = TemplateId::router_decision;
    bundle.mask = mask;
    bundle.user = substitute(join_router_lines(mask), slots);
    return bundle;
}

PromptBundle render_selfroute_prompt(const corpus::QueryCase& c,
                                     std::span<const std::string> retrieved,
                                     SelfRouteFlavor flavor) {
    if (retrieved.empty())
        throw std::invalid_argument("render_selfroute_prompt: no retrieved chunks");
    std::string joined;
    for (std::size_t i = 0; i < retrieved.size(); ++i) {
        if (i) joined += "\n\n";
        joined += retrieved[i];
    }

    PromptBundle bundle;
    bundle.template_id =
        flavor == SelfRouteFlavor::qa ? TemplateId::selfroute_qa : TemplateId::selfroute_mcq;
    const std::string_view tpl = flavor == SelfRouteFlavor::qa ? kSelfRouteQa : kSelfRouteMcq;
    const char* slot = flavor == SelfRouteFlavor::qa ? "rag_result" : "rag_chunks";
    bundle.user = substitute(tpl, {{slot, joined}, {"query", c.query}});
    return bundle;
}

JudgeRubric rubric_for(const corpus::TaskType& task) {
    return task.kind == corpus::TaskType::hallucination ? JudgeRubric::hallucination
                                                        : JudgeRubric::standard;
}

PromptBundle render_judge_prompt(const std::string& query, const std::string& ground_truth,
                                 const std::string& answer_a, const std::string& answer_b,
                                 JudgeRubric rubric) {
    PromptBundle bundle;
    bundle.template_id = rubric == JudgeRubric::standard ? TemplateId::judge_standard
                                                         : TemplateId::judge_hallucination;
    const std::string_view tpl =
        rubric == JudgeRubric::standard ? kJudgeStandard : kJudgeHallucination;
    bundle.user = substitute(tpl, {{"query", query},
                                   {"label", ground_truth},
                                   {"pred_a", answer_a},
                                   {"pred_b", answer_b}});
    return bundle;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

std::string_view parse_status_str(ParseStatus s) {
    switch (s) {
        case ParseStatus::clean: return "clean";
        case ParseStatus::repaired: return "repaired";
        case ParseStatus::fallback: return "fallback";
    }
    return "fallback";
}

namespace {

/// Inner text of the LAST "<tag>...</tag>" occurrence, or nullopt.
std::optional<std::string> last_tag(const std::string& text, std::string_view tag) {
    const std::string open = "<" + std::string(tag) + ">";
    const std::string close = "</" + std::string(tag) + ">";
    std::optional<std::string> found;
    std::size_t pos = 0;
    while (true) {
        auto o = text.find(open, pos);
        if (o == std::string::npos) break;
        auto c = text.find(close, o + open.size());
        if (c == std::string::npos) break;
        found = text.substr(o + open.size(), c - o - open.size());
        pos = c + close.size();
    }
    return found;
}

bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

/// Last word-bounded, case-insensitive occurrence of `word`, or npos.
std::size_t last_keyword(std::string_view text, std::string_view word) {
    const std::string hay = util::lower(text);
    const std::string needle = util::lower(word);
    std::size_t best = std::string::npos;
    std::size_t pos = 0;
    while (true) {
        auto p = hay.find(needle, pos);
        if (p == std::string::npos) break;
        const bool left_ok = p == 0 || !is_word_char(hay[p - 1]);
        const std::size_t after = p + needle.size();
        const bool right_ok = after >= hay.size() || !is_word_char(hay[after]);
        if (left_ok && right_ok) best = p;
        pos = p + 1;
    }
    return best;
}

}  // namespace

std::optional<Route> normalize_route_text(std::string_view raw) {
    std::string s;
    for (char c : raw) {
        if (c == '`' || c == '*' || c == '"' || c == '\'' || c == '.' || c == '!') continue;
        s += c;
    }
    std::string flat = util::lower(util::trim(s));
    for (char& c : flat)
        if (c == '-' || c == ' ') c = '_';
    if (flat == "rag") return Route::RAG;
    if (flat == "lc" || flat == "long_context" || flat == "longcontext") return Route::LC;
    return std::nullopt;
}

RouteDecision parse_route_decision(const std::string& reply) {
    RouteDecision out;

    static constexpr const char* kStepTags[6] = {"step1", "step2", "step3",
                                                 "step4", "step5", "step6_efficiency"};
    for (int i = 0; i < 6; ++i)
        if (auto v = last_tag(reply, kStepTags[i])) out.trace.steps[i] = *v;
    if (auto v = last_tag(reply, "reflection")) out.trace.reflection = *v;

    // Last <decision> tag whose content normalizes wins.
    {
        const std::string open = "<decision>", close = "</decision>";
        std::size_t pos = 0;
        while (true) {
            auto o = reply.find(open, pos);
            if (o == std::string::npos) break;
            auto c = reply.find(close, o + open.size());
            if (c == std::string::npos) break;
            std::string inner = reply.substr(o + open.size(), c - o - open.size());
            if (auto r = normalize_route_text(inner)) {
                out.route = *r;
                out.trace.decision_text = inner;
                out.parse_status = ParseStatus::clean;
            }
            pos = c + close.size();
        }
    }
    if (out.parse_status == ParseStatus::clean) return out;

    // Repair: keyword scan over the reply tail. The latest keyword wins.
    const std::string_view tail =
        std::string_view(reply).substr(reply.size() > 200 ? reply.size() - 200 : 0);
    std::size_t p_lc_full = last_keyword(tail, "LONG_CONTEXT");
    std::size_t p_lc = last_keyword(tail, "LC");
    std::size_t p_rag = last_keyword(tail, "RAG");
    std::size_t best_lc = std::string::npos;
    if (p_lc_full != std::string::npos) best_lc = p_lc_full;
    if (p_lc != std::string::npos && (best_lc == std::string::npos || p_lc > best_lc))
        best_lc = p_lc;
    if (best_lc != std::string::npos || p_rag != std::string::npos) {
        out.parse_status = ParseStatus::repaired;
        out.route = (best_lc != std::string::npos &&
                     (p_rag == std::string::npos || best_lc > p_rag))
                        ? Route::LC
                        : Route::RAG;
        return out;
    }

    out.parse_status = ParseStatus::fallback;
    out.route = Route::RAG;
    return out;
}

JudgeVerdict parse_judge_verdict(const std::string& reply) {
    // Scan for the first balanced JSON object carrying a "score_a" key,
    // skipping prose braces and respecting string/escape state.
    std::size_t start = 0;
    while ((start = reply.find('{', start)) != std::string::npos) {
        int depth = 0;
        bool in_string = false, escaped = false;
        std::size_t end = std::string::npos;
        for (std::size_t i = start; i < reply.size(); ++i) {
            char c = reply[i];
            if (in_string) {
                if (escaped)
                    escaped = false;
                else if (c == '\\')
                    escaped = true;
                else if (c == '"')
                    in_string = false;
                continue;
            }
            if (c == '"')
                in_string = true;
            else if (c == '{')
                ++depth;
            else if (c == '}') {
                if (--depth == 0) {
                    end = i;
                    break;
                }
            }
        }
        if (end == std::string::npos) break;
        json obj = json::parse(reply.substr(start, end - start + 1), nullptr, false);
        if (obj.is_object() && obj.contains("score_a")) {
            JudgeVerdict v;
            auto read_score = [&](const char* field) -> int {
                if (!obj.contains(field))
                    throw VerdictError(std::string("judge verdict missing \"") + field + "\"");
                const json& j = obj.at(field);
                if (j.is_number()) return static_cast<int>(std::llround(j.get<double>()));
                if (j.is_string()) {
                    try {
                        return std::stoi(j.get<std::string>());
                    } catch (const std::exception&) {
                        throw VerdictError(std::string("judge verdict field \"") + field +
                                           "\" is not a number");
                    }
                }
                throw VerdictError(std::string("judge verdict field \"") + field +
                                   "\" is not a number");
            };
            int a = read_score("score_a");
            int b = read_score("score_b");
            v.score_a = std::clamp(a, 1, 4);
            v.score_b = std::clamp(b, 1, 4);
            v.clamped = (v.score_a != a) || (v.score_b != b);
            if (obj.contains("analysis") && obj.at("analysis").is_string())
                v.analysis = obj.at("analysis").get<std::string>();

            std::string better =
                obj.contains("better") && obj.at("better").is_string()
                    ? util::lower(util::trim(obj.at("better").get<std::string>()))
                    : std::string();
            if (better == "a")
                v.better = JudgeVerdict::Better::A;
            else if (better == "b")
                v.better = JudgeVerdict::Better::B;
            else if (better == "tie")
                v.better = JudgeVerdict::Better::Tie;
            else
                v.better = v.score_a > v.score_b   ? JudgeVerdict::Better::A
                           : v.score_b > v.score_a ? JudgeVerdict::Better::B
                                                   : JudgeVerdict::Better::Tie;
            return v;
        }
        start += 1;
    }
    throw VerdictError("judge reply carries no JSON verdict with scores");
}

}  // namespace raglc::promptkit
