#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "raglc/corpus.hpp"
#include "raglc/pipeline.hpp"
#include "raglc/policy.hpp"
#include "raglc/promptkit.hpp"
#include "raglc/types.hpp"

namespace raglc::eval {

/// Judged quality of both arms for one case, on the 1-4 scale (fractions
/// allowed when scores are averaged over repeats).
struct PairedOutcome {
    std::string case_id;
    double u_rag = 0.0;
    double u_lc = 0.0;
    enum class Source { fixture, judged } source = Source::fixture;
};

/// The per-case label a perfect router would pick: LC only when it scores
/// strictly higher; ties go to the cheaper arm. Over any batch this rule
/// maximizes total score and, among score-maximizing rules, minimizes cost
/// (long-context is never cheaper than retrieval).
Route ideal_label(const PairedOutcome& po);

struct MetricsReport {
    double qa_score = 0.0;        ///< mean realized score (arm actually taken)
    double lc_rate = 0.0;         ///< fraction routed long-context
    double route_accuracy = 0.0;  ///< agreement with ideal labels
    std::size_t n = 0;            ///< cases counted (failures excluded)
    std::size_t failures = 0;     ///< cases skipped as failed
    std::size_t clamp_events = 0; ///< judge scores clamped into range
};

/// Scores a batch of routing outcomes against paired arm qualities. Failed
/// outcomes are excluded from every mean and counted separately. A
/// non-failed outcome without a paired entry is an error (SchemaError).
MetricsReport compute_metrics(std::span<const policy::RoutingOutcome> outcomes,
                              const std::map<std::string, PairedOutcome>& paired,
                              std::size_t clamp_events = 0);

/// Accuracy of best-of-N routing as a function of N.
///   oracle   — a case counts as correct when ANY of its first N draws
///              matches the ideal label (selection upper bound)
///   majority — the majority vote of the first N draws must match
/// Every case needs at least max(ns) draws and an ideal label; anything
/// less is an error.
std::map<std::size_t, double> bon_accuracy(
    const std::map<std::string, std::vector<Route>>& draws,
    const std::map<std::string, Route>& ideals, std::span<const std::size_t> ns,
    policy::BonAggregation aggregation);

struct JudgeEnv {
    pipeline::ChatClient* judge = nullptr;
    std::string judge_model;
    int max_output_tokens = 1024;
};

struct JudgedPair {
    PairedOutcome outcome;
    bool clamped = false;      ///< a score came back out of range
    bool rag_in_slot_a = false;  ///< how the seeded coin assigned the arms
};

/// Judges one case's pair of answers. Slot order (which arm is "A") is a
/// seeded coin flip on (order_seed, case id) so position bias averages out
/// but reruns reproduce. A malformed verdict is retried once, then raises
/// VerdictError; the case needs a non-empty ground truth.
JudgedPair judge_pair(const corpus::QueryCase& c, const std::string& answer_rag,
                      const std::string& answer_lc, promptkit::JudgeRubric rubric,
                      const JudgeEnv& env, std::uint64_t order_seed);

// ---------------------------------------------------------------------------
// Paired comparison statistics
// ---------------------------------------------------------------------------

struct PairedStats {
    std::size_t n = 0;
    double mean_diff = 0.0;
    double sd_diff = 0.0;   ///< sample std-dev of differences (n-1 denominator)
    double t = 0.0;
    double p = 1.0;         ///< two-sided
    double cohen_d = 0.0;   ///< mean_diff / sd_diff
    bool t_infinite = false;   ///< sd 0 with non-zero mean: all diffs equal
    bool d_undefined = false;  ///< sd 0: effect size has no finite value
};

/// Paired t-test of a vs b (same cases, same order). Degenerate inputs are
/// flagged instead of producing NaNs: identical lists give p = 1, constant
/// non-zero differences give p = 0 with the infinite-t flag. Fewer than two
/// pairs or mismatched lengths throw std::invalid_argument.
PairedStats paired_stats(std::span<const double> a, std::span<const double> b);

/// Regularized incomplete beta I_x(a, b), evaluated by continued fraction;
/// the two-sided t-test p-value is I_{df/(df+t^2)}(df/2, 1/2). Accurate to
/// well below 1e-6 relative over the library's use range.
double regularized_incomplete_beta(double a, double b, double x);

}  // namespace raglc::eval
