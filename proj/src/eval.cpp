#include "raglc/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "raglc/util.hpp"

namespace raglc::eval {

Route ideal_label(const PairedOutcome& po) {
    return po.u_lc > po.u_rag ? Route::LC : Route::RAG;
}

MetricsReport compute_metrics(std::span<const policy::RoutingOutcome> outcomes,
                              const std::map<std::string, PairedOutcome>& paired,
                              std::size_t clamp_events) {
    MetricsReport report;
    report.clamp_events = clamp_events;
    double qa_sum = 0.0;
    std::size_t lc = 0, correct = 0;

    for (const auto& o : outcomes) {
        if (o.failed) {
            ++report.failures;
            continue;
        }
        auto it = paired.find(o.case_id);
        if (it == paired.end())
            throw SchemaError("compute_metrics: no paired outcome for case \"" + o.case_id + "\"");
        const PairedOutcome& po = it->second;
        qa_sum += o.route == Route::LC ? po.u_lc : po.u_rag;
        if (o.route == Route::LC) ++lc;
        if (o.route == ideal_label(po)) ++correct;
        ++report.n;
    }

    if (report.n > 0) {
        report.qa_score = qa_sum / double(report.n);
        report.lc_rate = double(lc) / double(report.n);
        report.route_accuracy = double(correct) / double(report.n);
    }
    return report;
}

std::map<std::size_t, double> bon_accuracy(
    const std::map<std::string, std::vector<Route>>& draws,
    const std::map<std::string, Route>& ideals, std::span<const std::size_t> ns,
    policy::BonAggregation aggregation) {
    if (draws.empty()) throw std::invalid_argument("bon_accuracy: no draws");
    std::size_t max_n = 0;
    for (std::size_t n : ns) {
        if (n == 0) throw std::invalid_argument("bon_accuracy: N must be >= 1");
        max_n = std::max(max_n, n);
    }

    for (const auto& [case_id, ds] : draws) {
        if (ds.size() < max_n)
            throw std::invalid_argument("bon_accuracy: case \"" + case_id + "\" has " +
                                        std::to_string(ds.size()) + " draws, need " +
                                        std::to_string(max_n));
        if (!ideals.count(case_id))
            throw SchemaError("bon_accuracy: no ideal label for case \"" + case_id + "\"");
    }

    std::map<std::size_t, double> out;
    for (std::size_t n : ns) {
        std::size_t correct = 0;
        for (const auto& [case_id, ds] : draws) {
            const Route ideal = ideals.at(case_id);
            const std::span<const Route> head(ds.data(), n);
            bool hit;
            if (aggregation == policy::BonAggregation::oracle)
                hit = std::find(head.begin(), head.end(), ideal) != head.end();
            else
                hit = policy::majority_route(head) == ideal;
            if (hit) ++correct;
        }
        out[n] = double(correct) / double(draws.size());
    }
    return out;
}

JudgedPair judge_pair(const corpus::QueryCase& c, const std::string& answer_rag,
                      const std::string& answer_lc, promptkit::JudgeRubric rubric,
                      const JudgeEnv& env, std::uint64_t order_seed) {
    if (!env.judge) throw std::invalid_argument("judge_pair: judge backend must be set");
    if (env.judge_model.empty()) throw std::invalid_argument("judge_pair: judge_model must be set");
    if (c.ground_truth.empty())
        throw std::invalid_argument("judge_pair: case \"" + c.id + "\" has no ground truth");

    JudgedPair result;
    result.rag_in_slot_a = (util::splitmix64(order_seed ^ util::fnv1a(c.id)) & 1u) == 0;
    const std::string& a = result.rag_in_slot_a ? answer_rag : answer_lc;
    const std::string& b = result.rag_in_slot_a ? answer_lc : answer_rag;

    const auto bundle = promptkit::render_judge_prompt(c.query, c.ground_truth, a, b, rubric);
    pipeline::ChatRequest req;
    req.model = env.judge_model;
    req.messages.push_back({"user", bundle.user});
    req.max_output_tokens = env.max_output_tokens;
    req.key = std::string(promptkit::template_id_str(bundle.template_id)) + "/" + c.id;

    promptkit::JudgeVerdict verdict;
    try {
        verdict = promptkit::parse_judge_verdict(env.judge->complete(req).text);
    } catch (const promptkit::VerdictError&) {
        // One retry: judges occasionally wrap the JSON in prose too broken
        // to recover. A second malformed reply propagates.
        verdict = promptkit::parse_judge_verdict(env.judge->complete(req).text);
    }

    result.clamped = verdict.clamped;
    result.outcome.case_id = c.id;
    result.outcome.source = PairedOutcome::Source::judged;
    if (result.rag_in_slot_a) {
        result.outcome.u_rag = verdict.score_a;
        result.outcome.u_lc = verdict.score_b;
    } else {
        result.outcome.u_rag = verdict.score_b;
        result.outcome.u_lc = verdict.score_a;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Paired statistics
// ---------------------------------------------------------------------------

namespace {

/// Continued-fraction core for the regularized incomplete beta (modified
/// Lentz iteration).
double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-15;
    constexpr double kTiny = 1e-300;

    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0)
        throw std::invalid_argument("regularized_incomplete_beta: a, b must be > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;

    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(ln_front);
    // The continued fraction converges fast only on one side of the mean;
    // use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the other.
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

PairedStats paired_stats(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw std::invalid_argument("paired_stats: lists must have equal length");
    if (a.size() < 2) throw std::invalid_argument("paired_stats: need at least two pairs");

    PairedStats s;
    s.n = a.size();
    const double n = double(s.n);

    double sum = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) sum += a[i] - b[i];
    s.mean_diff = sum / n;

    double ss = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) {
        const double dev = (a[i] - b[i]) - s.mean_diff;
        ss += dev * dev;
    }
    s.sd_diff = std::sqrt(ss / (n - 1.0));

    if (s.sd_diff == 0.0) {
        s.d_undefined = true;
        if (s.mean_diff == 0.0) {
            // Identical lists: no difference, no evidence.
            s.t = 0.0;
            s.p = 1.0;
            s.cohen_d = 0.0;
        } else {
            // Constant non-zero difference: the statistic diverges.
            s.t_infinite = true;
            const double sign = s.mean_diff > 0 ? 1.0 : -1.0;
            s.t = sign * std::numeric_limits<double>::infinity();
            s.cohen_d = s.t;
            s.p = 0.0;
        }
        return s;
    }

    s.t = s.mean_diff / (s.sd_diff / std::sqrt(n));
    s.cohen_d = s.mean_diff / s.sd_diff;
    const double df = n - 1.0;
    s.p = regularized_incomplete_beta(df / 2.0, 0.5, df / (df + s.t * s.t));
    return s;
}

}  // namespace raglc::eval
