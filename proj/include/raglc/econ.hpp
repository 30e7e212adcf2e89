#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "raglc/types.hpp"

namespace raglc::policy {
struct RoutingOutcome;
}

namespace raglc::econ {

/// Per-token USD rates for one model tag.
struct ModelRates {
    double input_usd_per_token = 0.0;
    double output_usd_per_token = 0.0;
};

class UnknownModel : public std::runtime_error {
public:
    explicit UnknownModel(const std::string& model)
        : std::runtime_error("no pricing for model \"" + model + "\"") {}
};

struct PricingTable {
    std::map<std::string, ModelRates> rates;
    double retrieval_flat_usd = 0.0;  ///< flat cost charged per retrieval pass

    const ModelRates& lookup(const std::string& model) const;  ///< throws UnknownModel

    /// Built-in rates for the two reference models ("qwen3-235b",
    /// "qwen3-1.7b"), derived from measured per-query token volumes and
    /// their USD totals.
    static PricingTable defaults();

    static PricingTable from_json_stream(std::istream& in);  ///< throws SchemaError
    void to_json_stream(std::ostream& out) const;
};

/// Which phase of a routed query a cost line belongs to.
enum class Leg { route, retrieval, answer_rag, answer_lc };

std::string_view leg_str(Leg l);
Leg leg_parse(std::string_view s);

struct CostRecord {
    Leg leg = Leg::route;
    std::string model;
    long input_tokens = 0;
    long output_tokens = 0;
    double usd_input = 0.0;
    double usd_output = 0.0;
    double usd_total = 0.0;  ///< always usd_input + usd_output (+ flat fees)
};

/// Prices one backend call. Token counts must be non-negative; the model
/// tag must price (throws UnknownModel). Leg::retrieval adds the table's
/// flat retrieval fee.
CostRecord price_leg(Leg leg, const std::string& model, long input_tokens, long output_tokens,
                     const PricingTable& pricing);

/// Expected end-to-end cost of a routing policy:
/// route overhead plus the probability-weighted answer costs.
/// p_lc outside [0, 1] throws std::invalid_argument.
double expected_total_cost(double route_cost, double p_lc, double lc_cost, double rag_cost);

/// Display helper: USD -> thousandths of a USD, rounded to 2 decimals
/// (0.00076042 -> 0.76).
double to_milli_usd(double usd);

/// Per-policy aggregate over a batch of outcomes.
struct PolicyCostSummary {
    std::string policy;
    std::size_t cases = 0;
    double p_lc = 0.0;          ///< fraction routed long-context
    double mean_route = 0.0;    ///< mean routing overhead per case
    double mean_answer = 0.0;   ///< mean answer-phase cost per case
    double mean_total = 0.0;
    double mean_answer_lc = 0.0;   ///< mean answer cost among LC-routed cases
    double mean_answer_rag = 0.0;  ///< mean answer cost among RAG-routed cases
    /// |mean_total - (mean_route + p_lc*mean_answer_lc + (1-p_lc)*mean_answer_rag)|,
    /// kept as a self-check; ~0 up to rounding.
    double decomposition_gap = 0.0;
};

/// Groups outcomes by policy tag and reduces them. Outcomes flagged failed
/// are skipped (their partial legs must not skew means).
std::vector<PolicyCostSummary> aggregate_costs(std::span<const policy::RoutingOutcome> outcomes,
                                               const PricingTable& pricing);

}  // namespace raglc::econ
