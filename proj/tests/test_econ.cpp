#include <sstream>

#include "doctest.h"
#include "raglc/econ.hpp"
#include "raglc/policy.hpp"
#include "raglc/types.hpp"

using namespace raglc;
using namespace raglc::econ;

TEST_CASE("the default pricing table reproduces the measured per-query totals") {
    const auto pricing = PricingTable::defaults();

    // Large model answering over retrieved chunks: 2600 in / 27 out.
    const auto rag = price_leg(Leg::answer_rag, "qwen3-235b", 2600, 27, pricing);
    CHECK(to_milli_usd(rag.usd_total) == doctest::Approx(0.76));

    // Large model doing the routing itself: 1205 in / 648 out.
    const auto big_route = price_leg(Leg::route, "qwen3-235b", 1205, 648, pricing);
    CHECK(to_milli_usd(big_route.usd_total) == doctest::Approx(1.07));

    // Small dedicated router: 1205 in / 670 out.
    const auto small_route = price_leg(Leg::route, "qwen3-1.7b", 1205, 670, pricing);
    CHECK(to_milli_usd(small_route.usd_total) == doctest::Approx(0.16));

    // A 100k-token long-context pass is dominated by input cost.
    const auto lc = price_leg(Leg::answer_lc, "qwen3-235b", 100000, 0, pricing);
    CHECK(lc.usd_input == doctest::Approx(0.028).epsilon(0.04));
    // Routing overhead is under 4% of that pass.
    CHECK(big_route.usd_total / lc.usd_total < 0.04);
}

TEST_CASE("price_leg splits input and output costs and sums them") {
    const auto pricing = PricingTable::defaults();
    const auto rec = price_leg(Leg::answer_lc, "qwen3-235b", 1000, 100, pricing);
    CHECK(rec.usd_total == doctest::Approx(rec.usd_input + rec.usd_output));
    CHECK(rec.input_tokens == 1000);
    CHECK(rec.output_tokens == 100);
    CHECK(rec.model == "qwen3-235b");
}

TEST_CASE("retrieval legs are a flat fee, independent of any model rate") {
    PricingTable pricing = PricingTable::defaults();
    SUBCASE("default: free") {
        const auto rec = price_leg(Leg::retrieval, "gte-multilingual-base", 0, 0, pricing);
        CHECK(rec.usd_total == 0.0);
    }
    SUBCASE("configurable flat fee") {
        pricing.retrieval_flat_usd = 0.0002;
        // The embed model has no token rates; retrieval must not look it up.
        const auto rec = price_leg(Leg::retrieval, "gte-multilingual-base", 123, 0, pricing);
        CHECK(rec.usd_total == doctest::Approx(0.0002));
        CHECK(rec.usd_input == 0.0);
    }
}

TEST_CASE("unknown models and negative token counts are rejected") {
    const auto pricing = PricingTable::defaults();
    CHECK_THROWS_AS(price_leg(Leg::route, "gpt-nonexistent", 1, 1, pricing), UnknownModel);
    CHECK_THROWS_AS(price_leg(Leg::route, "qwen3-235b", -1, 0, pricing), std::invalid_argument);
}

TEST_CASE("expected cost combines route overhead with probability-weighted arms") {
    // C = C_route + p * C_lc + (1 - p) * C_rag
    CHECK(expected_total_cost(0.1, 0.25, 2.0, 0.4) ==
          doctest::Approx(0.1 + 0.25 * 2.0 + 0.75 * 0.4));
    CHECK(expected_total_cost(0.0, 0.0, 9.0, 0.5) == doctest::Approx(0.5));
    CHECK(expected_total_cost(0.0, 1.0, 9.0, 0.5) == doctest::Approx(9.0));
    CHECK_THROWS_AS(expected_total_cost(0.1, 1.5, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(expected_total_cost(-0.1, 0.5, 1.0, 1.0), std::invalid_argument);
}

TEST_CASE("milli-USD display rounding is two decimals") {
    CHECK(to_milli_usd(0.00076041666) == doctest::Approx(0.76));
    CHECK(to_milli_usd(0.001068) == doctest::Approx(1.07));
    CHECK(to_milli_usd(0.0) == 0.0);
    CHECK(to_milli_usd(0.000004999) == doctest::Approx(0.0));   // below half a cent of a milli
    CHECK(to_milli_usd(0.000005001) == doctest::Approx(0.01));
}

TEST_CASE("leg tags round-trip") {
    CHECK(leg_parse("route") == Leg::route);
    CHECK(leg_parse("retrieval") == Leg::retrieval);
    CHECK(leg_str(Leg::answer_lc) == "answer_lc");
    CHECK_THROWS_AS(leg_parse("shipping"), SchemaError);
}

TEST_CASE("pricing tables round-trip through JSON") {
    PricingTable t;
    t.rates["model-x"] = {1e-6, 2e-6};
    t.retrieval_flat_usd = 0.0005;
    std::stringstream buf;
    t.to_json_stream(buf);
    const auto back = PricingTable::from_json_stream(buf);
    CHECK(back.lookup("model-x").input_usd_per_token == doctest::Approx(1e-6));
    CHECK(back.lookup("model-x").output_usd_per_token == doctest::Approx(2e-6));
    CHECK(back.retrieval_flat_usd == doctest::Approx(0.0005));
    CHECK_THROWS_AS(back.lookup("model-y"), UnknownModel);
}

TEST_CASE("aggregate_costs separates route overhead from answer spend") {
    const auto pricing = PricingTable::defaults();
    std::vector<policy::RoutingOutcome> outcomes(2);
    outcomes[0].case_id = "a";
    outcomes[0].policy = "preroute";
    outcomes[0].route = Route::RAG;
    outcomes[0].legs.push_back(
        price_leg(Leg::route, "qwen3-1.7b", 1205, 670, pricing));
    outcomes[0].legs.push_back(price_leg(Leg::retrieval, "embed", 0, 0, pricing));
    outcomes[0].legs.push_back(price_leg(Leg::answer_rag, "qwen3-235b", 2600, 27, pricing));
    outcomes[1].case_id = "b";
    outcomes[1].policy = "preroute";
    outcomes[1].route = Route::LC;
    outcomes[1].legs.push_back(price_leg(Leg::route, "qwen3-1.7b", 1205, 670, pricing));
    outcomes[1].legs.push_back(price_leg(Leg::answer_lc, "qwen3-235b", 100000, 27, pricing));

    const auto got = aggregate_costs(outcomes, pricing);
    REQUIRE(got.size() == 1);
    const auto& s = got[0];
    CHECK(s.policy == "preroute");
    CHECK(s.cases == 2);
    CHECK(s.p_lc == doctest::Approx(0.5));
    CHECK(s.mean_route == doctest::Approx(0.16e-3).epsilon(1e-6));
    // Total = route + answer, and the expected-cost identity holds exactly.
    CHECK(s.mean_total == doctest::Approx(s.mean_route + s.mean_answer));
    CHECK(s.decomposition_gap == doctest::Approx(0.0));
}

TEST_CASE("failed outcomes are excluded from the aggregate") {
    const auto pricing = PricingTable::defaults();
    std::vector<policy::RoutingOutcome> outcomes(2);
    outcomes[0].case_id = "ok";
    outcomes[0].policy = "always_rag";
    outcomes[0].legs.push_back(price_leg(Leg::answer_rag, "qwen3-235b", 100, 10, pricing));
    outcomes[1].case_id = "broken";
    outcomes[1].policy = "always_rag";
    outcomes[1].failed = true;
    const auto got = aggregate_costs(outcomes, pricing);
    REQUIRE(got.size() == 1);
    CHECK(got[0].cases == 1);
}
