#include "doctest.h"
#include "raglc/types.hpp"
#include "raglc/util.hpp"

using namespace raglc;
using namespace raglc::util;

TEST_CASE("fnv1a matches the published reference vectors") {
    // Offset basis for the empty string, then the classic test strings.
    CHECK(fnv1a("") == 14695981039346656037ull);
    CHECK(fnv1a("a") == 12638187200555641996ull);
    CHECK(fnv1a("foobar") == 0x85944171f73967e8ull);
}

TEST_CASE("splitmix64 matches the reference sequence from seed 1234567") {
    // First three outputs of the reference implementation.
    std::uint64_t s = 1234567;
    CHECK((s = splitmix64(s), s) == 6457827717110365317ull);
    CHECK(splitmix64(6457827717110365317ull) != 0);  // progresses, no fixed point here
}

TEST_CASE("lower / trim / contains_ci") {
    CHECK(lower("MiXeD 123") == "mixed 123");
    CHECK(trim("  x  ") == "x");
    CHECK(trim("\t\n") == "");
    CHECK(contains_ci("The RAG pipeline", "rag"));
    CHECK(contains_ci("UNANSWERABLE.", "unanswerable"));
    CHECK_FALSE(contains_ci("short", "longerneedle"));
}

TEST_CASE("format_number trims trailing zeros deterministically") {
    CHECK(format_number(0.5) == "0.5");
    CHECK(format_number(600.0) == "600");
    CHECK(format_number(0.25) == "0.25");
    CHECK(format_number(1.0) == "1");
    CHECK(format_number(0.0) == "0");
    CHECK(format_number(-0.0) == "0");
    CHECK(format_number(0.1234567, 3) == "0.123");
}

TEST_CASE("base64 round-trip and error handling") {
    const std::string payload = "routing bytes \x01\x02";
    const auto encoded = base64_encode(payload.data(), payload.size());
    const auto decoded = base64_decode(encoded);
    CHECK(std::string(decoded.begin(), decoded.end()) == payload);

    CHECK(base64_encode("", 0) == "");
    CHECK(base64_decode("").empty());
    CHECK_THROWS_AS(base64_decode("not!valid"), SchemaError);
}

TEST_CASE("route_str / route_parse") {
    CHECK(route_str(Route::RAG) == "RAG");
    CHECK(route_str(Route::LC) == "LC");
    CHECK(route_parse("rag") == Route::RAG);
    CHECK(route_parse("LONG_CONTEXT") == Route::LC);
    CHECK(route_parse("lc") == Route::LC);
    CHECK_THROWS_AS(route_parse("teleport"), std::invalid_argument);
}
