#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace raglc {

/// Where an answer ultimately comes from: a retrieval-augmented pass over
/// chunks, or a single long-context pass over the whole document.
enum class Route { RAG, LC };

inline std::string_view route_str(Route r) { return r == Route::RAG ? "RAG" : "LC"; }

/// Parses "RAG" / "LC" / "LONG_CONTEXT" (case-insensitive). Throws
/// std::invalid_argument on anything else.
Route route_parse(std::string_view s);

/// Error raised when an input record or payload violates the documented
/// schema. `what()` always names the offending field and, for line-delimited
/// sources, the 1-based line number.
class SchemaError : public std::runtime_error {
public:
    explicit SchemaError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace raglc
