#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "raglc/tokenizer.hpp"
#include "raglc/types.hpp"

namespace raglc::corpus {

// ---------------------------------------------------------------------------
// Tag-like enums. Each keeps the original string for values outside the
// closed set, so corpora with extra categories flow through untouched.
// ---------------------------------------------------------------------------

struct TaskType {
    enum Kind { location, reasoning, comparison, hallucination, other };
    Kind kind = other;
    std::string tag;  ///< original string when kind == other

    static TaskType parse(std::string_view s);
    std::string str() const;
    bool operator==(const TaskType& o) const { return kind == o.kind && (kind != other || tag == o.tag); }
};

struct DocType {
    enum Kind { novel, financial, paper, other };
    Kind kind = other;
    std::string tag;

    static DocType parse(std::string_view s);
    std::string str() const;
    bool operator==(const DocType& o) const { return kind == o.kind && (kind != other || tag == o.tag); }
};

/// Context-length bucket ("32k", "128k", or any other "<n>k" tag). Buckets
/// outside the two standard ones carry their kilotoken count verbatim.
struct ContextBucket {
    enum Kind { k32, k128, other };
    Kind kind = other;
    long kilotokens = 0;  ///< meaningful when kind == other

    static ContextBucket parse(std::string_view s);
    /// Nearest power-of-two kilotokens in log space (e.g. 96452 tokens is
    /// nearer 128k than 64k because 96452/65536 > 131072/96452).
    static ContextBucket from_tokens(std::size_t tokens);
    std::string str() const;
    bool operator==(const ContextBucket& o) const {
        return kind == o.kind && (kind != other || kilotokens == o.kilotokens);
    }
};

// ---------------------------------------------------------------------------
// Records
// ---------------------------------------------------------------------------

/// One evaluation query bound to a source document.
struct QueryCase {
    std::string id;
    std::string query;
    std::string doc_id;
    TaskType task_type;
    ContextBucket context_bucket;
    std::string ground_truth;  ///< empty = not provided
};

struct Document {
    std::string doc_id;
    std::string title;
    DocType doc_type;
    std::string body;
    std::size_t token_length = 0;  ///< always recomputed from body at ingest
};

/// How much document metadata the router is allowed to see.
enum class MetaMode { full, head_only, generated };

MetaMode meta_mode_parse(std::string_view s);
std::string_view meta_mode_str(MetaMode m);

/// Compact, answer-free view of a document handed to routing. Building one
/// never touches document content beyond the head snippet.
struct DocumentMeta {
    std::optional<std::string> title;     ///< absent under head_only
    std::optional<std::string> doc_type;  ///< absent under head_only
    std::size_t token_length = 0;
    std::string head_snippet;
    bool fits_window = false;
    MetaMode meta_mode = MetaMode::full;
    std::optional<std::string> task_hint;  ///< generated mode only, best-effort
};

enum class Split { train, val, test };

std::string_view split_str(Split s);
Split split_parse(std::string_view s);

struct SplitAssignment {
    std::string case_id;
    Split split = Split::train;
};

// ---------------------------------------------------------------------------
// Corpus container + ingestion
// ---------------------------------------------------------------------------

class Corpus {
public:
    const std::vector<QueryCase>& cases() const { return cases_; }
    bool has_case(const std::string& id) const;
    const QueryCase& case_by_id(const std::string& id) const;  ///< throws SchemaError
    bool has_document(const std::string& doc_id) const;
    const Document& document(const std::string& doc_id) const;  ///< throws SchemaError
    std::size_t document_count() const { return docs_.size(); }

    /// Raw insertion for programmatic construction (tests, generators).
    /// Applies the same duplicate checks as ingestion; token_length of a
    /// document is recomputed with `tok`.
    void add_document(Document doc, const Tokenizer& tok);
    void add_case(QueryCase c);  ///< doc_id must already be present
    /// Derives any case's missing context bucket from its document length.
    void finalize();

private:
    friend Corpus ingest_corpus(std::istream&, const Tokenizer&);
    std::vector<QueryCase> cases_;
    std::map<std::string, Document> docs_;
    std::map<std::string, std::size_t> case_index_;
};

/// Reads a line-delimited stream of JSON records. Records with a "body"
/// field are documents; records with a "query" field are cases; anything
/// else is a schema error. Order is free except that every case's doc_id
/// must resolve by the end of the stream. Malformed lines, missing fields,
/// duplicate ids and dangling doc_ids raise SchemaError with the line number.
Corpus ingest_corpus(std::istream& records, const Tokenizer& tok = default_tokenizer());

/// Two-stream variant: documents first, then cases.
Corpus ingest_corpus(std::istream& cases, std::istream& documents,
                     const Tokenizer& tok = default_tokenizer());

// ---------------------------------------------------------------------------
// Metadata assembly
// ---------------------------------------------------------------------------

/// Callback that writes a one-line description of a document head; used by
/// MetaMode::generated to reconstruct title / type when the corpus lacks
/// them. Receives the head snippet, returns free-form text.
using MetaGenerator = std::function<std::string(const std::string& head_snippet)>;

struct MetaOptions {
    MetaMode mode = MetaMode::full;
    std::size_t head_tokens = 256;    ///< must be > 0
    std::size_t window = 128000;      ///< answering model context window, tokens
    MetaGenerator generator;          ///< required for MetaMode::generated
};

/// Builds the routing view of `doc`. head_snippet is the first
/// `head_tokens` tokens of the body; fits_window is token_length <= window.
/// generated mode calls opts.generator on the head and parses title /
/// doc_type / task hints out of its reply (failures propagate, tagged with
/// the doc id).
DocumentMeta make_meta(const Document& doc, const MetaOptions& opts,
                       const Tokenizer& tok = default_tokenizer());

// ---------------------------------------------------------------------------
// Stratified splitting
// ---------------------------------------------------------------------------

struct SplitRatios {
    double train = 0.70;
    double val = 0.10;
    double test = 0.20;  ///< must sum to 1 (within 1e-9)
};

/// Free-form stratum key; any string tags work, so corpora with categories
/// outside the standard sets stratify the same way.
struct StratumKey {
    std::string doc_type;
    std::string task_type;
    std::string context_bucket;
    auto operator<=>(const StratumKey&) const = default;
};

/// Deterministic stratified split. Within each (doc_type, task_type,
/// context_bucket) stratum, cases are shuffled by a stratum-local generator
/// seeded from `seed` and the stratum key, then apportioned to
/// train/val/test by largest remainder, so the same seed yields the same
/// assignment on any platform. Strata smaller than 3 still receive at least
/// one test case; all cases are assigned exactly once.
std::vector<SplitAssignment> stratified_split(
    std::span<const std::pair<std::string, StratumKey>> keyed_cases, SplitRatios ratios,
    std::uint64_t seed);

/// Convenience overload: derives each case's stratum key from the corpus
/// (document doc_type, case task_type, case context_bucket).
std::vector<SplitAssignment> stratified_split(const Corpus& corpus, SplitRatios ratios,
                                              std::uint64_t seed);

/// Split manifest I/O: one {"case_id": ..., "split": ...} JSON object per line.
void write_split_manifest(std::ostream& out, std::span<const SplitAssignment> assignments);
std::vector<SplitAssignment> read_split_manifest(std::istream& in);

}  // namespace raglc::corpus
