#include "raglc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "raglc/util.hpp"

namespace raglc::corpus {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tag enums
// ---------------------------------------------------------------------------

TaskType TaskType::parse(std::string_view s) {
    const std::string v = util::lower(util::trim(s));
    if (v == "location") return {location, {}};
    if (v == "reasoning") return {reasoning, {}};
    if (v == "comparison") return {comparison, {}};
    if (v == "hallucination") return {hallucination, {}};
    return {other, std::string(util::trim(s))};
}

std::string TaskType::str() const {
    switch (kind) {
        case location: return "location";
        case reasoning: return "reasoning";
        case comparison: return "comparison";
        case hallucination: return "hallucination";
        case other: return tag.empty() ? "other" : tag;
    }
    return "other";
}

DocType DocType::parse(std::string_view s) {
    const std::string v = util::lower(util::trim(s));
    if (v == "novel") return {novel, {}};
    if (v == "financial") return {financial, {}};
    if (v == "paper") return {paper, {}};
    return {other, std::string(util::trim(s))};
}

std::string DocType::str() const {
    switch (kind) {
        case novel: return "novel";
        case financial: return "financial";
        case paper: return "paper";
        case other: return tag.empty() ? "other" : tag;
    }
    return "other";
}

ContextBucket ContextBucket::parse(std::string_view s) {
    std::string v = util::lower(util::trim(s));
    if (!v.empty() && v.back() == 'k') v.pop_back();
    long kt = 0;
    try {
        std::size_t pos = 0;
        kt = std::stol(v, &pos);
        if (pos != v.size() || kt <= 0) throw std::invalid_argument("range");
    } catch (const std::exception&) {
        throw SchemaError("context_bucket: expected \"<n>k\", got \"" + std::string(s) + "\"");
    }
    if (kt == 32) return {k32, 0};
    if (kt == 128) return {k128, 0};
    return {other, kt};
}

ContextBucket ContextBucket::from_tokens(std::size_t tokens) {
    // Round log2(tokens / 1000) to the nearest integer exponent, floor 0,
    // so e.g. 96452 tokens lands in 128k rather than 64k.
    const double kilos = std::max<double>(1e-9, double(tokens) / 1000.0);
    long exp = std::lround(std::log2(kilos));
    if (exp < 0) exp = 0;
    const long kt = 1L << exp;
    if (kt == 32) return {k32, 0};
    if (kt == 128) return {k128, 0};
    return {other, kt};
}

std::string ContextBucket::str() const {
    switch (kind) {
        case k32: return "32k";
        case k128: return "128k";
        case other: return std::to_string(kilotokens) + "k";
    }
    return "0k";
}

MetaMode meta_mode_parse(std::string_view s) {
    const std::string v = util::lower(util::trim(s));
    if (v == "full") return MetaMode::full;
    if (v == "head_only") return MetaMode::head_only;
    if (v == "generated") return MetaMode::generated;
    throw SchemaError("meta_mode: expected full|head_only|generated, got \"" + std::string(s) + "\"");
}

std::string_view meta_mode_str(MetaMode m) {
    switch (m) {
        case MetaMode::full: return "full";
        case MetaMode::head_only: return "head_only";
        case MetaMode::generated: return "generated";
    }
    return "full";
}

std::string_view split_str(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split split_parse(std::string_view s) {
    const std::string v = util::lower(util::trim(s));
    if (v == "train") return Split::train;
    if (v == "val" || v == "validation") return Split::val;
    if (v == "test") return Split::test;
    throw SchemaError("split: expected train|val|test, got \"" + std::string(s) + "\"");
}

// ---------------------------------------------------------------------------
// Corpus container
// ---------------------------------------------------------------------------

bool Corpus::has_case(const std::string& id) const { return case_index_.count(id) > 0; }

const QueryCase& Corpus::case_by_id(const std::string& id) const {
    auto it = case_index_.find(id);
    if (it == case_index_.end()) throw SchemaError("unknown case id \"" + id + "\"");
    return cases_[it->second];
}

bool Corpus::has_document(const std::string& doc_id) const { return docs_.count(doc_id) > 0; }

const Document& Corpus::document(const std::string& doc_id) const {
    auto it = docs_.find(doc_id);
    if (it == docs_.end()) throw SchemaError("unknown doc_id \"" + doc_id + "\"");
    return it->second;
}

void Corpus::add_document(Document doc, const Tokenizer& tok) {
    if (doc.doc_id.empty()) throw SchemaError("document: doc_id must be non-empty");
    if (doc.body.empty()) throw SchemaError("document \"" + doc.doc_id + "\": body must be non-empty");
    if (docs_.count(doc.doc_id)) throw SchemaError("duplicate doc_id \"" + doc.doc_id + "\"");
    doc.token_length = tok.count(doc.body);
    docs_.emplace(doc.doc_id, std::move(doc));
}

void Corpus::add_case(QueryCase c) {
    if (c.id.empty()) throw SchemaError("case: id must be non-empty");
    if (c.query.empty()) throw SchemaError("case \"" + c.id + "\": query must be non-empty");
    if (case_index_.count(c.id)) throw SchemaError("duplicate case id \"" + c.id + "\"");
    if (!docs_.count(c.doc_id))
        throw SchemaError("case \"" + c.id + "\": doc_id \"" + c.doc_id + "\" not found");
    case_index_.emplace(c.id, cases_.size());
    cases_.push_back(std::move(c));
}

void Corpus::finalize() {
    for (auto& c : cases_) {
        // kind == other with kilotokens == 0 marks "bucket not provided".
        if (c.context_bucket.kind == ContextBucket::other && c.context_bucket.kilotokens == 0)
            c.context_bucket = ContextBucket::from_tokens(document(c.doc_id).token_length);
    }
}

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

namespace {

std::string require_string(const json& rec, const char* field, std::size_t line) {
    auto it = rec.find(field);
    if (it == rec.end() || !it->is_string() || it->get<std::string>().empty())
        throw SchemaError("line " + std::to_string(line) + ": missing or empty field \"" + field +
                          "\"");
    return it->get<std::string>();
}

std::string optional_string(const json& rec, const char* field) {
    auto it = rec.find(field);
    if (it == rec.end() || it->is_null()) return {};
    if (!it->is_string()) throw SchemaError(std::string("field \"") + field + "\" must be a string");
    return it->get<std::string>();
}

struct PendingCase {
    QueryCase c;
    std::size_t line = 0;
    bool bucket_given = false;
};

}  // namespace

Corpus ingest_corpus(std::istream& records, const Tokenizer& tok) {
    Corpus corpus;
    std::vector<PendingCase> pending;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(records, line)) {
        ++lineno;
        if (util::trim(line).empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
        }
        if (!rec.is_object())
            throw SchemaError("line " + std::to_string(lineno) + ": record must be a JSON object");

        if (rec.contains("body")) {
            Document d;
            d.doc_id = require_string(rec, "doc_id", lineno);
            d.title = optional_string(rec, "title");
            d.doc_type = DocType::parse(optional_string(rec, "doc_type"));
            d.body = require_string(rec, "body", lineno);
            try {
                corpus.add_document(std::move(d), tok);
            } catch (const SchemaError& e) {
                throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
            }
        } else if (rec.contains("query")) {
            PendingCase p;
            p.line = lineno;
            p.c.id = require_string(rec, "id", lineno);
            p.c.query = require_string(rec, "query", lineno);
            p.c.doc_id = require_string(rec, "doc_id", lineno);
            p.c.task_type = TaskType::parse(require_string(rec, "task_type", lineno));
            if (rec.contains("context_bucket")) {
                p.c.context_bucket = ContextBucket::parse(rec.at("context_bucket").get<std::string>());
                p.bucket_given = true;
            }
            p.c.ground_truth = optional_string(rec, "ground_truth");
            pending.push_back(std::move(p));
        } else {
            throw SchemaError("line " + std::to_string(lineno) +
                              ": record is neither a document (\"body\") nor a case (\"query\")");
        }
    }

    for (auto& p : pending) {
        try {
            corpus.add_case(std::move(p.c));
        } catch (const SchemaError& e) {
            throw SchemaError("line " + std::to_string(p.line) + ": " + e.what());
        }
    }
    corpus.finalize();
    return corpus;
}

Corpus ingest_corpus(std::istream& cases, std::istream& documents, const Tokenizer& tok) {
    std::stringstream merged;
    merged << documents.rdbuf();
    merged << '\n';
    merged << cases.rdbuf();
    return ingest_corpus(merged, tok);
}

// ---------------------------------------------------------------------------
// Metadata assembly
// ---------------------------------------------------------------------------

namespace {

/// Pulls a plausible title out of free-form generator text: the first
/// double-quoted span if any, else the first non-empty line (trimmed,
/// capped at 120 bytes).
std::string extract_title(const std::string& text) {
    auto open = text.find('"');
    if (open != std::string::npos) {
        auto close = text.find('"', open + 1);
        if (close != std::string::npos && close > open + 1)
            return text.substr(open + 1, close - open - 1);
    }
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        auto t = util::trim(line);
        if (!t.empty()) return std::string(t.substr(0, 120));
    }
    return "(untitled)";
}

DocType classify_doc_type(const std::string& text) {
    if (util::contains_ci(text, "financial") || util::contains_ci(text, "earnings") ||
        util::contains_ci(text, "10-k") || util::contains_ci(text, "quarterly report"))
        return {DocType::financial, {}};
    if (util::contains_ci(text, "novel") || util::contains_ci(text, "fiction") ||
        util::contains_ci(text, "story"))
        return {DocType::novel, {}};
    if (util::contains_ci(text, "paper") || util::contains_ci(text, "research") ||
        util::contains_ci(text, "article"))
        return {DocType::paper, {}};
    return {DocType::other, "unknown"};
}

std::optional<std::string> extract_task_hint(const std::string& text) {
    for (const char* kw : {"location", "reasoning", "comparison", "hallucination"})
        if (util::contains_ci(text, kw)) return std::string(kw);
    return std::nullopt;
}

}  // namespace

DocumentMeta make_meta(const Document& doc, const MetaOptions& opts, const Tokenizer& tok) {
    if (opts.head_tokens == 0) throw std::invalid_argument("make_meta: head_tokens must be > 0");
    DocumentMeta meta;
    meta.meta_mode = opts.mode;
    meta.token_length = doc.token_length ? doc.token_length : tok.count(doc.body);
    meta.head_snippet = std::string(tok.prefix(doc.body, opts.head_tokens));
    meta.fits_window = meta.token_length <= opts.window;

    switch (opts.mode) {
        case MetaMode::full:
            meta.title = doc.title;
            meta.doc_type = doc.doc_type.str();
            break;
        case MetaMode::head_only:
            break;  // title / doc_type stay absent
        case MetaMode::generated: {
            if (!opts.generator)
                throw std::invalid_argument("make_meta: generated mode requires a generator");
            std::string reply;
            try {
                reply = opts.generator(meta.head_snippet);
            } catch (const std::exception& e) {
                throw std::runtime_error("make_meta: generator failed for doc \"" + doc.doc_id +
                                         "\": " + e.what());
            }
            meta.title = extract_title(reply);
            meta.doc_type = classify_doc_type(reply).str();
            meta.task_hint = extract_task_hint(reply);
            break;
        }
    }
    return meta;
}

// ---------------------------------------------------------------------------
// Stratified split
// ---------------------------------------------------------------------------

namespace {

std::uint64_t stratum_seed(std::uint64_t seed, const StratumKey& key) {
    std::string joined = key.doc_type;
    joined += '\x1f';
    joined += key.task_type;
    joined += '\x1f';
    joined += key.context_bucket;
    return util::splitmix64(seed ^ util::fnv1a(joined));
}

/// In-place Fisher–Yates with explicit modulo draw. std::shuffle's output is
/// implementation-defined, so a hand-rolled pass keeps assignments identical
/// across standard libraries.
void deterministic_shuffle(std::vector<std::size_t>& v, std::uint64_t seed) {
    std::mt19937_64 eng(seed);
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(eng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

struct Quota {
    std::size_t train = 0, val = 0, test = 0;
};

/// Largest-remainder apportionment of n into train/val/test, with the
/// guarantee that any non-empty stratum keeps at least one test case.
Quota apportion(std::size_t n, const SplitRatios& r) {
    const double targets[3] = {r.train * double(n), r.val * double(n), r.test * double(n)};
    std::size_t counts[3];
    double fracs[3];
    std::size_t used = 0;
    for (int i = 0; i < 3; ++i) {
        counts[i] = static_cast<std::size_t>(targets[i]);
        fracs[i] = targets[i] - double(counts[i]);
        used += counts[i];
    }
    // Hand out the remainder by descending fractional part; ties go to the
    // earlier slot (train, val, test) so results are platform-stable.
    std::size_t left = n - used;
    int order[3] = {0, 1, 2};
    std::stable_sort(order, order + 3, [&](int a, int b) { return fracs[a] > fracs[b]; });
    for (std::size_t k = 0; k < left; ++k) ++counts[order[k % 3]];

    Quota q{counts[0], counts[1], counts[2]};
    if (n > 0 && q.test == 0) {
        if (q.train > 0)
            --q.train;
        else
            --q.val;
        ++q.test;
    }
    return q;
}

}  // namespace

std::vector<SplitAssignment> stratified_split(
    std::span<const std::pair<std::string, StratumKey>> keyed_cases, SplitRatios ratios,
    std::uint64_t seed) {
    const double sum = ratios.train + ratios.val + ratios.test;
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("stratified_split: ratios must sum to 1");
    if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0)
        throw std::invalid_argument("stratified_split: ratios must be non-negative");

    std::map<std::string, std::size_t> seen;
    for (std::size_t i = 0; i < keyed_cases.size(); ++i) {
        if (!seen.emplace(keyed_cases[i].first, i).second)
            throw SchemaError("stratified_split: duplicate case id \"" + keyed_cases[i].first + "\"");
    }

    // Group indices by stratum; members sorted by case id so the assignment
    // is independent of input order.
    std::map<StratumKey, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < keyed_cases.size(); ++i)
        strata[keyed_cases[i].second].push_back(i);

    std::vector<Split> result(keyed_cases.size(), Split::train);
    for (auto& [key, members] : strata) {
        std::sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) {
            return keyed_cases[a].first < keyed_cases[b].first;
        });
        deterministic_shuffle(members, stratum_seed(seed, key));
        const Quota q = apportion(members.size(), ratios);
        for (std::size_t k = 0; k < members.size(); ++k) {
            Split s = k < q.train ? Split::train : (k < q.train + q.val ? Split::val : Split::test);
            result[members[k]] = s;
        }
    }

    std::vector<SplitAssignment> out;
    out.reserve(keyed_cases.size());
    for (std::size_t i = 0; i < keyed_cases.size(); ++i)
        out.push_back({keyed_cases[i].first, result[i]});
    return out;
}

std::vector<SplitAssignment> stratified_split(const Corpus& corpus, SplitRatios ratios,
                                              std::uint64_t seed) {
    std::vector<std::pair<std::string, StratumKey>> keyed;
    keyed.reserve(corpus.cases().size());
    for (const auto& c : corpus.cases()) {
        const Document& doc = corpus.document(c.doc_id);
        keyed.emplace_back(
            c.id, StratumKey{doc.doc_type.str(), c.task_type.str(), c.context_bucket.str()});
    }
    return stratified_split(keyed, ratios, seed);
}

void write_split_manifest(std::ostream& out, std::span<const SplitAssignment> assignments) {
    for (const auto& a : assignments) {
        json rec{{"case_id", a.case_id}, {"split", std::string(split_str(a.split))}};
        out << rec.dump() << '\n';
    }
}

std::vector<SplitAssignment> read_split_manifest(std::istream& in) {
    std::vector<SplitAssignment> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (util::trim(line).empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
        }
        SplitAssignment a;
        a.case_id = require_string(rec, "case_id", lineno);
        a.split = split_parse(require_string(rec, "split", lineno));
        out.push_back(std::move(a));
    }
    return out;
}

}  // namespace raglc::corpus
