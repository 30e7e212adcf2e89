#include "raglc/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <numeric>
#include <set>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "raglc/util.hpp"

namespace raglc::pipeline {

using nlohmann::json;

// ---------------------------------------------------------------------------
// RagConfig
// ---------------------------------------------------------------------------

void RagConfig::validate() const {
    if (chunk_size == 0) throw std::invalid_argument("rag config: chunk_size must be > 0");
    if (chunk_overlap >= chunk_size)
        throw std::invalid_argument("rag config: chunk_overlap must be < chunk_size");
    if (vector_ratio < 0.0 || vector_ratio > 1.0)
        throw std::invalid_argument("rag config: vector_ratio must be in [0, 1]");
    if (rerank_size == 0) throw std::invalid_argument("rag config: rerank_size must be > 0");
}

// ---------------------------------------------------------------------------
// Chunking
// ---------------------------------------------------------------------------

std::vector<Chunk> chunk_document(const corpus::Document& doc, const RagConfig& cfg,
                                  const Tokenizer& tok) {
    cfg.validate();
    const auto spans = tok.tokenize(doc.body);
    const std::size_t n = spans.size();
    std::vector<Chunk> out;
    if (n == 0) return out;

    const std::size_t stride = cfg.chunk_size - cfg.chunk_overlap;
    std::size_t start = 0, index = 0;
    while (true) {
        const std::size_t end = std::min(start + cfg.chunk_size, n);
        const std::size_t byte_begin = spans[start].begin;
        const std::size_t byte_end = spans[end - 1].end;
        out.push_back({doc.doc_id, index, start, end,
                       std::string(doc.body.substr(byte_begin, byte_end - byte_begin))});
        if (end >= n) break;
        start += stride;
        ++index;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw ChatError("embed", "embedding dimensions disagree (" + std::to_string(a.size()) +
                                     " vs " + std::to_string(b.size()) + ")");
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

template <typename F, typename... Args>
auto call_hook(const char* stage, F&& f, Args&&... args) {
    try {
        return f(std::forward<Args>(args)...);
    } catch (const ChatError&) {
        throw;
    } catch (const std::exception& e) {
        throw ChatError(stage, e.what());
    }
}

}  // namespace

RetrievalResult retrieve(const std::string& query, std::span<const Chunk> chunks,
                         const RagConfig& cfg, const EmbedFn& embed, const RerankFn& rerank) {
    cfg.validate();
    if (!embed) throw std::invalid_argument("retrieve: embed hook must be set");
    if (!rerank) throw std::invalid_argument("retrieve: rerank hook must be set");

    RetrievalResult result;
    const std::size_t m = chunks.size();
    result.short_of_k = m < cfg.rerank_size;
    if (m == 0) return result;

    // Stage 1: vector preselection. vector_ratio == 0 disables the vector
    // stage entirely and hands every chunk to the reranker.
    std::vector<std::size_t> candidates(m);
    std::iota(candidates.begin(), candidates.end(), 0);
    if (cfg.vector_ratio > 0.0) {
        const auto want = static_cast<std::size_t>(
            std::ceil(double(cfg.rerank_size) / cfg.vector_ratio));
        const std::vector<double> q = call_hook("embed", embed, query);
        std::vector<double> sims(m);
        for (std::size_t i = 0; i < m; ++i)
            sims[i] = cosine(q, call_hook("embed", embed, chunks[i].text));
        std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
            if (sims[a] != sims[b]) return sims[a] > sims[b];
            return a < b;  // ties: earlier chunk wins
        });
        if (want < candidates.size()) candidates.resize(want);
    }

    // Stage 2: rerank the candidates, keep the top k.
    std::vector<std::pair<std::size_t, double>> scored;
    scored.reserve(candidates.size());
    for (std::size_t i : candidates)
        scored.emplace_back(i, call_hook("rerank", rerank, query, chunks[i].text));
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    const std::size_t keep = std::min<std::size_t>(cfg.rerank_size, scored.size());
    result.chunks.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i)
        result.chunks.push_back({chunks[scored[i].first], scored[i].second});
    return result;
}

EmbedFn hashed_bag_embedder(std::size_t dim) {
    if (dim == 0) throw std::invalid_argument("hashed_bag_embedder: dim must be > 0");
    return [dim](const std::string& text) {
        std::vector<double> v(dim, 0.0);
        const auto spans = default_tokenizer().tokenize(text);
        for (const auto& s : spans) {
            const std::string token = util::lower(std::string_view(text).substr(s.begin, s.end - s.begin));
            v[util::fnv1a(token) % dim] += 1.0;
        }
        return v;
    };
}

RerankFn token_overlap_reranker() {
    return [](const std::string& query, const std::string& chunk_text) {
        auto collect = [](const std::string& text) {
            std::set<std::string> words;
            for (const auto& s : default_tokenizer().tokenize(text))
                words.insert(util::lower(std::string_view(text).substr(s.begin, s.end - s.begin)));
            return words;
        };
        const auto q = collect(query);
        const auto c = collect(chunk_text);
        if (q.empty()) return 0.0;
        std::size_t hits = 0;
        for (const auto& w : q) hits += c.count(w);
        return double(hits) / double(q.size());
    };
}

// ---------------------------------------------------------------------------
// Long-context assembly
// ---------------------------------------------------------------------------

LcAssembly assemble_lc_prompt(const corpus::QueryCase& c, const corpus::Document& doc,
                              std::size_t window, std::size_t answer_budget,
                              const Tokenizer& tok) {
    if (window == 0) throw std::invalid_argument("assemble_lc_prompt: window must be > 0");

    const std::string frame = "\n\n---\n\nQuestion: " + c.query + "\nAnswer:";
    const std::size_t frame_tokens = tok.count(frame);
    const std::size_t reserved = frame_tokens + answer_budget;
    const std::size_t doc_budget = window > reserved ? window - reserved : 0;
    const std::size_t doc_tokens = doc.token_length ? doc.token_length : tok.count(doc.body);

    LcAssembly out;
    std::string_view body = doc.body;
    if (doc_tokens > doc_budget) {
        body = tok.prefix(doc.body, doc_budget);
        out.truncated = true;
    }

    out.request.messages.push_back({"user", std::string(body) + frame});
    out.request.max_output_tokens = static_cast<int>(answer_budget);
    out.request.temperature = 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

namespace {

ChatResponse materialize(const ChatRequest& req, const ScriptedResponse& r) {
    ChatResponse resp;
    resp.text = r.text;
    resp.model = req.model;
    if (r.input_tokens >= 0) {
        resp.input_tokens = r.input_tokens;
    } else {
        std::size_t total = 0;
        for (const auto& m : req.messages) total += default_tokenizer().count(m.content);
        resp.input_tokens = static_cast<long>(total);
    }
    resp.output_tokens =
        r.output_tokens >= 0 ? r.output_tokens : static_cast<long>(default_tokenizer().count(r.text));
    return resp;
}

}  // namespace

void MockChatClient::add_keyed(std::string key, ScriptedResponse r) {
    std::lock_guard lock(mu_);
    keyed_[std::move(key)].push_back(std::move(r));
}

void MockChatClient::add_keyed_sequence(std::string key, std::vector<ScriptedResponse> rs) {
    std::lock_guard lock(mu_);
    auto& q = keyed_[std::move(key)];
    for (auto& r : rs) q.push_back(std::move(r));
}

void MockChatClient::push(ScriptedResponse r) {
    std::lock_guard lock(mu_);
    fifo_.push_back(std::move(r));
}

ChatResponse MockChatClient::complete(const ChatRequest& req) {
    std::lock_guard lock(mu_);
    ++calls_;
    if (!req.key.empty()) {
        auto it = keyed_.find(req.key);
        if (it != keyed_.end()) {
            if (it->second.empty())
                throw ChatError("mock", "script exhausted for key \"" + req.key + "\"");
            ScriptedResponse r = std::move(it->second.front());
            it->second.pop_front();
            ++key_calls_[req.key];
            return materialize(req, r);
        }
        // No entry for this key: fall through to the FIFO script.
    }
    if (fifo_.empty()) {
        const std::string what = req.key.empty()
                                     ? "script exhausted after " + std::to_string(calls_ - 1) +
                                           " replies"
                                     : "no scripted response for key \"" + req.key + "\"";
        throw ChatError("mock", what);
    }
    ScriptedResponse r = std::move(fifo_.front());
    fifo_.pop_front();
    if (!req.key.empty()) ++key_calls_[req.key];
    return materialize(req, r);
}

int MockChatClient::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

int MockChatClient::calls_for_key(const std::string& key) const {
    std::lock_guard lock(mu_);
    auto it = key_calls_.find(key);
    return it == key_calls_.end() ? 0 : it->second;
}

std::shared_ptr<MockChatClient> mock_backend(std::istream& script) {
    auto client = std::make_shared<MockChatClient>();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(script, line)) {
        ++lineno;
        if (util::trim(line).empty()) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw SchemaError("script line " + std::to_string(lineno) +
                              ": malformed JSON: " + e.what());
        }
        if (!rec.is_object() || !rec.contains("text") || !rec.at("text").is_string())
            throw SchemaError("script line " + std::to_string(lineno) +
                              ": record needs a string \"text\" field");
        ScriptedResponse r;
        r.text = rec.at("text").get<std::string>();
        if (rec.contains("input_tokens")) r.input_tokens = rec.at("input_tokens").get<long>();
        if (rec.contains("output_tokens")) r.output_tokens = rec.at("output_tokens").get<long>();
        const int repeat = rec.value("repeat", 1);
        for (int i = 0; i < repeat; ++i) {
            if (rec.contains("key") && rec.at("key").is_string())
                client->add_keyed(rec.at("key").get<std::string>(), r);
            else
                client->push(r);
        }
    }
    return client;
}

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

struct HttpChatClient::Impl {
    HttpBackendOptions opts;
    std::mutex pace_mu;
    std::chrono::steady_clock::time_point last_call{};
};

HttpChatClient::HttpChatClient(HttpBackendOptions opts) : impl_(std::make_unique<Impl>()) {
    if (opts.base_url.empty())
        throw std::invalid_argument("http backend: base_url must be set");
    impl_->opts = std::move(opts);
}

HttpChatClient::~HttpChatClient() = default;

ChatResponse HttpChatClient::complete(const ChatRequest& req) {
    const auto& opts = impl_->opts;

    if (opts.min_interval_ms > 0) {
        std::unique_lock lock(impl_->pace_mu);
        const auto now = std::chrono::steady_clock::now();
        const auto gap = std::chrono::duration<double, std::milli>(now - impl_->last_call).count();
        if (impl_->last_call.time_since_epoch().count() != 0 && gap < opts.min_interval_ms)
            std::this_thread::sleep_for(
                std::chrono::duration<double, std::milli>(opts.min_interval_ms - gap));
        impl_->last_call = std::chrono::steady_clock::now();
    }

    json payload{{"model", req.model},
                 {"max_tokens", req.max_output_tokens},
                 {"temperature", req.temperature},
                 {"enable_thinking", req.thinking == ThinkingMode::on}};
    payload["messages"] = json::array();
    for (const auto& m : req.messages)
        payload["messages"].push_back({{"role", m.role}, {"content", m.content}});
    const std::string body = payload.dump();

    std::string last_error;
    for (int attempt = 0; attempt <= opts.retries; ++attempt) {
        httplib::Client cli(opts.base_url);
        cli.set_connection_timeout(opts.timeout_seconds, 0);
        cli.set_read_timeout(opts.timeout_seconds, 0);
        cli.set_write_timeout(opts.timeout_seconds, 0);
        httplib::Headers headers;
        if (!opts.api_key.empty()) headers.emplace("Authorization", "Bearer " + opts.api_key);

        auto res = cli.Post(opts.path, headers, body, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            last_error = "server status " + std::to_string(res->status);
            continue;
        }
        if (res->status != 200)
            throw ChatError("http", "status " + std::to_string(res->status) + ": " + res->body);

        json reply = json::parse(res->body, nullptr, false);
        if (reply.is_discarded() || !reply.contains("choices") || reply["choices"].empty())
            throw ChatError("http", "malformed completion response");
        ChatResponse out;
        out.text = reply["choices"][0]["message"].value("content", "");
        out.model = reply.value("model", req.model);
        if (reply.contains("usage")) {
            out.input_tokens = reply["usage"].value("prompt_tokens", 0L);
            out.output_tokens = reply["usage"].value("completion_tokens", 0L);
        }
        if (out.input_tokens == 0) {
            std::size_t total = 0;
            for (const auto& m : req.messages) total += default_tokenizer().count(m.content);
            out.input_tokens = static_cast<long>(total);
        }
        if (out.output_tokens == 0)
            out.output_tokens = static_cast<long>(default_tokenizer().count(out.text));
        return out;
    }
    throw ChatError("http", last_error.empty() ? "request failed" : last_error);
}

}  // namespace raglc::pipeline
