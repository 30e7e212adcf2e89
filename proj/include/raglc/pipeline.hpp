#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "raglc/corpus.hpp"
#include "raglc/tokenizer.hpp"
#include "raglc/types.hpp"

namespace raglc::pipeline {

// ---------------------------------------------------------------------------
// Chat transport
// ---------------------------------------------------------------------------

/// Whether the backend should run its extended-reasoning mode.
enum class ThinkingMode { off, on };

struct ChatMessage {
    std::string role;  ///< "system" | "user" | "assistant"
    std::string content;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    int max_output_tokens = 1024;
    double temperature = 0.0;
    ThinkingMode thinking = ThinkingMode::off;
    /// Correlation key ("<template>/<case>") used by scripted backends to
    /// select a response; ignored by real transports.
    std::string key;
};

struct ChatResponse {
    std::string text;
    long input_tokens = 0;
    long output_tokens = 0;
    std::string model;
};

/// Raised on transport or backend failure; names the stage and backend so
/// callers can report which leg of a run died.
class ChatError : public std::runtime_error {
public:
    ChatError(std::string stage, std::string detail)
        : std::runtime_error(stage + ": " + detail), stage_(std::move(stage)) {}
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

/// Minimal chat-completion client. Implementations must be safe to call from
/// multiple threads.
class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual ChatResponse complete(const ChatRequest& req) = 0;
};

// ---------------------------------------------------------------------------
// Scripted (offline) backend
// ---------------------------------------------------------------------------

/// One canned reply. Token counts < 0 mean "compute from text with the
/// default tokenizer".
struct ScriptedResponse {
    std::string text;
    long input_tokens = -1;
    long output_tokens = -1;
};

/// Deterministic in-memory backend. Replies are selected by request key
/// first, then by FIFO order; running past the script or asking for an
/// unknown key throws ChatError. Call counts are exposed so tests can assert
/// exactly how many backend calls a policy makes.
class MockChatClient final : public ChatClient {
public:
    MockChatClient() = default;

    void add_keyed(std::string key, ScriptedResponse r);
    /// Queues several replies under one key, consumed in order (used for
    /// multi-draw runs against the same case).
    void add_keyed_sequence(std::string key, std::vector<ScriptedResponse> rs);
    void push(ScriptedResponse r);  ///< FIFO fallback when no key matches

    ChatResponse complete(const ChatRequest& req) override;

    int calls() const;
    int calls_for_key(const std::string& key) const;

private:
    mutable std::mutex mu_;
    std::map<std::string, std::deque<ScriptedResponse>> keyed_;
    std::deque<ScriptedResponse> fifo_;
    int calls_ = 0;
    std::map<std::string, int> key_calls_;
};

/// Loads a script from a line-delimited stream of
/// {"key": ..., "text": ..., "input_tokens": ..., "output_tokens": ...}
/// records (key optional => FIFO entry) and returns a ready client.
std::shared_ptr<MockChatClient> mock_backend(std::istream& script);

// ---------------------------------------------------------------------------
// HTTP backend
// ---------------------------------------------------------------------------

struct HttpBackendOptions {
    std::string base_url;  ///< e.g. "http://10.0.0.5:8000"
    std::string path = "/v1/chat/completions";
    std::string api_key;       ///< sent as Bearer token when non-empty
    int timeout_seconds = 60;
    int retries = 1;           ///< extra attempts after a transport/5xx failure
    double min_interval_ms = 0.0;  ///< crude client-side rate limit
};

/// Client for chat-completion-compatible HTTP services. Requests carry
/// model, messages, max_tokens, temperature and an enable_thinking flag;
/// responses are read from choices[0].message.content plus usage counters
/// (token counts fall back to the default tokenizer when usage is absent).
class HttpChatClient final : public ChatClient {
public:
    explicit HttpChatClient(HttpBackendOptions opts);
    ~HttpChatClient() override;
    ChatResponse complete(const ChatRequest& req) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

struct RagConfig {
    std::size_t chunk_size = 600;     ///< tokens per chunk
    std::size_t chunk_overlap = 100;  ///< tokens shared between neighbours
    std::string embed_model = "gte-multilingual-base";
    std::string rerank_model = "gte-multilingual-reranker-base";
    double vector_ratio = 0.5;   ///< stage-1 share: candidates = ceil(k / ratio); 0 = rerank all
    std::size_t rerank_size = 5; ///< k, final chunk count

    void validate() const;  ///< throws std::invalid_argument on bad values
};

struct Chunk {
    std::string doc_id;
    std::size_t index = 0;        ///< position in document order
    std::size_t token_begin = 0;  ///< half-open token range [begin, end)
    std::size_t token_end = 0;
    std::string text;
};

/// Fixed-stride chunker: chunk i covers tokens
/// [i*(chunk_size-overlap), min(i*(chunk_size-overlap)+chunk_size, len)),
/// and chunks are emitted until the previous one reaches the end of the
/// document. Every token is covered and consecutive chunks share exactly
/// `overlap` tokens (except a final short chunk). Chunk text is the
/// original byte range, never re-joined tokens.
std::vector<Chunk> chunk_document(const corpus::Document& doc, const RagConfig& cfg,
                                  const Tokenizer& tok = default_tokenizer());

using EmbedFn = std::function<std::vector<double>(const std::string& text)>;
using RerankFn = std::function<double(const std::string& query, const std::string& chunk_text)>;

struct ScoredChunk {
    Chunk chunk;
    double score = 0.0;  ///< reranker score (stage 2)
};

struct RetrievalResult {
    std::vector<ScoredChunk> chunks;  ///< best first
    bool short_of_k = false;          ///< document had fewer chunks than k
};

/// Two-stage retrieval: cosine similarity over embeddings selects
/// ceil(k / vector_ratio) candidates, the reranker orders them, and the top
/// k survive. Ties at both stages break toward the lower chunk index.
/// vector_ratio == 0 skips stage 1 and reranks every chunk. Hook failures
/// surface as ChatError tagged "embed" or "rerank".
RetrievalResult retrieve(const std::string& query, std::span<const Chunk> chunks,
                         const RagConfig& cfg, const EmbedFn& embed, const RerankFn& rerank);

/// Offline embedder: hashed bag-of-tokens into `dim` buckets. Deterministic,
/// fast, and good enough to make lexically-similar texts score high.
EmbedFn hashed_bag_embedder(std::size_t dim = 64);

/// Offline reranker: fraction of query tokens present in the chunk.
RerankFn token_overlap_reranker();

// ---------------------------------------------------------------------------
// Long-context assembly
// ---------------------------------------------------------------------------

struct LcAssembly {
    ChatRequest request;
    bool truncated = false;  ///< document tail was cut to respect the window
};

/// Builds the single-message long-context request: full document, a
/// separator, then the question. When document + question + answer budget
/// exceed `window` tokens the document tail is truncated at a token
/// boundary and the truncation flag is set.
LcAssembly assemble_lc_prompt(const corpus::QueryCase& c, const corpus::Document& doc,
                              std::size_t window, std::size_t answer_budget = 1024,
                              const Tokenizer& tok = default_tokenizer());

}  // namespace raglc::pipeline
