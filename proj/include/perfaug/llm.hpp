#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "perfaug/matrix.hpp"

namespace perfaug {

struct QuestionContext {
    std::string question = "What is the topic of the article?";
    std::vector<std::string> choices;
    std::string correct_answer;
    std::size_t cluster_count = 1;
};

struct PromptBundle {
    std::string system_preamble;
    std::string context;
    std::string matrix_excerpt;
    std::string request;
    std::vector<std::string> followups;
    std::size_t target_rows = 0;
    std::size_t target_cols = 0;
    std::size_t excerpt_rows = 0;

    /// The user message carrying context, matrix and request.
    std::string main_message() const;
};

PromptBundle encode_prompt(const Matrix& matrix, const QuestionContext& context, std::size_t n, std::size_t attempts,
                           std::size_t excerpt_cap = 20);

struct ChatMessage {
    std::string role;
    std::string content;
};

struct AttemptRecord {
    std::size_t turn = 0;
    std::size_t attempt = 0;  // 1-based within the turn
    int status = 0;           // 0 when the transport itself failed
    std::string outcome;      // "ok", "retry", "auth", "error"
};

struct LlmResponse {
    std::string raw_text;
    std::optional<std::string> extracted_csv;
    std::string model_notes;
    std::vector<ChatMessage> transcript;
    std::vector<AttemptRecord> attempts;
};

struct HttpReply {
    int status = 0;
    std::string body;
    std::string error;  // nonempty when no HTTP response was received
};

/// Posts a JSON body; implementations must not retain or log the key.
class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual HttpReply post(const std::string& url, const std::string& json_body, const std::string& api_key) = 0;
};

/// HTTP(S) via cpp-httplib.
class HttpTransport : public ChatTransport {
public:
    explicit HttpTransport(std::chrono::seconds timeout = std::chrono::seconds(120)) : timeout_(timeout) {}
    HttpReply post(const std::string& url, const std::string& json_body, const std::string& api_key) override;

private:
    std::chrono::seconds timeout_;
};

/// Offline transport answering from a function of the decoded request.
class MockTransport : public ChatTransport {
public:
    using Responder = std::function<HttpReply(const std::vector<ChatMessage>& messages)>;
    explicit MockTransport(Responder responder) : responder_(std::move(responder)) {}
    HttpReply post(const std::string& url, const std::string& json_body, const std::string& api_key) override;
    std::size_t calls() const noexcept { return calls_; }

private:
    Responder responder_;
    std::size_t calls_ = 0;
};

/// Wraps assistant text in a chat-completion response body.
HttpReply completion_reply(const std::string& content, int status = 200);

/// Built-in offline responders, selected by "mock://NAME" endpoints:
///   bootstrap  resample the excerpt rows to the requested shape
///   echo       repeat the excerpt rows cyclically
///   wrong-dims one row short of the requested shape
///   out-of-range  a 1.7 planted at (3,2)
///   no-csv     prose only
///   auth       HTTP 401
std::unique_ptr<ChatTransport> make_mock_transport(const std::string& name, std::uint64_t seed);

struct EndpointConfig {
    std::string url;
    std::string model = "gpt-4o";
    std::string api_key_env = "OPENAI_API_KEY";
    double temperature = 0.7;
    std::uint64_t seed = 29;  // only used by mock endpoints
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

Sleeper real_sleeper();

/// Sends the preamble, the main message and each follow-up as one dialogue.
/// Failed attempts are retried after 1s, 2s, 4s, ...; 401/403 raise
/// CredentialError; exhausting the retries raises TransportError.
LlmResponse request_augmentation(const EndpointConfig& endpoint, const PromptBundle& bundle, ChatTransport& transport,
                                 const Sleeper& sleep, int retries = 3);

/// Convenience overload choosing the transport from the URL scheme.
LlmResponse request_augmentation(const EndpointConfig& endpoint, const PromptBundle& bundle, int retries = 3);

/// The first fenced block, or the whole text when it is bare numeric CSV.
std::optional<std::string> extract_csv(const std::string& text);

/// Parses and validates an n x attempts matrix with values in [0,1]. Values
/// within 1e-9 outside the interval are clipped; anything else is rejected
/// with the zero-based (row,col) of the cell.
AugmentedMatrix decode_response(const LlmResponse& response, std::size_t n, std::size_t attempts);

/// Excerpt rows recovered from a prompt, as the mock responders see them.
Matrix parse_excerpt(const std::string& prompt);

}  // namespace perfaug
