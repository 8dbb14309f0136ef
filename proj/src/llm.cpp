#include "perfaug/llm.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <regex>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"

#include "perfaug/error.hpp"
#include "perfaug/random.hpp"

namespace perfaug {

using nlohmann::json;

namespace {

constexpr double kFloatNoise = 1e-9;
constexpr const char* kMockScheme = "mock://";

std::string format_row(const Matrix& m, Eigen::Index r) {
    std::string line;
    char buf[32];
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.8f", m(r, c));
        if (c) line += ", ";
        line += buf;
    }
    return line;
}

std::string join_choices(const std::vector<std::string>& choices) {
    std::string s = "[";
    for (std::size_t i = 0; i < choices.size(); ++i) {
        if (i) s += ", ";
        s += "\"" + choices[i] + "\"";
    }
    return s + "]";
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

// Pulls the requested shape back out of the request sentence.
std::pair<std::size_t, std::size_t> requested_shape(const std::string& text) {
    static const std::regex re(R"((\d+) learners \(i\.e\., \d+ rows\) with (\d+) attempts)");
    std::smatch m;
    if (!std::regex_search(text, m, re)) return {0, 0};
    return {static_cast<std::size_t>(std::stoul(m[1].str())), static_cast<std::size_t>(std::stoul(m[2].str()))};
}

std::string fenced(const Matrix& m) { return "```csv\n" + matrix_to_csv(m) + "```\n"; }

const std::string& first_user_message(const std::vector<ChatMessage>& messages) {
    static const std::string empty;
    for (const auto& msg : messages)
        if (msg.role == "user") return msg.content;
    return empty;
}

std::string parse_content(const std::string& body) {
    const json j = json::parse(body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
}

}  // namespace

std::string PromptBundle::main_message() const { return context + "\n\n" + matrix_excerpt + "\n" + request; }

PromptBundle encode_prompt(const Matrix& matrix, const QuestionContext& context, std::size_t n, std::size_t attempts,
                           std::size_t excerpt_cap) {
    if (matrix.rows() == 0 || matrix.cols() == 0) throw ValidationError("cannot encode an empty matrix");
    if (n < 1) throw ParameterError("requested learner count must be at least 1");
    if (attempts < 1) throw ParameterError("requested attempt count must be at least 1");
    if (excerpt_cap < 1) throw ParameterError("excerpt cap must be at least 1");

    PromptBundle b;
    b.target_rows = n;
    b.target_cols = attempts;
    b.system_preamble =
        "Your expertise as an AI language model makes you ideal for assisting me in generating synthetic learning "
        "performance data for individual learners. The primary task involves a thorough analysis of the existing "
        "learner-attempts matrix, where each value indicates the probability of a learner correctly answering a "
        "specific question on a particular attempt. We want to scale this data to accommodate more learners.";

    std::ostringstream ctx;
    ctx << "The data corresponds to the question \"" << context.question << "\"";
    if (!context.choices.empty()) ctx << " (choices: " << join_choices(context.choices);
    if (!context.correct_answer.empty())
        ctx << (context.choices.empty() ? " (" : ", ") << "correct answer: \"" << context.correct_answer << "\"";
    if (!context.choices.empty() || !context.correct_answer.empty()) ctx << ")";
    ctx << ". Each matrix cell indicates the probability (ranging from 0 to 1) of a learner correctly answering on "
           "each attempt. These probabilities follow a power-law function with increasing attempts. Learners were "
           "grouped by k-means++ on their fitted power-law parameters";
    if (context.cluster_count == 1)
        ctx << ", and all learners shown here belong to one cluster.";
    else
        ctx << " into " << context.cluster_count << " clusters; the rows shown here belong to one of them.";
    b.context = ctx.str();

    const auto rows = static_cast<std::size_t>(matrix.rows());
    b.excerpt_rows = std::min(rows, excerpt_cap);
    std::ostringstream ex;
    ex << "The current learners-attempts matrix (" << rows << " rows, " << matrix.cols()
       << " columns), partially shown as:\n```text\n";
    for (std::size_t r = 0; r < b.excerpt_rows; ++r) ex << format_row(matrix, static_cast<Eigen::Index>(r)) << "\n";
    if (rows > b.excerpt_rows) ex << "... (" << rows - b.excerpt_rows << " more rows)\n";
    ex << "```\n";
    b.matrix_excerpt = ex.str();

    std::ostringstream req;
    req << "Please learn from this matrix and generate a new, augmented set of " << n << " learners (i.e., " << n
        << " rows) with " << attempts << " attempts (i.e., " << attempts << " columns). In doing so:\n"
        << "1) Use your computational capability to simulate the augmented matrix.\n"
        << "2) Present the final result as plain comma-separated values, one learner per line, not as a NumPy "
           "array.\n"
        << "3) Avoid including instructions, explanations, or extra text in the output.\n"
        << "4) Provide the entire matrix inside a single ```csv code block.";
    b.request = req.str();

    b.followups = {
        "Can you explain your understanding of this data?",
        "Can you suggest potential machine learning methods for augmenting the data, particularly concerning sample "
        "size of " + std::to_string(n) + "?",
        "Could you provide the results and settings of the model?",
    };
    return b;
}

HttpReply completion_reply(const std::string& content, int status) {
    json j = {{"choices", json::array({{{"index", 0},
                                         {"message", {{"role", "assistant"}, {"content", content}}},
                                         {"finish_reason", "stop"}}})}};
    return {status, j.dump(), {}};
}

HttpReply HttpTransport::post(const std::string& url, const std::string& json_body, const std::string& api_key) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) return {0, {}, "unsupported endpoint URL"};
    httplib::Client client(m[1].str());
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers headers{{"Authorization", "Bearer " + api_key}};
    const std::string path = m[2].matched ? m[2].str() : "/";
    auto res = client.Post(path, headers, json_body, "application/json");
    if (!res) return {0, {}, httplib::to_string(res.error())};
    return {res->status, res->body, {}};
}

HttpReply MockTransport::post(const std::string&, const std::string& json_body, const std::string&) {
    ++calls_;
    const json j = json::parse(json_body);
    std::vector<ChatMessage> messages;
    for (const auto& msg : j.at("messages"))
        messages.push_back({msg.at("role").get<std::string>(), msg.at("content").get<std::string>()});
    return responder_(messages);
}

Matrix parse_excerpt(const std::string& prompt) {
    const auto start = prompt.find("partially shown as:\n```text\n");
    if (start == std::string::npos) return Matrix(0, 0);
    const auto body = start + std::string("partially shown as:\n```text\n").size();
    const auto end = prompt.find("```", body);
    std::string block = prompt.substr(body, end == std::string::npos ? std::string::npos : end - body);
    std::string kept;
    std::istringstream in(block);
    std::string line;
    while (std::getline(in, line))
        if (!starts_with(line, "...")) kept += line + "\n";
    return parse_matrix_csv(kept);
}

std::unique_ptr<ChatTransport> make_mock_transport(const std::string& name, std::uint64_t seed) {
    auto rng = std::make_shared<Rng>(make_rng(seed, 0x11a));
    auto matrix_reply = [name, rng](const std::vector<ChatMessage>& messages) -> HttpReply {
        const std::string& prompt = first_user_message(messages);
        const auto [n, attempts] = requested_shape(prompt);
        const Matrix excerpt = parse_excerpt(prompt);
        if (n == 0 || excerpt.rows() == 0) return completion_reply("I could not find a matrix in your message.");
        Matrix out(static_cast<Eigen::Index>(n), excerpt.cols());
        std::uniform_int_distribution<Eigen::Index> pick(0, excerpt.rows() - 1);
        for (Eigen::Index r = 0; r < out.rows(); ++r)
            out.row(r) = excerpt.row(name == "echo" ? r % excerpt.rows() : pick(*rng));
        if (name == "wrong-dims") out.conservativeResize(out.rows() - 1, Eigen::NoChange);
        if (name == "out-of-range" && out.rows() > 3 && out.cols() > 2) out(3, 2) = 1.7;
        (void)attempts;
        return completion_reply("Here is the augmented matrix.\n\n" + fenced(out));
    };

    MockTransport::Responder responder;
    if (name == "auth") {
        responder = [](const std::vector<ChatMessage>&) {
            return HttpReply{401, R"({"error":{"message":"invalid api key"}})", {}};
        };
    } else if (name == "no-csv") {
        responder = [](const std::vector<ChatMessage>&) {
            return completion_reply("The data shows steadily improving learners across attempts.");
        };
    } else if (name == "bootstrap" || name == "echo" || name == "wrong-dims" || name == "out-of-range") {
        responder = [matrix_reply](const std::vector<ChatMessage>& messages) {
            // Only the first user turn asks for the matrix; follow-ups get notes.
            std::size_t user_turns = 0;
            for (const auto& m : messages) user_turns += m.role == "user";
            if (user_turns > 1)
                return completion_reply("Offline mock: rows were resampled from the excerpt shown in the prompt.");
            return matrix_reply(messages);
        };
    } else {
        throw ParameterError("unknown mock endpoint '" + name + "'");
    }
    return std::make_unique<MockTransport>(std::move(responder));
}

Sleeper real_sleeper() {
    return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

LlmResponse request_augmentation(const EndpointConfig& endpoint, const PromptBundle& bundle, ChatTransport& transport,
                                 const Sleeper& sleep, int retries) {
    if (endpoint.url.empty()) throw ParameterError("LLM endpoint URL is empty");
    if (retries < 0) throw ParameterError("retries must be nonnegative");
    const bool mock = starts_with(endpoint.url, kMockScheme);
    std::string key;
    if (const char* v = std::getenv(endpoint.api_key_env.c_str())) key = v;
    if (key.empty() && !mock)
        throw CredentialError("environment variable " + endpoint.api_key_env + " holding the API key is not set");

    LlmResponse response;
    std::vector<ChatMessage> messages{{"system", bundle.system_preamble}};
    std::vector<std::string> turns{bundle.main_message()};
    turns.insert(turns.end(), bundle.followups.begin(), bundle.followups.end());
    response.transcript = messages;

    for (std::size_t turn = 0; turn < turns.size(); ++turn) {
        messages.push_back({"user", turns[turn]});
        response.transcript.push_back(messages.back());
        json body = {{"model", endpoint.model}, {"temperature", endpoint.temperature}, {"messages", json::array()}};
        for (const auto& m : messages) body["messages"].push_back({{"role", m.role}, {"content", m.content}});
        const std::string payload = body.dump();

        std::optional<std::string> content;
        std::string last_failure;
        for (int attempt = 1; attempt <= retries + 1; ++attempt) {
            if (attempt > 1) sleep(std::chrono::milliseconds(1000LL << (attempt - 2)));
            const HttpReply reply = transport.post(endpoint.url, payload, key);
            AttemptRecord rec{turn, static_cast<std::size_t>(attempt), reply.status, "ok"};
            if (reply.status == 401 || reply.status == 403) {
                rec.outcome = "auth";
                response.attempts.push_back(rec);
                throw CredentialError("endpoint rejected the credential (HTTP " + std::to_string(reply.status) + ")");
            }
            if (reply.status == 200) {
                try {
                    content = parse_content(reply.body);
                } catch (const json::exception&) {
                    last_failure = "malformed completion body";
                }
            } else {
                last_failure = reply.status == 0 ? "transport failure: " + reply.error
                                                 : "HTTP " + std::to_string(reply.status);
            }
            const bool retryable = reply.status == 0 || reply.status == 200 || reply.status == 408 ||
                                   reply.status == 429 || reply.status >= 500;
            rec.outcome = content ? "ok" : (retryable ? "retry" : "error");
            response.attempts.push_back(rec);
            if (content || !retryable) break;
        }
        if (!content)
            throw TransportError("LLM request failed after " + std::to_string(response.attempts.back().attempt) +
                                 " attempts: " + last_failure);

        messages.push_back({"assistant", *content});
        response.transcript.push_back(messages.back());
        if (turn == 0) {
            response.raw_text = *content;
        } else {
            if (!response.model_notes.empty()) response.model_notes += "\n\n";
            response.model_notes += *content;
        }
    }
    response.extracted_csv = extract_csv(response.raw_text);
    return response;
}

LlmResponse request_augmentation(const EndpointConfig& endpoint, const PromptBundle& bundle, int retries) {
    if (starts_with(endpoint.url, kMockScheme)) {
        auto transport = make_mock_transport(endpoint.url.substr(std::string(kMockScheme).size()), endpoint.seed);
        return request_augmentation(endpoint, bundle, *transport, real_sleeper(), retries);
    }
    HttpTransport transport;
    return request_augmentation(endpoint, bundle, transport, real_sleeper(), retries);
}

std::optional<std::string> extract_csv(const std::string& text) {
    const auto open = text.find("```");
    if (open != std::string::npos) {
        auto body = text.find('\n', open);
        if (body == std::string::npos) return std::string{};
        ++body;
        const auto close = text.find("```", body);
        // An unterminated block is returned as is; truncation surfaces when parsing.
        return text.substr(body, close == std::string::npos ? std::string::npos : close - body);
    }
    try {
        const Matrix m = parse_matrix_csv(text);
        if (m.size() > 0) return text;
    } catch (const ParseError&) {
    }
    return std::nullopt;
}

AugmentedMatrix decode_response(const LlmResponse& response, std::size_t n, std::size_t attempts) {
    const std::optional<std::string> csv = response.extracted_csv ? response.extracted_csv : extract_csv(response.raw_text);
    if (!csv) throw ExtractionError("no CSV block found in the response");
    Matrix m = parse_matrix_csv(*csv);
    if (m.size() == 0) throw ExtractionError("the CSV block in the response is empty");
    if (static_cast<std::size_t>(m.rows()) != n || static_cast<std::size_t>(m.cols()) != attempts)
        throw DimensionError("decoded matrix is (" + std::to_string(m.rows()) + "," + std::to_string(m.cols()) +
                             "), expected (" + std::to_string(n) + "," + std::to_string(attempts) + ")");
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            double& v = m(r, c);
            if (!(v >= -kFloatNoise && v <= 1.0 + kFloatNoise))
                throw RangeError("value " + std::to_string(v) + " outside [0,1]", r, c);
            v = std::clamp(v, 0.0, 1.0);
        }
    }
    return m;
}

}  // namespace perfaug
