#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "doctest.h"

#include "perfaug/cli.hpp"
#include "perfaug/error.hpp"
#include "perfaug/pipeline.hpp"

// After Eigen: resolv.h defines a _res macro that collides with Eigen internals.
#include "httplib.h"

using namespace perfaug;
namespace fs = std::filesystem;

namespace {

const char* kSecret = "sk-cli-leak-check-8c1f";

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("perfaug_cli_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result cli(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    Result r;
    r.code = run(args, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string small_config(const fs::path& dir, const std::string& extra = "") {
    const auto path = dir / "run.json";
    std::ofstream f(path);
    f << R"({"seed": 3, "synth": {"learners": 40}, "impute": {"k": 2, "folds": 2, "max_epochs": 20},
             "augment": {"sizes": [100, 200], "gan": {"epochs": 20}})" << extra << "}";
    return path.string();
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = read_file(e.path());
    return files;
}

nlohmann::json manifest(const fs::path& out) { return nlohmann::json::parse(read_file(out / "manifest.json")); }

// Chat endpoint that answers every turn with a fixed matrix, or rejects the key.
class ChatServer {
public:
    ChatServer(std::size_t rows, std::size_t cols, int status = 200) {
        std::string csv;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) csv += std::string(c ? "," : "") + "0.5" + (c + 1 == cols ? "\n" : "");
        const std::string body = completion_reply("```csv\n" + csv + "```").body;
        server_.Post("/v1/chat/completions", [this, body, status](const httplib::Request& req, httplib::Response& res) {
            seen_key_ = req.get_header_value("Authorization") == std::string("Bearer ") + kSecret;
            res.status = status;
            if (status == 200) res.set_content(body, "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~ChatServer() {
        server_.stop();
        thread_.join();
    }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
    bool seen_key() const { return seen_key_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    bool seen_key_ = false;
};

}  // namespace

TEST_CASE("sizes and ranges") {
    auto s = parse_sizes("1000:20000:1000");
    CHECK(s.size() == 20);
    CHECK(s[1] == 2000);
    CHECK(parse_range("2:8") == std::pair<std::size_t, std::size_t>{2, 8});
    CHECK_THROWS_AS(parse_sizes("1000:20000"), ParameterError);
    CHECK_THROWS_AS(parse_sizes("a:b:c"), ParameterError);
    CHECK_THROWS_AS(parse_range("8:2"), ParameterError);
}

TEST_CASE("SHA-256 known answer") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("usage errors exit 64") {
    CHECK(cli({"pipeline", "--no-such-flag"}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("missing or invalid config exits 1 with a message") {
    TempDir tmp("cfg");
    auto r = cli({"--config", (tmp.path / "absent.json").string(), "pipeline"});
    CHECK(r.code == kExitValidation);
    CHECK(r.err.find("absent.json") != std::string::npos);

    std::ofstream(tmp.path / "bad.json") << R"({"impute": {"folds": 2, "nonsense": 1}})";
    r = cli({"--config", (tmp.path / "bad.json").string(), "pipeline"});
    CHECK(r.code == kExitValidation);
    CHECK(r.err.find("nonsense") != std::string::npos);

    std::ofstream(tmp.path / "key.json") << R"({"augment": {"llm": {"api_key": "x"}}})";
    CHECK(cli({"--config", (tmp.path / "key.json").string(), "pipeline"}).code == kExitValidation);

    r = cli({"--out", (tmp.path / "o").string(), "impute", "--lambda", "5"});
    CHECK(r.code == kExitValidation);
}

TEST_CASE("pipeline writes every artifact it lists and reruns byte-identically") {
    TempDir tmp("pipe");
    const auto cfg = small_config(tmp.path);
    auto a = cli({"--config", cfg, "--out", (tmp.path / "a").string(), "pipeline"});
    REQUIRE(a.code == kExitOk);
    auto b = cli({"--config", cfg, "--out", (tmp.path / "b").string(), "pipeline"});
    REQUIRE(b.code == kExitOk);

    const auto m = manifest(tmp.path / "a");
    CHECK(m.at("status") == "ok");
    CHECK(m.at("config_hash").get<std::string>().size() == 64);
    for (const auto& rel : m.at("artifacts")) CHECK(fs::exists(tmp.path / "a" / rel.get<std::string>()));
    for (const char* dir : {"tensors", "models", "clusters", "augmented", "reports"})
        CHECK(fs::is_directory(tmp.path / "a" / dir));

    auto ta = read_tree(tmp.path / "a");
    auto tb = read_tree(tmp.path / "b");
    CHECK(ta.size() == tb.size());
    for (const auto& [rel, text] : ta) {
        if (rel == "manifest.json") continue;
        CHECK_MESSAGE(tb[rel] == text, rel);
    }
    auto ma = manifest(tmp.path / "a"), mb = manifest(tmp.path / "b");
    ma.erase("created_at");
    mb.erase("created_at");
    ma.erase("out");
    mb.erase("out");
    CHECK(ma == mb);
}

TEST_CASE("stages run one at a time and the GAN sweep writes twenty matrices per cluster") {
    TempDir tmp("stages");
    const auto cfg = small_config(tmp.path);
    const auto out = (tmp.path / "o").string();
    REQUIRE(cli({"--config", cfg, "--out", out, "synth"}).code == kExitOk);
    REQUIRE(cli({"--config", cfg, "--out", out, "impute"}).code == kExitOk);
    REQUIRE(cli({"--config", cfg, "--out", out, "cluster", "--k", "2"}).code == kExitOk);
    REQUIRE(cli({"--config", cfg, "--out", out, "augment", "gan", "--sizes", "1000:20000:1000", "--epochs", "2"})
                .code == kExitOk);
    std::map<std::string, std::size_t> per_cluster;
    for (const auto& e : fs::directory_iterator(fs::path(out) / "augmented")) {
        const auto name = e.path().filename().string();
        ++per_cluster[name.substr(0, name.find("_gan"))];
    }
    CHECK(per_cluster.size() == 2);
    for (const auto& [cluster, count] : per_cluster) CHECK(count == 20);
    REQUIRE(cli({"--config", cfg, "--out", out, "eval", "--emd"}).code == kExitOk);
    CHECK(fs::exists(fs::path(out) / "reports" / "emd_sweep.csv"));
}

TEST_CASE("ingest from a transaction CSV, and a malformed one") {
    TempDir tmp("ingest");
    std::ofstream(tmp.path / "log.csv") << "Anon.Student.Id,Question.Id,Attempt,Outcome\ns1,q1,1,CORRECT\ns2,q1,2,INCORRECT\n";
    auto r = cli({"--out", (tmp.path / "o").string(), "ingest", "--input", (tmp.path / "log.csv").string()});
    CHECK(r.code == kExitOk);
    auto t = load_as<PerformanceTensor>(tmp.path / "o" / "tensors" / "tensor.json");
    CHECK(t.num_learners() == 2);

    std::ofstream(tmp.path / "bad.csv") << "Anon.Student.Id,Question.Id,Attempt,Outcome\ns1,q1,zero,CORRECT\n";
    r = cli({"--out", (tmp.path / "p").string(), "ingest", "--input", (tmp.path / "bad.csv").string()});
    CHECK(r.code == kExitValidation);
    CHECK(r.err.find("line 2") != std::string::npos);
    CHECK(manifest(tmp.path / "p").at("status") == "failed");
}

TEST_CASE("transport failure exits 2") {
    TempDir tmp("runtime");
    ::setenv("PERFAUG_CLI_KEY", kSecret, 1);
    const auto cfg = small_config(tmp.path);
    const auto out = (tmp.path / "o").string();
    REQUIRE(cli({"--config", cfg, "--out", out, "synth"}).code == kExitOk);
    REQUIRE(cli({"--config", cfg, "--out", out, "impute"}).code == kExitOk);
    REQUIRE(cli({"--config", cfg, "--out", out, "cluster", "--k", "2"}).code == kExitOk);
    auto r = cli({"--config", cfg, "--out", out, "augment", "llm", "--endpoint", "http://127.0.0.1:1/v1",
                  "--api-key-env", "PERFAUG_CLI_KEY", "--retries", "0"});
    CHECK(r.code == kExitRuntime);
    ::unsetenv("PERFAUG_CLI_KEY");
}

TEST_CASE("the API key never reaches logs, reports or saved artifacts") {
    ::setenv("PERFAUG_CLI_KEY", kSecret, 1);
    ChatServer server(50, 9);
    TempDir tmp("leak");
    const auto cfg = small_config(tmp.path, R"(, "augment": {"method": "llm", "sizes": [50],
        "llm": {"endpoint": ")" + server.url() + R"(", "api_key_env": "PERFAUG_CLI_KEY", "n": 50}})");
    auto r = cli({"--config", cfg, "--out", (tmp.path / "o").string(), "pipeline"});
    REQUIRE(r.code == kExitOk);
    CHECK(server.seen_key());
    CHECK(fs::exists(tmp.path / "o" / "reports" / "llm" / "q0_c0.json"));
    CHECK(r.out.find(kSecret) == std::string::npos);
    CHECK(r.err.find(kSecret) == std::string::npos);
    for (const auto& [rel, text] : read_tree(tmp.path / "o")) CHECK_MESSAGE(text.find(kSecret) == std::string::npos, rel);

    ChatServer reject(50, 9, 401);
    const auto cfg2 = small_config(tmp.path, R"(, "augment": {"method": "llm", "sizes": [50],
        "llm": {"endpoint": ")" + reject.url() + R"(", "api_key_env": "PERFAUG_CLI_KEY", "n": 50}})");
    r = cli({"--config", cfg2, "--out", (tmp.path / "p").string(), "pipeline"});
    CHECK(r.code == kExitRuntime);
    CHECK(r.err.find(kSecret) == std::string::npos);
    for (const auto& [rel, text] : read_tree(tmp.path / "p")) CHECK_MESSAGE(text.find(kSecret) == std::string::npos, rel);
    ::unsetenv("PERFAUG_CLI_KEY");
}
