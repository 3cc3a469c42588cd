#include <atomic>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "promptemb/http_backend.hpp"
#include "promptemb/icl.hpp"

using namespace promptemb;

namespace {

// Local stand-in for a hosted labeling service.
struct LocalLabelerServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;

    explicit LocalLabelerServer(bool fail = false) {
        server.Post("/generate", [fail](const httplib::Request& req, httplib::Response& res) {
            if (fail) {
                res.status = 500;
                return;
            }
            const auto body = nlohmann::json::parse(req.body);
            REQUIRE(body.contains("prompt"));
            REQUIRE(body.at("max_new_tokens").get<int>() == 8);
            // a one-word reply followed by the closing quote
            res.set_content(nlohmann::json{{"text", "Rain\" etc"}}.dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~LocalLabelerServer() {
        server.stop();
        thread.join();
    }
};

}  // namespace

TEST_CASE("http labeler backend returns generated text") {
    LocalLabelerServer srv;
    const HttpLabelerBackend backend("http://127.0.0.1:" + std::to_string(srv.port));
    CHECK(backend.descriptor().supports_generation);
    CHECK(backend.generate_greedy("prompt", 8) == "Rain\" etc");
    CHECK(backend.generate_greedy("prompt", 0) == "");
    CHECK_THROWS_AS(backend.forward_hidden_states({}), BackendFailureError);

    const auto outcome = label_sentences({"It rains."}, backend);
    REQUIRE(outcome.demos.size() == 1);
    CHECK(outcome.demos[0].word() == "Rain");
    CHECK(outcome.demos[0].source() == DemoSource::labeled_pairs);
}

TEST_CASE("http labeler surfaces transport and status failures") {
    {
        LocalLabelerServer srv(/*fail=*/true);
        const HttpLabelerBackend backend("http://127.0.0.1:" + std::to_string(srv.port));
        CHECK_THROWS_AS(backend.generate_greedy("prompt", 8), BackendFailureError);
    }
    const HttpLabelerBackend dead("http://127.0.0.1:1", /*timeout_seconds=*/1);
    CHECK_THROWS_AS(dead.generate_greedy("prompt", 8), BackendFailureError);
}
