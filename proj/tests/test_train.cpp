#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "promptemb/represent.hpp"
#include "promptemb/train.hpp"
#include "promptemb/io.hpp"
#include "testutil.hpp"

using namespace promptemb;

namespace {

TrainConfig small_config() {
    TrainConfig c;
    c.temperature = 0.5;
    c.learning_rate = 5e-4;
    c.epochs = 1;
    c.batch_size = 4;
    c.seed = 0;
    c.adapter = {/*rank=*/8, /*alpha=*/16.0f, /*dropout=*/0.05f};
    return c;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("promptemb_test_" + name);
}

}  // namespace

TEST_CASE("learning rate zero leaves adapters and embeddings untouched") {
    const auto base = make_reference_model(0);
    auto config = small_config();
    config.learning_rate = 0.0;
    const auto triplets = testutil::synthetic_triplets(8, 4);

    const auto outcome = train_cse(triplets, base, config);
    REQUIRE(outcome.log.size() == 2);
    for (const auto& m : outcome.model->adapters().mats)
        for (float b : m.b) CHECK(b == 0.0f);

    const RepresentationMethod method(RepresentationMethod::Kind::prompt_eol);
    const auto before = embed(method, "the horse waits.", *base);
    const auto after = embed(method, "the horse waits.", *outcome.model);
    CHECK(before.values == after.values);
}

TEST_CASE("training is deterministic given the seed") {
    const auto base = make_reference_model(0);
    const auto config = small_config();
    const auto triplets = testutil::synthetic_triplets(12, 5);

    const auto a = train_cse(triplets, base, config);
    const auto b = train_cse(triplets, base, config);
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].step == b.log[i].step);
        CHECK(a.log[i].loss == b.log[i].loss);  // bitwise
    }
    auto c = config;
    c.seed = 99;
    const auto other = train_cse(triplets, base, c);
    bool any_different = other.log.size() != a.log.size();
    for (std::size_t i = 0; !any_different && i < a.log.size(); ++i)
        any_different = other.log[i].loss != a.log[i].loss;
    CHECK(any_different);
}

TEST_CASE("final partial batches smaller than 2 are dropped") {
    const auto base = make_reference_model(0);
    auto config = small_config();
    const auto triplets = testutil::synthetic_triplets(5, 6);

    config.batch_size = 4;  // 4 + 1 -> the singleton is dropped
    CHECK(train_cse(triplets, base, config).log.size() == 1);
    config.batch_size = 3;  // 3 + 2 -> both run
    CHECK(train_cse(triplets, base, config).log.size() == 2);
    config.epochs = 2;
    CHECK(train_cse(triplets, base, config).log.size() == 4);
}

TEST_CASE("mean loss drops from the first to the last quarter of an epoch") {
    const auto base = make_reference_model(0);
    TrainConfig config = small_config();
    config.batch_size = 4;
    const auto triplets = testutil::synthetic_triplets(64, 7);

    const auto outcome = train_cse(triplets, base, config);
    REQUIRE(outcome.log.size() == 16);
    double first = 0.0, last = 0.0;
    for (int i = 0; i < 4; ++i) {
        first += outcome.log[static_cast<std::size_t>(i)].loss;
        last += outcome.log[outcome.log.size() - 1 - static_cast<std::size_t>(i)].loss;
    }
    CHECK(last < first);
}

TEST_CASE("train_cse validates its inputs") {
    const auto base = make_reference_model(0);
    const auto triplets = testutil::synthetic_triplets(6, 8);
    auto config = small_config();
    config.batch_size = 1;
    CHECK_THROWS_AS(train_cse(triplets, base, config), Error);
    config = small_config();
    config.temperature = 0.0;
    CHECK_THROWS_AS(train_cse(triplets, base, config), Error);
    CHECK_THROWS_AS(train_cse({}, base, small_config()), Error);
}

TEST_CASE("checkpoint round-trip restores the adapted model") {
    const auto base = make_reference_model(0);
    auto config = small_config();
    const auto triplets = testutil::synthetic_triplets(8, 9);
    const auto outcome = train_cse(triplets, base, config);

    const auto path = temp_path("ckpt.json");
    save_adapter_checkpoint(path.string(), *outcome.model, train_config_to_json(config));
    const auto loaded = load_adapter_checkpoint(path.string(), base);

    const auto& saved_mats = outcome.model->adapters().mats;
    const auto& loaded_mats = loaded->adapters().mats;
    REQUIRE(saved_mats.size() == loaded_mats.size());
    for (std::size_t i = 0; i < saved_mats.size(); ++i) {
        CHECK(saved_mats[i].a == loaded_mats[i].a);
        CHECK(saved_mats[i].b == loaded_mats[i].b);
    }

    const RepresentationMethod method(RepresentationMethod::Kind::prompt_eol);
    const auto expect = embed(method, "the bread is warm.", *outcome.model);
    const auto got = embed(method, "the bread is warm.", *loaded);
    CHECK(expect.values == got.values);
    std::filesystem::remove(path);
}

TEST_CASE("corrupted checkpoints fail loudly with the bad field") {
    const auto base = make_reference_model(0);
    const auto outcome = train_cse(testutil::synthetic_triplets(6, 10), base, small_config());
    const auto path = temp_path("ckpt_bad.json");
    save_adapter_checkpoint(path.string(), *outcome.model, {});

    auto corrupt_and_expect = [&](auto mutate, const std::string& needle) {
        auto j = nlohmann::json::parse(read_text_file(path.string()));
        mutate(j);
        const auto bad = temp_path("ckpt_mut.json");
        write_text_file(bad.string(), j.dump());
        try {
            load_adapter_checkpoint(bad.string(), base);
            FAIL("expected a load error for ", needle);
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find(needle) != std::string::npos);
        }
        std::filesystem::remove(bad);
    };

    corrupt_and_expect([](nlohmann::json& j) { j.erase("rank"); }, "rank");
    corrupt_and_expect([](nlohmann::json& j) { j["layers"][0].erase("a_b64"); }, "a_b64");
    corrupt_and_expect([](nlohmann::json& j) { j["layers"][2]["b_b64"] = "!!notbase64!!"; },
                       "b_b64");
    corrupt_and_expect([](nlohmann::json& j) { j["layers"][1]["a_b64"] = "AAAA"; }, "a_b64");
    corrupt_and_expect([](nlohmann::json& j) { j["format"] = "other"; }, "format");

    write_text_file(temp_path("ckpt_txt.json").string(), "not json at all");
    CHECK_THROWS_AS(load_adapter_checkpoint(temp_path("ckpt_txt.json").string(), base), Error);
    std::filesystem::remove(temp_path("ckpt_txt.json"));
    std::filesystem::remove(path);
}
