#include <cmath>

#include "doctest.h"
#include "promptemb/core.hpp"

using namespace promptemb;

TEST_CASE("trim and whitespace helpers") {
    CHECK(trim_copy("  a b \t\n") == "a b");
    CHECK(trim_copy("") == "");
    CHECK(trim_copy(" \t ") == "");
    CHECK(contains_whitespace("a b"));
    CHECK_FALSE(contains_whitespace("Horseback-riding"));
}

TEST_CASE("validate_dataset accepts well-formed rows") {
    const auto data = validate_dataset({{"a", "b", 2.5}});
    REQUIRE(data.size() == 1);
    CHECK(data[0].sentence_a == "a");
    CHECK(data[0].gold_score == 2.5);
}

TEST_CASE("validate_dataset rejects empty sentences with the row index") {
    try {
        validate_dataset({{"a", "b", 1.0}, {"", "b", 2.5}});
        FAIL("expected EmptySentenceError");
    } catch (const EmptySentenceError& e) {
        CHECK(e.row == 1);
    }
}

TEST_CASE("validate_dataset rejects out-of-range scores with the row index") {
    try {
        validate_dataset({{"a", "b", 7.0}});
        FAIL("expected ScoreOutOfRangeError");
    } catch (const ScoreOutOfRangeError& e) {
        CHECK(e.row == 0);
        CHECK(e.value == 7.0);
    }
    CHECK_THROWS_AS(validate_dataset({{"a", "b", -0.1}}), ScoreOutOfRangeError);
}

TEST_CASE("demonstration invariants") {
    const Demonstration d("A man is smoking.", " Smoking ", DemoSource::labeled_pairs);
    CHECK(d.word() == "Smoking");  // trimmed
    CHECK_NOTHROW(Demonstration("x", "Horseback-riding", DemoSource::dictionary));
    CHECK_THROWS_AS(Demonstration("x", "two words", DemoSource::dictionary), Error);
    CHECK_THROWS_AS(Demonstration("x", "  ", DemoSource::dictionary), Error);
    CHECK_THROWS_AS(Demonstration("", "word", DemoSource::dictionary), Error);
}

TEST_CASE("demonstration id is stable and content-based") {
    const Demonstration a("s", "w", DemoSource::dictionary);
    const Demonstration b("s", "w", DemoSource::dictionary);
    const Demonstration c("s", "w2", DemoSource::dictionary);
    CHECK(a.id() == b.id());
    CHECK(a.id() != c.id());
}

TEST_CASE("demonstration JSON round-trip") {
    const Demonstration d("meat from a deer.", "venison", DemoSource::dictionary);
    const auto j = demo_to_json(d);
    CHECK(demo_from_json(j) == d);
    CHECK_THROWS_AS(demo_from_json(nlohmann::json{{"sentence", "x"}}), Error);
}

TEST_CASE("run report average is the mean of per-task scores") {
    const auto r = make_run_report("prompt_eol", std::nullopt,
                                   {{"t1", 0.25}, {"t2", 0.75}, {"t3", 0.5}}, {}, 7);
    CHECK(r.average == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.seed == 7);
    const auto empty = make_run_report("m", std::nullopt, {}, {}, 0);
    CHECK(empty.average == 0.0);
}

TEST_CASE("embedding validation") {
    CHECK_THROWS_AS(check_embedding({{}, "id"}), Error);
    CHECK_THROWS_AS(check_embedding({{1.0f, std::nanf("")}, "id"}), Error);
    CHECK_NOTHROW(check_embedding({{1.0f, -2.0f}, "id"}));
}

TEST_CASE("labeled split validation") {
    CHECK_NOTHROW(validate_labeled_split({{"a", 0}, {"b", 1}}, 2, true));
    // class 1 never appears in a training split
    CHECK_THROWS_AS(validate_labeled_split({{"a", 0}}, 2, true), Error);
    CHECK_NOTHROW(validate_labeled_split({{"a", 0}}, 2, false));
    CHECK_THROWS_AS(validate_labeled_split({{"a", 2}}, 2, false), Error);
    CHECK_THROWS_AS(validate_labeled_split({{"a", 0}}, 1, false), Error);
}

TEST_CASE("triplet validation flags empty fields") {
    CHECK_THROWS_AS(validate_triplets({{"a", "", "c"}}), EmptySentenceError);
    CHECK(validate_triplets({{"a", "b", "c"}}).size() == 1);
}
