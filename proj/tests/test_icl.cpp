#include <cmath>

#include "doctest.h"
#include "promptemb/icl.hpp"
#include "promptemb/reference_model.hpp"
#include "testutil.hpp"

using namespace promptemb;

namespace {

class FailingLabeler final : public ModelBackend {
public:
    FailingLabeler() {
        desc_.name = "failing-labeler";
        desc_.hidden_dim = 1;
        desc_.vocab_size = kByteVocabSize;
        desc_.max_sequence_length = 4096;
        desc_.pad_token_id = kPadToken;
        desc_.supports_generation = true;
    }
    const BackendDescriptor& descriptor() const override { return desc_; }
    TokenSequence tokenize(const std::string& text) const override {
        return byte_tokenize(text, desc_.max_sequence_length);
    }
    HiddenStateBatch forward_hidden_states(const std::vector<TokenSequence>&) const override {
        throw BackendFailureError("no hidden states");
    }
    std::string generate_greedy(const std::string&, int) const override {
        throw BackendFailureError("the service is down");
    }

private:
    BackendDescriptor desc_;
};

DemonstrationSet make_set(const std::vector<Demonstration>& demos) {
    DemonstrationSet set;
    for (const auto& d : demos) set.add(d);
    return set;
}

}  // namespace

TEST_CASE("dictionary entries become demonstrations") {
    const auto demos = build_from_dictionary({{"venison", "meat from a deer."}});
    REQUIRE(demos.size() == 1);
    CHECK(demos[0].sentence() == "meat from a deer.");
    CHECK(demos[0].word() == "venison");
    CHECK(demos[0].source() == DemoSource::dictionary);
    CHECK(build_from_dictionary({}).empty());
}

TEST_CASE("multiword and malformed dictionary entries carry their index") {
    try {
        build_from_dictionary({{"fine", "ok."}, {"ice cream", "frozen dessert."}});
        FAIL("expected MalformedEntryError");
    } catch (const MalformedEntryError& e) {
        CHECK(e.index == 1);
        CHECK(e.reason.find("ice cream") != std::string::npos);
    }
    CHECK_THROWS_AS(build_from_dictionary({{" ", "def."}}), MalformedEntryError);
    CHECK_THROWS_AS(build_from_dictionary({{"word", "  "}}), MalformedEntryError);
}

TEST_CASE("labeler words are parsed up to the closing quote or whitespace") {
    const testutil::ScriptedLabeler quoted("Smoking\" and more text");
    auto outcome = label_sentences({"A man is smoking."}, quoted);
    REQUIRE(outcome.demos.size() == 1);
    CHECK(outcome.demos[0].word() == "Smoking");
    CHECK(outcome.demos[0].sentence() == "A man is smoking.");
    CHECK(outcome.demos[0].source() == DemoSource::labeled_pairs);
    CHECK(outcome.skipped.empty());

    const testutil::ScriptedLabeler spacey("Horse riding");
    outcome = label_sentences({"x"}, spacey);
    REQUIRE(outcome.demos.size() == 1);
    CHECK(outcome.demos[0].word() == "Horse");  // cut at the first whitespace
}

TEST_CASE("whitespace-only labeler output is skipped and reported") {
    const testutil::ScriptedLabeler blank("   ");
    const auto outcome = label_sentences({"a", "b"}, blank);
    CHECK(outcome.demos.empty());
    REQUIRE(outcome.skipped.size() == 2);
    CHECK(outcome.skipped[0].first == 0);
    CHECK(outcome.skipped[1].first == 1);
}

TEST_CASE("labeler bytes that cannot live in UTF-8 JSON are skipped") {
    const testutil::ScriptedLabeler garbage("\xf6\x81garbage");
    const auto outcome = label_sentences({"a"}, garbage);
    CHECK(outcome.demos.empty());
    REQUIRE(outcome.skipped.size() == 1);
    CHECK(outcome.skipped[0].second.find("undecodable") != std::string::npos);
}

TEST_CASE("labeling failures are recorded per sentence") {
    const FailingLabeler failing;
    const auto outcome = label_sentences({"a"}, failing);
    CHECK(outcome.demos.empty());
    REQUIRE(outcome.skipped.size() == 1);
    CHECK(outcome.skipped[0].second.find("service is down") != std::string::npos);
}

TEST_CASE("non-generating backends are refused as labelers") {
    const testutil::PlantedBackend planted({{"x", {1.0f}}});
    CHECK_THROWS_AS(label_sentences({"x"}, planted), GenerationUnsupportedError);
}

TEST_CASE("demonstration sets deduplicate and keep ingestion order") {
    DemonstrationSet set;
    CHECK(set.add({"s1", "w1", DemoSource::dictionary}));
    CHECK(set.add({"s2", "w2", DemoSource::labeled_pairs}));
    CHECK_FALSE(set.add({"s1", "w1", DemoSource::dictionary}));
    CHECK(set.size() == 2);
    CHECK(set.demos()[0].sentence() == "s1");
    const auto counts = set.provenance_counts();
    CHECK(counts.at("dictionary") == 1);
    CHECK(counts.at("labeled_pairs") == 1);
}

TEST_CASE("demonstration set JSON round-trip") {
    const auto set = make_set(testutil::synthetic_demos(5, 3));
    const auto parsed = DemonstrationSet::from_json(set.to_json());
    REQUIRE(parsed.size() == set.size());
    for (std::size_t i = 0; i < set.size(); ++i) CHECK(parsed.demos()[i] == set.demos()[i]);
    CHECK_THROWS_AS(DemonstrationSet::from_json(nlohmann::json::object()), Error);
}

TEST_CASE("singleton demo set wins regardless of score") {
    const auto model = make_reference_model(0);
    const auto set = make_set({{"A man is smoking.", "Smoking", DemoSource::labeled_pairs}});
    const auto dev = testutil::synthetic_dev_set(4, 11);
    const auto result = search_demonstration(set, dev, *model, 8);
    CHECK(result.best_index == 0);
    CHECK(result.best_demo == set.demos()[0]);
    CHECK(result.all_scores.size() == 1);
    CHECK(result.best_score == result.all_scores[0].second);
    CHECK(std::isfinite(result.baseline_score));
}

TEST_CASE("search is deterministic and cache does not change results") {
    const auto model = make_reference_model(0);
    const auto set = make_set(testutil::synthetic_demos(4, 21));
    const auto dev = testutil::synthetic_dev_set(6, 22);

    const auto a = search_demonstration(set, dev, *model, 4);
    const auto b = search_demonstration(set, dev, *model, 4);
    CHECK(a.best_index == b.best_index);
    CHECK(a.best_score == b.best_score);
    CHECK(a.baseline_score == b.baseline_score);
    REQUIRE(a.all_scores.size() == b.all_scores.size());
    for (std::size_t i = 0; i < a.all_scores.size(); ++i)
        CHECK(a.all_scores[i] == b.all_scores[i]);

    const auto dir = std::filesystem::temp_directory_path() / "promptemb_test_search_cache";
    std::filesystem::remove_all(dir);
    EmbeddingCache cache(dir);
    const auto cold = search_demonstration(set, dev, *model, 4, &cache);
    const auto warm = search_demonstration(set, dev, *model, 4, &cache);
    CHECK(cold.best_index == a.best_index);
    CHECK(cold.best_score == a.best_score);
    CHECK(warm.best_score == a.best_score);
    CHECK(warm.baseline_score == a.baseline_score);
    std::filesystem::remove_all(dir);
}

TEST_CASE("bitwise score ties break to the lowest index") {
    // with a 2-pair dev set every Spearman is +1 or -1, so ties are forced
    const auto model = make_reference_model(0);
    const auto set = make_set(testutil::synthetic_demos(6, 31));
    const auto dev = testutil::synthetic_dev_set(2, 32);

    const auto result = search_demonstration(set, dev, *model, 4);
    bool found_tie = false;
    for (std::size_t i = 0; i + 1 < result.all_scores.size() && !found_tie; ++i)
        for (std::size_t j = i + 1; j < result.all_scores.size(); ++j)
            if (result.all_scores[i].second == result.all_scores[j].second) {
                found_tie = true;
                break;
            }
    CHECK(found_tie);
    int smallest_argmax = -1;
    for (std::size_t i = 0; i < result.all_scores.size(); ++i)
        if (result.all_scores[i].second == result.best_score) {
            smallest_argmax = static_cast<int>(i);
            break;
        }
    CHECK(result.best_index == smallest_argmax);
}

TEST_CASE("search validates preconditions") {
    const auto model = make_reference_model(0);
    const auto set = make_set(testutil::synthetic_demos(2, 41));
    CHECK_THROWS_AS(search_demonstration(DemonstrationSet{}, testutil::synthetic_dev_set(4, 42),
                                         *model, 4),
                    Error);
    CHECK_THROWS_AS(search_demonstration(set, testutil::synthetic_dev_set(1, 43), *model, 4),
                    Error);
}

TEST_CASE("histogram counts conserve the demo count") {
    SearchResult result{{"s", "w", DemoSource::dictionary},
                        0,
                        0.62,
                        {{0, 0.62}, {1, 0.4}, {2, -0.1}, {3, 0.59}, {4, 0.25}},
                        0.5};
    const auto h = score_histogram(result, 4);
    REQUIRE(h.counts.size() == 4);
    int total = 0;
    for (int c : h.counts) total += c;
    CHECK(total == 5);
    CHECK(h.edges.front() == -0.1);
    CHECK(h.edges.back() == 0.62);
    CHECK(h.fraction_above_baseline == doctest::Approx(2.0 / 5.0));
    CHECK_FALSE(h.no_improving_demonstration);
    CHECK_THROWS_AS(score_histogram(result, 0), Error);
}

TEST_CASE("histogram with all-equal scores has a single nonzero bin") {
    SearchResult result{{"s", "w", DemoSource::dictionary},
                        0,
                        0.3,
                        {{0, 0.3}, {1, 0.3}, {2, 0.3}},
                        0.4};
    const auto h = score_histogram(result, 5);
    int nonzero = 0, total = 0;
    for (int c : h.counts) {
        if (c != 0) ++nonzero;
        total += c;
    }
    CHECK(nonzero == 1);
    CHECK(total == 3);
    CHECK(h.fraction_above_baseline == 0.0);
    CHECK(h.no_improving_demonstration);  // best 0.3 < baseline 0.4
}
