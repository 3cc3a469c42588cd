#include <cmath>

#include "doctest.h"
#include "promptemb/represent.hpp"
#include "promptemb/reference_model.hpp"
#include "testutil.hpp"

using namespace promptemb;

TEST_CASE("template golden strings are pinned byte-for-byte") {
    CHECK(render_plain("Hi") == "This sentence : \"Hi\" means");
    CHECK(render_prompteol("A man is smoking.") ==
          "This sentence : \"A man is smoking.\" means in one word:\"");
    const Demonstration demo("A man is smoking.", "Smoking", DemoSource::labeled_pairs);
    CHECK(render_prompteol_icl("It rains.", demo) ==
          "This sentence : \"A man is smoking.\" means in one word:\"Smoking\"\n"
          "This sentence : \"It rains.\" means in one word:\"");
}

TEST_CASE("masked-LM ablation templates (period on/off)") {
    CHECK(render_masked("Hi", true) == "This sentence : \"Hi\" means [MASK].");
    CHECK(render_masked("Hi", false) == "This sentence : \"Hi\" means [MASK]");
}

TEST_CASE("substitution is verbatim, including embedded quotes") {
    CHECK(render_plain("say \"hi\"") == "This sentence : \"say \"hi\"\" means");
    CHECK(render_prompteol("x").ends_with(":\""));
    CHECK_THROWS_AS(render_plain(""), Error);
    CHECK_THROWS_AS(render_prompteol(""), Error);
}

TEST_CASE("ICL prompt strips back to the plain PromptEOL prompt") {
    const Demonstration demo("meat from a deer.", "Venison", DemoSource::dictionary);
    const auto full = render_prompteol_icl("The horse runs.", demo);
    const auto newline = full.find('\n');
    REQUIRE(newline != std::string::npos);
    CHECK(full.substr(newline + 1) == render_prompteol("The horse runs."));
}

TEST_CASE("method construction rules") {
    const Demonstration demo("s", "w", DemoSource::dictionary);
    CHECK_THROWS_AS(RepresentationMethod(RepresentationMethod::Kind::avg_tokens, demo), Error);
    CHECK_THROWS_AS(RepresentationMethod(RepresentationMethod::Kind::prompt_last, demo), Error);
    const RepresentationMethod with(RepresentationMethod::Kind::prompt_eol, demo);
    CHECK(with.id() == "prompt_eol+icl:" + demo.id());
    CHECK(RepresentationMethod(RepresentationMethod::Kind::prompt_eol).id() == "prompt_eol");
    CHECK(RepresentationMethod::kind_from_string("avg_tokens") ==
          RepresentationMethod::Kind::avg_tokens);
    CHECK_THROWS_AS(RepresentationMethod::kind_from_string("nope"), Error);
}

TEST_CASE("avg_tokens of a 1-token sentence equals that token's hidden state") {
    const auto model = make_reference_model(0);
    const auto hs = model->forward_hidden_states({model->tokenize("k")});
    const auto row = hs.row(0, 0);
    const auto v = embed(RepresentationMethod(RepresentationMethod::Kind::avg_tokens), "k", *model);
    REQUIRE(static_cast<int>(v.values.size()) == hs.hidden_dim);
    for (int i = 0; i < hs.hidden_dim; ++i) CHECK(v.values[static_cast<std::size_t>(i)] == row[i]);
}

TEST_CASE("prompt_eol embedding equals direct backend extraction") {
    const auto model = make_reference_model(0);
    const std::string text = "the sky is clear.";
    const auto v =
        embed(RepresentationMethod(RepresentationMethod::Kind::prompt_eol), text, *model);
    const auto hs = model->forward_hidden_states({model->tokenize(render_prompteol(text))});
    const auto row = hs.last_real_row(0);
    for (std::size_t i = 0; i < v.values.size(); ++i) CHECK(v.values[i] == row[i]);
}

TEST_CASE("different demonstrations change the embedding") {
    const auto model = make_reference_model(0);
    const Demonstration d1("A man is smoking.", "Smoking", DemoSource::labeled_pairs);
    const Demonstration d2("meat from a deer.", "Venison", DemoSource::dictionary);
    const auto v1 =
        embed(RepresentationMethod(RepresentationMethod::Kind::prompt_eol, d1), "It rains.", *model);
    const auto v2 =
        embed(RepresentationMethod(RepresentationMethod::Kind::prompt_eol, d2), "It rains.", *model);
    CHECK(v1.values != v2.values);
}

TEST_CASE("the three methods produce pairwise different vectors") {
    const auto model = make_reference_model(0);
    const std::string probe = "the river bends north.";
    const auto a =
        embed(RepresentationMethod(RepresentationMethod::Kind::avg_tokens), probe, *model);
    const auto b =
        embed(RepresentationMethod(RepresentationMethod::Kind::prompt_last), probe, *model);
    const auto c =
        embed(RepresentationMethod(RepresentationMethod::Kind::prompt_eol), probe, *model);
    CHECK(a.values != b.values);
    CHECK(a.values != c.values);
    CHECK(b.values != c.values);
}

TEST_CASE("embed_batch is order-preserving and batch-size independent") {
    const auto model = make_reference_model(0);
    const auto texts = testutil::random_sentences(10, 21);
    const RepresentationMethod method(RepresentationMethod::Kind::prompt_eol);

    const auto one = embed_batch(method, texts, *model, 1);
    const auto eight = embed_batch(method, texts, *model, 8);
    REQUIRE(one.size() == texts.size());
    REQUIRE(eight.size() == texts.size());
    for (std::size_t i = 0; i < texts.size(); ++i)
        for (std::size_t k = 0; k < one[i].values.size(); ++k)
            CHECK(std::fabs(one[i].values[k] - eight[i].values[k]) < 1e-5);

    CHECK(embed_batch(method, {}, *model, 4).empty());

    std::vector<std::string> permuted = {texts[3], texts[0], texts[7]};
    const auto p = embed_batch(method, permuted, *model, 2);
    CHECK(p[0].values == one[3].values);
    CHECK(p[1].values == one[0].values);
    CHECK(p[2].values == one[7].values);

    CHECK_THROWS_AS(embed_batch(method, texts, *model, 0), Error);
}

TEST_CASE("embed_batch reports the failing text index on overflow") {
    const auto model = make_reference_model(0);
    const std::string huge(600, 'x');
    try {
        embed_batch(RepresentationMethod(RepresentationMethod::Kind::prompt_eol),
                    {"fine", huge}, *model, 2);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("text 1") != std::string::npos);
    }
}

TEST_CASE("source ids identify method, demo, and sentence") {
    const Demonstration demo("s", "w", DemoSource::dictionary);
    const RepresentationMethod plain(RepresentationMethod::Kind::prompt_eol);
    const RepresentationMethod icl(RepresentationMethod::Kind::prompt_eol, demo);
    CHECK(embedding_source_id(plain, "a") != embedding_source_id(plain, "b"));
    CHECK(embedding_source_id(plain, "a") != embedding_source_id(icl, "a"));
}
