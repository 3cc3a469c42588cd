// promptemb: turn an autoregressive LM into a sentence encoder and evaluate it.
//
// Subcommands: embed, eval-sts, eval-transfer, search-demo, build-demos,
// train-cse. Exit codes: 0 success, 1 usage/config error, 2 data error,
// 3 backend error.

#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "promptemb/cache.hpp"
#include "promptemb/config.hpp"
#include "promptemb/eval.hpp"
#include "promptemb/icl.hpp"
#include "promptemb/io.hpp"
#include "promptemb/train.hpp"

namespace pe = promptemb;

namespace {

struct Flags {
    std::string config_path;
    std::optional<std::int64_t> seed;
    std::optional<std::string> method;
    std::optional<std::int64_t> batch_size;
    std::optional<std::string> output;
    std::optional<std::string> cache_dir;
    std::optional<std::string> input;
    bool dictionary_only = false;
    bool allow_partial = false;
};

void add_common_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file");
    cmd->add_option("--seed", f.seed, "override config seed");
    cmd->add_option("--method", f.method, "avg_tokens | prompt_last | prompt_eol");
    cmd->add_option("--batch-size", f.batch_size, "embedding batch size");
    cmd->add_option("--output", f.output, "output path");
    cmd->add_option("--cache-dir", f.cache_dir, "embedding cache directory");
}

pe::PipelineConfig resolve_config(const Flags& f) {
    pe::PipelineConfig c = f.config_path.empty() ? pe::PipelineConfig::defaults()
                                                 : pe::PipelineConfig::load(f.config_path);
    nlohmann::json o = nlohmann::json::object();
    if (f.seed) o["seed"] = *f.seed;
    if (f.method) o["method"] = *f.method;
    if (f.batch_size) o["batch_size"] = *f.batch_size;
    if (f.output) o["output"] = *f.output;
    if (f.cache_dir) o["cache_dir"] = *f.cache_dir;
    if (f.input) o["input"] = *f.input;
    c.merge(o);
    return c;
}

std::unique_ptr<pe::EmbeddingCache> open_cache(const pe::PipelineConfig& c) {
    const std::string dir = c.str_or("cache_dir", "");
    if (dir.empty()) return nullptr;
    return std::make_unique<pe::EmbeddingCache>(dir);
}

std::string utc_timestamp() {
    char buf[32];
    const std::time_t now = std::time(nullptr);
    std::tm tm_utc{};
    gmtime_r(&now, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

int cmd_embed(const pe::PipelineConfig& c) {
    const std::string input = c.require_str("input");
    const std::string output = c.require_str("output");
    pe::PipelineConfig::require_file(input);

    const auto sentences = pe::read_sentence_lines(input);
    if (sentences.empty()) throw pe::Error(pe::ErrorKind::data, "no sentences in '" + input + "'");

    const auto backend = pe::make_backend_from_config(c.data);
    const auto method = pe::method_from_config(c.data);
    auto cache = open_cache(c);
    const auto vectors =
        pe::embed_batch_cached(cache.get(), method, sentences, *backend,
                               static_cast<int>(c.int_or("batch_size", 8)));
    pe::write_embedding_file(output, vectors);

    nlohmann::json manifest;
    manifest["method"] = method.id();
    manifest["backend"] = backend->descriptor().name;
    manifest["demonstration"] = method.demonstration().has_value()
                                    ? pe::demo_to_json(*method.demonstration())
                                    : nlohmann::json();
    manifest["seed"] = c.int_or("seed", 0);
    manifest["count"] = vectors.size();
    manifest["dimension"] = vectors.front().values.size();
    manifest["config_snapshot"] = c.data;
    manifest["created_at"] = utc_timestamp();
    pe::write_text_file(output + ".manifest.json", manifest.dump(2) + "\n");

    std::cout << "wrote " << vectors.size() << " embeddings (dim "
              << vectors.front().values.size() << ") to " << output << "\n";
    return 0;
}

int cmd_eval_sts(const pe::PipelineConfig& c, bool allow_partial) {
    const std::string output = c.require_str("output");
    if (!c.data.contains("datasets") || !c.data.at("datasets").contains("sts"))
        throw pe::Error(pe::ErrorKind::usage, "config needs datasets.sts = {name: path}");
    const auto& spec = c.data.at("datasets").at("sts");

    for (const auto& [name, path] : spec.items())
        pe::PipelineConfig::require_file(path.get<std::string>());

    const auto backend = pe::make_backend_from_config(c.data);
    const auto method = pe::method_from_config(c.data);
    auto cache = open_cache(c);
    const int batch_size = static_cast<int>(c.int_or("batch_size", 8));

    std::map<std::string, double> scores;
    nlohmann::json n_pairs = nlohmann::json::object();
    nlohmann::json failures = nlohmann::json::object();
    for (const auto& [name, path] : spec.items()) {
        try {
            const auto data = pe::read_sts_file(path.get<std::string>());
            const auto outcome =
                pe::evaluate_sts({{name, data}}, method, *backend, batch_size, cache.get());
            scores[name] = outcome.results.front().spearman;
            n_pairs[name] = outcome.results.front().n_pairs;
        } catch (const pe::Error& e) {
            if (!allow_partial) throw;
            failures[name] = e.what();
        }
    }
    if (scores.empty()) throw pe::Error(pe::ErrorKind::data, "every STS dataset failed");

    auto report = pe::make_run_report(method.id(), method.demonstration(), scores, c.data,
                                      c.int_or("seed", 0));
    nlohmann::json j = pe::run_report_to_json(report);
    j["n_pairs"] = std::move(n_pairs);
    if (!failures.empty()) {
        j["incomplete"] = true;
        j["failures"] = std::move(failures);
    }
    pe::write_text_file(output, j.dump(2) + "\n");
    std::cout << "sts average (x100): " << j["average_x100"] << "\n";
    return 0;
}

int cmd_eval_transfer(const pe::PipelineConfig& c) {
    const std::string output = c.require_str("output");
    if (!c.data.contains("datasets") || !c.data.at("datasets").contains("transfer"))
        throw pe::Error(pe::ErrorKind::usage,
                        "config needs datasets.transfer = {name: {train, test}}");
    const auto& spec = c.data.at("datasets").at("transfer");

    for (const auto& [name, paths] : spec.items()) {
        pe::PipelineConfig::require_file(paths.at("train").get<std::string>());
        pe::PipelineConfig::require_file(paths.at("test").get<std::string>());
    }

    const auto backend = pe::make_backend_from_config(c.data);
    const auto method = pe::method_from_config(c.data);
    auto cache = open_cache(c);
    const int batch_size = static_cast<int>(c.int_or("batch_size", 8));

    pe::TransferHyperparams hyper;
    hyper.seed = static_cast<std::uint64_t>(c.int_or("seed", 0));
    if (c.data.contains("transfer")) {
        const auto& t = c.data.at("transfer");
        hyper.epochs = t.value("epochs", hyper.epochs);
        hyper.lr = t.value("lr", hyper.lr);
    }

    std::map<std::string, double> scores;
    nlohmann::json sizes = nlohmann::json::object();
    for (const auto& [name, paths] : spec.items()) {
        const auto [train, num_classes] =
            pe::read_labeled_file(paths.at("train").get<std::string>(), true);
        auto [test, test_classes] =
            pe::read_labeled_file(paths.at("test").get<std::string>(), false);
        if (test_classes > num_classes)
            throw pe::Error(pe::ErrorKind::data,
                            "task '" + name + "': test labels exceed training classes");
        const auto r = pe::evaluate_transfer(name, train, test, num_classes, method, *backend,
                                             hyper, batch_size, cache.get());
        scores[name] = r.accuracy;
        sizes[name] = {{"n_train", r.n_train}, {"n_test", r.n_test}};
    }

    auto report = pe::make_run_report(method.id(), method.demonstration(), scores, c.data,
                                      c.int_or("seed", 0));
    nlohmann::json j = pe::run_report_to_json(report);
    j["split_sizes"] = std::move(sizes);
    pe::write_text_file(output, j.dump(2) + "\n");
    std::cout << "transfer average (x100): " << j["average_x100"] << "\n";
    return 0;
}

int cmd_search_demo(const pe::PipelineConfig& c) {
    const std::string output = c.require_str("output");
    const std::string demo_path = c.require_str("demo_set");
    if (!c.data.contains("datasets") || !c.data.at("datasets").contains("dev"))
        throw pe::Error(pe::ErrorKind::usage, "config needs datasets.dev = path to dev TSV");
    const std::string dev_path = c.data.at("datasets").at("dev").get<std::string>();
    pe::PipelineConfig::require_file(demo_path);
    pe::PipelineConfig::require_file(dev_path);

    const auto demo_set = pe::DemonstrationSet::from_json(
        nlohmann::json::parse(pe::read_text_file(demo_path)));
    const auto dev = pe::read_sts_file(dev_path);
    const auto backend = pe::make_backend_from_config(c.data);
    auto cache = open_cache(c);

    const auto result = pe::search_demonstration(
        demo_set, dev, *backend, static_cast<int>(c.int_or("batch_size", 8)), cache.get());
    const auto hist =
        pe::score_histogram(result, static_cast<int>(c.int_or("histogram_bins", 10)));

    nlohmann::json j;
    j["best_demo"] = pe::demo_to_json(result.best_demo);
    j["best_index"] = result.best_index;
    j["best_score"] = result.best_score;
    j["baseline_score"] = result.baseline_score;
    j["no_improving_demonstration"] = result.no_improving_demonstration();
    nlohmann::json all = nlohmann::json::array();
    for (const auto& [idx, score] : result.all_scores) all.push_back({idx, score});
    j["all_scores"] = std::move(all);
    j["histogram"] = pe::histogram_to_json(hist);
    j["config_snapshot"] = c.data;
    j["seed"] = c.int_or("seed", 0);
    pe::write_text_file(output, j.dump(2) + "\n");

    std::cout << "best demo #" << result.best_index << " (" << result.best_demo.word()
              << "): dev spearman " << result.best_score << " vs baseline "
              << result.baseline_score << "\n";
    return 0;
}

int cmd_build_demos(const pe::PipelineConfig& c, bool dictionary_only, bool allow_partial) {
    const std::string output = c.require_str("output");
    const std::string dict_path = c.str_or("dictionary", "");
    const std::string sentences_path = c.str_or("sentences", "");
    if (dict_path.empty() && (sentences_path.empty() || dictionary_only))
        throw pe::Error(pe::ErrorKind::usage,
                        "need a 'dictionary' TSV and/or a 'sentences' file with a labeler");

    pe::DemonstrationSet set;
    int duplicates = 0;
    if (!dict_path.empty()) {
        pe::PipelineConfig::require_file(dict_path);
        for (auto& demo : pe::build_from_dictionary(pe::read_dictionary_file(dict_path)))
            if (!set.add(std::move(demo))) ++duplicates;
    }
    if (!dictionary_only && !sentences_path.empty()) {
        pe::PipelineConfig::require_file(sentences_path);
        if (!c.data.contains("labeler") || c.data.at("labeler").is_null())
            throw pe::Error(pe::ErrorKind::usage,
                            "a 'labeler' backend is required to label sentences; pass "
                            "--dictionary-only to skip labeling");
        nlohmann::json labeler_config = {{"backend", c.data.at("labeler")}};
        const auto labeler = pe::make_backend_from_config(labeler_config);
        const auto outcome =
            pe::label_sentences(pe::read_sentence_lines(sentences_path), *labeler);
        for (auto demo : outcome.demos)
            if (!set.add(std::move(demo))) ++duplicates;
        if (!outcome.skipped.empty()) {
            for (const auto& [idx, reason] : outcome.skipped)
                std::cerr << "skipped sentence " << idx << ": " << reason << "\n";
            if (!allow_partial) throw pe::LabelingFailedError(outcome.skipped);
        }
    }
    if (set.empty()) throw pe::Error(pe::ErrorKind::data, "no demonstrations were built");

    pe::write_text_file(output, set.to_json().dump(2) + "\n");
    std::cout << "wrote " << set.size() << " demonstrations (";
    bool first = true;
    for (const auto& [source, count] : set.provenance_counts()) {
        if (!first) std::cout << ", ";
        std::cout << source << ": " << count;
        first = false;
    }
    std::cout << "); " << duplicates << " duplicate(s) dropped\n";
    return 0;
}

int cmd_train_cse(const pe::PipelineConfig& c) {
    const std::string output = c.require_str("output");
    if (!c.data.contains("train") || !c.data.at("train").contains("nli"))
        throw pe::Error(pe::ErrorKind::usage, "config needs train.nli = path to NLI CSV");
    const std::string nli_path = c.data.at("train").at("nli").get<std::string>();
    pe::PipelineConfig::require_file(nli_path);

    const auto triplets = pe::read_nli_file(nli_path);
    // training always starts from the base backend, never from a checkpoint
    nlohmann::json base_config = c.data;
    base_config.erase("adapter_checkpoint");
    const auto backend = pe::make_backend_from_config(base_config);
    const auto train_config = pe::train_config_from_json(c.data);

    auto outcome = pe::train_cse(triplets, backend, train_config);
    pe::save_adapter_checkpoint(output, *outcome.model, c.data);

    nlohmann::json log;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : outcome.log) entries.push_back({{"step", e.step}, {"loss", e.loss}});
    log["entries"] = std::move(entries);
    log["train_config"] = pe::train_config_to_json(train_config);
    log["config_snapshot"] = c.data;
    log["seed"] = c.int_or("seed", 0);
    pe::write_text_file(output + ".log.json", log.dump(2) + "\n");

    if (!outcome.log.empty())
        std::cout << "trained " << outcome.log.size() << " steps; loss "
                  << outcome.log.front().loss << " -> " << outcome.log.back().loss << "\n";
    std::cout << "checkpoint written to " << output << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"prompt-based sentence embedding toolkit"};
    app.require_subcommand(1);

    Flags flags;
    auto* embed = app.add_subcommand("embed", "embed one sentence per input line");
    add_common_flags(embed, flags);
    embed->add_option("--input", flags.input, "sentence file, one per line");

    auto* eval_sts = app.add_subcommand("eval-sts", "score STS datasets (Spearman)");
    add_common_flags(eval_sts, flags);
    eval_sts->add_flag("--allow-partial", flags.allow_partial,
                       "keep going on dataset failures; mark the report incomplete");

    auto* eval_transfer =
        app.add_subcommand("eval-transfer", "logistic-probe accuracy on labeled splits");
    add_common_flags(eval_transfer, flags);

    auto* search = app.add_subcommand("search-demo", "search a demonstration set on a dev set");
    add_common_flags(search, flags);

    auto* build = app.add_subcommand("build-demos", "build a demonstration set");
    add_common_flags(build, flags);
    build->add_flag("--dictionary-only", flags.dictionary_only, "skip the labeling stage");
    build->add_flag("--allow-partial", flags.allow_partial,
                    "write the set even if some sentences could not be labeled");

    auto* train = app.add_subcommand("train-cse", "contrastive fine-tuning on NLI triplets");
    add_common_flags(train, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        const pe::PipelineConfig config = resolve_config(flags);
        if (app.got_subcommand(embed)) return cmd_embed(config);
        if (app.got_subcommand(eval_sts)) return cmd_eval_sts(config, flags.allow_partial);
        if (app.got_subcommand(eval_transfer)) return cmd_eval_transfer(config);
        if (app.got_subcommand(search)) return cmd_search_demo(config);
        if (app.got_subcommand(build))
            return cmd_build_demos(config, flags.dictionary_only, flags.allow_partial);
        if (app.got_subcommand(train)) return cmd_train_cse(config);
        return 1;
    } catch (const pe::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return static_cast<int>(e.kind());
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
