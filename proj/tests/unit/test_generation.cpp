/*
 * Copyright 2026 The ttprag Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include <atomic>
#include <sstream>

#include "appendix.hpp"
#include "doctest.h"
#include "fuzz.hpp"
#include "json.hpp"
#include "test_util.hpp"
#include "ttprag/generation.hpp"
#include "ttprag/text.hpp"

using namespace ttprag;
using namespace ttprag::testing;

namespace {

std::vector<std::string> strs(const std::vector<TechniqueId>& v) {
    std::vector<std::string> out;
    for (auto id : v) {
        out.push_back(id.str());
    }
    return out;
}

std::string join_ranking(std::vector<TechniqueId> w) {
    std::string out;
    for (std::size_t i = 0; i < w.size(); ++i) {
        out += (i ? " > " : "") + w[i].str();
    }
    return out;
}

/// Ranks by descending id; deterministic and order-sensitive.
std::shared_ptr<ChatBackend> descending_ranker(std::atomic<int>* calls = nullptr) {
    return std::make_shared<FunctionChatBackend>([calls](const ChatRequest& req) {
        if (calls) {
            ++*calls;
        }
        auto w = prompt_window(req);
        std::sort(w.rbegin(), w.rend());
        return join_ranking(w);
    });
}

/// Answers with the labels of every exemplar in the context.
std::shared_ptr<ChatBackend> echo_generator(std::vector<ChatRequest>* seen = nullptr) {
    return std::make_shared<FunctionChatBackend>([seen](const ChatRequest& req) {
        if (seen) {
            seen->push_back(req);
        }
        const auto& user = req.messages.at(1).content;
        std::string out;
        for (auto pos = user.find("[technique]"); pos != std::string::npos;
             pos = user.find("[technique]", pos + 1)) {
            out += user.substr(pos + 11, user.find("[text]", pos) - pos - 11) + ", ";
        }
        return out.empty() ? std::string("none") : out;
    });
}

Corpus small_corpus() {
    return make_corpus({{"c1", "attacker dumps lsass memory with procdump", ids({"T1003.001"})},
                        {"c2", "powershell downloads a payload over https", ids({"T1059.001", "T1105"})},
                        {"c3", "scheduled task persists the implant", ids({"T1053.005"})},
                        {"c4", "implant beacons over https to the server", ids({"T1071.001"})},
                        {"c5", "payload is packed and obfuscated", ids({"T1027"})}});
}

std::shared_ptr<Taxonomy> small_taxonomy() {
    return std::make_shared<Taxonomy>(make_taxonomy(
        ids({"T1003.001", "T1059.001", "T1105", "T1053.005", "T1071.001", "T1027"})));
}

}  // namespace

TEST_CASE("prediction extraction from a numbered answer") {
    auto tax = load_taxonomy(data_path("appendix/taxonomy.csv"), TaxonomyFormat::csv);
    const std::string answer =
        "1. T1059.001: Command and Scripting Interpreter: PowerShell\n"
        "2. T1053: Scheduled Task/Job\n"
        "3. T1053.005: Scheduled Task/Job: Scheduled Task\n"
        "4. T1071.001: Application Layer Protocol: Web Protocols";
    std::size_t filtered = 99;
    auto got = extract_prediction(answer, tax, {}, false, &filtered);
    CHECK(strs(got) == std::vector<std::string>{"T1059.001", "T1053", "T1053.005", "T1071.001"});
    CHECK(filtered == 0);
}

TEST_CASE("prediction extraction filters") {
    auto tax = make_taxonomy(ids({"T1059.001", "T1027"}));
    std::size_t filtered = 0;
    SUBCASE("duplicates keep the first occurrence") {
        auto got = extract_prediction("T1027, T1059.001 (x), t1027, T1027", tax, {}, false, &filtered);
        CHECK(strs(got) == std::vector<std::string>{"T1027", "T1059.001"});
        CHECK(filtered == 0);
    }
    SUBCASE("ids outside the taxonomy are dropped and counted once") {
        auto got = extract_prediction("T9999, T1027, T9999, T1059.002", tax, {}, false, &filtered);
        CHECK(strs(got) == std::vector<std::string>{"T1027"});
        CHECK(filtered == 2);
    }
    SUBCASE("strict candidate filter") {
        auto allowed = ids({"T1059.001"});
        auto got = extract_prediction("T1027, T1059.001", tax, allowed, true, &filtered);
        CHECK(strs(got) == std::vector<std::string>{"T1059.001"});
        CHECK(filtered == 1);
        got = extract_prediction("T1027, T1059.001", tax, allowed, false, &filtered);
        CHECK(got.size() == 2);
    }
    SUBCASE("null counter is fine") {
        CHECK(extract_prediction("T1027", tax, {}, false, nullptr).size() == 1);
    }
}

TEST_CASE("annotate sends one sampled request and reports empty output") {
    auto tax = make_taxonomy(ids({"T1059.001"}));
    GeneratorContext ctx;
    ctx.serialized = "query [text] ex [technique] T1059.001";
    std::vector<ChatRequest> seen;
    std::string reply = "T9999";
    FunctionChatBackend gen([&](const ChatRequest& r) {
        seen.push_back(r);
        return reply;
    });
    GenerationConfig cfg;
    cfg.model = "gen";
    RankedCandidates ranked;
    ranked.degraded = true;
    try {
        annotate(ctx, gen, cfg, tax, ranked, "q1");
        FAIL("expected EmptyPrediction");
    } catch (const EmptyPrediction& e) {
        CHECK(e.annotation().query_id == "q1");
        CHECK(e.annotation().raw_response == "T9999");
        CHECK(e.annotation().filtered_count == 1);
    }
    REQUIRE(seen.size() == 1);
    CHECK(seen[0].model == "gen");
    CHECK(seen[0].temperature == doctest::Approx(0.7));
    CHECK(seen[0].top_p.value() == doctest::Approx(0.1));
    CHECK(seen[0].max_tokens == 256);
    REQUIRE(seen[0].messages.size() == 2);
    CHECK(seen[0].messages[0].content == generator_instruction());
    CHECK(seen[0].messages[1].content == ctx.serialized);

    reply = "T1059.001 (PowerShell)";
    auto ann = annotate(ctx, gen, cfg, tax, ranked);
    CHECK(strs(ann.predicted) == std::vector<std::string>{"T1059.001"});
    CHECK(ann.degraded);
}

TEST_CASE("instruction keeps the output contract") {
    const auto ins = std::string(generator_instruction());
    CHECK(ins.find("[text]") != std::string::npos);
    CHECK(ins.find("[technique]") != std::string::npos);
    CHECK(ins.find("comma-separated list of technique IDs") != std::string::npos);
}

TEST_CASE("config validation") {
    GenerationConfig g;
    g.temperature = -0.1;
    CHECK_THROWS_AS(validate(g), Error);
    g.temperature = 0;
    g.top_p = 1.5;
    CHECK_THROWS_AS(validate(g), Error);
    g.top_p = 1.0;
    CHECK_NOTHROW(validate(g));

    PipelineHyper h;
    CHECK_NOTHROW(validate(h));
    h.top_k = 2;
    h.exemplars = 3;
    CHECK_THROWS_AS(validate(h), Error);
    h = {};
    h.overlap = h.window;
    CHECK_THROWS_AS(validate(h), Error);
    h = {};
    h.top_k = 0;
    h.exemplars = 0;
    CHECK_THROWS_AS(validate(h), Error);
    CHECK_THROWS_AS(Pipeline(Corpus{}, small_taxonomy(), descending_ranker(), echo_generator()),
                    EmptyCorpus);
    CHECK_THROWS_AS(Pipeline(small_corpus(), nullptr, descending_ranker(), echo_generator()), Error);
}

TEST_CASE("pipeline end to end over a small corpus") {
    std::atomic<int> calls{0};
    std::vector<ChatRequest> gen_seen;
    PipelineHyper hyper;
    hyper.top_k = 3;
    hyper.exemplars = 2;
    hyper.include_names = false;
    Pipeline p(small_corpus(), small_taxonomy(), descending_ranker(&calls), echo_generator(&gen_seen),
               hyper);
    auto result = p.run("powershell fetches a payload over https", "q");
    const auto& t = result.trace;
    CHECK(t.view_size == 5);
    // c2 (powershell, payload, https) beats c4 (https) and c5 (payload)
    REQUIRE(t.retrieval.size() == 3);
    CHECK(t.retrieval.hits[0].id == "c2");
    CHECK(calls == 1);
    CHECK(t.candidates.size() == 4);
    // descending id order puts T1105 first, whose only pair is c2
    CHECK(t.ranked.order.front() == parse_id("T1105"));
    REQUIRE(t.context.exemplars.size() == 2);
    CHECK(t.context.exemplars[0].id == "c2");
    CHECK(strs(result.annotation.predicted).front() == "T1059.001");
    CHECK(result.annotation.query_id == "q");
    CHECK_FALSE(result.empty_prediction);
    REQUIRE(gen_seen.size() == 1);
    CHECK(gen_seen[0].messages[1].content == t.context.serialized);

    auto js = nlohmann::json::parse(trace_json(t, &result.annotation));
    CHECK(js["retrieval"].size() == 3);
    CHECK(js["rerank"]["backend_calls"] == 1);
    CHECK(js["context"]["exemplars"][0] == "c2");
    CHECK(js["generation"]["predicted"][0] == "T1059.001");
}

TEST_CASE("a query equal to a corpus text never retrieves it") {
    PipelineHyper hyper;
    hyper.top_k = 5;
    hyper.exemplars = 5;
    Pipeline p(small_corpus(), small_taxonomy(), descending_ranker(), echo_generator(), hyper);
    auto t = p.prepare("  scheduled task   persists the implant ");
    CHECK(t.view_size == 4);
    for (const auto& h : t.retrieval.hits) {
        CHECK(h.id != "c3");
    }
    // scores match an index built without c3
    auto view = retrieval_view(small_corpus(), "scheduled task persists the implant");
    auto direct = build_index(view).search("  scheduled task   persists the implant ", 5);
    REQUIRE(direct.size() == t.retrieval.size());
    for (std::size_t i = 0; i < direct.size(); ++i) {
        CHECK(direct.hits[i].id == t.retrieval.hits[i].id);
        CHECK(direct.hits[i].score == t.retrieval.hits[i].score);
    }
}

TEST_CASE("no retrieval hits: bare query context and no ranking call") {
    std::atomic<int> calls{0};
    std::vector<ChatRequest> seen;
    Pipeline p(small_corpus(), small_taxonomy(), descending_ranker(&calls), echo_generator(&seen));
    auto r = p.run("zzz qqq");
    CHECK(r.trace.retrieval.empty());
    CHECK(calls == 0);
    CHECK(r.trace.context.serialized == "zzz qqq");
    CHECK(r.empty_prediction);
    CHECK(r.annotation.predicted.empty());
    CHECK(seen.size() == 1);
}

TEST_CASE("failures are tagged with their stage") {
    auto stage_of = [](auto&& fn) -> std::string {
        try {
            fn();
        } catch (const StageError& e) {
            return e.stage();
        }
        return "none";
    };
    auto broken = std::make_shared<FunctionChatBackend>(
        [](const ChatRequest&) -> std::string { throw std::runtime_error("boom"); });
    auto down = std::make_shared<FunctionChatBackend>(
        [](const ChatRequest&) -> std::string { throw BackendError("down"); });

    Pipeline bad_ranker(small_corpus(), small_taxonomy(), broken, echo_generator());
    CHECK(stage_of([&] { bad_ranker.run("powershell payload"); }) == "rerank");

    Pipeline bad_gen(small_corpus(), small_taxonomy(), descending_ranker(), down);
    CHECK(stage_of([&] { bad_gen.run("powershell payload"); }) == "generate");

    // a failing re-ranker backend degrades instead of failing
    Pipeline degraded(small_corpus(), small_taxonomy(), down, echo_generator());
    auto r = degraded.run("powershell payload");
    CHECK(r.trace.ranked.degraded);
    CHECK(r.annotation.degraded);

    PipelineHyper tight;
    tight.context_budget = 3;
    Pipeline small_budget(small_corpus(), small_taxonomy(), descending_ranker(), echo_generator(), tight);
    CHECK(stage_of([&] { small_budget.run("powershell payload over https now"); }) == "context");

    Pipeline no_ranker(small_corpus(), small_taxonomy(), nullptr, echo_generator());
    CHECK(stage_of([&] { no_ranker.run("powershell"); }) == "rerank");
    Pipeline no_gen(small_corpus(), small_taxonomy(), descending_ranker(), nullptr);
    CHECK(stage_of([&] { no_gen.run("powershell"); }) == "generate");
}

TEST_CASE("appendix fixture: schtasks annotation") {
    AppendixFixture fx;
    auto r = fx.pipeline->run(fx.query("schtasks"), "schtasks");
    CHECK(strs(r.annotation.predicted) ==
          std::vector<std::string>{"T1059.001", "T1053", "T1053.005", "T1071.001"});
    CHECK_FALSE(r.annotation.degraded);
    CHECK_FALSE(std::filesystem::exists(fx.dir / "stubs/misses"));
}

namespace {

std::vector<Row> export_rows(std::size_t singles, std::size_t multis) {
    std::vector<Row> rows;
    for (std::size_t i = 0; i < singles; ++i) {
        rows.push_back({"s" + std::to_string(i), "single sample number " + std::to_string(i) + " shared words",
                        {TechniqueId(static_cast<std::uint16_t>(1100 + i))}});
    }
    for (std::size_t i = 0; i < multis; ++i) {
        rows.push_back({"m" + std::to_string(i), "multi sample number " + std::to_string(i) + " shared words",
                        {TechniqueId(1001), TechniqueId(static_cast<std::uint16_t>(1200 + i))}});
    }
    return rows;
}

std::shared_ptr<Taxonomy> export_taxonomy(const Corpus& c) {
    std::vector<TechniqueId> all;
    for (const auto& ex : c) {
        all.insert(all.end(), ex.labels.begin(), ex.labels.end());
    }
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    return std::make_shared<Taxonomy>(make_taxonomy(all));
}

}  // namespace

TEST_CASE("training export oversamples multi-label examples") {
    auto corpus = make_corpus(export_rows(8, 2));
    Pipeline p(corpus, export_taxonomy(corpus), descending_ranker(), echo_generator());
    auto r3 = export_training(p, corpus, {3, 1});
    CHECK(r3.records.size() == 14);
    CHECK(r3.failures.empty());
    auto r1 = export_training(p, corpus, {1, 1});
    CHECK(r1.records.size() == 10);
    // copies are adjacent and identical, corpus order kept
    CHECK(r3.records[8].example_id == "m0");
    CHECK(r3.records[10].example_id == "m0");
    CHECK(r3.records[11].example_id == "m1");
    CHECK(r3.records[8].input == r3.records[10].input);
    CHECK_THROWS_AS(export_training(p, corpus, {0, 1}), Error);

    auto three = make_corpus({{"x", "three labels here", ids({"T1001", "T1002", "T1003"})},
                              {"y", "one label there", ids({"T1001"})}});
    Pipeline p3(three, export_taxonomy(three), descending_ranker(), echo_generator());
    auto r = export_training(p3, three, {3, 1});
    CHECK(r.records.size() == 4);
}

TEST_CASE("training records match inference contexts and never leak") {
    auto rows = export_rows(6, 3);
    rows.push_back({"dup", rows[0].text, rows[0].labels});  // same text, other id
    auto corpus = make_corpus(rows);
    PipelineHyper hyper;
    hyper.exemplars = 3;
    Pipeline p(corpus, export_taxonomy(corpus), descending_ranker(), echo_generator(), hyper);
    auto serial = export_training(p, corpus, {1, 1});
    auto parallel = export_training(p, corpus, {1, 4});
    REQUIRE(serial.records.size() == corpus.size());
    REQUIRE(parallel.records.size() == corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto& rec = serial.records[i];
        const auto& ex = corpus[i];
        CAPTURE(ex.id);
        CHECK(rec.example_id == ex.id);
        CHECK(rec.instruction == generator_instruction());
        CHECK(rec.input == p.prepare(ex.text).context.serialized);
        CHECK(rec.input == parallel.records[i].input);
        CHECK(rec.output == render_labels(ex.labels, &p.taxonomy(), true));
        CHECK(rec.input.find("[text] " + normalize_whitespace(ex.text) + " [technique]") ==
              std::string::npos);
        CHECK(rec.input.find("[text]") != std::string::npos);
    }

    std::ostringstream out;
    write_training_jsonl(out, serial.records);
    std::istringstream in(out.str());
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line); ++lines) {
        auto js = nlohmann::json::parse(line);
        CHECK(js.size() == 3);
        CHECK(js.contains("instruction"));
        CHECK(js["input"] == serial.records[lines].input);
    }
    CHECK(lines == corpus.size());
}

TEST_CASE("export lists failing examples and keeps going") {
    auto corpus = make_corpus({{"ok", "short text words", ids({"T1001"})},
                               {"long", "short text words plus many many many many many more words",
                                ids({"T1002"})}});
    PipelineHyper hyper;
    hyper.context_budget = 8;
    Pipeline p(corpus, export_taxonomy(corpus), descending_ranker(), echo_generator(), hyper);
    auto r = export_training(p, corpus, {3, 2});
    REQUIRE(r.failures.size() == 1);
    CHECK(r.failures[0].example_id == "long");
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].example_id == "ok");
}
