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


#include <random>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"
#include "ttprag/errors.hpp"
#include "ttprag/retriever.hpp"

using namespace ttprag;
using namespace ttprag::testing;

namespace {

Corpus tiny() {
    return make_corpus({{"d1", "ssh key login", ids({"T1021.004"})},
                        {"d2", "powershell script", ids({"T1059.001"})},
                        {"d3", "ssh session root", ids({"T1563.001"})}});
}

std::vector<std::string> random_doc(std::mt19937& rng, const std::vector<std::string>& vocab,
                                    std::size_t max_len) {
    std::vector<std::string> out(rng() % (max_len + 1));
    for (auto& w : out) {
        w = vocab[rng() % vocab.size()];
    }
    return out;
}

std::string join(const std::vector<std::string>& words) {
    std::string s;
    for (const auto& w : words) {
        s += (s.empty() ? "" : " ") + w;
    }
    return s;
}

}  // namespace

TEST_CASE("tokenize") {
    using V = std::vector<std::string>;
    CHECK(tokenize("Piped to ``bash''") == V{"piped", "to", "bash"});
    CHECK(tokenize("uses T1059.004 via SSH") == V{"uses", "t1059.004", "via", "ssh"});
    CHECK(tokenize("").empty());
    CHECK(tokenize("version 1.2.3") == V{"version", "1", "2", "3"});
    CHECK(tokenize("T1059.004.") == V{"t1059.004"});
    CHECK(tokenize("T1059.0045") == V{"t1059", "0045"});
    CHECK(tokenize("XT1059.004") == V{"xt1059", "004"});
    CHECK(tokenize("cmd.exe /c whoami") == V{"cmd", "exe", "c", "whoami"});
    CHECK(tokenize("caf\xC3\xA9 bar") == V{"caf", "bar"});
}

TEST_CASE("index shape") {
    auto idx = build_index(tiny());
    CHECK(idx.size() == 3);
    CHECK(idx.avg_doc_length() == doctest::Approx(8.0 / 3.0));
    CHECK(idx.total_length() == 8);
    const auto* ssh = idx.postings("ssh");
    REQUIRE(ssh != nullptr);
    CHECK(ssh->size() == 2);

    auto rep = build_index(make_corpus({{"a", "ssh ssh", ids({"T1059"})}}));
    REQUIRE(rep.postings("ssh") != nullptr);
    CHECK(rep.postings("ssh")->at(0).tf == 2);
}

TEST_CASE("index invariants") {
    auto idx = build_index(load_jsonl(data_path("appendix/train.jsonl"), Split::train, "a"));
    std::uint64_t sum = 0;
    for (auto l : idx.doc_lengths()) {
        sum += l;
    }
    CHECK(static_cast<double>(sum) / static_cast<double>(idx.size()) ==
          doctest::Approx(idx.avg_doc_length()));
    std::stringstream dump;
    idx.save(dump);
    auto back = Bm25Index::load(dump);
    CHECK(back == idx);
}

TEST_CASE("build is deterministic") {
    CHECK(build_index(tiny()) == build_index(tiny()));
}

TEST_CASE("build errors") {
    CHECK_THROWS_AS(build_index(Corpus{}), EmptyCorpus);
    CHECK_THROWS_AS(build_index(tiny(), 0.0, 0.75), Error);
    CHECK_THROWS_AS(build_index(tiny(), 1.2, 1.5), Error);
    CHECK_THROWS_AS(build_index(tiny(), 1.2, -0.1), Error);
}

TEST_CASE("worked example") {
    // Values from a direct evaluation of the formula outside this code base:
    //   d3 = (ln 1.6 + ln(8/3)) / 2.3125, d1 = ln 1.6 / 2.3125
    auto r = search(build_index(tiny()), "ssh root", 2);
    REQUIRE(r.size() == 2);
    CHECK(r.hits[0].id == "d3");
    CHECK(r.hits[0].score == doctest::Approx(0.6273871923275511).epsilon(1e-12));
    CHECK(r.hits[1].id == "d1");
    CHECK(r.hits[1].score == doctest::Approx(0.2032448126468046).epsilon(1e-12));
}

TEST_CASE("search edge cases") {
    auto idx = build_index(tiny());
    CHECK(search(idx, "zzz", 5).empty());
    CHECK(search(idx, "", 5).empty());
    CHECK(search(idx, "ssh", 0).empty());
    auto all = search(idx, "ssh powershell", 100);
    CHECK(all.size() == 3);
}

TEST_CASE("ties keep insertion order") {
    auto c = make_corpus({{"x", "alpha beta", ids({"T1059"})},
                          {"y", "gamma delta", ids({"T1059"})},
                          {"z", "alpha beta", ids({"T1059"})}});
    auto r = search(build_index(c), "alpha", 3);
    REQUIRE(r.size() == 2);
    CHECK(r.hits[0].id == "x");
    CHECK(r.hits[1].id == "z");
    CHECK(r.hits[0].score == r.hits[1].score);
}

TEST_CASE("exclusion equals an index built over the view") {
    std::mt19937 rng(3);
    std::vector<std::string> vocab{"a", "b", "c", "d", "e", "f", "g"};
    for (int round = 0; round < 100; ++round) {
        std::vector<Row> rows;
        const std::size_t n = 2 + rng() % 10;
        for (std::size_t i = 0; i < n; ++i) {
            rows.push_back({"d" + std::to_string(i), join(random_doc(rng, vocab, 6)), ids({"T1059"})});
        }
        auto full = make_corpus(rows);
        auto idx = build_index(full);
        std::vector<bool> drop(n, false);
        std::vector<std::size_t> excluded;
        for (std::size_t i = 0; i < n; ++i) {
            if (rng() % 3 == 0) {
                drop[i] = true;
                excluded.push_back(i);
            }
        }
        auto view = full.filtered(drop);
        if (view.empty()) {
            continue;
        }
        auto query = join(random_doc(rng, vocab, 5));
        auto a = idx.search(query, n, excluded);
        auto b = build_index(view).search(query, n);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a.hits[i].id == b.hits[i].id);
            CHECK(a.hits[i].score == b.hits[i].score);
        }
    }
}

TEST_CASE("brute-force oracle, ordering and prefix properties") {
    std::mt19937 rng(20240501);
    std::vector<std::string> vocab{"ssh", "root", "key", "bash", "miner", "cron", "dll", "task", "shell"};
    for (int round = 0; round < 100; ++round) {
        std::vector<std::vector<std::string>> docs(1 + rng() % 20);
        std::vector<Row> rows;
        for (std::size_t i = 0; i < docs.size(); ++i) {
            docs[i] = random_doc(rng, vocab, 10);
            rows.push_back({"d" + std::to_string(i), join(docs[i]), ids({"T1059"})});
        }
        auto idx = build_index(make_corpus(rows));
        auto q = random_doc(rng, vocab, 8);
        auto expected = bm25_oracle(docs, q, 1.2, 0.75);
        auto got = idx.search(join(q), docs.size());
        REQUIRE(got.size() == expected.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got.hits[i].doc == expected[i].doc);
            CHECK(std::abs(got.hits[i].score - expected[i].score) <= 1e-9);
            if (i > 0) {
                CHECK(got.hits[i - 1].score >= got.hits[i].score);
            }
        }
        for (std::size_t k = 1; k <= got.size(); ++k) {
            auto head = idx.search(join(q), k);
            REQUIRE(head.size() == k);
            for (std::size_t i = 0; i < k; ++i) {
                CHECK(head.hits[i].id == got.hits[i].id);
            }
        }
    }
}

TEST_CASE("adding a matching query term never lowers a score") {
    std::mt19937 rng(5);
    std::vector<std::string> vocab{"a", "b", "c", "d", "e"};
    for (int round = 0; round < 100; ++round) {
        std::vector<Row> rows;
        for (int i = 0; i < 8; ++i) {
            rows.push_back({"d" + std::to_string(i), join(random_doc(rng, vocab, 7)), ids({"T1059"})});
        }
        auto idx = build_index(make_corpus(rows));
        auto q = random_doc(rng, vocab, 4);
        auto extra = vocab[rng() % vocab.size()];
        auto before = idx.search(join(q), 100);
        auto q2 = q;
        q2.push_back(extra);
        auto after = idx.search(join(q2), 100);
        for (const auto& h : before.hits) {
            auto it = std::find_if(after.hits.begin(), after.hits.end(),
                                   [&](const Hit& x) { return x.id == h.id; });
            REQUIRE(it != after.hits.end());
            CHECK(it->score >= h.score);
        }
    }
}

TEST_CASE("index dump rejects bad input") {
    std::istringstream wrong("ttprag-bm25 99\n");
    CHECK_THROWS_AS(Bm25Index::load(wrong), FormatError);
    std::istringstream empty("");
    CHECK_THROWS_AS(Bm25Index::load(empty), FormatError);
}
