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

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ttprag/corpus.hpp"

namespace ttprag {

/// Lowercased ASCII alphanumeric runs. A technique-id shaped run followed by
/// ".ddd" ("T1059.004") is kept as one token. No stemming, no stopwords.
std::vector<std::string> tokenize(std::string_view text);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
    friend bool operator==(const Bm25Params&, const Bm25Params&) = default;
};

struct Posting {
    std::uint32_t doc;
    std::uint32_t tf;
    friend bool operator==(const Posting&, const Posting&) = default;
};

struct Hit {
    std::string id;
    std::size_t doc = 0;
    double score = 0.0;
};

/// Search result, score-descending; ties keep document insertion order.
struct Retrieval {
    std::vector<Hit> hits;
    bool empty() const noexcept { return hits.empty(); }
    std::size_t size() const noexcept { return hits.size(); }
};

/// Okapi BM25 with the non-negative Lucene idf:
///   idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))
///   score(q, d) = sum over query tokens t of
///                 idf(t) * tf / (tf + k1 * (1 - b + b * len / avg_len))
/// Query tokens are summed with multiplicity.
class Bm25Index {
  public:
    Bm25Index() = default;

    /// Indexes `docs` in iteration order. Throws EmptyCorpus, or Error for
    /// k1 <= 0 or b outside [0, 1].
    static Bm25Index build(const Corpus& docs, Bm25Params params = {});

    /// Top-`k` documents. `excluded` lists document ordinals to treat as
    /// absent: they are skipped and removed from N, df and the average
    /// length, so the result equals searching an index built without them.
    Retrieval search(std::string_view query, std::size_t k,
                     std::span<const std::size_t> excluded = {}) const;

    /// Document ordinal for a position in the backing corpus store, or npos.
    std::size_t doc_of_store(std::size_t store_index) const noexcept;
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    std::size_t size() const noexcept { return doc_lengths_.size(); }
    const Bm25Params& params() const noexcept { return params_; }
    double avg_doc_length() const noexcept;
    std::uint64_t total_length() const noexcept { return total_length_; }
    const std::vector<std::uint32_t>& doc_lengths() const noexcept { return doc_lengths_; }
    const std::vector<std::string>& doc_ids() const noexcept { return doc_ids_; }
    const std::vector<Posting>* postings(const std::string& term) const;
    std::size_t vocabulary_size() const noexcept { return postings_.size(); }

    /// Versioned line-oriented dump; terms in lexicographic order.
    void save(std::ostream& out) const;
    /// Throws FormatError on version or structure mismatch.
    static Bm25Index load(std::istream& in);

    friend bool operator==(const Bm25Index&, const Bm25Index&) = default;

  private:
    Bm25Params params_;
    std::unordered_map<std::string, std::vector<Posting>> postings_;
    std::vector<std::uint32_t> doc_lengths_;
    std::vector<std::string> doc_ids_;
    std::vector<std::size_t> store_index_;
    std::uint64_t total_length_ = 0;
};

inline Bm25Index build_index(const Corpus& view, double k1 = 1.2, double b = 0.75) {
    return Bm25Index::build(view, {k1, b});
}

inline Retrieval search(const Bm25Index& index, std::string_view query, std::size_t k) {
    return index.search(query, k);
}

}  // namespace ttprag
