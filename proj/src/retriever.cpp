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

#include "ttprag/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "ttprag/errors.hpp"

namespace ttprag {

namespace {

bool is_alnum(char c) noexcept {
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}
bool is_digit(char c) noexcept { return c >= '0' && c <= '9'; }

bool id_shaped(std::string_view run) noexcept {
    return run.size() == 5 && (run[0] == 't' || run[0] == 'T') &&
           std::all_of(run.begin() + 1, run.end(), is_digit);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        if (!is_alnum(text[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && is_alnum(text[j])) {
            ++j;
        }
        // "t1059" "." "004" followed by a non-alphanumeric stays one token.
        if (id_shaped(text.substr(i, j - i)) && j + 4 <= n && text[j] == '.' &&
            is_digit(text[j + 1]) && is_digit(text[j + 2]) && is_digit(text[j + 3]) &&
            (j + 4 == n || !is_alnum(text[j + 4]))) {
            j += 4;
        }
        std::string token(text.substr(i, j - i));
        for (char& c : token) {
            if (c >= 'A' && c <= 'Z') {
                c = static_cast<char>(c - 'A' + 'a');
            }
        }
        tokens.push_back(std::move(token));
        i = j;
    }
    return tokens;
}

Bm25Index Bm25Index::build(const Corpus& docs, Bm25Params params) {
    if (!(params.k1 > 0.0) || !(params.b >= 0.0 && params.b <= 1.0)) {
        throw Error("bm25 parameters out of range: need k1 > 0 and 0 <= b <= 1");
    }
    if (docs.empty()) {
        throw EmptyCorpus();
    }
    Bm25Index index;
    index.params_ = params;
    index.doc_lengths_.reserve(docs.size());
    index.doc_ids_.reserve(docs.size());
    index.store_index_.reserve(docs.size());
    std::map<std::string, std::uint32_t> counts;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        const auto tokens = tokenize(docs[d].text);
        counts.clear();
        for (const auto& t : tokens) {
            ++counts[t];
        }
        for (const auto& [term, tf] : counts) {
            index.postings_[term].push_back({static_cast<std::uint32_t>(d), tf});
        }
        index.doc_lengths_.push_back(static_cast<std::uint32_t>(tokens.size()));
        index.doc_ids_.push_back(docs[d].id);
        index.store_index_.push_back(docs.store_index(d));
        index.total_length_ += tokens.size();
    }
    return index;
}

double Bm25Index::avg_doc_length() const noexcept {
    return doc_lengths_.empty()
               ? 0.0
               : static_cast<double>(total_length_) / static_cast<double>(doc_lengths_.size());
}

const std::vector<Posting>* Bm25Index::postings(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? nullptr : &it->second;
}

std::size_t Bm25Index::doc_of_store(std::size_t store_index) const noexcept {
    // store indices are increasing in document order
    auto it = std::lower_bound(store_index_.begin(), store_index_.end(), store_index);
    if (it == store_index_.end() || *it != store_index) {
        return npos;
    }
    return static_cast<std::size_t>(it - store_index_.begin());
}

Retrieval Bm25Index::search(std::string_view query, std::size_t k,
                            std::span<const std::size_t> excluded) const {
    Retrieval out;
    if (k == 0 || doc_lengths_.empty()) {
        return out;
    }
    std::vector<std::size_t> skip(excluded.begin(), excluded.end());
    std::sort(skip.begin(), skip.end());
    skip.erase(std::unique(skip.begin(), skip.end()), skip.end());
    skip.erase(std::remove_if(skip.begin(), skip.end(),
                              [&](std::size_t d) { return d >= doc_lengths_.size(); }),
               skip.end());

    const std::size_t n_docs = doc_lengths_.size() - skip.size();
    if (n_docs == 0) {
        return out;
    }
    std::uint64_t total = total_length_;
    for (auto d : skip) {
        total -= doc_lengths_[d];
    }
    const double n = static_cast<double>(n_docs);
    const double avg_len = static_cast<double>(total) / n;
    auto is_skipped = [&](std::uint32_t d) {
        return std::binary_search(skip.begin(), skip.end(), static_cast<std::size_t>(d));
    };

    std::vector<double> scores(doc_lengths_.size(), 0.0);
    std::vector<bool> touched(doc_lengths_.size(), false);
    for (const auto& term : tokenize(query)) {
        const auto* list = postings(term);
        if (list == nullptr) {
            continue;
        }
        std::size_t df = list->size();
        for (auto d : skip) {
            auto it = std::lower_bound(
                list->begin(), list->end(), d,
                [](const Posting& p, std::size_t doc) { return p.doc < doc; });
            if (it != list->end() && it->doc == d) {
                --df;
            }
        }
        if (df == 0) {
            continue;
        }
        const double fdf = static_cast<double>(df);
        const double idf = std::log(1.0 + (n - fdf + 0.5) / (fdf + 0.5));
        for (const auto& p : *list) {
            if (!skip.empty() && is_skipped(p.doc)) {
                continue;
            }
            const double tf = p.tf;
            const double len = doc_lengths_[p.doc];
            const double norm = params_.k1 * (1.0 - params_.b + params_.b * len / avg_len);
            scores[p.doc] += idf * tf / (tf + norm);
            touched[p.doc] = true;
        }
    }

    std::vector<std::size_t> ranked;
    for (std::size_t d = 0; d < scores.size(); ++d) {
        if (touched[d] && scores[d] > 0.0) {
            ranked.push_back(d);
        }
    }
    auto better = [&](std::size_t a, std::size_t b) {
        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
    };
    const std::size_t keep = std::min(k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep),
                      ranked.end(), better);
    ranked.resize(keep);
    out.hits.reserve(keep);
    for (auto d : ranked) {
        out.hits.push_back({doc_ids_[d], d, scores[d]});
    }
    return out;
}

void Bm25Index::save(std::ostream& out) const {
    std::ostringstream head;
    head.precision(17);
    out << "ttprag-bm25 1\n";
    head << "params " << params_.k1 << ' ' << params_.b << '\n';
    out << head.str();
    out << "docs " << doc_lengths_.size() << '\n';
    for (std::size_t d = 0; d < doc_lengths_.size(); ++d) {
        out << store_index_[d] << '\t' << doc_lengths_[d] << '\t'
            << nlohmann::json(doc_ids_[d]).dump() << '\n';
    }
    std::vector<const std::string*> terms;
    terms.reserve(postings_.size());
    for (const auto& [term, list] : postings_) {
        terms.push_back(&term);
    }
    std::sort(terms.begin(), terms.end(),
              [](const std::string* a, const std::string* b) { return *a < *b; });
    out << "terms " << terms.size() << '\n';
    for (const auto* term : terms) {
        const auto& list = postings_.at(*term);
        out << *term << '\t' << list.size();
        for (const auto& p : list) {
            out << ' ' << p.doc << ':' << p.tf;
        }
        out << '\n';
    }
}

Bm25Index Bm25Index::load(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    auto next_line = [&](const char* what) {
        if (!std::getline(in, line)) {
            throw FormatError("line " + std::to_string(line_no + 1), std::string("expected ") + what);
        }
        ++line_no;
    };
    auto fail = [&](const std::string& reason) -> FormatError {
        return FormatError("line " + std::to_string(line_no), reason);
    };

    next_line("header");
    if (line != "ttprag-bm25 1") {
        throw fail("unsupported index format '" + line + "'");
    }
    Bm25Index index;
    next_line("params");
    {
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag >> index.params_.k1 >> index.params_.b) || tag != "params") {
            throw fail("bad params line");
        }
    }
    next_line("docs");
    std::size_t n_docs = 0;
    {
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag >> n_docs) || tag != "docs") {
            throw fail("bad docs line");
        }
    }
    for (std::size_t d = 0; d < n_docs; ++d) {
        next_line("document");
        const auto t1 = line.find('\t');
        const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
        if (t2 == std::string::npos) {
            throw fail("bad document line");
        }
        try {
            index.store_index_.push_back(std::stoull(line.substr(0, t1)));
            index.doc_lengths_.push_back(
                static_cast<std::uint32_t>(std::stoul(line.substr(t1 + 1, t2 - t1 - 1))));
            index.doc_ids_.push_back(nlohmann::json::parse(line.substr(t2 + 1)).get<std::string>());
        } catch (const std::exception&) {
            throw fail("bad document line");
        }
        index.total_length_ += index.doc_lengths_.back();
    }
    next_line("terms");
    std::size_t n_terms = 0;
    {
        std::istringstream ss(line);
        std::string tag;
        if (!(ss >> tag >> n_terms) || tag != "terms") {
            throw fail("bad terms line");
        }
    }
    for (std::size_t t = 0; t < n_terms; ++t) {
        next_line("postings");
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw fail("bad postings line");
        }
        std::istringstream ss(line.substr(tab + 1));
        std::size_t count = 0;
        if (!(ss >> count)) {
            throw fail("bad postings line");
        }
        std::vector<Posting> list;
        list.reserve(count);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t doc = 0;
            std::uint32_t tf = 0;
            char colon = 0;
            if (!(ss >> doc >> colon >> tf) || colon != ':' || doc >= n_docs || tf == 0) {
                throw fail("bad posting");
            }
            list.push_back({doc, tf});
        }
        index.postings_.emplace(line.substr(0, tab), std::move(list));
    }
    return index;
}

}  // namespace ttprag
