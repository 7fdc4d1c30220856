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

#include "ttprag/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "json.hpp"
#include "ttprag/errors.hpp"
#include "ttprag/retriever.hpp"
#include "ttprag/text.hpp"

namespace ttprag {

std::string_view to_string(Split split) noexcept {
    return split == Split::train ? "train" : "test";
}

Corpus::Corpus(std::vector<AnnotatedExample> examples) {
    auto by_id = std::make_shared<std::unordered_map<std::string, std::size_t>>();
    auto by_text = std::make_shared<std::unordered_multimap<std::string, std::size_t>>();
    by_id->reserve(examples.size());
    by_text->reserve(examples.size());
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (!by_id->emplace(examples[i].id, i).second) {
            throw DuplicateId(examples[i].id);
        }
        by_text->emplace(normalize_whitespace(examples[i].text), i);
    }
    members_.resize(examples.size());
    for (std::size_t i = 0; i < members_.size(); ++i) {
        members_[i] = i;
    }
    present_.assign(examples.size(), true);
    store_ = std::make_shared<const std::vector<AnnotatedExample>>(std::move(examples));
    by_id_ = std::move(by_id);
    by_text_ = std::move(by_text);
}

const AnnotatedExample* Corpus::find(std::string_view id) const {
    if (!by_id_) {
        return nullptr;
    }
    auto it = by_id_->find(std::string(id));
    if (it == by_id_->end() || !present_[it->second]) {
        return nullptr;
    }
    return &(*store_)[it->second];
}

Corpus Corpus::filtered(const std::vector<bool>& drop) const {
    Corpus view;
    view.store_ = store_;
    view.by_id_ = by_id_;
    view.by_text_ = by_text_;
    view.present_ = present_;
    view.members_.reserve(members_.size());
    for (auto idx : members_) {
        if (idx < drop.size() && drop[idx]) {
            view.present_[idx] = false;
        } else {
            view.members_.push_back(idx);
        }
    }
    return view;
}

std::vector<std::size_t> Corpus::text_matches(std::string_view text) const {
    std::vector<std::size_t> out;
    if (!by_text_) {
        return out;
    }
    auto [lo, hi] = by_text_->equal_range(normalize_whitespace(text));
    for (auto it = lo; it != hi; ++it) {
        if (present_[it->second]) {
            out.push_back(it->second);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

Corpus parse_jsonl(std::istream& in, Split split, const std::string& source) {
    std::vector<AnnotatedExample> examples;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (trim(line).empty()) {
            continue;
        }
        const auto locator = "line " + std::to_string(line_no);
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw FormatError(locator, "invalid JSON");
        }
        if (!rec.is_object()) {
            throw FormatError(locator, "record is not an object");
        }
        if (!rec.contains("text") || !rec["text"].is_string()) {
            throw FormatError(locator, "missing string field 'text'");
        }
        if (!rec.contains("labels") || !rec["labels"].is_array()) {
            throw FormatError(locator, "missing array field 'labels'");
        }
        AnnotatedExample ex;
        ex.text = rec["text"].get<std::string>();
        ex.split = split;
        ex.source = rec.contains("source") && rec["source"].is_string()
                        ? rec["source"].get<std::string>()
                        : source;
        for (const auto& label : rec["labels"]) {
            if (!label.is_string()) {
                throw FormatError(locator, "label is not a string");
            }
            auto id = TechniqueId::try_parse(label.get<std::string>());
            if (!id) {
                throw FormatError(locator,
                                  "malformed technique id '" + label.get<std::string>() + "'");
            }
            ex.labels.push_back(*id);
        }
        if (ex.labels.empty()) {
            throw FormatError(locator, "record has no labels");
        }
        if (rec.contains("id") && rec["id"].is_string()) {
            ex.id = rec["id"].get<std::string>();
        } else if (rec.contains("id") && rec["id"].is_number_integer()) {
            ex.id = std::to_string(rec["id"].get<long long>());
        } else {
            ex.id = source + ":" + std::to_string(line_no);
        }
        examples.push_back(std::move(ex));
    }
    return Corpus(std::move(examples));
}

Corpus load_jsonl(const std::filesystem::path& path, Split split, const std::string& source) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(path.string(), "cannot open file");
    }
    return parse_jsonl(in, split, source);
}

void write_jsonl(std::ostream& out, const Corpus& corpus) {
    for (const auto& ex : corpus) {
        nlohmann::json rec;
        rec["id"] = ex.id;
        rec["text"] = ex.text;
        rec["source"] = ex.source;
        auto& labels = rec["labels"] = nlohmann::json::array();
        for (auto id : ex.labels) {
            labels.push_back(id.str());
        }
        out << rec.dump() << '\n';
    }
}

Corpus concat(const std::vector<Corpus>& parts) {
    std::vector<AnnotatedExample> all;
    for (const auto& part : parts) {
        for (const auto& ex : part) {
            all.push_back(ex);
        }
    }
    return Corpus(std::move(all));
}

Corpus retrieval_view(const Corpus& corpus, std::string_view query_text) {
    const auto matches = corpus.text_matches(query_text);
    if (matches.empty()) {
        return corpus;
    }
    std::vector<bool> drop(corpus.store_size(), false);
    for (auto idx : matches) {
        drop[idx] = true;
    }
    return corpus.filtered(drop);
}

CorpusStats stats(const Corpus& corpus) {
    if (corpus.empty()) {
        throw EmptyCorpus();
    }
    CorpusStats out;
    out.examples = corpus.size();
    std::size_t labels = 0;
    std::size_t tokens = 0;
    std::set<TechniqueId> unique;
    std::set<TechniqueId> techniques;
    for (const auto& ex : corpus) {
        labels += ex.labels.size();
        tokens += tokenize(ex.text).size();
        for (auto id : ex.labels) {
            unique.insert(id);
            techniques.insert(id.truncated());
        }
    }
    const auto n = static_cast<double>(corpus.size());
    out.mean_labels = static_cast<double>(labels) / n;
    out.mean_tokens = static_cast<double>(tokens) / n;
    out.unique_labels = unique.size();
    out.unique_techniques = techniques.size();
    return out;
}

}  // namespace ttprag
