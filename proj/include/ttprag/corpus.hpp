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
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ttprag/taxonomy.hpp"

namespace ttprag {

enum class Split { train, test };

std::string_view to_string(Split split) noexcept;

/// One (text, labels) pair. Labels keep file order.
struct AnnotatedExample {
    std::string id;
    std::string text;
    std::vector<TechniqueId> labels;
    Split split = Split::train;
    std::string source;
};

/// Ordered, id-indexed collection of examples.
///
/// Storage is shared and immutable: copies and retrieval views are cheap
/// handles onto the same examples.
class Corpus {
  public:
    Corpus() = default;
    /// Throws DuplicateId.
    explicit Corpus(std::vector<AnnotatedExample> examples);

    std::size_t size() const noexcept { return members_.size(); }
    bool empty() const noexcept { return members_.empty(); }

    const AnnotatedExample& operator[](std::size_t i) const { return (*store_)[members_[i]]; }
    /// Member lookup; null when the id is absent from this corpus or view.
    const AnnotatedExample* find(std::string_view id) const;

    /// Position of the member in the backing store; stable across views.
    std::size_t store_index(std::size_t i) const { return members_[i]; }
    std::size_t store_size() const noexcept { return store_ ? store_->size() : 0; }

    class const_iterator {
      public:
        using value_type = AnnotatedExample;
        using difference_type = std::ptrdiff_t;
        const_iterator() = default;
        const_iterator(const Corpus* c, std::size_t i) : corpus_(c), i_(i) {}
        const AnnotatedExample& operator*() const { return (*corpus_)[i_]; }
        const AnnotatedExample* operator->() const { return &(*corpus_)[i_]; }
        const_iterator& operator++() {
            ++i_;
            return *this;
        }
        const_iterator operator++(int) {
            auto tmp = *this;
            ++i_;
            return tmp;
        }
        bool operator==(const const_iterator& o) const noexcept { return i_ == o.i_; }

      private:
        const Corpus* corpus_ = nullptr;
        std::size_t i_ = 0;
    };
    const_iterator begin() const { return {this, 0}; }
    const_iterator end() const { return {this, members_.size()}; }

    /// Members of this corpus whose store index is not flagged in `drop`.
    Corpus filtered(const std::vector<bool>& drop) const;

    /// Store indices of members whose normalized text equals `text`.
    std::vector<std::size_t> text_matches(std::string_view text) const;

  private:
    std::shared_ptr<const std::vector<AnnotatedExample>> store_;
    std::shared_ptr<const std::unordered_map<std::string, std::size_t>> by_id_;
    std::shared_ptr<const std::unordered_multimap<std::string, std::size_t>> by_text_;
    std::vector<std::size_t> members_;
    std::vector<bool> present_;
};

/// Reads one JSON object per line: {"id"?, "text", "labels", "source"?}.
/// Missing ids become "<source>:<line>". Blank lines are skipped.
Corpus parse_jsonl(std::istream& in, Split split, const std::string& source);
Corpus load_jsonl(const std::filesystem::path& path, Split split, const std::string& source);

/// Canonical serialization: keys id, labels, source, text; one record per line.
void write_jsonl(std::ostream& out, const Corpus& corpus);

/// Concatenates corpora in argument order. Throws DuplicateId.
Corpus concat(const std::vector<Corpus>& parts);

/// The retrieval corpus for a query: every example whose whitespace-normalized
/// text differs from the normalized query. `corpus` is left untouched.
Corpus retrieval_view(const Corpus& corpus, std::string_view query_text);

struct CorpusStats {
    std::size_t examples = 0;
    double mean_labels = 0.0;
    double mean_tokens = 0.0;
    std::size_t unique_labels = 0;
    std::size_t unique_techniques = 0;
};

/// Throws EmptyCorpus. Token counts use the retriever's tokenizer.
CorpusStats stats(const Corpus& corpus);

}  // namespace ttprag
