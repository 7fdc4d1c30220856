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
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttprag/reranker.hpp"
#include "ttprag/taxonomy.hpp"

namespace ttprag {

inline constexpr std::string_view kTextSeparator = "[text]";
inline constexpr std::string_view kTechniqueSeparator = "[technique]";

/// Whitespace-delimited words times 1.3, rounded up.
std::size_t estimate_tokens(std::string_view text);

struct ContextOptions {
    /// Exemplars to keep, at most.
    std::size_t k = 3;
    /// Token budget for the serialized context.
    std::size_t budget = 2048;
    /// Render exemplar labels as "T1059.001 (Name)" instead of bare ids.
    bool include_names = true;
    /// Replaces estimate_tokens when set, e.g. with a model tokenizer.
    std::function<std::size_t(std::string_view)> token_counter;
};

struct ContextExemplar {
    std::string id;
    std::string text;
    std::vector<TechniqueId> labels;
};

struct GeneratorContext {
    std::string query;
    std::vector<ContextExemplar> exemplars;
    std::string serialized;
    std::size_t token_estimate = 0;
};

/// Comma-separated canonical ids, optionally with display names.
std::string render_labels(std::span<const TechniqueId> labels, const Taxonomy* taxonomy,
                          bool include_names);

/// Serializes "x [text] x1 [technique] Y1 [text] x2 [technique] Y2 ..." over
/// the first min(k, |pairs|) pairs, dropping exemplars from the tail until the
/// estimate fits the budget. Throws QueryTooLong if the query alone does not.
GeneratorContext build_context(std::string_view query, std::span<const ExemplarPair> pairs,
                               const Taxonomy* taxonomy, const ContextOptions& options = {});

}  // namespace ttprag
