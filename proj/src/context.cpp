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

#include "ttprag/context.hpp"

#include <algorithm>

#include "ttprag/errors.hpp"
#include "ttprag/text.hpp"

namespace ttprag {

std::size_t estimate_tokens(std::string_view text) {
    std::size_t words = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = c == ' ' || c == '\n' || c == '\t' || c == '\r' || c == '\f' || c == '\v';
        if (!space && !in_word) {
            ++words;
        }
        in_word = !space;
    }
    return (words * 13 + 9) / 10;
}

std::string render_labels(std::span<const TechniqueId> labels, const Taxonomy* taxonomy,
                          bool include_names) {
    std::string out;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (i > 0) {
            out += ", ";
        }
        out += labels[i].str();
        if (include_names && taxonomy != nullptr) {
            const auto name = display_name(*taxonomy, labels[i]);
            if (!name.empty()) {
                out += " (" + name + ")";
            }
        }
    }
    return out;
}

namespace {

std::string serialize(const std::string& query, std::span<const ContextExemplar> exemplars,
                      const Taxonomy* taxonomy, bool include_names) {
    std::string out = query;
    for (const auto& ex : exemplars) {
        out += ' ';
        out += kTextSeparator;
        out += ' ';
        out += ex.text;
        out += ' ';
        out += kTechniqueSeparator;
        out += ' ';
        out += render_labels(ex.labels, taxonomy, include_names);
    }
    return out;
}

}  // namespace

GeneratorContext build_context(std::string_view query, std::span<const ExemplarPair> pairs,
                               const Taxonomy* taxonomy, const ContextOptions& options) {
    if (options.budget == 0) {
        throw Error("context budget must be positive");
    }
    const auto count = [&](std::string_view s) {
        return options.token_counter ? options.token_counter(s) : estimate_tokens(s);
    };
    GeneratorContext ctx;
    ctx.query = normalize_whitespace(query);
    const auto query_tokens = count(ctx.query);
    if (query_tokens > options.budget) {
        throw QueryTooLong(query_tokens, options.budget);
    }
    const auto take = std::min(options.k, pairs.size());
    for (std::size_t i = 0; i < take; ++i) {
        ctx.exemplars.push_back(
            {pairs[i].id, normalize_whitespace(pairs[i].text), pairs[i].labels});
    }
    while (true) {
        ctx.serialized = serialize(ctx.query, ctx.exemplars, taxonomy, options.include_names);
        ctx.token_estimate = count(ctx.serialized);
        if (ctx.token_estimate <= options.budget || ctx.exemplars.empty()) {
            break;
        }
        ctx.exemplars.pop_back();
    }
    return ctx;
}

}  // namespace ttprag
