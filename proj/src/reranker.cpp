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

#include "ttprag/reranker.hpp"

#include <algorithm>
#include <limits>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "ttprag/errors.hpp"
#include "ttprag/log.hpp"
#include "ttprag/text.hpp"

namespace ttprag {

namespace {

constexpr std::string_view kFrameworkPrompt =
    R"(You are a security analyst. Rank the listed MITRE ATT&CK techniques by how relevant each one is to the security query.

## Objectives:
1. Decide whether the query describes adversarial behavior.
2. If so, order the listed techniques and sub-techniques from most to least relevant.

## Instructions for Ranking:
1. Break Down the Query:
- Decompose the given security query into distinct attack steps or phases.
- Note every stated or implied behavior that points at a specific (sub-)technique.
2. Match Techniques:
- Map each identified step or behavior to the listed technique that fits it best, choosing the sub-technique when one applies.
- The query may involve multiple (sub-)techniques, both direct and implied.
3. Provide Explanation:
- Briefly tie each matched technique to the behavior it covers. Skip techniques that do not match.

## Final Output Format:
After reasoning, output the final ranking of the given technique IDs as:
[Technique A] > [Technique B] > [Technique C] > ...
Put the ranking alone on the last line, with nothing else on it.)";

constexpr std::string_view kRankGptPrompt =
    R"(You are RankGPT, an assistant that orders passages by relevance to a query.

## Objectives:
Each passage below carries a numeric identifier [ ]. Order the passages by how relevant they are to the query.

## Final Output Format:
Output only the passage IDs, most relevant first:
[Technique A] > [Technique B] > [Technique C] > ...)";

constexpr std::string_view kRankingReminder =
    "Output ONLY the ranking line, using the given technique IDs in the form "
    "ID > ID > ID, with no other text.";

std::string strip_citations(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    constexpr std::string_view kOpen = "(Citation:";
    std::size_t i = 0;
    while (i < text.size()) {
        if (text.compare(i, kOpen.size(), kOpen) == 0) {
            const auto close = text.find(')', i);
            if (close != std::string_view::npos) {
                i = close + 1;
                continue;
            }
        }
        out.push_back(text[i++]);
    }
    return out;
}

std::string shorten(std::string_view text, std::size_t limit) {
    auto flat = normalize_whitespace(strip_citations(text));
    if (limit == 0 || flat.size() <= limit) {
        return flat;
    }
    auto cut = flat.rfind(' ', limit);
    if (cut == std::string::npos || cut == 0) {
        cut = limit;
    }
    flat.resize(cut);
    while (!flat.empty() && (flat.back() == ',' || flat.back() == ';' || flat.back() == ' ')) {
        flat.pop_back();
    }
    flat += "...";
    return flat;
}

/// A ranking token inside one '>'-separated segment: the earliest technique id
/// or bracketed index.
struct Token {
    std::optional<TechniqueId> id;
    std::size_t index = 0;  // 1-based, 0 = none
};

std::optional<Token> segment_token(std::string_view segment) {
    std::optional<Token> best;
    std::size_t best_pos = std::numeric_limits<std::size_t>::max();
    const auto ids = scan_ids(segment);
    if (!ids.empty()) {
        best = Token{ids.front().id, 0};
        best_pos = ids.front().offset;
    }
    for (std::size_t i = 0; i < segment.size() && i < best_pos; ++i) {
        if (segment[i] != '[') {
            continue;
        }
        std::size_t j = i + 1;
        while (j < segment.size() && segment[j] == ' ') {
            ++j;
        }
        std::size_t value = 0;
        std::size_t digits = 0;
        while (j < segment.size() && segment[j] >= '0' && segment[j] <= '9' && digits < 7) {
            value = value * 10 + static_cast<std::size_t>(segment[j] - '0');
            ++j;
            ++digits;
        }
        while (j < segment.size() && segment[j] == ' ') {
            ++j;
        }
        if (digits > 0 && digits < 7 && j < segment.size() && segment[j] == ']' && value > 0) {
            return Token{std::nullopt, value};
        }
    }
    return best;
}

std::vector<Token> ranking_line_tokens(std::string_view line) {
    std::vector<Token> tokens;
    std::size_t segments = 0;
    std::size_t start = 0;
    while (true) {
        const auto gt = line.find('>', start);
        const auto segment = line.substr(start, gt == std::string_view::npos ? gt : gt - start);
        ++segments;
        if (auto tok = segment_token(segment)) {
            tokens.push_back(*tok);
        }
        if (gt == std::string_view::npos) {
            break;
        }
        start = gt + 1;
    }
    if (tokens.empty()) {
        return tokens;
    }
    if (segments >= 2) {
        return tokens;
    }
    // A lone id only counts when it is labelled as the final ranking.
    if (to_lower_ascii(line).find("final ranking") != std::string::npos) {
        return tokens;
    }
    return {};
}

}  // namespace

std::string display_name(const Taxonomy& taxonomy, TechniqueId id) {
    const auto* entry = taxonomy.find(id);
    if (entry == nullptr) {
        return {};
    }
    if (!id.is_sub()) {
        return entry->name;
    }
    const auto* parent = taxonomy.find(id.truncated());
    if (parent == nullptr || parent->name.empty() ||
        entry->name.rfind(parent->name + ":", 0) == 0) {
        return entry->name;
    }
    return parent->name + ": " + entry->name;
}

CandidateList candidates_from_pairs(const Retrieval& hits, const Corpus& corpus,
                                    const Taxonomy& taxonomy) {
    CandidateList out;
    std::unordered_set<TechniqueId> seen;
    for (std::size_t rank = 1; rank <= hits.hits.size(); ++rank) {
        const auto* ex = corpus.find(hits.hits[rank - 1].id);
        if (ex == nullptr) {
            log(LogLevel::warning, "retrieved id not in corpus: " + hits.hits[rank - 1].id);
            continue;
        }
        for (auto id : ex->labels) {
            if (!seen.insert(id).second) {
                continue;
            }
            Candidate c{id, {}, {}, rank};
            if (const auto* entry = taxonomy.find(id)) {
                c.name = display_name(taxonomy, id);
                c.description = entry->description;
            } else {
                log(LogLevel::warning, "label not in taxonomy: " + id.str());
            }
            out.push_back(std::move(c));
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
        return a.best_retriever_rank != b.best_retriever_rank
                   ? a.best_retriever_rank < b.best_retriever_rank
                   : a.id < b.id;
    });
    return out;
}

std::string_view reranker_system_prompt(PromptStyle style) {
    return style == PromptStyle::framework ? kFrameworkPrompt : kRankGptPrompt;
}

std::vector<ChatMessage> build_prompt(std::string_view query, std::span<const Candidate> window,
                                      const PromptOptions& options) {
    std::string user = options.style == PromptStyle::framework ? "## Given Techniques:\n"
                                                               : "## Given Passages:\n";
    for (std::size_t i = 0; i < window.size(); ++i) {
        const auto& c = window[i];
        user += "[" + std::to_string(i + 1) + "] " + c.id.str();
        if (!c.name.empty()) {
            user += " \xE2\x80\x94 " + c.name;
        }
        const auto desc = shorten(c.description, options.max_description_chars);
        if (!desc.empty()) {
            user += ": " + desc;
        }
        user += '\n';
    }
    user += "\n## Query:\n";
    user += trim(query);
    return {{"system", std::string(reranker_system_prompt(options.style))},
            {"user", std::move(user)}};
}

std::vector<TechniqueId> parse_ranking(std::string_view response,
                                       std::span<const Candidate> window) {
    std::optional<std::vector<Token>> last;
    std::size_t start = 0;
    while (start <= response.size()) {
        auto nl = response.find('\n', start);
        auto line = response.substr(start, nl == std::string_view::npos ? nl : nl - start);
        auto tokens = ranking_line_tokens(line);
        if (!tokens.empty()) {
            last = std::move(tokens);
        }
        if (nl == std::string_view::npos) {
            break;
        }
        start = nl + 1;
    }
    if (!last) {
        throw UnparseableResponse();
    }

    std::vector<TechniqueId> order;
    order.reserve(window.size());
    std::unordered_set<TechniqueId> placed;
    auto in_window = [&](TechniqueId id) {
        return std::any_of(window.begin(), window.end(),
                           [&](const Candidate& c) { return c.id == id; });
    };
    for (const auto& tok : *last) {
        std::optional<TechniqueId> id;
        if (tok.id) {
            if (in_window(*tok.id)) {
                id = tok.id;
            }
        } else if (tok.index >= 1 && tok.index <= window.size()) {
            id = window[tok.index - 1].id;
        }
        if (id && placed.insert(*id).second) {
            order.push_back(*id);
        }
    }
    for (const auto& c : window) {
        if (placed.insert(c.id).second) {
            order.push_back(c.id);
        }
    }
    return order;
}

WindowPlan make_window_plan(std::size_t candidates, std::size_t window, std::size_t overlap) {
    if (window == 0 || overlap >= window) {
        throw Error("window plan needs window >= 1 and 0 <= overlap < window");
    }
    WindowPlan plan;
    plan.candidates = candidates;
    plan.window = window;
    plan.stride = window - overlap;
    if (candidates == 0) {
        return plan;
    }
    std::size_t offset = candidates > window ? candidates - window : 0;
    while (true) {
        plan.offsets.push_back(offset);
        if (offset == 0) {
            break;
        }
        offset = offset > plan.stride ? offset - plan.stride : 0;
    }
    return plan;
}

RankedCandidates rerank(std::string_view query, const CandidateList& candidates,
                        ChatBackend& backend, const WindowPlan& plan,
                        const RerankOptions& options) {
    if (plan.candidates != candidates.size()) {
        throw Error("window plan was made for " + std::to_string(plan.candidates) +
                    " candidates, got " + std::to_string(candidates.size()));
    }
    std::unordered_map<TechniqueId, const Candidate*> by_id;
    for (const auto& c : candidates) {
        if (!by_id.emplace(c.id, &c).second) {
            throw DuplicateId(c.id.str());
        }
    }

    RankedCandidates result;
    std::vector<TechniqueId> order;
    order.reserve(candidates.size());
    for (const auto& c : candidates) {
        order.push_back(c.id);
    }

    for (auto offset : plan.offsets) {
        const auto end = std::min(offset + plan.window, order.size());
        if (offset >= end || end - offset < 2) {
            continue;
        }
        CandidateList window;
        window.reserve(end - offset);
        for (auto i = offset; i < end; ++i) {
            window.push_back(*by_id.at(order[i]));
        }

        WindowAudit audit;
        audit.offset = offset;
        audit.size = window.size();
        ChatRequest request{options.model, build_prompt(query, window, options.prompt), 0.0,
                            std::nullopt, options.max_tokens};
        std::vector<TechniqueId> ranked;
        for (int attempt = 0;; ++attempt) {
            std::string response;
            try {
                ++result.backend_calls;
                response = backend.complete(request);
            } catch (const BackendError& e) {
                log(LogLevel::warning,
                    "re-ranker backend failed; keeping retriever order for window at " +
                        std::to_string(offset) + ": " + e.what());
                result.degraded = true;
                audit.status = "fallback_backend_error";
                break;
            }
            audit.responses.push_back(response);
            try {
                ranked = parse_ranking(response, window);
                audit.status = attempt == 0 ? "ok" : "retried";
                break;
            } catch (const UnparseableResponse&) {
                if (attempt >= options.unparseable_retries) {
                    audit.status = "fallback_unparseable";
                    break;
                }
                request.messages.push_back({"assistant", response});
                request.messages.push_back({"user", std::string(kRankingReminder)});
            }
        }
        if (ranked.empty()) {
            for (const auto& c : window) {
                ranked.push_back(c.id);
            }
        }
        std::copy(ranked.begin(), ranked.end(), order.begin() + static_cast<std::ptrdiff_t>(offset));
        audit.order = std::move(ranked);
        result.audit.push_back(std::move(audit));
    }

    result.order = std::move(order);
    for (std::size_t i = 0; i < result.order.size(); ++i) {
        const auto id = result.order[i];
        result.provenance[id] = {by_id.at(id)->best_retriever_rank, i + 1};
    }
    return result;
}

std::vector<ExemplarPair> reorder_pairs(const Retrieval& hits, std::span<const TechniqueId> order,
                                        const Corpus& corpus) {
    std::unordered_map<TechniqueId, std::size_t> rank_of;
    for (std::size_t i = 0; i < order.size(); ++i) {
        rank_of.emplace(order[i], i + 1);
    }
    std::vector<ExemplarPair> pairs;
    pairs.reserve(hits.hits.size());
    for (std::size_t i = 0; i < hits.hits.size(); ++i) {
        const auto* ex = corpus.find(hits.hits[i].id);
        if (ex == nullptr) {
            continue;
        }
        ExemplarPair pair{ex->id, ex->text, ex->labels, i + 1, std::nullopt};
        for (auto id : ex->labels) {
            if (auto it = rank_of.find(id); it != rank_of.end()) {
                if (!pair.reranker_rank || it->second < *pair.reranker_rank) {
                    pair.reranker_rank = it->second;
                }
            }
        }
        pairs.push_back(std::move(pair));
    }
    std::stable_sort(pairs.begin(), pairs.end(), [](const ExemplarPair& a, const ExemplarPair& b) {
        const auto ka = a.reranker_rank.value_or(std::numeric_limits<std::size_t>::max());
        const auto kb = b.reranker_rank.value_or(std::numeric_limits<std::size_t>::max());
        return ka < kb;
    });
    return pairs;
}

}  // namespace ttprag
