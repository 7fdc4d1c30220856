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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttprag/chat.hpp"
#include "ttprag/corpus.hpp"
#include "ttprag/retriever.hpp"
#include "ttprag/taxonomy.hpp"

namespace ttprag {

/// A technique offered to the re-ranker. `best_retriever_rank` is the
/// smallest 1-based retriever rank among the pairs carrying this label.
struct Candidate {
    TechniqueId id;
    std::string name;
    std::string description;
    std::size_t best_retriever_rank = 0;
};

using CandidateList = std::vector<Candidate>;

/// "Parent: Sub" for sub-techniques whose stored name lacks the parent prefix.
std::string display_name(const Taxonomy& taxonomy, TechniqueId id);

/// Union of the labels of all retrieved pairs, ordered by best retriever rank
/// then id. Labels unknown to the taxonomy are kept with empty metadata and
/// logged.
CandidateList candidates_from_pairs(const Retrieval& hits, const Corpus& corpus,
                                    const Taxonomy& taxonomy);

enum class PromptStyle {
    /// Decompose / multi-technique / sub-technique granularity framework.
    framework,
    /// Plain listwise passage ranking, kept for comparison runs.
    rankgpt,
};

struct PromptOptions {
    PromptStyle style = PromptStyle::framework;
    /// Descriptions longer than this are cut at a word boundary; 0 keeps all.
    std::size_t max_description_chars = 400;
};

std::string_view reranker_system_prompt(PromptStyle style);

/// System message with the ranking instructions, then a user message holding
/// the numbered technique lines and the query.
std::vector<ChatMessage> build_prompt(std::string_view query, std::span<const Candidate> window,
                                      const PromptOptions& options = {});

/// Reads the last "A > B > C" line of a model response. Tokens may be ids or
/// bracketed 1-based window indices ("[2]"). Tokens outside the window and
/// repeats are dropped; window ids never mentioned are appended in window
/// order, so the result is always a permutation of the window.
/// Throws UnparseableResponse when the response holds no ranking line.
std::vector<TechniqueId> parse_ranking(std::string_view response,
                                       std::span<const Candidate> window);

/// Sliding windows over a candidate list, visited tail to head.
struct WindowPlan {
    std::size_t candidates = 0;
    std::size_t window = 40;
    std::size_t stride = 20;
    /// Window start offsets in processing order.
    std::vector<std::size_t> offsets;
};

/// Offsets n-w, n-w-s, ... down to and always including 0.
/// Throws Error unless window >= 1 and overlap < window.
WindowPlan make_window_plan(std::size_t candidates, std::size_t window, std::size_t overlap);

struct RerankOptions {
    std::string model;
    std::size_t max_tokens = 4096;
    PromptOptions prompt;
    /// Extra attempts after a response with no ranking line.
    int unparseable_retries = 1;
};

struct Provenance {
    std::size_t retriever_rank = 0;
    std::size_t reranker_rank = 0;
};

/// A retrieved pair placed by the re-ranked technique order.
struct ExemplarPair {
    std::string id;
    std::string text;
    std::vector<TechniqueId> labels;
    std::size_t retriever_rank = 0;
    /// Best re-ranker rank among the labels; empty when none was ranked.
    std::optional<std::size_t> reranker_rank;
};

struct WindowAudit {
    std::size_t offset = 0;
    std::size_t size = 0;
    /// ok | retried | fallback_unparseable | fallback_backend_error
    std::string status;
    std::vector<std::string> responses;
    std::vector<TechniqueId> order;
};

struct RankedCandidates {
    std::vector<TechniqueId> order;
    std::map<TechniqueId, Provenance> provenance;
    std::vector<ExemplarPair> pairs;
    /// Some window fell back to retriever order after a backend failure.
    bool degraded = false;
    std::vector<WindowAudit> audit;
    std::size_t backend_calls = 0;
};

/// Listwise re-ranking with sliding windows. Each window's ranking overwrites
/// its span before the next (further forward) window is taken. Requests use
/// temperature 0. Windows of a single candidate are not sent.
RankedCandidates rerank(std::string_view query, const CandidateList& candidates,
                        ChatBackend& backend, const WindowPlan& plan,
                        const RerankOptions& options = {});

/// Orders retrieved pairs by the best rank any of their labels got in
/// `order`; ties and unranked pairs keep retriever order, unranked last.
std::vector<ExemplarPair> reorder_pairs(const Retrieval& hits, std::span<const TechniqueId> order,
                                        const Corpus& corpus);

}  // namespace ttprag
