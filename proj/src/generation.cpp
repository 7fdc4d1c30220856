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

#include "ttprag/generation.hpp"

#include <algorithm>
#include <ostream>
#include <unordered_set>

#include "json.hpp"
#include "ttprag/log.hpp"
#include "ttprag/parallel.hpp"

namespace ttprag {

namespace {

constexpr std::string_view kInstruction =
    "You are a cyber threat intelligence analyst. The input starts with a security text, "
    "followed by annotated examples: each example text follows [text] and its MITRE ATT&CK "
    "labels follow [technique]. Identify every MITRE ATT&CK technique and sub-technique "
    "described by the first text, using the examples as guidance. Answer with a "
    "comma-separated list of technique IDs, each optionally followed by its name in "
    "parentheses.";

nlohmann::json ids_json(std::span<const TechniqueId> ids) {
    auto out = nlohmann::json::array();
    for (auto id : ids) {
        out.push_back(id.str());
    }
    return out;
}

}  // namespace

void validate(const GenerationConfig& cfg) {
    if (!(cfg.temperature >= 0.0)) {
        throw Error("generation temperature must be >= 0");
    }
    if (!(cfg.top_p >= 0.0 && cfg.top_p <= 1.0)) {
        throw Error("generation top_p must be within [0, 1]");
    }
}

std::string_view generator_instruction() { return kInstruction; }

std::vector<ChatMessage> generator_messages(const GeneratorContext& context) {
    return {{"system", std::string(kInstruction)}, {"user", context.serialized}};
}

std::vector<TechniqueId> extract_prediction(std::string_view response, const Taxonomy& taxonomy,
                                            std::span<const TechniqueId> allowed,
                                            bool restrict_to_allowed, std::size_t* filtered) {
    std::vector<TechniqueId> out;
    std::unordered_set<TechniqueId> seen;
    std::unordered_set<TechniqueId> allowed_set(allowed.begin(), allowed.end());
    std::size_t removed = 0;
    for (const auto& match : scan_ids(response)) {
        if (!seen.insert(match.id).second) {
            continue;
        }
        if (!taxonomy.contains(match.id) ||
            (restrict_to_allowed && allowed_set.count(match.id) == 0)) {
            ++removed;
            continue;
        }
        out.push_back(match.id);
    }
    if (filtered != nullptr) {
        *filtered = removed;
    }
    return out;
}

Annotation annotate(const GeneratorContext& context, ChatBackend& backend,
                    const GenerationConfig& cfg, const Taxonomy& taxonomy,
                    const RankedCandidates& candidates, std::string query_id) {
    validate(cfg);
    ChatRequest request{cfg.model, generator_messages(context), cfg.temperature, cfg.top_p,
                        cfg.max_output_tokens};
    Annotation ann;
    ann.query_id = std::move(query_id);
    ann.degraded = candidates.degraded;
    ann.raw_response = backend.complete(request);
    ann.predicted = extract_prediction(ann.raw_response, taxonomy, candidates.order,
                                       cfg.strict_candidate_filter, &ann.filtered_count);
    if (ann.predicted.empty()) {
        throw EmptyPrediction(std::move(ann));
    }
    return ann;
}

void validate(const PipelineHyper& hyper) {
    if (hyper.top_k < hyper.exemplars) {
        throw Error("need K >= k (retrieved pairs >= exemplars)");
    }
    if (hyper.top_k == 0) {
        throw Error("K must be at least 1");
    }
    if (hyper.window == 0 || hyper.overlap >= hyper.window) {
        throw Error("need window >= 1 and 0 <= overlap < window");
    }
    validate(hyper.generation);
}

std::string trace_json(const PipelineTrace& trace, const Annotation* annotation) {
    nlohmann::ordered_json out;
    out["view_size"] = trace.view_size;
    auto& hits = out["retrieval"] = nlohmann::ordered_json::array();
    for (const auto& h : trace.retrieval.hits) {
        hits.push_back({{"id", h.id}, {"score", h.score}});
    }
    auto& cands = out["candidates"] = nlohmann::ordered_json::array();
    for (const auto& c : trace.candidates) {
        cands.push_back({{"id", c.id.str()}, {"name", c.name}, {"retriever_rank", c.best_retriever_rank}});
    }
    auto& ranked = out["rerank"];
    ranked["order"] = ids_json(trace.ranked.order);
    ranked["degraded"] = trace.ranked.degraded;
    ranked["backend_calls"] = trace.ranked.backend_calls;
    auto& windows = ranked["windows"] = nlohmann::ordered_json::array();
    for (const auto& w : trace.ranked.audit) {
        windows.push_back({{"offset", w.offset},
                           {"size", w.size},
                           {"status", w.status},
                           {"order", ids_json(w.order)},
                           {"responses", w.responses}});
    }
    auto& pairs = out["exemplar_pairs"] = nlohmann::ordered_json::array();
    for (const auto& p : trace.ranked.pairs) {
        nlohmann::ordered_json pj{{"id", p.id}, {"retriever_rank", p.retriever_rank}};
        pj["reranker_rank"] = p.reranker_rank ? nlohmann::ordered_json(*p.reranker_rank) : nullptr;
        pairs.push_back(std::move(pj));
    }
    auto& ctx = out["context"];
    ctx["exemplars"] = nlohmann::ordered_json::array();
    for (const auto& e : trace.context.exemplars) {
        ctx["exemplars"].push_back(e.id);
    }
    ctx["token_estimate"] = trace.context.token_estimate;
    ctx["serialized"] = trace.context.serialized;
    if (annotation != nullptr) {
        auto& gen = out["generation"];
        gen["predicted"] = ids_json(annotation->predicted);
        gen["filtered_count"] = annotation->filtered_count;
        gen["raw_response"] = annotation->raw_response;
    }
    return out.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

Pipeline::Pipeline(Corpus corpus, std::shared_ptr<const Taxonomy> taxonomy,
                   std::shared_ptr<ChatBackend> reranker, std::shared_ptr<ChatBackend> generator,
                   PipelineHyper hyper)
    : corpus_(std::move(corpus)),
      taxonomy_(std::move(taxonomy)),
      reranker_(std::move(reranker)),
      generator_(std::move(generator)),
      hyper_(std::move(hyper)) {
    validate(hyper_);
    if (!taxonomy_) {
        throw Error("pipeline needs a taxonomy");
    }
    index_ = Bm25Index::build(corpus_, hyper_.bm25);
}

PipelineTrace Pipeline::prepare(std::string_view query) const {
    PipelineTrace trace;
    std::string stage = "retrieve";
    try {
        std::vector<std::size_t> excluded;
        for (auto store : corpus_.text_matches(query)) {
            if (auto doc = index_.doc_of_store(store); doc != Bm25Index::npos) {
                excluded.push_back(doc);
            }
        }
        trace.view_size = corpus_.size() - excluded.size();
        trace.retrieval = index_.search(query, hyper_.top_k, excluded);

        stage = "candidates";
        if (!trace.retrieval.empty()) {
            trace.candidates = candidates_from_pairs(trace.retrieval, corpus_, *taxonomy_);
        }

        stage = "rerank";
        if (!trace.candidates.empty()) {
            if (!reranker_) {
                throw Error("no re-ranker backend configured");
            }
            const auto plan =
                make_window_plan(trace.candidates.size(), hyper_.window, hyper_.overlap);
            trace.ranked = rerank(query, trace.candidates, *reranker_, plan, hyper_.rerank);
        }

        stage = "reorder";
        trace.ranked.pairs = reorder_pairs(trace.retrieval, trace.ranked.order, corpus_);

        stage = "context";
        ContextOptions copts;
        copts.k = hyper_.exemplars;
        copts.budget = hyper_.context_budget;
        copts.include_names = hyper_.include_names;
        trace.context = build_context(query, trace.ranked.pairs, taxonomy_.get(), copts);
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
    return trace;
}

PipelineResult Pipeline::run(std::string_view query, std::string query_id) const {
    PipelineResult result;
    result.trace = prepare(query);
    if (!generator_) {
        throw StageError("generate", "no generator backend configured");
    }
    try {
        result.annotation = annotate(result.trace.context, *generator_, hyper_.generation,
                                     *taxonomy_, result.trace.ranked, std::move(query_id));
    } catch (const EmptyPrediction& e) {
        result.annotation = e.annotation();
        result.empty_prediction = true;
    } catch (const std::exception& e) {
        throw StageError("generate", e.what());
    }
    return result;
}

ExportResult export_training(const Pipeline& pipeline, const Corpus& train,
                             const ExportOptions& options) {
    if (options.oversample_multi == 0) {
        throw Error("oversample factor must be at least 1");
    }
    std::vector<std::optional<TrainingRecord>> built(train.size());
    std::vector<std::optional<std::string>> errors(train.size());
    parallel_for(train.size(), options.concurrency, [&](std::size_t i) {
        const auto& ex = train[i];
        try {
            auto trace = pipeline.prepare(ex.text);
            built[i] = TrainingRecord{
                ex.id, std::string(generator_instruction()), std::move(trace.context.serialized),
                render_labels(ex.labels, &pipeline.taxonomy(), pipeline.hyper().include_names)};
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });

    ExportResult result;
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (errors[i]) {
            log(LogLevel::warning, "export skipped " + train[i].id + ": " + *errors[i]);
            result.failures.push_back({train[i].id, *errors[i]});
            continue;
        }
        const auto copies = train[i].labels.size() > 1 ? options.oversample_multi : 1;
        for (std::size_t c = 0; c < copies; ++c) {
            result.records.push_back(*built[i]);
        }
    }
    return result;
}

void write_training_jsonl(std::ostream& out, std::span<const TrainingRecord> records) {
    for (const auto& r : records) {
        nlohmann::ordered_json rec;
        rec["instruction"] = r.instruction;
        rec["input"] = r.input;
        rec["output"] = r.output;
        out << rec.dump() << '\n';
    }
}

}  // namespace ttprag
