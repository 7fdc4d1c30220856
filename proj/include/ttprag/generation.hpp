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
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttprag/chat.hpp"
#include "ttprag/context.hpp"
#include "ttprag/corpus.hpp"
#include "ttprag/errors.hpp"
#include "ttprag/reranker.hpp"
#include "ttprag/retriever.hpp"
#include "ttprag/taxonomy.hpp"

namespace ttprag {

struct GenerationConfig {
    std::string model;
    double temperature = 0.7;
    double top_p = 0.1;
    std::size_t max_output_tokens = 256;
    /// Also drop predicted ids that were not among the re-ranked candidates.
    bool strict_candidate_filter = false;
};

/// Throws Error unless temperature >= 0 and top_p in [0, 1].
void validate(const GenerationConfig& cfg);

struct Annotation {
    std::string query_id;
    std::vector<TechniqueId> predicted;
    std::string raw_response;
    /// Distinct ids removed by the taxonomy / candidate filters.
    std::size_t filtered_count = 0;
    /// The re-ranker fell back to retriever order somewhere.
    bool degraded = false;
};

/// Every emitted id was filtered out. Carries the annotation so callers can
/// decide on a fallback.
class EmptyPrediction : public Error {
  public:
    explicit EmptyPrediction(Annotation annotation)
        : Error("no valid technique ids in generator output"), annotation_(std::move(annotation)) {}
    const Annotation& annotation() const noexcept { return annotation_; }

  private:
    Annotation annotation_;
};

/// Fixed instruction shared by inference requests and training records.
std::string_view generator_instruction();

std::vector<ChatMessage> generator_messages(const GeneratorContext& context);

/// Ids in emission order, first occurrence wins. Ids missing from the
/// taxonomy are dropped; with `allowed`, ids outside it are dropped too.
std::vector<TechniqueId> extract_prediction(std::string_view response, const Taxonomy& taxonomy,
                                            std::span<const TechniqueId> allowed,
                                            bool restrict_to_allowed, std::size_t* filtered);

/// Sends the context to the generator and filters its answer.
/// Throws BackendError, or EmptyPrediction when nothing survives filtering.
Annotation annotate(const GeneratorContext& context, ChatBackend& backend,
                    const GenerationConfig& cfg, const Taxonomy& taxonomy,
                    const RankedCandidates& candidates, std::string query_id = {});

struct PipelineHyper {
    std::size_t top_k = 40;       // retrieved pairs (K)
    std::size_t exemplars = 3;    // pairs placed in the context (k)
    std::size_t window = 40;
    std::size_t overlap = 20;
    Bm25Params bm25;
    std::size_t context_budget = 2048;
    bool include_names = true;
    RerankOptions rerank;
    GenerationConfig generation;
};

/// Throws Error when K < k, window < 1 or overlap >= window.
void validate(const PipelineHyper& hyper);

/// Everything a run produced before generation, for audit.
struct PipelineTrace {
    std::size_t view_size = 0;
    Retrieval retrieval;
    CandidateList candidates;
    RankedCandidates ranked;
    GeneratorContext context;
};

struct PipelineResult {
    Annotation annotation;
    PipelineTrace trace;
    /// Generation produced no surviving ids.
    bool empty_prediction = false;
};

/// Serializes a trace (and optionally its annotation) as one JSON object.
std::string trace_json(const PipelineTrace& trace, const Annotation* annotation = nullptr);

/// Retriever -> re-ranker -> context -> generator over a fixed corpus.
///
/// The BM25 index is built once over the whole corpus. Each query excludes
/// corpus examples with the same normalized text, with collection statistics
/// adjusted so scores match an index built over the leakage-free view.
/// Shared state is immutable; `run` may be called concurrently when the
/// backends allow it.
class Pipeline {
  public:
    /// Throws EmptyCorpus and Error on invalid hyperparameters.
    Pipeline(Corpus corpus, std::shared_ptr<const Taxonomy> taxonomy,
             std::shared_ptr<ChatBackend> reranker, std::shared_ptr<ChatBackend> generator,
             PipelineHyper hyper = {});

    /// Stages up to and including context construction. Throws StageError.
    PipelineTrace prepare(std::string_view query) const;

    /// Full run. An EmptyPrediction is reported through the result rather
    /// than thrown. Throws StageError.
    PipelineResult run(std::string_view query, std::string query_id = {}) const;

    const Corpus& corpus() const noexcept { return corpus_; }
    const Taxonomy& taxonomy() const noexcept { return *taxonomy_; }
    const Bm25Index& index() const noexcept { return index_; }
    const PipelineHyper& hyper() const noexcept { return hyper_; }

  private:
    Corpus corpus_;
    std::shared_ptr<const Taxonomy> taxonomy_;
    std::shared_ptr<ChatBackend> reranker_;
    std::shared_ptr<ChatBackend> generator_;
    PipelineHyper hyper_;
    Bm25Index index_;
};

struct TrainingRecord {
    std::string example_id;
    std::string instruction;
    std::string input;
    std::string output;
};

struct ExportOptions {
    /// Copies emitted for each example with more than one label.
    std::size_t oversample_multi = 3;
    std::size_t concurrency = 1;
};

struct ExportFailure {
    std::string example_id;
    std::string reason;
};

struct ExportResult {
    std::vector<TrainingRecord> records;
    std::vector<ExportFailure> failures;
};

/// One instruction-tuning record per example of `train`, in corpus order.
/// The input is exactly the context `pipeline.run` builds for that text;
/// the output renders the gold labels. Failing examples are skipped and
/// listed in `failures`.
ExportResult export_training(const Pipeline& pipeline, const Corpus& train,
                             const ExportOptions& options = {});

/// {"instruction", "input", "output"} per line.
void write_training_jsonl(std::ostream& out, std::span<const TrainingRecord> records);

}  // namespace ttprag
