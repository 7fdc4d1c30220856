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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttprag/chat.hpp"
#include "ttprag/evaluation.hpp"
#include "ttprag/generation.hpp"

namespace ttprag {

struct BackendConfig {
    std::string url;
    std::string model;
    /// Name of the environment variable holding the bearer token.
    std::string api_key_env = "TTPRAG_API_KEY";
    int retries = 2;
    int timeout_seconds = 120;
    int max_concurrency = 4;
};

/// Everything needed to stand up a pipeline. Stored as JSON; secrets only
/// come from the environment.
struct PipelineConfig {
    std::string taxonomy_path;
    TaxonomyFormat taxonomy_format = TaxonomyFormat::csv;
    /// Paired datasets used for retrieval and training, concatenated in order.
    std::vector<std::string> train_paths;

    std::size_t top_k = 40;
    std::size_t exemplars = 3;
    std::size_t window = 40;
    std::size_t overlap = 20;
    double bm25_k1 = 1.2;
    double bm25_b = 0.75;
    std::size_t context_budget = 2048;
    bool include_names = true;

    PromptStyle prompt_style = PromptStyle::framework;
    std::size_t max_description_chars = 400;
    std::size_t reranker_max_tokens = 4096;
    BackendConfig reranker;

    BackendConfig generator;
    double temperature = 0.7;
    double top_p = 0.1;
    std::size_t max_output_tokens = 256;
    bool strict_candidate_filter = false;

    std::size_t oversample_multi = 3;
    std::size_t concurrency = 4;

    /// Replay both backends from this directory instead of calling HTTP.
    std::string stub_dir;
    /// Save every live backend answer here in replayable form.
    std::string record_dir;
};

/// Throws Error when K < k, window < 1, overlap >= window or a generation
/// parameter is out of range.
void validate(const PipelineConfig& config);

std::string config_to_json(const PipelineConfig& config);
/// Unknown keys are rejected. Throws FormatError.
PipelineConfig config_from_json(std::string_view json);
PipelineConfig load_config(const std::filesystem::path& path);

/// TTPRAG_{RERANKER,GENERATOR}_{URL,MODEL} override the file values.
void apply_env_overrides(PipelineConfig& config);

PipelineHyper to_hyper(const PipelineConfig& config);

struct Backends {
    std::shared_ptr<ChatBackend> reranker;
    std::shared_ptr<ChatBackend> generator;
};

/// Stub replay when `stub_dir` is set, HTTP clients otherwise.
Backends make_backends(const PipelineConfig& config);

Corpus load_train_corpus(const PipelineConfig& config);

/// Loads taxonomy and corpus and builds the index once.
std::unique_ptr<Pipeline> make_pipeline(const PipelineConfig& config, Backends backends);

// ---- annotate -------------------------------------------------------------

struct QueryRecord {
    std::size_t line = 0;
    std::string id;
    std::string text;
};

struct AnnotateFailure {
    std::size_t line = 0;
    std::string id;
    std::string reason;
};

struct AnnotateSummary {
    std::size_t written = 0;
    std::vector<AnnotateFailure> failures;
};

/// Reads {"id"?, "text"} lines. Malformed lines become failures; ids default
/// to "line-<n>".
std::vector<QueryRecord> parse_queries(std::istream& in, std::vector<AnnotateFailure>& failures);

/// Runs every query (up to `concurrency` at once) and writes one output line
/// per success, in input order:
///   {"id", "predicted", "names", "degraded", "filtered_count", "empty_prediction"}
/// When `traces` is given, one trace object per success goes there too.
AnnotateSummary cmd_annotate(const Pipeline& pipeline, std::span<const QueryRecord> queries,
                             std::ostream& out, std::ostream* traces, std::size_t concurrency);

/// {"input": ..., "failures": [{"line", "id", "reason"}]}
std::string failure_manifest(std::string_view input, std::span<const AnnotateFailure> failures);

// ---- evaluate -------------------------------------------------------------

enum class EvalMode { end_to_end, at_k };

struct EvaluateRequest {
    std::string predictions_path;
    std::string gold_path;
    std::vector<Level> levels{Level::technique, Level::sub};
    EvalMode mode = EvalMode::end_to_end;
    std::vector<std::size_t> ks{1, 3};
    Averaging averaging = Averaging::micro;
    std::string system = "ttprag";
    std::string dataset;
};

std::vector<MetricsReport> cmd_evaluate(const EvaluateRequest& request);

// ---- export ---------------------------------------------------------------

ExportResult cmd_export_train(const Pipeline& pipeline, const PipelineConfig& config,
                              std::ostream& out);

// ---- stats ----------------------------------------------------------------

std::string format_stats(std::string_view name, const CorpusStats& s);

// ---- serve ----------------------------------------------------------------

struct HttpReply {
    int status = 200;
    std::string body;
};

/// Stable id for a request text; identical requests share it.
std::string trace_id_for(std::string_view text);

/// POST /v1/annotate handler: {"text": str} -> 200
/// {"trace_id", "predicted": [{"id", "name"}], "exemplars": [...], "degraded",
/// "empty_prediction"}; 400 on a malformed body; 422 when the query does not
/// fit the context budget; 502 when another stage fails. Errors carry
/// trace_id and stage.
HttpReply handle_annotate(const Pipeline& pipeline, std::string_view body);

/// Blocking HTTP service around a pipeline.
class AnnotateServer {
  public:
    explicit AnnotateServer(const Pipeline& pipeline);
    ~AnnotateServer();
    AnnotateServer(const AnnotateServer&) = delete;
    AnnotateServer& operator=(const AnnotateServer&) = delete;

    /// Binds; port 0 picks a free port. Returns the bound port or -1.
    int bind(const std::string& host, int port);
    /// Serves until stop(). Call after bind().
    bool run();
    void stop();
    void wait_until_ready() const;

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace ttprag
