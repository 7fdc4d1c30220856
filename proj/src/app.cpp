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


#include "ttprag/app.hpp"

#include <cstdlib>
#include <fstream>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "httplib.h"
#include "json.hpp"
#include "ttprag/errors.hpp"
#include "ttprag/log.hpp"
#include "ttprag/parallel.hpp"
#include "ttprag/text.hpp"

namespace ttprag {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!obj.is_object()) {
        throw FormatError(where, "expected an object");
    }
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : obj.items()) {
        if (ok.count(key) == 0) {
            throw FormatError(where.empty() ? key : where + "." + key, "unknown key");
        }
    }
}

template <typename T>
void read(const json& obj, const char* key, const std::string& where, T& out) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return;
    }
    std::string loc = where.empty() ? key : where + "." + key;
    try {
        if constexpr (std::is_same_v<T, std::size_t>) {
            if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<long long>() >= 0)) {
                throw FormatError(loc, "expected a non-negative integer");
            }
        } else if constexpr (std::is_same_v<T, int>) {
            if (!it->is_number_integer()) {
                throw FormatError(loc, "expected an integer");
            }
        } else if constexpr (std::is_same_v<T, double>) {
            if (!it->is_number()) {
                throw FormatError(loc, "expected a number");
            }
        } else if constexpr (std::is_same_v<T, bool>) {
            if (!it->is_boolean()) {
                throw FormatError(loc, "expected a boolean");
            }
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!it->is_string()) {
                throw FormatError(loc, "expected a string");
            }
        }
        out = it->get<T>();
    } catch (const json::exception& e) {
        throw FormatError(loc, e.what());
    }
}

void read_backend(const json& obj, const std::string& where, BackendConfig& b) {
    read(obj, "url", where, b.url);
    read(obj, "model", where, b.model);
    read(obj, "api_key_env", where, b.api_key_env);
    read(obj, "retries", where, b.retries);
    read(obj, "timeout_seconds", where, b.timeout_seconds);
    read(obj, "max_concurrency", where, b.max_concurrency);
}

void write_backend(ordered_json& out, const BackendConfig& b) {
    out["url"] = b.url;
    out["model"] = b.model;
    out["api_key_env"] = b.api_key_env;
    out["retries"] = b.retries;
    out["timeout_seconds"] = b.timeout_seconds;
    out["max_concurrency"] = b.max_concurrency;
}

std::string_view to_string(PromptStyle s) { return s == PromptStyle::rankgpt ? "rankgpt" : "framework"; }
std::string_view to_string(TaxonomyFormat f) { return f == TaxonomyFormat::stix ? "stix" : "csv"; }

std::optional<std::string> env(const char* name) {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') {
        return std::nullopt;
    }
    return std::string(v);
}

std::string resolve(const std::filesystem::path& base, const std::string& p) {
    if (p.empty() || std::filesystem::path(p).is_absolute()) {
        return p;
    }
    return (base / p).lexically_normal().string();
}

ordered_json ids_json(std::span<const TechniqueId> ids) {
    auto out = ordered_json::array();
    for (auto id : ids) {
        out.push_back(id.str());
    }
    return out;
}

std::shared_ptr<ChatBackend> http_backend(const BackendConfig& b) {
    if (b.url.empty()) {
        std::string msg = "no endpoint configured (set url or use a stub directory)";
        return std::make_shared<FunctionChatBackend>(
            [msg](const ChatRequest&) -> std::string { throw BackendError(msg); });
    }
    HttpBackendOptions opts;
    opts.url = b.url;
    opts.api_key = env(b.api_key_env.c_str()).value_or("");
    opts.timeout = std::chrono::seconds(b.timeout_seconds);
    opts.retries = b.retries;
    opts.max_concurrency = b.max_concurrency;
    return std::make_shared<HttpChatBackend>(std::move(opts));
}

}  // namespace

void validate(const PipelineConfig& config) {
    validate(to_hyper(config));
    if (config.concurrency == 0) {
        throw Error("concurrency must be at least 1");
    }
    for (const auto* b : {&config.reranker, &config.generator}) {
        if (b->retries < 0 || b->timeout_seconds <= 0 || b->max_concurrency <= 0) {
            throw Error("backend retries must be >= 0, timeout and concurrency > 0");
        }
    }
}

std::string config_to_json(const PipelineConfig& c) {
    ordered_json out;
    out["taxonomy"] = {{"path", c.taxonomy_path}, {"format", std::string(to_string(c.taxonomy_format))}};
    out["train"] = c.train_paths;
    out["retriever"] = {{"top_k", c.top_k}, {"k1", c.bm25_k1}, {"b", c.bm25_b}};
    auto& rr = out["reranker"];
    write_backend(rr, c.reranker);
    rr["prompt_style"] = std::string(to_string(c.prompt_style));
    rr["max_description_chars"] = c.max_description_chars;
    rr["max_tokens"] = c.reranker_max_tokens;
    rr["window"] = c.window;
    rr["overlap"] = c.overlap;
    out["context"] = {{"exemplars", c.exemplars},
                      {"budget", c.context_budget},
                      {"include_names", c.include_names}};
    auto& gen = out["generator"];
    write_backend(gen, c.generator);
    gen["temperature"] = c.temperature;
    gen["top_p"] = c.top_p;
    gen["max_output_tokens"] = c.max_output_tokens;
    gen["strict_candidate_filter"] = c.strict_candidate_filter;
    out["export"] = {{"oversample_multi", c.oversample_multi}};
    out["concurrency"] = c.concurrency;
    out["stub_dir"] = c.stub_dir;
    out["record_dir"] = c.record_dir;
    return out.dump(2) + "\n";
}

PipelineConfig config_from_json(std::string_view text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError("config", e.what());
    }
    check_keys(root, "", {"taxonomy", "train", "retriever", "reranker", "context", "generator",
                          "export", "concurrency", "stub_dir", "record_dir"});
    PipelineConfig c;
    if (auto it = root.find("taxonomy"); it != root.end()) {
        check_keys(*it, "taxonomy", {"path", "format"});
        read(*it, "path", "taxonomy", c.taxonomy_path);
        std::string fmt = "csv";
        read(*it, "format", "taxonomy", fmt);
        if (fmt == "csv") {
            c.taxonomy_format = TaxonomyFormat::csv;
        } else if (fmt == "stix") {
            c.taxonomy_format = TaxonomyFormat::stix;
        } else {
            throw FormatError("taxonomy.format", "expected csv or stix, got '" + fmt + "'");
        }
    }
    if (auto it = root.find("train"); it != root.end()) {
        if (it->is_string()) {
            c.train_paths = {it->get<std::string>()};
        } else if (it->is_array() && std::all_of(it->begin(), it->end(), [](const json& j) { return j.is_string(); })) {
            c.train_paths = it->get<std::vector<std::string>>();
        } else {
            throw FormatError("train", "expected a path or a list of paths");
        }
    }
    if (auto it = root.find("retriever"); it != root.end()) {
        check_keys(*it, "retriever", {"top_k", "k1", "b"});
        read(*it, "top_k", "retriever", c.top_k);
        read(*it, "k1", "retriever", c.bm25_k1);
        read(*it, "b", "retriever", c.bm25_b);
    }
    if (auto it = root.find("reranker"); it != root.end()) {
        check_keys(*it, "reranker",
                   {"url", "model", "api_key_env", "retries", "timeout_seconds", "max_concurrency",
                    "prompt_style", "max_description_chars", "max_tokens", "window", "overlap"});
        read_backend(*it, "reranker", c.reranker);
        std::string style = "framework";
        read(*it, "prompt_style", "reranker", style);
        if (style == "framework") {
            c.prompt_style = PromptStyle::framework;
        } else if (style == "rankgpt") {
            c.prompt_style = PromptStyle::rankgpt;
        } else {
            throw FormatError("reranker.prompt_style", "expected framework or rankgpt");
        }
        read(*it, "max_description_chars", "reranker", c.max_description_chars);
        read(*it, "max_tokens", "reranker", c.reranker_max_tokens);
        read(*it, "window", "reranker", c.window);
        read(*it, "overlap", "reranker", c.overlap);
    }
    if (auto it = root.find("context"); it != root.end()) {
        check_keys(*it, "context", {"exemplars", "budget", "include_names"});
        read(*it, "exemplars", "context", c.exemplars);
        read(*it, "budget", "context", c.context_budget);
        read(*it, "include_names", "context", c.include_names);
    }
    if (auto it = root.find("generator"); it != root.end()) {
        check_keys(*it, "generator",
                   {"url", "model", "api_key_env", "retries", "timeout_seconds", "max_concurrency",
                    "temperature", "top_p", "max_output_tokens", "strict_candidate_filter"});
        read_backend(*it, "generator", c.generator);
        read(*it, "temperature", "generator", c.temperature);
        read(*it, "top_p", "generator", c.top_p);
        read(*it, "max_output_tokens", "generator", c.max_output_tokens);
        read(*it, "strict_candidate_filter", "generator", c.strict_candidate_filter);
    }
    if (auto it = root.find("export"); it != root.end()) {
        check_keys(*it, "export", {"oversample_multi"});
        read(*it, "oversample_multi", "export", c.oversample_multi);
    }
    read(root, "concurrency", "", c.concurrency);
    read(root, "stub_dir", "", c.stub_dir);
    read(root, "record_dir", "", c.record_dir);
    return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open config " + path.string());
    }
    std::stringstream buf;
    buf << in.rdbuf();
    PipelineConfig c = config_from_json(buf.str());
    // Relative paths are taken relative to the config file.
    auto base = path.parent_path();
    c.taxonomy_path = resolve(base, c.taxonomy_path);
    for (auto& p : c.train_paths) {
        p = resolve(base, p);
    }
    c.stub_dir = resolve(base, c.stub_dir);
    c.record_dir = resolve(base, c.record_dir);
    return c;
}

void apply_env_overrides(PipelineConfig& c) {
    if (auto v = env("TTPRAG_RERANKER_URL")) c.reranker.url = *v;
    if (auto v = env("TTPRAG_RERANKER_MODEL")) c.reranker.model = *v;
    if (auto v = env("TTPRAG_GENERATOR_URL")) c.generator.url = *v;
    if (auto v = env("TTPRAG_GENERATOR_MODEL")) c.generator.model = *v;
}

PipelineHyper to_hyper(const PipelineConfig& c) {
    PipelineHyper h;
    h.top_k = c.top_k;
    h.exemplars = c.exemplars;
    h.window = c.window;
    h.overlap = c.overlap;
    h.bm25 = {c.bm25_k1, c.bm25_b};
    h.context_budget = c.context_budget;
    h.include_names = c.include_names;
    h.rerank.model = c.reranker.model;
    h.rerank.max_tokens = c.reranker_max_tokens;
    h.rerank.prompt.style = c.prompt_style;
    h.rerank.prompt.max_description_chars = c.max_description_chars;
    h.generation.model = c.generator.model;
    h.generation.temperature = c.temperature;
    h.generation.top_p = c.top_p;
    h.generation.max_output_tokens = c.max_output_tokens;
    h.generation.strict_candidate_filter = c.strict_candidate_filter;
    return h;
}

Backends make_backends(const PipelineConfig& c) {
    Backends b;
    if (!c.stub_dir.empty()) {
        auto stub = std::make_shared<StubChatBackend>(c.stub_dir);
        b.reranker = stub;
        b.generator = stub;
    } else {
        b.reranker = http_backend(c.reranker);
        b.generator = http_backend(c.generator);
    }
    if (!c.record_dir.empty()) {
        b.reranker = std::make_shared<RecordingChatBackend>(b.reranker, c.record_dir);
        b.generator = std::make_shared<RecordingChatBackend>(b.generator, c.record_dir);
    }
    return b;
}

Corpus load_train_corpus(const PipelineConfig& c) {
    if (c.train_paths.empty()) {
        throw Error("config lists no training data");
    }
    std::vector<Corpus> parts;
    for (const auto& p : c.train_paths) {
        parts.push_back(load_jsonl(p, Split::train, std::filesystem::path(p).stem().string()));
    }
    return concat(parts);
}

std::unique_ptr<Pipeline> make_pipeline(const PipelineConfig& c, Backends backends) {
    validate(c);
    if (c.taxonomy_path.empty()) {
        throw Error("config names no taxonomy");
    }
    auto taxonomy = std::make_shared<const Taxonomy>(load_taxonomy(c.taxonomy_path, c.taxonomy_format));
    return std::make_unique<Pipeline>(load_train_corpus(c), std::move(taxonomy),
                                      std::move(backends.reranker), std::move(backends.generator),
                                      to_hyper(c));
}

// ---- annotate -------------------------------------------------------------

std::vector<QueryRecord> parse_queries(std::istream& in, std::vector<AnnotateFailure>& failures) {
    std::vector<QueryRecord> out;
    std::set<std::string> seen;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (trim(line).empty()) {
            continue;
        }
        std::string default_id = "line-" + std::to_string(n);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error&) {
            failures.push_back({n, default_id, "invalid JSON"});
            continue;
        }
        if (!j.is_object()) {
            failures.push_back({n, default_id, "expected a JSON object"});
            continue;
        }
        QueryRecord q{n, default_id, {}};
        if (auto it = j.find("id"); it != j.end() && !it->is_null()) {
            if (!it->is_string()) {
                failures.push_back({n, default_id, "id is not a string"});
                continue;
            }
            q.id = it->get<std::string>();
        }
        auto it = j.find("text");
        if (it == j.end() || !it->is_string()) {
            failures.push_back({n, q.id, "missing text"});
            continue;
        }
        q.text = it->get<std::string>();
        if (trim(q.text).empty()) {
            failures.push_back({n, q.id, "empty text"});
            continue;
        }
        if (!seen.insert(q.id).second) {
            failures.push_back({n, q.id, "duplicate id"});
            continue;
        }
        out.push_back(std::move(q));
    }
    return out;
}

AnnotateSummary cmd_annotate(const Pipeline& pipeline, std::span<const QueryRecord> queries,
                             std::ostream& out, std::ostream* traces, std::size_t concurrency) {
    struct Slot {
        std::optional<PipelineResult> result;
        std::string error;
    };
    std::vector<Slot> slots(queries.size());
    parallel_for(queries.size(), concurrency, [&](std::size_t i) {
        try {
            slots[i].result = pipeline.run(queries[i].text, queries[i].id);
        } catch (const std::exception& e) {
            slots[i].error = e.what();
        }
    });

    AnnotateSummary summary;
    const Taxonomy& tax = pipeline.taxonomy();
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const auto& q = queries[i];
        if (!slots[i].result) {
            log(LogLevel::error, "annotate " + q.id + ": " + slots[i].error);
            summary.failures.push_back({q.line, q.id, slots[i].error});
            continue;
        }
        const auto& r = *slots[i].result;
        ordered_json rec;
        rec["id"] = q.id;
        rec["predicted"] = ids_json(r.annotation.predicted);
        auto names = ordered_json::array();
        for (auto id : r.annotation.predicted) {
            names.push_back(display_name(tax, id));
        }
        rec["names"] = std::move(names);
        rec["degraded"] = r.annotation.degraded;
        rec["filtered_count"] = r.annotation.filtered_count;
        rec["empty_prediction"] = r.empty_prediction;
        out << rec.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
        ++summary.written;
        if (traces != nullptr) {
            auto t = ordered_json::parse(trace_json(r.trace, &r.annotation));
            ordered_json line;
            line["id"] = q.id;
            for (auto& [k, v] : t.items()) {
                line[k] = v;
            }
            *traces << line.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
        }
    }
    out.flush();
    return summary;
}

std::string failure_manifest(std::string_view input, std::span<const AnnotateFailure> failures) {
    ordered_json out;
    out["input"] = std::string(input);
    auto& arr = out["failures"] = ordered_json::array();
    for (const auto& f : failures) {
        arr.push_back({{"line", f.line}, {"id", f.id}, {"reason", f.reason}});
    }
    return out.dump(2, ' ', false, json::error_handler_t::replace) + "\n";
}

// ---- evaluate -------------------------------------------------------------

std::vector<MetricsReport> cmd_evaluate(const EvaluateRequest& req) {
    auto predictions = load_predictions(req.predictions_path);
    std::string dataset = req.dataset.empty()
                              ? std::filesystem::path(req.gold_path).stem().string()
                              : req.dataset;
    Corpus gold = load_jsonl(req.gold_path, Split::test, dataset);
    std::vector<MetricsReport> reports;
    for (Level level : req.levels) {
        if (req.mode == EvalMode::end_to_end) {
            reports.push_back(evaluate(predictions, gold, level, req.averaging));
        } else {
            for (std::size_t k : req.ks) {
                reports.push_back(evaluate_at_k(predictions, gold, k, level, req.averaging));
            }
        }
    }
    for (auto& r : reports) {
        r.system = req.system;
        r.dataset = dataset;
    }
    return reports;
}

// ---- export ---------------------------------------------------------------

ExportResult cmd_export_train(const Pipeline& pipeline, const PipelineConfig& config,
                              std::ostream& out) {
    ExportOptions opts;
    opts.oversample_multi = config.oversample_multi;
    opts.concurrency = config.concurrency;
    auto result = export_training(pipeline, pipeline.corpus(), opts);
    write_training_jsonl(out, result.records);
    return result;
}

// ---- stats ----------------------------------------------------------------

std::string format_stats(std::string_view name, const CorpusStats& s) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "%.*s: examples=%zu mean_labels=%.2f mean_tokens=%.1f unique_labels=%zu "
                  "unique_techniques=%zu\n",
                  static_cast<int>(name.size()), name.data(), s.examples, s.mean_labels,
                  s.mean_tokens, s.unique_labels, s.unique_techniques);
    return buf;
}

// ---- serve ----------------------------------------------------------------

std::string trace_id_for(std::string_view text) {
    return hex64(fnv1a64(normalize_whitespace(text)));
}

HttpReply handle_annotate(const Pipeline& pipeline, std::string_view body) {
    auto error = [](int status, std::string message, std::optional<std::string> trace = {},
                    std::optional<std::string> stage = {}) {
        ordered_json j;
        j["error"] = std::move(message);
        if (stage) j["stage"] = *stage;
        if (trace) j["trace_id"] = *trace;
        return HttpReply{status, j.dump(-1, ' ', false, json::error_handler_t::replace)};
    };
    json req;
    try {
        req = json::parse(body);
    } catch (const json::parse_error&) {
        return error(400, "body is not valid JSON");
    }
    if (!req.is_object() || !req.contains("text") || !req["text"].is_string()) {
        return error(400, "body must be an object with a string 'text'");
    }
    std::string text = req["text"].get<std::string>();
    if (trim(text).empty()) {
        return error(400, "text is empty");
    }
    std::string trace_id = trace_id_for(text);
    PipelineResult r;
    try {
        r = pipeline.run(text, trace_id);
    } catch (const StageError& e) {
        log(LogLevel::error, "request " + trace_id + " failed: " + e.what());
        int status = e.stage() == "context" ? 422 : 502;
        return error(status, e.what(), trace_id, e.stage());
    } catch (const std::exception& e) {
        log(LogLevel::error, "request " + trace_id + " failed: " + e.what());
        return error(500, e.what(), trace_id);
    }
    ordered_json out;
    out["trace_id"] = trace_id;
    auto& pred = out["predicted"] = ordered_json::array();
    for (auto id : r.annotation.predicted) {
        pred.push_back({{"id", id.str()}, {"name", display_name(pipeline.taxonomy(), id)}});
    }
    auto& ex = out["exemplars"] = ordered_json::array();
    for (const auto& e : r.trace.context.exemplars) {
        ex.push_back({{"id", e.id}, {"text", e.text}, {"labels", ids_json(e.labels)}});
    }
    out["degraded"] = r.annotation.degraded;
    out["empty_prediction"] = r.empty_prediction;
    return {200, out.dump(-1, ' ', false, json::error_handler_t::replace)};
}

struct AnnotateServer::Impl {
    const Pipeline& pipeline;
    httplib::Server server;
};

AnnotateServer::AnnotateServer(const Pipeline& pipeline)
    : impl_(new Impl{pipeline, {}}) {
    impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"status":"ok"})", "application/json");
    });
    impl_->server.Post("/v1/annotate", [this](const httplib::Request& req, httplib::Response& res) {
        HttpReply reply = handle_annotate(impl_->pipeline, req.body);
        res.status = reply.status;
        res.set_content(reply.body, "application/json");
    });
}

AnnotateServer::~AnnotateServer() { stop(); }

int AnnotateServer::bind(const std::string& host, int port) {
    if (port == 0) {
        return impl_->server.bind_to_any_port(host);
    }
    return impl_->server.bind_to_port(host, port) ? port : -1;
}

bool AnnotateServer::run() { return impl_->server.listen_after_bind(); }

void AnnotateServer::stop() {
    if (impl_ && impl_->server.is_running()) {
        impl_->server.stop();
    }
}

void AnnotateServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace ttprag
