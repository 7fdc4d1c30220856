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


#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "ttprag/app.hpp"
#include "ttprag/errors.hpp"
#include "ttprag/evaluation.hpp"
#include "ttprag/log.hpp"

using namespace ttprag;

namespace {

AnnotateServer* g_server = nullptr;

void on_signal(int) {
    if (g_server != nullptr) {
        g_server->stop();
    }
}

PipelineConfig effective_config(const std::string& path, const std::string& stub_dir) {
    PipelineConfig cfg = load_config(path);
    apply_env_overrides(cfg);
    if (!stub_dir.empty()) {
        cfg.stub_dir = stub_dir;
    }
    validate(cfg);
    return cfg;
}

std::unique_ptr<Pipeline> pipeline_for(const PipelineConfig& cfg) {
    return make_pipeline(cfg, make_backends(cfg));
}

/// Output stream that is either a file or stdout.
struct Sink {
    std::ofstream file;
    std::ostream* stream = &std::cout;
    explicit Sink(const std::string& path) {
        if (!path.empty() && path != "-") {
            file.open(path, std::ios::binary);
            if (!file) {
                throw Error("cannot write " + path);
            }
            stream = &file;
        }
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Technique annotation of threat-intelligence text with retrieval and re-ranking"};
    app.require_subcommand(1);
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

    std::string config_path, stub_dir;

    // annotate
    auto* annotate = app.add_subcommand("annotate", "Annotate text with technique ids");
    std::string text, input, out_path, traces_path, manifest_path;
    annotate->add_option("-c,--config", config_path, "Pipeline config (JSON)")->required();
    auto* text_opt = annotate->add_option("--text", text, "A single text to annotate");
    auto* input_opt = annotate->add_option("-i,--input", input, "JSONL with {\"id\", \"text\"} per line");
    text_opt->excludes(input_opt);
    annotate->add_option("-o,--out", out_path, "Output JSONL (default stdout)");
    annotate->add_option("--traces", traces_path, "Write one pipeline trace per query here");
    annotate->add_option("--manifest", manifest_path, "Failure manifest path (default <out>.failures.json)");
    annotate->add_option("--stub-dir", stub_dir, "Replay both backends from this directory");

    // evaluate
    auto* evaluate_cmd = app.add_subcommand("evaluate", "Score predictions against gold labels");
    EvaluateRequest ereq;
    std::string level_text = "both", mode_text = "end_to_end", averaging_text = "micro", csv_path;
    evaluate_cmd->add_option("-p,--predictions", ereq.predictions_path, "Predictions JSONL")->required();
    evaluate_cmd->add_option("-g,--gold", ereq.gold_path, "Gold JSONL")->required();
    evaluate_cmd->add_option("--level", level_text, "technique | sub | both")
        ->check(CLI::IsMember({"technique", "sub", "sub-technique", "both"}));
    evaluate_cmd->add_option("--mode", mode_text, "end_to_end | at_k")
        ->check(CLI::IsMember({"end_to_end", "at_k"}));
    evaluate_cmd->add_option("-k", ereq.ks, "Cut-offs for at_k mode")->delimiter(',');
    evaluate_cmd->add_option("--averaging", averaging_text, "micro | macro")
        ->check(CLI::IsMember({"micro", "macro"}));
    evaluate_cmd->add_option("--system", ereq.system, "System name for the report");
    evaluate_cmd->add_option("--dataset", ereq.dataset, "Dataset name (default: gold file stem)");
    evaluate_cmd->add_option("-o,--out", csv_path, "Write the CSV report here");

    // export-train
    auto* export_cmd = app.add_subcommand("export-train", "Build instruction-tuning records");
    std::string export_out;
    export_cmd->add_option("-c,--config", config_path, "Pipeline config (JSON)")->required();
    export_cmd->add_option("-o,--out", export_out, "Output JSONL (default stdout)");
    export_cmd->add_option("--stub-dir", stub_dir, "Replay both backends from this directory");

    // serve
    auto* serve = app.add_subcommand("serve", "HTTP annotation service");
    std::string host = "127.0.0.1";
    int port = 8080;
    serve->add_option("-c,--config", config_path, "Pipeline config (JSON)")->required();
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks a free one)");
    serve->add_option("--stub-dir", stub_dir, "Replay both backends from this directory");

    // stats
    auto* stats_cmd = app.add_subcommand("stats", "Dataset statistics");
    std::vector<std::string> stats_inputs;
    stats_cmd->add_option("inputs", stats_inputs, "JSONL datasets")->required();

    // config
    auto* config_cmd = app.add_subcommand("config", "Print the effective config (defaults when none given)");
    config_cmd->add_option("-c,--config", config_path, "Pipeline config (JSON)");

    CLI11_PARSE(app, argc, argv);

    if (verbose) {
        set_log_sink([](LogLevel level, std::string_view msg) {
            static const char* names[] = {"debug", "info", "warning", "error"};
            std::fprintf(stderr, "[%s] %.*s\n", names[static_cast<int>(level)],
                         static_cast<int>(msg.size()), msg.data());
        });
    }

    try {
        if (*annotate) {
            if (text_opt->count() == 0 && input_opt->count() == 0) {
                std::cerr << "annotate: give --text or --input\n";
                return 2;
            }
            auto cfg = effective_config(config_path, stub_dir);
            auto pipeline = pipeline_for(cfg);
            std::vector<AnnotateFailure> failures;
            std::vector<QueryRecord> queries;
            if (text_opt->count() > 0) {
                queries.push_back({1, "text-1", text});
            } else {
                std::ifstream in(input, std::ios::binary);
                if (!in) {
                    throw Error("cannot open " + input);
                }
                queries = parse_queries(in, failures);
            }
            Sink out(out_path);
            std::unique_ptr<Sink> traces;
            if (!traces_path.empty()) {
                traces = std::make_unique<Sink>(traces_path);
            }
            auto summary = cmd_annotate(*pipeline, queries, *out.stream,
                                        traces ? traces->stream : nullptr, cfg.concurrency);
            failures.insert(failures.end(), summary.failures.begin(), summary.failures.end());
            std::sort(failures.begin(), failures.end(),
                      [](const auto& a, const auto& b) { return a.line < b.line; });
            if (!failures.empty()) {
                std::string path = manifest_path;
                if (path.empty()) {
                    path = (out_path.empty() || out_path == "-") ? "annotate.failures.json"
                                                                 : out_path + ".failures.json";
                }
                std::ofstream(path, std::ios::binary)
                    << failure_manifest(input.empty() ? "--text" : input, failures);
                std::cerr << failures.size() << " record(s) failed; see " << path << "\n";
                return 1;
            }
            return 0;
        }
        if (*evaluate_cmd) {
            if (level_text == "both") {
                ereq.levels = {Level::technique, Level::sub};
            } else {
                ereq.levels = {parse_level(level_text)};
            }
            ereq.mode = mode_text == "at_k" ? EvalMode::at_k : EvalMode::end_to_end;
            ereq.averaging = averaging_text == "macro" ? Averaging::macro : Averaging::micro;
            auto reports = cmd_evaluate(ereq);
            if (!csv_path.empty()) {
                std::ofstream(csv_path, std::ios::binary) << report_csv(reports);
            }
            std::cout << report_text(reports);
            return 0;
        }
        if (*export_cmd) {
            auto cfg = effective_config(config_path, stub_dir);
            auto pipeline = pipeline_for(cfg);
            Sink out(export_out);
            auto result = cmd_export_train(*pipeline, cfg, *out.stream);
            for (const auto& f : result.failures) {
                std::cerr << "skipped " << f.example_id << ": " << f.reason << "\n";
            }
            std::cerr << result.records.size() << " record(s) written\n";
            return result.failures.empty() ? 0 : 1;
        }
        if (*serve) {
            auto cfg = effective_config(config_path, stub_dir);
            auto pipeline = pipeline_for(cfg);
            AnnotateServer server(*pipeline);
            int bound = server.bind(host, port);
            if (bound < 0) {
                std::cerr << "cannot bind " << host << ":" << port << "\n";
                return 1;
            }
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "listening on " << host << ":" << bound << "\n";
            server.run();
            g_server = nullptr;
            return 0;
        }
        if (*stats_cmd) {
            for (const auto& path : stats_inputs) {
                auto name = std::filesystem::path(path).stem().string();
                std::cout << format_stats(name, stats(load_jsonl(path, Split::train, name)));
            }
            return 0;
        }
        if (*config_cmd) {
            PipelineConfig cfg;
            if (!config_path.empty()) {
                cfg = load_config(config_path);
                apply_env_overrides(cfg);
            }
            std::cout << config_to_json(cfg);
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
