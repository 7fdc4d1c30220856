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


#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ttprag/app.hpp"
#include "ttprag/context.hpp"
#include "ttprag/errors.hpp"
#include "ttprag/evaluation.hpp"
#include "ttprag/generation.hpp"
#include "ttprag/reranker.hpp"
#include "ttprag/retriever.hpp"
#include "ttprag/taxonomy.hpp"
#include "ttprag/text.hpp"

namespace py = pybind11;
using namespace ttprag;

namespace {

std::vector<TechniqueId> to_ids(const std::vector<std::string>& v) {
    std::vector<TechniqueId> out;
    out.reserve(v.size());
    for (const auto& s : v) {
        out.push_back(parse_id(s));
    }
    return out;
}

std::vector<std::string> to_strs(const std::vector<TechniqueId>& v) {
    std::vector<std::string> out;
    out.reserve(v.size());
    for (auto id : v) {
        out.push_back(id.str());
    }
    return out;
}

Level level_of(const std::string& s) { return parse_level(s); }

Averaging averaging_of(const std::string& s) {
    if (s == "micro") {
        return Averaging::micro;
    }
    if (s == "macro") {
        return Averaging::macro;
    }
    throw Error("averaging must be micro or macro, got '" + s + "'");
}

py::dict request_dict(const ChatRequest& r) {
    py::list messages;
    for (const auto& m : r.messages) {
        py::dict d;
        d["role"] = m.role;
        d["content"] = m.content;
        messages.append(d);
    }
    py::dict d;
    d["model"] = r.model;
    d["messages"] = messages;
    d["temperature"] = r.temperature;
    d["top_p"] = r.top_p ? py::object(py::float_(*r.top_p)) : py::object(py::none());
    d["max_tokens"] = r.max_tokens;
    return d;
}

/// Wraps a Python callable `f(request: dict) -> str` as a chat backend. The
/// pipeline runs without the GIL, so each call takes it back.
std::shared_ptr<ChatBackend> python_backend(py::object fn) {
    if (fn.is_none()) {
        return nullptr;
    }
    auto holder = std::shared_ptr<py::object>(new py::object(std::move(fn)), [](py::object* p) {
        py::gil_scoped_acquire gil;
        delete p;
    });
    return std::make_shared<FunctionChatBackend>([holder](const ChatRequest& req) -> std::string {
        py::gil_scoped_acquire gil;
        try {
            return (*holder)(request_dict(req)).cast<std::string>();
        } catch (py::error_already_set& e) {
            throw BackendError(std::string("python backend raised: ") + e.what());
        } catch (const py::cast_error& e) {
            throw BackendError(std::string("python backend must return str: ") + e.what());
        }
    });
}

Corpus corpus_from_records(const std::vector<py::dict>& records, const std::string& split,
                           const std::string& source) {
    std::vector<AnnotatedExample> examples;
    std::size_t n = 0;
    for (const auto& r : records) {
        ++n;
        AnnotatedExample ex;
        ex.id = r.contains("id") ? py::str(r["id"]).cast<std::string>()
                                 : source + ":" + std::to_string(n);
        ex.text = r["text"].cast<std::string>();
        ex.labels = to_ids(r["labels"].cast<std::vector<std::string>>());
        if (ex.labels.empty()) {
            throw FormatError(ex.id, "labels must not be empty");
        }
        ex.split = split == "test" ? Split::test : Split::train;
        ex.source = source;
        examples.push_back(std::move(ex));
    }
    return Corpus(std::move(examples));
}

py::dict report_dict(const MetricsReport& r) {
    py::dict d;
    d["level"] = std::string(to_string(r.level));
    d["at_k"] = r.at_k;
    d["n"] = r.n_examples;
    d["tp"] = r.pooled.tp;
    d["fp"] = r.pooled.fp;
    d["fn"] = r.pooled.fn;
    d["precision"] = r.precision;
    d["recall"] = r.recall;
    d["f1"] = r.f1;
    py::list per;
    for (const auto& e : r.per_example) {
        py::dict x;
        x["id"] = e.id;
        x["tp"] = e.counts.tp;
        x["fp"] = e.counts.fp;
        x["fn"] = e.counts.fn;
        x["f1"] = e.prf.f1;
        per.append(x);
    }
    d["per_example"] = per;
    return d;
}

std::vector<Prediction> predictions_of(const std::map<std::string, std::vector<std::string>>& m) {
    std::vector<Prediction> out;
    for (const auto& [id, ids] : m) {
        out.push_back({id, to_ids(ids)});
    }
    return out;
}

py::dict result_dict(const Pipeline& p, const PipelineResult& r) {
    py::dict d;
    d["predicted"] = to_strs(r.annotation.predicted);
    py::list names;
    for (auto id : r.annotation.predicted) {
        names.append(display_name(p.taxonomy(), id));
    }
    d["names"] = names;
    py::list ex;
    for (const auto& e : r.trace.context.exemplars) {
        py::dict x;
        x["id"] = e.id;
        x["text"] = e.text;
        x["labels"] = to_strs(e.labels);
        ex.append(x);
    }
    d["exemplars"] = ex;
    d["ranked"] = to_strs(r.trace.ranked.order);
    d["context"] = r.trace.context.serialized;
    d["raw_response"] = r.annotation.raw_response;
    d["degraded"] = r.annotation.degraded;
    d["filtered_count"] = r.annotation.filtered_count;
    d["empty_prediction"] = r.empty_prediction;
    d["trace"] = trace_json(r.trace, &r.annotation);
    return d;
}

}  // namespace

PYBIND11_MODULE(_ttprag, m) {
    m.doc() = "Technique annotation pipeline: BM25 retrieval, listwise re-ranking, generation";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<BackendError>(m, "BackendError", base.ptr());
    py::register_exception<StageError>(m, "StageError", base.ptr());
    py::register_exception<MissingPrediction>(m, "MissingPrediction", base.ptr());
    py::register_exception<UnparseableResponse>(m, "UnparseableResponse", base.ptr());

    // ids and text
    m.def("parse_id", [](const std::string& s) { return parse_id(s).str(); },
          "Canonical form of a technique id; raises Error when malformed.");
    m.def("truncate", [](const std::string& s) { return truncate(parse_id(s)).str(); });
    m.def("scan_ids", [](const std::string& text) {
        std::vector<std::string> out;
        for (const auto& match : scan_ids(text)) {
            out.push_back(match.id.str());
        }
        return out;
    });
    m.def("tokenize", &tokenize);
    m.def("estimate_tokens", &estimate_tokens);

    py::class_<Taxonomy, std::shared_ptr<Taxonomy>>(m, "Taxonomy")
        .def_static("load",
                    [](const std::filesystem::path& path, const std::string& format) {
                        return std::make_shared<Taxonomy>(load_taxonomy(
                            path, format == "stix" ? TaxonomyFormat::stix : TaxonomyFormat::csv));
                    },
                    py::arg("path"), py::arg("format") = "csv")
        .def_static("from_entries",
                    [](const std::vector<std::tuple<std::string, std::string, std::string>>& rows) {
                        std::vector<TaxonomyEntry> entries;
                        for (const auto& [id, name, desc] : rows) {
                            entries.push_back({parse_id(id), name, desc, {}, false});
                        }
                        return std::make_shared<Taxonomy>(Taxonomy::from_entries(std::move(entries)));
                    })
        .def("__len__", &Taxonomy::size)
        .def("__contains__", [](const Taxonomy& t, const std::string& id) {
            auto parsed = TechniqueId::try_parse(id);
            return parsed && t.contains(*parsed);
        })
        .def("display_name", [](const Taxonomy& t, const std::string& id) {
            return display_name(t, parse_id(id));
        })
        .def("ids", [](const Taxonomy& t) {
            std::vector<std::string> out;
            for (const auto& e : t) {
                out.push_back(e.id.str());
            }
            return out;
        });

    py::class_<Corpus>(m, "Corpus")
        .def_static("load",
                    [](const std::filesystem::path& path, const std::string& split,
                       const std::string& source) {
                        return load_jsonl(path, split == "test" ? Split::test : Split::train, source);
                    },
                    py::arg("path"), py::arg("split") = "train", py::arg("source") = "corpus")
        .def_static("from_records", &corpus_from_records, py::arg("records"),
                    py::arg("split") = "train", py::arg("source") = "records")
        .def("__len__", &Corpus::size)
        .def("ids", [](const Corpus& c) {
            std::vector<std::string> out;
            for (const auto& ex : c) {
                out.push_back(ex.id);
            }
            return out;
        })
        .def("get", [](const Corpus& c, const std::string& id) -> py::object {
            const auto* ex = c.find(id);
            if (ex == nullptr) {
                return py::none();
            }
            py::dict d;
            d["id"] = ex->id;
            d["text"] = ex->text;
            d["labels"] = to_strs(ex->labels);
            return std::move(d);
        })
        .def("retrieval_view", &retrieval_view)
        .def("stats", [](const Corpus& c) {
            auto s = stats(c);
            py::dict d;
            d["examples"] = s.examples;
            d["mean_labels"] = s.mean_labels;
            d["mean_tokens"] = s.mean_tokens;
            d["unique_labels"] = s.unique_labels;
            d["unique_techniques"] = s.unique_techniques;
            return d;
        });

    py::class_<Bm25Index>(m, "Bm25Index")
        .def(py::init([](const Corpus& c, double k1, double b) { return Bm25Index::build(c, {k1, b}); }),
             py::arg("corpus"), py::arg("k1") = 1.2, py::arg("b") = 0.75)
        .def("search",
             [](const Bm25Index& idx, const std::string& query, std::size_t k) {
                 std::vector<std::pair<std::string, double>> out;
                 for (const auto& h : idx.search(query, k).hits) {
                     out.emplace_back(h.id, h.score);
                 }
                 return out;
             },
             py::arg("query"), py::arg("k") = 40)
        .def("__len__", &Bm25Index::size)
        .def_property_readonly("avg_doc_length", &Bm25Index::avg_doc_length);

    // re-ranking
    m.def("build_prompt",
          [](const std::string& query,
             const std::vector<std::tuple<std::string, std::string, std::string>>& window,
             const std::string& style, std::size_t max_description_chars) {
              CandidateList cands;
              std::size_t rank = 1;
              for (const auto& [id, name, desc] : window) {
                  cands.push_back({parse_id(id), name, desc, rank++});
              }
              PromptOptions opts{style == "rankgpt" ? PromptStyle::rankgpt : PromptStyle::framework,
                                 max_description_chars};
              std::vector<std::pair<std::string, std::string>> out;
              for (const auto& msg : build_prompt(query, cands, opts)) {
                  out.emplace_back(msg.role, msg.content);
              }
              return out;
          },
          py::arg("query"), py::arg("window"), py::arg("style") = "framework",
          py::arg("max_description_chars") = 400,
          "(role, content) messages for one window of (id, name, description) candidates.");
    m.def("parse_ranking",
          [](const std::string& response, const std::vector<std::string>& window) {
              CandidateList cands;
              for (const auto& id : window) {
                  cands.push_back({parse_id(id), {}, {}, 0});
              }
              return to_strs(parse_ranking(response, cands));
          });
    m.def("window_offsets", [](std::size_t n, std::size_t window, std::size_t overlap) {
        return make_window_plan(n, window, overlap).offsets;
    });

    // scoring
    m.def("score_sets",
          [](const std::vector<std::string>& pred, const std::vector<std::string>& gold,
             const std::string& level) {
              const auto lv = level_of(level);
              const auto pi = to_ids(pred);
              const auto gi = to_ids(gold);
              auto c = score_sets(LabelSet(pi, lv), LabelSet(gi, lv));
              return std::make_tuple(c.tp, c.fp, c.fn);
          },
          py::arg("pred"), py::arg("gold"), py::arg("level") = "sub");
    m.def("evaluate",
          [](const std::map<std::string, std::vector<std::string>>& predictions, const Corpus& gold,
             const std::string& level, const std::string& averaging) {
              auto preds = predictions_of(predictions);
              return report_dict(evaluate(preds, gold, level_of(level), averaging_of(averaging)));
          },
          py::arg("predictions"), py::arg("gold"), py::arg("level") = "sub",
          py::arg("averaging") = "micro");
    m.def("evaluate_at_k",
          [](const std::map<std::string, std::vector<std::string>>& rankings, const Corpus& gold,
             std::size_t k, const std::string& level) {
              auto preds = predictions_of(rankings);
              return report_dict(evaluate_at_k(preds, gold, k, level_of(level)));
          },
          py::arg("rankings"), py::arg("gold"), py::arg("k"), py::arg("level") = "sub");

    // pipeline
    py::class_<Pipeline, std::shared_ptr<Pipeline>>(m, "Pipeline")
        .def(py::init([](const Corpus& corpus, std::shared_ptr<Taxonomy> taxonomy,
                         py::object reranker, py::object generator, std::size_t top_k,
                         std::size_t exemplars, std::size_t window, std::size_t overlap,
                         std::size_t context_budget, bool strict_candidate_filter) {
                 PipelineHyper h;
                 h.top_k = top_k;
                 h.exemplars = exemplars;
                 h.window = window;
                 h.overlap = overlap;
                 h.context_budget = context_budget;
                 h.generation.strict_candidate_filter = strict_candidate_filter;
                 return std::make_shared<Pipeline>(corpus, std::move(taxonomy),
                                                   python_backend(std::move(reranker)),
                                                   python_backend(std::move(generator)), h);
             }),
             py::arg("corpus"), py::arg("taxonomy"), py::arg("reranker"), py::arg("generator"),
             py::arg("top_k") = 40, py::arg("exemplars") = 3, py::arg("window") = 40,
             py::arg("overlap") = 20, py::arg("context_budget") = 2048,
             py::arg("strict_candidate_filter") = false,
             "Backends are callables taking a request dict and returning the reply text.")
        .def_static("from_config",
                    [](const std::filesystem::path& path) {
                        auto config = load_config(path);
                        apply_env_overrides(config);
                        return std::shared_ptr<Pipeline>(make_pipeline(config, make_backends(config)));
                    })
        .def("run",
             [](const Pipeline& p, const std::string& query, const std::string& id) {
                 PipelineResult r;
                 {
                     py::gil_scoped_release release;
                     r = p.run(query, id);
                 }
                 return result_dict(p, r);
             },
             py::arg("query"), py::arg("id") = "")
        .def("export_training",
             [](const Pipeline& p, std::size_t oversample_multi, std::size_t concurrency) {
                 ExportResult r;
                 {
                     py::gil_scoped_release release;
                     r = export_training(p, p.corpus(), {oversample_multi, concurrency});
                 }
                 py::list out;
                 for (const auto& rec : r.records) {
                     py::dict d;
                     d["example_id"] = rec.example_id;
                     d["instruction"] = rec.instruction;
                     d["input"] = rec.input;
                     d["output"] = rec.output;
                     out.append(d);
                 }
                 return out;
             },
             py::arg("oversample_multi") = 3, py::arg("concurrency") = 1)
        .def("__len__", [](const Pipeline& p) { return p.corpus().size(); });

    m.def("generator_instruction", [] { return std::string(generator_instruction()); });
}
