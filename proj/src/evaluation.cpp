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

#include "ttprag/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "json.hpp"
#include "ttprag/errors.hpp"
#include "ttprag/text.hpp"

namespace ttprag {

std::string_view to_string(Level level) noexcept {
    return level == Level::technique ? "technique" : "sub";
}

Level parse_level(std::string_view text) {
    const auto t = to_lower_ascii(trim(text));
    if (t == "technique" || t == "tech") {
        return Level::technique;
    }
    if (t == "sub" || t == "sub-technique" || t == "subtechnique") {
        return Level::sub;
    }
    throw Error("unknown level '" + std::string(text) + "' (expected technique or sub)");
}

LabelSet::LabelSet(std::span<const TechniqueId> ids, Level level) : level_(level) {
    for (auto id : ids) {
        ids_.insert(level == Level::technique ? id.truncated() : id);
    }
}

Counts score_sets(const LabelSet& pred, const LabelSet& gold) {
    if (pred.level() != gold.level()) {
        throw LevelMismatch();
    }
    Counts c;
    for (auto id : pred.ids()) {
        if (gold.ids().count(id) != 0) {
            ++c.tp;
        } else {
            ++c.fp;
        }
    }
    c.fn = gold.size() - c.tp;
    return c;
}

Prf prf(const Counts& c) noexcept {
    Prf out;
    if (c.tp + c.fp > 0) {
        out.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    }
    if (c.tp + c.fn > 0) {
        out.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
    }
    if (out.precision + out.recall > 0.0) {
        out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
    }
    return out;
}

namespace {

std::unordered_map<std::string, const Prediction*> index_predictions(
    std::span<const Prediction> predictions) {
    std::unordered_map<std::string, const Prediction*> by_id;
    for (const auto& p : predictions) {
        if (!by_id.emplace(p.id, &p).second) {
            throw Error("duplicate prediction for id " + p.id);
        }
    }
    return by_id;
}

template <typename Select>
MetricsReport score_all(std::span<const Prediction> predictions, const Corpus& gold, Level level,
                        Averaging averaging, std::size_t at_k, Select select) {
    const auto by_id = index_predictions(predictions);
    std::vector<std::string> missing;
    for (const auto& ex : gold) {
        if (by_id.count(ex.id) == 0) {
            missing.push_back(ex.id);
        }
    }
    if (!missing.empty()) {
        throw MissingPrediction(std::move(missing));
    }

    MetricsReport report;
    report.level = level;
    report.at_k = at_k;
    report.averaging = averaging;
    report.n_examples = gold.size();
    report.per_example.reserve(gold.size());
    double sum_p = 0.0;
    double sum_r = 0.0;
    for (const auto& ex : gold) {
        const auto pred_ids = select(by_id.at(ex.id)->predicted);
        const auto counts = score_sets(LabelSet(pred_ids, level), LabelSet(ex.labels, level));
        ExampleScore score{ex.id, counts, prf(counts)};
        report.pooled += counts;
        sum_p += score.prf.precision;
        sum_r += score.prf.recall;
        report.per_example.push_back(std::move(score));
    }
    if (averaging == Averaging::micro) {
        const auto total = prf(report.pooled);
        report.precision = total.precision;
        report.recall = total.recall;
        report.f1 = total.f1;
    } else if (report.n_examples > 0) {
        report.precision = sum_p / static_cast<double>(report.n_examples);
        report.recall = sum_r / static_cast<double>(report.n_examples);
        if (report.precision + report.recall > 0.0) {
            report.f1 = 2.0 * report.precision * report.recall / (report.precision + report.recall);
        }
    }
    return report;
}

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v * 100.0);
    return buf;
}

std::string mode_label(const MetricsReport& r) {
    std::string mode = r.at_k == 0 ? "end_to_end" : "at_" + std::to_string(r.at_k);
    if (r.averaging == Averaging::macro) {
        mode += "_macro";
    }
    return mode;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) {
        return s;
    }
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    return out + "\"";
}

}  // namespace

MetricsReport evaluate(std::span<const Prediction> predictions, const Corpus& gold, Level level,
                       Averaging averaging) {
    return score_all(predictions, gold, level, averaging, 0,
                     [](const std::vector<TechniqueId>& ids) { return ids; });
}

MetricsReport evaluate_at_k(std::span<const Prediction> rankings, const Corpus& gold,
                            std::size_t k, Level level, Averaging averaging) {
    if (k == 0) {
        throw Error("k must be at least 1");
    }
    return score_all(rankings, gold, level, averaging, k,
                     [&](const std::vector<TechniqueId>& ranked) {
                         std::vector<TechniqueId> top;
                         for (auto id : ranked) {
                             const auto v = level == Level::technique ? id.truncated() : id;
                             if (std::find(top.begin(), top.end(), v) == top.end()) {
                                 top.push_back(v);
                                 if (top.size() == k) {
                                     break;
                                 }
                             }
                         }
                         return top;
                     });
}

std::string report_csv(std::span<const MetricsReport> reports) {
    std::string out = "system,dataset,level,mode,n,precision,recall,f1\n";
    for (const auto& r : reports) {
        out += csv_field(r.system) + ',' + csv_field(r.dataset) + ',' +
               std::string(to_string(r.level)) + ',' + mode_label(r) + ',' +
               std::to_string(r.n_examples) + ',' + percent(r.precision) + ',' +
               percent(r.recall) + ',' + percent(r.f1) + '\n';
    }
    return out;
}

std::string report_text(std::span<const MetricsReport> reports) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"System", "Dataset", "Level", "Mode", "N", "Prec.", "Rec.", "F1"});
    for (const auto& r : reports) {
        rows.push_back({r.system, r.dataset, std::string(to_string(r.level)), mode_label(r),
                        std::to_string(r.n_examples), percent(r.precision), percent(r.recall),
                        percent(r.f1)});
    }
    std::vector<std::size_t> width(rows.front().size(), 0);
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            width[c] = std::max(width[c], row[c].size());
        }
    }
    std::string out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::string line;
        for (std::size_t c = 0; c < rows[i].size(); ++c) {
            const auto& cell = rows[i][c];
            const bool numeric = c >= 4;
            const std::string pad(width[c] - cell.size(), ' ');
            line += numeric ? pad + cell : cell + pad;
            if (c + 1 < rows[i].size()) {
                line += "  ";
            }
        }
        while (!line.empty() && line.back() == ' ') {
            line.pop_back();
        }
        out += line + '\n';
        if (i == 0) {
            std::size_t total = 0;
            for (auto w : width) {
                total += w;
            }
            out += std::string(total + 2 * (width.size() - 1), '-') + '\n';
        }
    }
    return out;
}

std::vector<Prediction> parse_predictions(std::istream& in) {
    std::vector<Prediction> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto locator = "line " + std::to_string(line_no);
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw FormatError(locator, "invalid JSON");
        }
        if (!rec.is_object() || !rec.contains("id") || !rec.contains("predicted") ||
            !rec["predicted"].is_array()) {
            throw FormatError(locator, "expected {\"id\": ..., \"predicted\": [...]}");
        }
        Prediction p;
        p.id = rec["id"].is_string() ? rec["id"].get<std::string>() : rec["id"].dump();
        for (const auto& v : rec["predicted"]) {
            auto id = v.is_string() ? TechniqueId::try_parse(v.get<std::string>()) : std::nullopt;
            if (!id) {
                throw FormatError(locator, "malformed technique id " + v.dump());
            }
            p.predicted.push_back(*id);
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(path.string(), "cannot open file");
    }
    return parse_predictions(in);
}

void write_predictions(std::ostream& out, std::span<const Prediction> predictions) {
    for (const auto& p : predictions) {
        nlohmann::ordered_json rec;
        rec["id"] = p.id;
        auto& ids = rec["predicted"] = nlohmann::ordered_json::array();
        for (auto id : p.predicted) {
            ids.push_back(id.str());
        }
        out << rec.dump() << '\n';
    }
}

}  // namespace ttprag
