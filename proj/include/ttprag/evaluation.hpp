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
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ttprag/corpus.hpp"
#include "ttprag/taxonomy.hpp"

namespace ttprag {

enum class Level { technique, sub };
enum class Averaging { micro, macro };

std::string_view to_string(Level level) noexcept;
/// Accepts "technique" / "sub" (also "sub-technique"). Throws Error.
Level parse_level(std::string_view text);

/// Unique ids at one granularity. At technique level every id is truncated.
class LabelSet {
  public:
    LabelSet(std::span<const TechniqueId> ids, Level level);
    Level level() const noexcept { return level_; }
    const std::set<TechniqueId>& ids() const noexcept { return ids_; }
    std::size_t size() const noexcept { return ids_.size(); }

  private:
    std::set<TechniqueId> ids_;
    Level level_;
};

struct Counts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    Counts& operator+=(const Counts& o) noexcept {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    friend bool operator==(const Counts&, const Counts&) = default;
};

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

/// tp = |pred & gold|, fp = |pred - gold|, fn = |gold - pred|.
/// Throws LevelMismatch.
Counts score_sets(const LabelSet& pred, const LabelSet& gold);

/// P = tp/(tp+fp), R = tp/(tp+fn), F1 = 2PR/(P+R); each is 0 when undefined.
Prf prf(const Counts& counts) noexcept;

/// One system output for one example. For ranking evaluation `predicted`
/// is the ranked list, best first.
struct Prediction {
    std::string id;
    std::vector<TechniqueId> predicted;
};

struct ExampleScore {
    std::string id;
    Counts counts;
    Prf prf;
};

struct MetricsReport {
    std::string system;
    std::string dataset;
    Level level = Level::sub;
    /// 0 for end-to-end evaluation, otherwise the k of @k.
    std::size_t at_k = 0;
    Averaging averaging = Averaging::micro;
    std::size_t n_examples = 0;
    Counts pooled;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::vector<ExampleScore> per_example;
};

/// Scores predictions against every gold example (gold order). Predictions for
/// ids not in `gold` are ignored. Micro-averaging pools counts; macro averages
/// per-example P/R and takes F1 of those means.
/// Throws MissingPrediction listing the gold ids without a prediction, and
/// Error on a duplicated prediction id.
MetricsReport evaluate(std::span<const Prediction> predictions, const Corpus& gold, Level level,
                       Averaging averaging = Averaging::micro);

/// Ranking metrics: per example the prediction is the first k distinct ids of
/// the ranking after level truncation.
MetricsReport evaluate_at_k(std::span<const Prediction> rankings, const Corpus& gold,
                            std::size_t k, Level level, Averaging averaging = Averaging::micro);

/// Percentages with two decimals, one row per report:
/// system,dataset,level,mode,n,precision,recall,f1
std::string report_csv(std::span<const MetricsReport> reports);
/// Aligned plain-text rendering of the same rows.
std::string report_text(std::span<const MetricsReport> reports);

/// Prediction interchange: {"id": str, "predicted": [str]} per line.
std::vector<Prediction> load_predictions(const std::filesystem::path& path);
std::vector<Prediction> parse_predictions(std::istream& in);
void write_predictions(std::ostream& out, std::span<const Prediction> predictions);

}  // namespace ttprag
