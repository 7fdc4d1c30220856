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


// Reference implementations used as test oracles. They favour the most
// literal reading of each formula over speed.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace ttprag::testing {

struct OracleHit {
    std::size_t doc;
    double score;
};

/// Exhaustive BM25 over pre-tokenized documents: every document scored
/// independently, zero scores dropped, stable sort by descending score.
inline std::vector<OracleHit> bm25_oracle(const std::vector<std::vector<std::string>>& docs,
                                          const std::vector<std::string>& query, double k1,
                                          double b) {
    const double n = static_cast<double>(docs.size());
    double total = 0;
    for (const auto& d : docs) {
        total += static_cast<double>(d.size());
    }
    const double avg = total / n;
    std::vector<OracleHit> all;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        double score = 0;
        for (const auto& t : query) {
            const double tf = static_cast<double>(std::count(docs[i].begin(), docs[i].end(), t));
            if (tf == 0) {
                continue;
            }
            double df = 0;
            for (const auto& d : docs) {
                df += std::find(d.begin(), d.end(), t) != d.end() ? 1 : 0;
            }
            const double idf = std::log(1.0 + (n - df + 0.5) / (df + 0.5));
            const double len = static_cast<double>(docs[i].size());
            score += idf * tf / (tf + k1 * (1.0 - b + b * len / avg));
        }
        if (score > 0) {
            all.push_back({i, score});
        }
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const OracleHit& x, const OracleHit& y) { return x.score > y.score; });
    return all;
}

struct OracleCounts {
    std::size_t tp = 0, fp = 0, fn = 0;
};

/// Counts by explicit membership loops over string ids.
inline OracleCounts count_sets(const std::vector<std::string>& pred,
                               const std::vector<std::string>& gold) {
    std::set<std::string> p(pred.begin(), pred.end());
    std::set<std::string> g(gold.begin(), gold.end());
    OracleCounts c;
    for (const auto& x : p) {
        (g.count(x) ? c.tp : c.fp)++;
    }
    for (const auto& x : g) {
        if (!p.count(x)) {
            c.fn++;
        }
    }
    return c;
}

/// "T1059.001" -> "T1059" by plain string cut.
inline std::string cut(const std::string& id) { return id.substr(0, 5); }

inline double safe_div(double a, double b) { return b == 0 ? 0.0 : a / b; }

}  // namespace ttprag::testing
