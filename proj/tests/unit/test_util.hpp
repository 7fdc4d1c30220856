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

#include <atomic>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "ttprag/corpus.hpp"
#include "ttprag/taxonomy.hpp"

namespace ttprag::testing {

inline std::filesystem::path data_path(const std::string& rel) {
    return std::filesystem::path(TTPRAG_TEST_DATA) / rel;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& content) {
    std::filesystem::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << content;
}

/// Scratch directory removed on scope exit.
class TempDir {
  public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("ttprag-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

  private:
    std::filesystem::path path_;
};

inline std::vector<TechniqueId> ids(std::initializer_list<const char*> list) {
    std::vector<TechniqueId> out;
    for (const char* s : list) {
        out.push_back(TechniqueId::parse(s));
    }
    return out;
}

struct Row {
    std::string id;
    std::string text;
    std::vector<TechniqueId> labels;
};

inline Corpus make_corpus(const std::vector<Row>& rows, Split split = Split::train) {
    std::vector<AnnotatedExample> examples;
    for (const auto& r : rows) {
        examples.push_back({r.id, r.text, r.labels, split, "fixture"});
    }
    return Corpus(std::move(examples));
}

/// Taxonomy of the given ids named "Name <id>"; missing parents of
/// sub-techniques are added.
inline Taxonomy make_taxonomy(const std::vector<TechniqueId>& list) {
    std::set<TechniqueId> all(list.begin(), list.end());
    for (auto id : list) {
        all.insert(id.truncated());
    }
    std::vector<TaxonomyEntry> entries;
    for (auto id : all) {
        entries.push_back({id, "Name " + id.str(), "Description of " + id.str() + ".", {}, false});
    }
    return Taxonomy::from_entries(std::move(entries));
}

}  // namespace ttprag::testing
