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


// The hand-made fixture under tests/data/appendix, copied into a scratch
// directory so stub misses never land in the source tree.

#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "test_util.hpp"
#include "ttprag/app.hpp"

namespace ttprag::testing {

struct AppendixFixture {
    TempDir dir;
    PipelineConfig config;
    std::unique_ptr<Pipeline> pipeline;

    AppendixFixture() {
        std::filesystem::copy(data_path("appendix"), dir.path(),
                              std::filesystem::copy_options::recursive);
        config = load_config(dir / "config.json");
        pipeline = make_pipeline(config, make_backends(config));
    }

    /// Text of a query in queries.jsonl.
    std::string query(const std::string& id) const {
        auto queries = load_jsonl(dir / "gold.jsonl", Split::test, "gold");
        return queries.find(id)->text;
    }
};

}  // namespace ttprag::testing
