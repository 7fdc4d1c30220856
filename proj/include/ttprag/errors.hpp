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

#include <stdexcept>
#include <string>
#include <vector>

namespace ttprag {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class MalformedId : public Error {
  public:
    explicit MalformedId(const std::string& text)
        : Error("malformed technique id: '" + text + "'"), text_(text) {}
    const std::string& text() const noexcept { return text_; }

  private:
    std::string text_;
};

/// Input file did not match its format. `locator` names the row/record.
class FormatError : public Error {
  public:
    FormatError(std::string locator, const std::string& reason)
        : Error(locator.empty() ? reason : locator + ": " + reason), locator_(std::move(locator)) {}
    const std::string& locator() const noexcept { return locator_; }

  private:
    std::string locator_;
};

class DuplicateId : public Error {
  public:
    explicit DuplicateId(const std::string& id) : Error("duplicate id: " + id), id_(id) {}
    const std::string& id() const noexcept { return id_; }

  private:
    std::string id_;
};

class EmptyCorpus : public Error {
  public:
    EmptyCorpus() : Error("corpus is empty") {}
};

class UnparseableResponse : public Error {
  public:
    UnparseableResponse() : Error("response contains no ranking line") {}
};

class BackendError : public Error {
  public:
    using Error::Error;
};

class QueryTooLong : public Error {
  public:
    QueryTooLong(std::size_t estimate, std::size_t budget)
        : Error("query alone needs ~" + std::to_string(estimate) + " tokens, budget is " +
                std::to_string(budget)) {}
};

class LevelMismatch : public Error {
  public:
    LevelMismatch() : Error("label sets are at different levels") {}
};

class MissingPrediction : public Error {
  public:
    explicit MissingPrediction(std::vector<std::string> ids)
        : Error(describe(ids)), ids_(std::move(ids)) {}
    const std::vector<std::string>& ids() const noexcept { return ids_; }

  private:
    static std::string describe(const std::vector<std::string>& ids) {
        std::string out = "missing prediction for " + std::to_string(ids.size()) + " example(s):";
        for (const auto& id : ids) {
            out += ' ';
            out += id;
        }
        return out;
    }
    std::vector<std::string> ids_;
};

/// Raised by a pipeline run; `stage` names the step that failed.
class StageError : public Error {
  public:
    StageError(std::string stage, const std::string& what)
        : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

  private:
    std::string stage_;
};

}  // namespace ttprag
