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

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

namespace ttprag {

struct ChatMessage {
    std::string role;
    std::string content;
    friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

struct ChatRequest {
    std::string model;
    std::vector<ChatMessage> messages;
    double temperature = 0.0;
    std::optional<double> top_p;
    std::size_t max_tokens = 1024;
};

/// Chat-completion request body: {model, messages, temperature, top_p?, max_tokens}.
std::string request_body(const ChatRequest& request);

/// Stable key of a request (hex FNV-1a of its body); names stub replay files.
std::string request_key(const ChatRequest& request);

/// Extracts choices[0].message.content from a chat-completion response body.
/// Throws BackendError when the shape is wrong.
std::string response_content(const std::string& body);

/// Anything that answers chat requests. Implementations must be safe to call
/// from several threads at once.
class ChatBackend {
  public:
    virtual ~ChatBackend() = default;
    /// Returns the first choice's message content; throws BackendError.
    virtual std::string complete(const ChatRequest& request) = 0;
};

struct HttpBackendOptions {
    /// Full endpoint URL, e.g. https://host/v1/chat/completions.
    std::string url;
    std::string api_key;
    std::chrono::seconds timeout{120};
    int retries = 2;
    std::chrono::milliseconds backoff{500};
    /// Upper bound on requests in flight across all callers.
    int max_concurrency = 4;
};

/// OpenAI-style chat-completion client over HTTP(S) with bearer auth.
/// Transport errors, 429 and 5xx are retried with doubling backoff.
class HttpChatBackend final : public ChatBackend {
  public:
    explicit HttpChatBackend(HttpBackendOptions options);
    ~HttpChatBackend() override;
    std::string complete(const ChatRequest& request) override;

  private:
    HttpBackendOptions options_;
    std::string origin_;
    std::string path_;
    std::unique_ptr<std::counting_semaphore<>> slots_;
};

/// Offline replay. A request is answered from, in order:
///   1. `<dir>/<request_key>.txt`
///   2. the first rule in `<dir>/rules.json` whose every `contains` string
///      occurs in the request's message contents (optionally also matching
///      `model`); the rule gives `response` inline or `response_file`.
/// Misses are written to `<dir>/misses/<key>.json` and raise BackendError.
class StubChatBackend final : public ChatBackend {
  public:
    explicit StubChatBackend(std::filesystem::path dir);
    std::string complete(const ChatRequest& request) override;

  private:
    struct Rule {
        std::vector<std::string> contains;
        std::optional<std::string> model;
        std::string response;
    };
    std::filesystem::path dir_;
    std::vector<Rule> rules_;
    std::mutex miss_mutex_;
};

/// Forwards to `inner` and stores every answer as `<dir>/<key>.txt`, producing
/// a directory StubChatBackend can replay.
class RecordingChatBackend final : public ChatBackend {
  public:
    RecordingChatBackend(std::shared_ptr<ChatBackend> inner, std::filesystem::path dir);
    std::string complete(const ChatRequest& request) override;

  private:
    std::shared_ptr<ChatBackend> inner_;
    std::filesystem::path dir_;
    std::mutex mutex_;
};

/// Adapts a callable; handy for tests and language bindings.
class FunctionChatBackend final : public ChatBackend {
  public:
    using Fn = std::function<std::string(const ChatRequest&)>;
    explicit FunctionChatBackend(Fn fn) : fn_(std::move(fn)) {}
    std::string complete(const ChatRequest& request) override { return fn_(request); }

  private:
    Fn fn_;
};

}  // namespace ttprag
