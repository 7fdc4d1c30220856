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

#include "ttprag/chat.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "ttprag/errors.hpp"
#include "ttprag/text.hpp"

namespace ttprag {

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& data) {
    std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out << data;
    }
    std::filesystem::rename(tmp, path);
}

struct SlotGuard {
    explicit SlotGuard(std::counting_semaphore<>& s) : sem(s) { sem.acquire(); }
    ~SlotGuard() { sem.release(); }
    std::counting_semaphore<>& sem;
};

}  // namespace

std::string request_body(const ChatRequest& request) {
    nlohmann::json body;
    body["model"] = request.model;
    auto& messages = body["messages"] = nlohmann::json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", m.role}, {"content", m.content}});
    }
    body["temperature"] = request.temperature;
    if (request.top_p) {
        body["top_p"] = *request.top_p;
    }
    body["max_tokens"] = request.max_tokens;
    return body.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

std::string request_key(const ChatRequest& request) {
    return hex64(fnv1a64(request_body(request)));
}

std::string response_content(const std::string& body) {
    try {
        const auto json = nlohmann::json::parse(body);
        const auto& content = json.at("choices").at(0).at("message").at("content");
        if (content.is_null()) {
            return {};
        }
        return content.get<std::string>();
    } catch (const std::exception& e) {
        throw BackendError(std::string("unexpected chat response: ") + e.what());
    }
}

HttpChatBackend::HttpChatBackend(HttpBackendOptions options) : options_(std::move(options)) {
    const auto& url = options_.url;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error("backend url needs a scheme: '" + url + "'");
    }
    const auto path_start = url.find('/', scheme_end + 3);
    origin_ = url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "/v1/chat/completions" : url.substr(path_start);
#ifndef TTPRAG_WITH_OPENSSL
    if (url.rfind("https://", 0) == 0) {
        throw Error("built without TLS support; cannot reach " + url);
    }
#endif
    slots_ = std::make_unique<std::counting_semaphore<>>(std::max(1, options_.max_concurrency));
}

HttpChatBackend::~HttpChatBackend() = default;

std::string HttpChatBackend::complete(const ChatRequest& request) {
    const auto body = request_body(request);
    httplib::Headers headers;
    if (!options_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + options_.api_key);
    }
    std::string last_error;
    auto delay = options_.backoff;
    for (int attempt = 0; attempt <= options_.retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(delay);
            delay *= 2;
        }
        httplib::Result res;
        {
            SlotGuard slot(*slots_);
            httplib::Client client(origin_);
            client.set_connection_timeout(options_.timeout);
            client.set_read_timeout(options_.timeout);
            client.set_write_timeout(options_.timeout);
            res = client.Post(path_, headers, body, "application/json");
        }
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 200) {
            return response_content(res->body);
        }
        last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
        if (res->status != 429 && res->status < 500) {
            break;
        }
    }
    throw BackendError(last_error);
}

StubChatBackend::StubChatBackend(std::filesystem::path dir) : dir_(std::move(dir)) {
    if (!std::filesystem::is_directory(dir_)) {
        throw Error("stub directory does not exist: " + dir_.string());
    }
    const auto rules_path = dir_ / "rules.json";
    if (!std::filesystem::exists(rules_path)) {
        return;
    }
    nlohmann::json rules;
    try {
        rules = nlohmann::json::parse(read_file(rules_path));
    } catch (const nlohmann::json::parse_error&) {
        throw FormatError(rules_path.string(), "invalid JSON");
    }
    if (!rules.is_array()) {
        throw FormatError(rules_path.string(), "expected an array of rules");
    }
    for (std::size_t i = 0; i < rules.size(); ++i) {
        const auto& r = rules[i];
        const auto locator = rules_path.string() + "[" + std::to_string(i) + "]";
        if (!r.is_object()) {
            throw FormatError(locator, "rule is not an object");
        }
        Rule rule;
        try {
            if (r.contains("contains")) {
                const auto& c = r["contains"];
                if (c.is_string()) {
                    rule.contains.push_back(c.get<std::string>());
                } else if (c.is_array()) {
                    for (const auto& s : c) {
                        rule.contains.push_back(s.get<std::string>());
                    }
                }
            }
            if (r.contains("model")) {
                rule.model = r["model"].get<std::string>();
            }
            if (r.contains("response")) {
                rule.response = r["response"].get<std::string>();
            } else if (r.contains("response_file")) {
                const auto path = dir_ / r["response_file"].get<std::string>();
                if (!std::filesystem::exists(path)) {
                    throw FormatError(locator, "response_file not found: " + path.string());
                }
                rule.response = read_file(path);
            } else {
                throw FormatError(locator, "rule needs 'response' or 'response_file'");
            }
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(locator, e.what());
        }
        rules_.push_back(std::move(rule));
    }
}

std::string StubChatBackend::complete(const ChatRequest& request) {
    const auto key = request_key(request);
    const auto exact = dir_ / (key + ".txt");
    if (std::filesystem::exists(exact)) {
        return read_file(exact);
    }
    std::string haystack;
    for (const auto& m : request.messages) {
        haystack += m.content;
        haystack += '\n';
    }
    for (const auto& rule : rules_) {
        if (rule.model && *rule.model != request.model) {
            continue;
        }
        const bool all = std::all_of(rule.contains.begin(), rule.contains.end(),
                                     [&](const std::string& s) {
                                         return haystack.find(s) != std::string::npos;
                                     });
        if (all) {
            return rule.response;
        }
    }
    {
        std::lock_guard lock(miss_mutex_);
        write_file(dir_ / "misses" / (key + ".json"), request_body(request));
    }
    throw BackendError("no stub response for request " + key);
}

RecordingChatBackend::RecordingChatBackend(std::shared_ptr<ChatBackend> inner,
                                           std::filesystem::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
}

std::string RecordingChatBackend::complete(const ChatRequest& request) {
    auto content = inner_->complete(request);
    std::lock_guard lock(mutex_);
    write_file(dir_ / (request_key(request) + ".txt"), content);
    return content;
}

}  // namespace ttprag
