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

#include "ttprag/taxonomy.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "ttprag/errors.hpp"
#include "ttprag/text.hpp"

namespace ttprag {

namespace {

bool is_digit(char c) noexcept { return c >= '0' && c <= '9'; }
bool is_alnum(char c) noexcept {
    return is_digit(c) || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

std::uint16_t digits_value(std::string_view digits) noexcept {
    std::uint16_t value = 0;
    for (char c : digits) {
        value = static_cast<std::uint16_t>(value * 10 + (c - '0'));
    }
    return value;
}

bool all_digits(std::string_view text) noexcept {
    return std::all_of(text.begin(), text.end(), is_digit);
}

}  // namespace

std::optional<TechniqueId> TechniqueId::try_parse(std::string_view text) noexcept {
    text = trim(text);
    if (text.size() != 5 && text.size() != 9) {
        return std::nullopt;
    }
    if (text[0] != 'T' && text[0] != 't') {
        return std::nullopt;
    }
    const auto technique = text.substr(1, 4);
    if (!all_digits(technique)) {
        return std::nullopt;
    }
    if (text.size() == 5) {
        return TechniqueId(digits_value(technique));
    }
    const auto sub = text.substr(6, 3);
    if (text[5] != '.' || !all_digits(sub)) {
        return std::nullopt;
    }
    return TechniqueId(digits_value(technique), digits_value(sub));
}

TechniqueId TechniqueId::parse(std::string_view text) {
    if (auto id = try_parse(text)) {
        return *id;
    }
    throw MalformedId(std::string(text));
}

std::string TechniqueId::str() const {
    std::array<char, 16> buf{};
    if (is_sub()) {
        std::snprintf(buf.data(), buf.size(), "T%04u.%03u", unsigned(technique_), unsigned(sub_));
    } else {
        std::snprintf(buf.data(), buf.size(), "T%04u", unsigned(technique_));
    }
    return buf.data();
}

std::vector<IdMatch> scan_ids(std::string_view text) {
    std::vector<IdMatch> out;
    const std::size_t n = text.size();
    for (std::size_t i = 0; i + 5 <= n; ++i) {
        if (text[i] != 'T' && text[i] != 't') {
            continue;
        }
        if (i > 0 && is_alnum(text[i - 1])) {
            continue;
        }
        if (!all_digits(text.substr(i + 1, 4))) {
            continue;
        }
        std::size_t end = i + 5;
        std::optional<std::uint16_t> sub;
        if (end + 4 <= n && text[end] == '.' && all_digits(text.substr(end + 1, 3))) {
            if (end + 4 < n && is_alnum(text[end + 4])) {
                // "T1071.001x", "T1059.0011": glued, not an id
                i = end + 3;
                continue;
            }
            sub = digits_value(text.substr(end + 1, 3));
            end += 4;
        } else if (end < n && is_alnum(text[end])) {
            continue;
        }
        out.push_back({i, TechniqueId(digits_value(text.substr(i + 1, 4)), sub)});
        i = end - 1;
    }
    return out;
}

Taxonomy Taxonomy::from_entries(std::vector<TaxonomyEntry> entries) {
    Taxonomy tax;
    tax.index_.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto& entry = entries[i];
        entry.parent = entry.id.is_sub() ? std::optional(entry.id.truncated()) : std::nullopt;
        if (!tax.index_.emplace(entry.id, i).second) {
            throw DuplicateId(entry.id.str());
        }
    }
    for (const auto& entry : entries) {
        if (entry.parent && tax.index_.count(*entry.parent) == 0) {
            throw FormatError(entry.id.str(),
                              "sub-technique has no parent entry " + entry.parent->str());
        }
    }
    tax.entries_ = std::move(entries);
    return tax;
}

const TaxonomyEntry* Taxonomy::find(TechniqueId id) const noexcept {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &entries_[it->second];
}

const TaxonomyEntry& Taxonomy::at(TechniqueId id) const {
    if (const auto* entry = find(id)) {
        return *entry;
    }
    throw Error("technique not in taxonomy: " + id.str());
}

bool CsvReader::next(std::vector<std::string>& fields) {
    fields.clear();
    int c = in_.get();
    if (c == std::char_traits<char>::eof()) {
        return false;
    }
    record_line_ = line_;
    std::string field;
    bool quoted = false;
    bool field_started_quoted = false;
    for (;; c = in_.get()) {
        if (c == std::char_traits<char>::eof()) {
            if (quoted) {
                throw FormatError("line " + std::to_string(record_line_),
                                  "unterminated quoted field");
            }
            fields.push_back(std::move(field));
            return true;
        }
        const char ch = static_cast<char>(c);
        if (quoted) {
            if (ch == '"') {
                if (in_.peek() == '"') {
                    in_.get();
                    field.push_back('"');
                } else {
                    quoted = false;
                }
            } else {
                if (ch == '\n') {
                    ++line_;
                }
                field.push_back(ch);
            }
            continue;
        }
        if (ch == '"' && field.empty() && !field_started_quoted) {
            quoted = true;
            field_started_quoted = true;
        } else if (ch == ',') {
            fields.push_back(std::move(field));
            field.clear();
            field_started_quoted = false;
        } else if (ch == '\r' && in_.peek() == '\n') {
            continue;
        } else if (ch == '\n') {
            ++line_;
            fields.push_back(std::move(field));
            return true;
        } else {
            field.push_back(ch);
        }
    }
}

Taxonomy parse_taxonomy_csv(std::istream& in) {
    CsvReader reader(in);
    std::vector<std::string> fields;
    if (!reader.next(fields)) {
        throw FormatError("line 1", "missing header");
    }
    if (!fields.empty() && fields[0].rfind("\xEF\xBB\xBF", 0) == 0) {
        fields[0].erase(0, 3);
    }
    std::array<int, 3> column{-1, -1, -1};
    for (std::size_t i = 0; i < fields.size(); ++i) {
        const auto name = to_lower_ascii(trim(fields[i]));
        if (name == "id") {
            column[0] = static_cast<int>(i);
        } else if (name == "name") {
            column[1] = static_cast<int>(i);
        } else if (name == "description") {
            column[2] = static_cast<int>(i);
        }
    }
    if (column[0] < 0 || column[1] < 0) {
        throw FormatError("line 1", "header must contain id,name[,description]");
    }

    std::vector<TaxonomyEntry> entries;
    while (reader.next(fields)) {
        const auto locator = "line " + std::to_string(reader.record_line());
        if (fields.size() == 1 && trim(fields[0]).empty()) {
            continue;
        }
        auto field = [&](int col) -> std::string {
            return col >= 0 && static_cast<std::size_t>(col) < fields.size() ? fields[col]
                                                                              : std::string();
        };
        if (static_cast<std::size_t>(std::max(column[0], column[1])) >= fields.size()) {
            throw FormatError(locator, "expected at least " +
                                           std::to_string(std::max(column[0], column[1]) + 1) +
                                           " fields");
        }
        auto id = TechniqueId::try_parse(field(column[0]));
        if (!id) {
            throw FormatError(locator, "malformed technique id '" + field(column[0]) + "'");
        }
        entries.push_back({*id, std::string(trim(field(column[1]))), field(column[2]), {}, false});
    }
    return Taxonomy::from_entries(std::move(entries));
}

Taxonomy parse_taxonomy_stix(std::istream& in) {
    nlohmann::json bundle;
    try {
        bundle = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("byte " + std::to_string(e.byte), "invalid JSON");
    }
    if (!bundle.is_object() || !bundle.contains("objects") || !bundle["objects"].is_array()) {
        throw FormatError("bundle", "missing 'objects' array");
    }
    std::vector<TaxonomyEntry> entries;
    const auto& objects = bundle["objects"];
    for (std::size_t i = 0; i < objects.size(); ++i) {
        const auto& obj = objects[i];
        if (!obj.is_object() || obj.value("type", "") != "attack-pattern") {
            continue;
        }
        const auto locator = "objects[" + std::to_string(i) + "]";
        std::string external_id;
        if (auto refs = obj.find("external_references"); refs != obj.end() && refs->is_array()) {
            for (const auto& ref : *refs) {
                if (ref.is_object() && ref.value("source_name", "") == "mitre-attack") {
                    external_id = ref.value("external_id", "");
                    break;
                }
            }
        }
        if (external_id.empty()) {
            continue;
        }
        auto id = TechniqueId::try_parse(external_id);
        if (!id) {
            throw FormatError(locator, "malformed external_id '" + external_id + "'");
        }
        TaxonomyEntry entry;
        entry.id = *id;
        entry.name = obj.value("name", "");
        entry.description = obj.value("description", "");
        entry.deprecated = obj.value("revoked", false) || obj.value("x_mitre_deprecated", false);
        entries.push_back(std::move(entry));
    }
    // Revoked objects can share an external id with their replacement; the
    // active object wins.
    std::stable_sort(entries.begin(), entries.end(),
                     [](const TaxonomyEntry& a, const TaxonomyEntry& b) {
                         return a.id != b.id ? a.id < b.id : (!a.deprecated && b.deprecated);
                     });
    entries.erase(std::unique(entries.begin(), entries.end(),
                              [](const TaxonomyEntry& a, const TaxonomyEntry& b) {
                                  return a.id == b.id && b.deprecated;
                              }),
                  entries.end());
    return Taxonomy::from_entries(std::move(entries));
}

Taxonomy load_taxonomy(const std::filesystem::path& path, TaxonomyFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw FormatError(path.string(), "cannot open file");
    }
    return format == TaxonomyFormat::csv ? parse_taxonomy_csv(in) : parse_taxonomy_stix(in);
}

}  // namespace ttprag
