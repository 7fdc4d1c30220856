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

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ttprag {

/// ATT&CK technique identifier: "T####" or, for a sub-technique, "T####.###".
///
/// Stored as two integers so that ordering follows the numeric codes and a
/// technique sorts directly before its own sub-techniques.
class TechniqueId {
  public:
    static constexpr std::uint16_t kNoSub = 0xFFFF;

    constexpr TechniqueId() = default;
    constexpr TechniqueId(std::uint16_t technique, std::optional<std::uint16_t> sub = std::nullopt)
        : technique_(technique), sub_(sub ? *sub : kNoSub) {}

    /// Parses the canonical form; surrounding whitespace and a lowercase 't'
    /// are accepted. Throws MalformedId on anything else.
    static TechniqueId parse(std::string_view text);
    static std::optional<TechniqueId> try_parse(std::string_view text) noexcept;

    constexpr std::uint16_t technique() const noexcept { return technique_; }
    constexpr std::optional<std::uint16_t> sub() const noexcept {
        return sub_ == kNoSub ? std::nullopt : std::optional<std::uint16_t>(sub_);
    }
    constexpr bool is_sub() const noexcept { return sub_ != kNoSub; }

    /// Technique-level id; identity on technique-level input.
    constexpr TechniqueId truncated() const noexcept { return TechniqueId(technique_); }

    std::string str() const;

    friend constexpr bool operator==(const TechniqueId&, const TechniqueId&) = default;
    friend constexpr std::strong_ordering operator<=>(const TechniqueId& a, const TechniqueId& b) {
        if (a.technique_ != b.technique_) {
            return a.technique_ <=> b.technique_;
        }
        // kNoSub is the largest stored value but must sort first.
        return std::uint16_t(a.sub_ + 1) <=> std::uint16_t(b.sub_ + 1);
    }

  private:
    std::uint16_t technique_ = 0;
    std::uint16_t sub_ = kNoSub;
};

}  // namespace ttprag

template <>
struct std::hash<ttprag::TechniqueId> {
    std::size_t operator()(ttprag::TechniqueId id) const noexcept {
        return std::hash<std::uint32_t>{}(std::uint32_t(id.technique()) << 16 |
                                           id.sub().value_or(ttprag::TechniqueId::kNoSub));
    }
};

namespace ttprag {

inline TechniqueId parse_id(std::string_view text) { return TechniqueId::parse(text); }
constexpr TechniqueId truncate(TechniqueId id) noexcept { return id.truncated(); }

/// An id occurrence found by scan_ids: byte offset into the scanned text.
struct IdMatch {
    std::size_t offset;
    TechniqueId id;
};

/// Finds every technique-id shaped token ("T1059", "t1059.001") in emission
/// order. Tokens glued to other alphanumerics ("XT1059", "T10591") are skipped.
std::vector<IdMatch> scan_ids(std::string_view text);

struct TaxonomyEntry {
    TechniqueId id;
    std::string name;
    std::string description;
    std::optional<TechniqueId> parent;
    /// Revoked or deprecated upstream; still a valid label.
    bool deprecated = false;
};

enum class TaxonomyFormat { csv, stix };

/// The label universe. Immutable once built.
class Taxonomy {
  public:
    Taxonomy() = default;

    /// Builds from entries in the given order. Parent links are derived from
    /// the id structure. Throws DuplicateId, and FormatError for a
    /// sub-technique whose parent technique is absent.
    static Taxonomy from_entries(std::vector<TaxonomyEntry> entries);

    bool contains(TechniqueId id) const noexcept { return index_.count(id) != 0; }
    const TaxonomyEntry* find(TechniqueId id) const noexcept;
    const TaxonomyEntry& at(TechniqueId id) const;

    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    auto begin() const noexcept { return entries_.begin(); }
    auto end() const noexcept { return entries_.end(); }

  private:
    std::vector<TaxonomyEntry> entries_;
    std::unordered_map<TechniqueId, std::size_t> index_;
};

Taxonomy load_taxonomy(const std::filesystem::path& path, TaxonomyFormat format);
Taxonomy parse_taxonomy_csv(std::istream& in);
Taxonomy parse_taxonomy_stix(std::istream& in);

/// RFC-4180 record reader. Each call yields one record (fields may span
/// lines when quoted); returns false at end of input.
class CsvReader {
  public:
    explicit CsvReader(std::istream& in) : in_(in) {}
    bool next(std::vector<std::string>& fields);
    /// 1-based line on which the last returned record started.
    std::size_t record_line() const noexcept { return record_line_; }

  private:
    std::istream& in_;
    std::size_t line_ = 1;
    std::size_t record_line_ = 0;
};

}  // namespace ttprag
