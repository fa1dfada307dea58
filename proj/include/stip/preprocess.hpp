// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "stip/common.hpp"

namespace stip::text {

// Closed set of vulnerability class tags.
extern const std::vector<std::string> kVulnClasses;
bool is_known_class(const std::string& cls);

struct Warning {
    std::string code;
    std::string message;
};

struct RawContract {
    std::string path;
    std::string source;
    std::string label_class;
    int label_flag = 0;  // 1 = vulnerable, 0 = clean
};

// Span over token indices, both ends inclusive.
struct TokenSpan {
    std::int64_t begin = 0;
    std::int64_t end = 0;
    std::string pattern;
};

struct TokenizedContract {
    std::string id;
    std::vector<std::string> tokens;
    std::vector<TokenSpan> spans;
    std::string label_class;
    int label_flag = 0;
};

// Byte range into the preprocessed source, end exclusive.
struct CharSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::string pattern;
};

struct StripResult {
    std::string text;
    std::vector<Warning> warnings;
};

// Removes line/block comments, blank lines and import lines; string literals
// and everything else (including pragma lines) survive verbatim.
StripResult strip_noise(const std::string& source);

struct TokenWithOffset {
    std::string text;
    std::size_t begin = 0;  // byte offset into the input
    std::size_t end = 0;    // exclusive
};

std::vector<TokenWithOffset> tokenize_with_offsets(const std::string& source);
std::vector<std::string> tokenize(const std::string& source);

struct Pattern {
    std::string name;
    std::string regex;
};

// Built-in pattern table; a user-supplied file of name<TAB>regex lines
// replaces it.
std::vector<Pattern> default_patterns();
std::vector<Pattern> load_patterns(const std::string& path);
void save_patterns(const std::vector<Pattern>& patterns, const std::string& path);

// For every pattern match, emits the enclosing brace-balanced function body
// as one span (deterministic order by start offset). Matches outside any
// balanced function body fall back to the matched line +/- 2 lines, with a
// warning recorded.
std::vector<CharSpan> annotate(const std::string& source, const std::vector<Pattern>& patterns,
                               std::vector<Warning>* warnings = nullptr);

// Maps byte spans onto token index spans; spans that cover no token are dropped.
std::vector<TokenSpan> spans_to_token_spans(const std::vector<CharSpan>& spans,
                                            const std::vector<TokenWithOffset>& tokens);

// Full per-contract pipeline: strip -> annotate -> tokenize -> span mapping.
TokenizedContract preprocess_contract(const RawContract& raw, const std::vector<Pattern>& patterns,
                                      std::vector<Warning>* warnings = nullptr);

struct VocabEntry {
    std::string token;
    std::int32_t index = 0;
    std::int64_t count = 0;
};

class Vocabulary {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kUnk = 1;
    static const char* pad_token();
    static const char* unk_token();

    // Index assignment by descending count, ties broken lexicographically.
    // Tokens under min_count fold into UNK.
    static Vocabulary build(const std::vector<TokenizedContract>& corpus, std::int64_t min_count);

    std::int32_t lookup(const std::string& token) const;
    std::int32_t size() const { return static_cast<std::int32_t>(entries_.size()); }
    const std::vector<VocabEntry>& entries() const { return entries_; }
    std::int64_t min_count() const { return min_count_; }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);
    std::uint64_t content_hash() const;

private:
    std::vector<VocabEntry> entries_;
    std::unordered_map<std::string, std::int32_t> index_;
    std::int64_t min_count_ = 1;
};

// labels.csv rows: filename,class,flag.
struct LabelRow {
    std::string filename;
    std::string cls;
    int flag = 0;
};
std::vector<LabelRow> load_labels(const std::string& path);

// Corpus file: one JSON record per line.
void save_corpus(const std::vector<TokenizedContract>& corpus, const std::string& path);
std::vector<TokenizedContract> load_corpus(const std::string& path);

// Directory-level driver: reads each labeled .sol file and preprocesses it.
std::vector<TokenizedContract> preprocess_directory(const std::string& dir,
                                                    const std::vector<LabelRow>& labels,
                                                    const std::vector<Pattern>& patterns,
                                                    std::vector<Warning>* warnings = nullptr);

}  // namespace stip::text
