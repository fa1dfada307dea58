// SPDX-License-Identifier: Apache-2.0
#include "stip/preprocess.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "stip/common.hpp"

namespace stip::text {

const std::vector<std::string> kVulnClasses = {"reentrancy", "timestamp", "delegatecall",
                                               "integer-overflow-underflow", "cdav"};

bool is_known_class(const std::string& cls) {
    return std::find(kVulnClasses.begin(), kVulnClasses.end(), cls) != kVulnClasses.end();
}

// ---- strip_noise ------------------------------------------------------------

StripResult strip_noise(const std::string& source) {
    StripResult result;
    std::string& out = result.text;
    out.reserve(source.size());

    enum class State { Code, LineComment, BlockComment, DString, SString };
    State state = State::Code;
    bool block_terminated = true;

    for (std::size_t i = 0; i < source.size(); ++i) {
        const char c = source[i];
        const char next = i + 1 < source.size() ? source[i + 1] : '\0';
        switch (state) {
            case State::Code:
                if (c == '/' && next == '/') {
                    state = State::LineComment;
                    ++i;
                } else if (c == '/' && next == '*') {
                    state = State::BlockComment;
                    block_terminated = false;
                    ++i;
                } else {
                    if (c == '"') state = State::DString;
                    if (c == '\'') state = State::SString;
                    out.push_back(c);
                }
                break;
            case State::LineComment:
                if (c == '\n') {
                    state = State::Code;
                    out.push_back('\n');
                }
                break;
            case State::BlockComment:
                if (c == '*' && next == '/') {
                    state = State::Code;
                    block_terminated = true;
                    ++i;
                } else if (c == '\n') {
                    out.push_back('\n');  // keep line structure stable for annotation
                }
                break;
            case State::DString:
                out.push_back(c);
                if (c == '\\' && next != '\0') {
                    out.push_back(next);
                    ++i;
                } else if (c == '"') {
                    state = State::Code;
                }
                break;
            case State::SString:
                out.push_back(c);
                if (c == '\\' && next != '\0') {
                    out.push_back(next);
                    ++i;
                } else if (c == '\'') {
                    state = State::Code;
                }
                break;
        }
    }
    if (state == State::BlockComment && !block_terminated)
        result.warnings.push_back({"unterminated-block-comment",
                                   "block comment not closed; stripped to end of file"});

    // Line pass: trim trailing whitespace, drop blank lines and import lines.
    std::string filtered;
    filtered.reserve(out.size());
    std::istringstream lines(out);
    std::string line;
    bool first = true;
    while (std::getline(lines, line)) {
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r'))
            line.pop_back();
        std::size_t ws = line.find_first_not_of(" \t");
        if (ws == std::string::npos) continue;
        if (line.compare(ws, 6, "import") == 0 &&
            (ws + 6 == line.size() || !std::isalnum(static_cast<unsigned char>(line[ws + 6]))))
            continue;
        if (!first) filtered.push_back('\n');
        filtered += line;
        first = false;
    }
    result.text = std::move(filtered);
    return result;
}

// ---- tokenize ---------------------------------------------------------------

namespace {

bool is_ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}
bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}
bool is_hex_digit(char c) { return std::isxdigit(static_cast<unsigned char>(c)); }

// Member chains rooted at these globals stay single tokens (one level deep),
// so `msg.sender` survives as a unit while user-defined chains split.
bool is_chain_root(const std::string& s) {
    return s == "msg" || s == "block" || s == "tx" || s == "this" || s == "address";
}

}  // namespace

std::vector<TokenWithOffset> tokenize_with_offsets(const std::string& src) {
    std::vector<TokenWithOffset> tokens;
    std::size_t i = 0;
    const std::size_t n = src.size();
    while (i < n) {
        const char c = src[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        const std::size_t begin = i;
        if (is_ident_start(c)) {
            while (i < n && is_ident_char(src[i])) ++i;
            std::string word = src.substr(begin, i - begin);
            if (is_chain_root(word) && i + 1 < n && src[i] == '.' && is_ident_start(src[i + 1])) {
                std::size_t j = i + 1;
                while (j < n && is_ident_char(src[j])) ++j;
                word += "." + src.substr(i + 1, j - i - 1);
                i = j;
            }
            tokens.push_back({std::move(word), begin, i});
        } else if (std::isdigit(static_cast<unsigned char>(c))) {
            if (c == '0' && i + 1 < n && (src[i + 1] == 'x' || src[i + 1] == 'X')) {
                i += 2;
                while (i < n && is_hex_digit(src[i])) ++i;
                tokens.push_back({"HEXNUM", begin, i});
            } else {
                while (i < n && (std::isdigit(static_cast<unsigned char>(src[i])) || src[i] == '_'))
                    ++i;
                if (i < n && (src[i] == 'e' || src[i] == 'E') && i + 1 < n &&
                    std::isdigit(static_cast<unsigned char>(src[i + 1]))) {
                    ++i;
                    while (i < n && std::isdigit(static_cast<unsigned char>(src[i]))) ++i;
                }
                tokens.push_back({"NUM", begin, i});
            }
        } else if (static_cast<unsigned char>(c) >= 0x80) {
            while (i < n && static_cast<unsigned char>(src[i]) >= 0x80) ++i;
            tokens.push_back({src.substr(begin, i - begin), begin, i});
        } else {
            ++i;
            tokens.push_back({std::string(1, c), begin, i});
        }
    }
    return tokens;
}

std::vector<std::string> tokenize(const std::string& source) {
    std::vector<std::string> out;
    for (auto& t : tokenize_with_offsets(source)) out.push_back(std::move(t.text));
    return out;
}

// ---- annotate ---------------------------------------------------------------

std::vector<Pattern> default_patterns() {
    return {
        {"reentrancy-call", R"(\.call\.value\s*\(|\.call\s*\{\s*value\s*:|\.call\s*\()"},
        {"timestamp-dep", R"(block\.timestamp|\bnow\b)"},
        {"delegatecall", R"(\.delegatecall\s*\()"},
        {"unchecked-arith", R"([\w\]\)]\s*(\+\+|--|\+=|-=|\*=)|=\s*[\w\.\[\]]+\s*[\+\*]\s*[\w\.\[\]]+)"},
        // CDAV placeholder; refine against the published dataset.
        {"cdav-deploy", R"(\bnew\s+\w+\s*\(|address\s*\(\s*this\s*\))"},
    };
}

std::vector<Pattern> load_patterns(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read pattern table: " + path);
    std::vector<Pattern> patterns;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw IoError("pattern line without tab: " + line);
        patterns.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return patterns;
}

void save_patterns(const std::vector<Pattern>& patterns, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write pattern table: " + path);
    out << "# name<TAB>regex\n";
    for (const auto& p : patterns) out << p.name << "\t" << p.regex << "\n";
}

namespace {

struct FunctionRegion {
    std::size_t begin;  // offset of the definition keyword
    std::size_t end;    // one past the closing brace
};

// Brace-balanced bodies of function-like definitions. Bodies that never
// close are not returned; matches inside them use the line fallback.
std::vector<FunctionRegion> function_regions(const std::string& src, bool* saw_unbalanced) {
    static const std::regex kDef(
        R"(\b(function|constructor|modifier|fallback|receive)\b)");
    std::vector<FunctionRegion> regions;
    for (auto it = std::sregex_iterator(src.begin(), src.end(), kDef);
         it != std::sregex_iterator(); ++it) {
        const std::size_t kw = static_cast<std::size_t>(it->position());
        std::size_t i = kw;
        // Find the body start; a ';' first means a declaration without body.
        while (i < src.size() && src[i] != '{' && src[i] != ';') ++i;
        if (i >= src.size() || src[i] == ';') continue;
        int depth = 0;
        std::size_t j = i;
        for (; j < src.size(); ++j) {
            if (src[j] == '{') ++depth;
            if (src[j] == '}') {
                --depth;
                if (depth == 0) break;
            }
        }
        if (depth != 0) {
            if (saw_unbalanced) *saw_unbalanced = true;
            continue;
        }
        regions.push_back({kw, j + 1});
    }
    return regions;
}

CharSpan line_fallback(const std::string& src, std::size_t pos, const std::string& name) {
    // Matched line plus two lines of context on each side.
    std::size_t begin = pos;
    int up = 0;
    while (begin > 0) {
        if (src[begin - 1] == '\n' && ++up > 2) break;
        --begin;
    }
    std::size_t end = pos;
    int down = 0;
    while (end < src.size()) {
        if (src[end] == '\n' && ++down > 2) break;
        ++end;
    }
    return {begin, end, name};
}

}  // namespace

std::vector<CharSpan> annotate(const std::string& source, const std::vector<Pattern>& patterns,
                               std::vector<Warning>* warnings) {
    bool saw_unbalanced = false;
    const auto regions = function_regions(source, &saw_unbalanced);
    if (saw_unbalanced && warnings)
        warnings->push_back({"unbalanced-braces", "function body never closes; using line fallback"});

    struct Hit {
        CharSpan span;
        std::size_t match_pos;
    };
    std::vector<Hit> hits;
    for (const auto& pattern : patterns) {
        std::regex re;
        try {
            re = std::regex(pattern.regex);
        } catch (const std::regex_error& e) {
            throw ConfigError("pattern '" + pattern.name + "' does not compile: " + e.what());
        }
        for (auto it = std::sregex_iterator(source.begin(), source.end(), re);
             it != std::sregex_iterator(); ++it) {
            const std::size_t pos = static_cast<std::size_t>(it->position());
            // Innermost enclosing function body.
            const FunctionRegion* best = nullptr;
            for (const auto& r : regions)
                if (r.begin <= pos && pos < r.end && (!best || r.end - r.begin < best->end - best->begin))
                    best = &r;
            if (best) {
                hits.push_back({{best->begin, best->end, pattern.name}, pos});
            } else {
                if (warnings)
                    warnings->push_back({"no-enclosing-function",
                                         "match for '" + pattern.name + "' outside any balanced "
                                         "function body; using line fallback"});
                hits.push_back({line_fallback(source, pos, pattern.name), pos});
            }
        }
    }
    std::stable_sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.span.begin != b.span.begin) return a.span.begin < b.span.begin;
        if (a.match_pos != b.match_pos) return a.match_pos < b.match_pos;
        return a.span.pattern < b.span.pattern;
    });
    std::vector<CharSpan> out;
    out.reserve(hits.size());
    for (auto& h : hits) out.push_back(std::move(h.span));
    return out;
}

std::vector<TokenSpan> spans_to_token_spans(const std::vector<CharSpan>& spans,
                                            const std::vector<TokenWithOffset>& tokens) {
    std::vector<TokenSpan> out;
    for (const auto& span : spans) {
        std::int64_t first = -1, last = -1;
        for (std::size_t t = 0; t < tokens.size(); ++t) {
            if (tokens[t].end <= span.begin) continue;
            if (tokens[t].begin >= span.end) break;
            if (first < 0) first = static_cast<std::int64_t>(t);
            last = static_cast<std::int64_t>(t);
        }
        if (first >= 0) out.push_back({first, last, span.pattern});
    }
    return out;
}

TokenizedContract preprocess_contract(const RawContract& raw, const std::vector<Pattern>& patterns,
                                      std::vector<Warning>* warnings) {
    if (raw.source.empty()) throw ConfigError("empty contract source: " + raw.path);
    if (!is_known_class(raw.label_class))
        throw ConfigError("unknown vulnerability class '" + raw.label_class + "' for " + raw.path);
    auto stripped = strip_noise(raw.source);
    if (warnings)
        for (auto& w : stripped.warnings) warnings->push_back(w);
    const auto char_spans = annotate(stripped.text, patterns, warnings);
    const auto tokens = tokenize_with_offsets(stripped.text);

    TokenizedContract out;
    out.id = raw.path;
    out.label_class = raw.label_class;
    out.label_flag = raw.label_flag;
    out.tokens.reserve(tokens.size());
    for (const auto& t : tokens) out.tokens.push_back(t.text);
    out.spans = spans_to_token_spans(char_spans, tokens);
    return out;
}

// ---- vocabulary -------------------------------------------------------------

const char* Vocabulary::pad_token() { return "<PAD>"; }
const char* Vocabulary::unk_token() { return "<UNK>"; }

Vocabulary Vocabulary::build(const std::vector<TokenizedContract>& corpus, std::int64_t min_count) {
    if (corpus.empty()) throw ConfigError("build_vocab: empty corpus");
    if (min_count < 1) throw ConfigError("build_vocab: min_count must be >= 1");
    std::unordered_map<std::string, std::int64_t> counts;
    for (const auto& c : corpus)
        for (const auto& t : c.tokens) ++counts[t];

    std::vector<VocabEntry> kept;
    std::int64_t dropped = 0;
    for (const auto& [token, count] : counts) {
        if (count >= min_count)
            kept.push_back({token, 0, count});
        else
            dropped += count;
    }
    std::sort(kept.begin(), kept.end(), [](const VocabEntry& a, const VocabEntry& b) {
        if (a.count != b.count) return a.count > b.count;
        return a.token < b.token;
    });

    Vocabulary v;
    v.min_count_ = min_count;
    v.entries_.push_back({pad_token(), kPad, 0});
    v.entries_.push_back({unk_token(), kUnk, dropped});
    for (auto& e : kept) {
        e.index = static_cast<std::int32_t>(v.entries_.size());
        v.entries_.push_back(e);
    }
    for (const auto& e : v.entries_) v.index_[e.token] = e.index;
    return v;
}

std::int32_t Vocabulary::lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write vocabulary: " + path);
    out << "# min_count\t" << min_count_ << "\n";
    for (const auto& e : entries_) out << e.token << "\t" << e.index << "\t" << e.count << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read vocabulary: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto tab = line.find('\t');
            if (tab != std::string::npos) v.min_count_ = std::stoll(line.substr(tab + 1));
            continue;
        }
        const auto t1 = line.find('\t');
        const auto t2 = line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos)
            throw IoError("malformed vocabulary line: " + line);
        VocabEntry e;
        e.token = line.substr(0, t1);
        e.index = static_cast<std::int32_t>(std::stol(line.substr(t1 + 1, t2 - t1 - 1)));
        e.count = std::stoll(line.substr(t2 + 1));
        v.entries_.push_back(e);
    }
    if (v.entries_.size() < 2 || v.entries_[0].token != pad_token() ||
        v.entries_[1].token != unk_token())
        throw IoError("vocabulary missing PAD/UNK header entries: " + path);
    for (const auto& e : v.entries_) v.index_[e.token] = e.index;
    return v;
}

std::uint64_t Vocabulary::content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& e : entries_) {
        h = fnv1a(e.token, h);
        h = fnv1a(&e.index, sizeof(e.index), h);
        h = fnv1a(&e.count, sizeof(e.count), h);
    }
    return h;
}

// ---- corpus & labels IO -------------------------------------------------------

std::vector<LabelRow> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read labels: " + path);
    std::vector<LabelRow> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
            throw IoError("malformed labels row: " + line);
        LabelRow row;
        row.filename = line.substr(0, c1);
        row.cls = line.substr(c1 + 1, c2 - c1 - 1);
        const std::string flag = line.substr(c2 + 1);
        if (first && row.filename == "filename") {  // header row
            first = false;
            continue;
        }
        first = false;
        if (flag != "0" && flag != "1") throw IoError("labels flag must be 0 or 1: " + line);
        row.flag = flag == "1" ? 1 : 0;
        rows.push_back(std::move(row));
    }
    return rows;
}

void save_corpus(const std::vector<TokenizedContract>& corpus, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write corpus: " + path);
    for (const auto& c : corpus) {
        nlohmann::json j;
        j["id"] = c.id;
        j["class"] = c.label_class;
        j["flag"] = c.label_flag;
        j["tokens"] = c.tokens;
        auto spans = nlohmann::json::array();
        for (const auto& s : c.spans) spans.push_back({s.begin, s.end, s.pattern});
        j["spans"] = spans;
        out << j.dump() << "\n";
    }
}

std::vector<TokenizedContract> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read corpus: " + path);
    std::vector<TokenizedContract> corpus;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        TokenizedContract c;
        c.id = j["id"].get<std::string>();
        c.label_class = j["class"].get<std::string>();
        c.label_flag = j["flag"].get<int>();
        c.tokens = j["tokens"].get<std::vector<std::string>>();
        for (const auto& s : j["spans"])
            c.spans.push_back({s[0].get<std::int64_t>(), s[1].get<std::int64_t>(),
                               s[2].get<std::string>()});
        corpus.push_back(std::move(c));
    }
    return corpus;
}

std::vector<TokenizedContract> preprocess_directory(const std::string& dir,
                                                    const std::vector<LabelRow>& labels,
                                                    const std::vector<Pattern>& patterns,
                                                    std::vector<Warning>* warnings) {
    std::vector<TokenizedContract> corpus;
    corpus.reserve(labels.size());
    for (const auto& row : labels) {
        const std::string path = join_path(dir, row.filename);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot read contract: " + path);
        std::ostringstream buf;
        buf << in.rdbuf();
        RawContract raw{row.filename, buf.str(), row.cls, row.flag};
        corpus.push_back(preprocess_contract(raw, patterns, warnings));
    }
    return corpus;
}

}  // namespace stip::text
