#pragma once

#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "longlist/common.hpp"
#include "longlist/jsonl.hpp"

namespace longlist {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct ChunkConfig {
    int max_chars = 1000;
    int overlap_chars = 200;
    int max_sentences = 15;
    int context_window = 10;

    void validate() const {
        if (max_chars <= overlap_chars || overlap_chars < 0)
            throw ConfigError("chunking requires max_chars > overlap_chars >= 0");
        if (max_sentences < 1) throw ConfigError("max_sentences must be >= 1");
        if (context_window < 0) throw ConfigError("context_window must be >= 0");
    }
};

struct Passage {
    std::string id;
    std::string book_id;
    std::string text;
    std::size_t char_start = 0;
    std::size_t char_end = 0;
    int seq = 0;
};

struct Mention {
    std::string surface;
    std::optional<std::string> canonical;  // nullopt = UNLINKED (ambiguous surface)
    EntityType entity_type = EntityType::person;
    std::size_t char_offset = 0;
};

struct EnrichedPassage {
    Passage passage;
    std::vector<Mention> local_mentions;
    std::vector<Mention> context_mentions;
    std::string enriched_text;
};

struct EntityInfo {
    std::set<std::string> aliases;
    EntityType type = EntityType::person;
};

struct EntityDictionary {
    std::map<std::string, EntityInfo> entities;  // canonical -> info
    std::set<std::string> ambiguous;             // surfaces never linked
    std::map<std::string, std::vector<std::string>> predicate_paraphrases;
    std::map<std::string, EntityType> predicate_object_types;  // optional metadata
    bool case_fold = false;

    void add_entity(const std::string& canonical, EntityType type,
                    std::vector<std::string> aliases = {}) {
        auto& info = entities[canonical];
        info.type = type;
        info.aliases.insert(canonical);  // every canonical is its own alias
        for (auto& a : aliases) info.aliases.insert(std::move(a));
    }

    EntityType object_type(const std::string& predicate) const {
        auto it = predicate_object_types.find(predicate);
        return it == predicate_object_types.end() ? EntityType::person : it->second;
    }

    void validate() const {
        std::map<std::string, std::string> seen;  // alias -> canonical
        for (const auto& [canonical, info] : entities) {
            if (!info.aliases.count(canonical))
                throw InputError("canonical '" + canonical + "' missing from its alias set");
            for (const auto& a : info.aliases) {
                auto [it, inserted] = seen.emplace(a, canonical);
                if (!inserted)
                    throw InputError("alias '" + a + "' shared by '" + it->second +
                                     "' and '" + canonical + "'");
                if (ambiguous.count(a))
                    throw InputError("alias '" + a + "' also listed as ambiguous");
            }
        }
    }
};

// Dictionary JSON schema:
// {"entities": {canonical: {"aliases": [...], "type": "person|place|org"}},
//  "ambiguous": [...],
//  "predicate_paraphrases": {pred: [...]},
//  "predicate_object_types": {pred: "person|place|org"}}   (optional)
inline EntityDictionary dictionary_from_json(const json& j) {
    EntityDictionary d;
    if (j.contains("entities")) {
        for (auto it = j.at("entities").begin(); it != j.at("entities").end(); ++it) {
            EntityInfo info;
            info.type = entity_type_from_string(it.value().value("type", "person"));
            info.aliases.insert(it.key());
            for (const auto& a : it.value().value("aliases", std::vector<std::string>{}))
                info.aliases.insert(a);
            d.entities[it.key()] = std::move(info);
        }
    }
    for (const auto& a : j.value("ambiguous", std::vector<std::string>{})) d.ambiguous.insert(a);
    if (j.contains("predicate_paraphrases")) {
        for (auto it = j.at("predicate_paraphrases").begin();
             it != j.at("predicate_paraphrases").end(); ++it)
            d.predicate_paraphrases[it.key()] = it.value().get<std::vector<std::string>>();
    }
    if (j.contains("predicate_object_types")) {
        for (auto it = j.at("predicate_object_types").begin();
             it != j.at("predicate_object_types").end(); ++it)
            d.predicate_object_types[it.key()] =
                entity_type_from_string(it.value().get<std::string>());
    }
    d.validate();
    return d;
}

inline json dictionary_to_json(const EntityDictionary& d) {
    json entities = json::object();
    for (const auto& [canonical, info] : d.entities) {
        entities[canonical] = {{"aliases", info.aliases}, {"type", to_string(info.type)}};
    }
    json paraphrases = json::object();
    for (const auto& [p, v] : d.predicate_paraphrases) paraphrases[p] = v;
    json types = json::object();
    for (const auto& [p, t] : d.predicate_object_types) types[p] = to_string(t);
    return {{"entities", entities},
            {"ambiguous", d.ambiguous},
            {"predicate_paraphrases", paraphrases},
            {"predicate_object_types", types}};
}

inline EntityDictionary load_dictionary(const std::filesystem::path& path) {
    return dictionary_from_json(json::parse(read_file(path)));
}

// ---------------------------------------------------------------------------
// Sentence segmentation (pluggable; default is a deterministic rule-based
// splitter on terminal punctuation with closing-quote handling).
// ---------------------------------------------------------------------------

// Returns sentence end offsets; spans [prev_end, end) tile the whole text,
// trailing whitespace belongs to the sentence it follows.
using SentenceSplitter = std::function<std::vector<std::size_t>(std::string_view)>;

inline std::vector<std::size_t> split_sentences(std::string_view text) {
    std::vector<std::size_t> ends;
    std::size_t i = 0;
    const std::size_t n = text.size();
    auto is_closer = [](char c) {
        return c == '"' || c == '\'' || c == ')' || c == ']' || c == '}';
    };
    while (i < n) {
        char c = text[i];
        bool terminal = (c == '.' || c == '!' || c == '?');
        if (terminal || c == '\n') {
            std::size_t j = i + 1;
            if (terminal) {
                // Run of terminal punctuation ("..."), then closing quotes.
                while (j < n && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
                std::size_t q = j;
                while (q < n && is_closer(text[q])) ++q;
                if (terminal && q < n && !is_space_byte(text[q])) {
                    // Not followed by whitespace (e.g. "3.4"): not a boundary.
                    i = j;
                    continue;
                }
                j = q;
            }
            while (j < n && is_space_byte(text[j])) ++j;
            ends.push_back(j);
            i = j;
            continue;
        }
        ++i;
    }
    if (ends.empty() || ends.back() != n) ends.push_back(n);
    return ends;
}

// ---------------------------------------------------------------------------
// Chunking
// ---------------------------------------------------------------------------

namespace detail {

// Splits an oversized span at word-start boundaries into pieces of at most
// max_chars, hard-cutting if there is no whitespace at all.
inline void split_oversized(std::string_view text, std::size_t start, std::size_t end,
                            std::size_t max_chars, std::vector<std::size_t>& unit_ends) {
    std::size_t cur = start;
    while (end - cur > max_chars) {
        std::size_t cut = 0;
        for (std::size_t p = cur + max_chars; p > cur; --p) {
            if (!is_space_byte(text[p]) && is_space_byte(text[p - 1])) {
                cut = p;
                break;
            }
        }
        if (cut == 0) cut = cur + max_chars;
        unit_ends.push_back(cut);
        cur = cut;
    }
    unit_ends.push_back(end);
}

}  // namespace detail

inline std::string passage_id(const std::string& book_id, int seq) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%05d", seq);
    return book_id + "-" + buf;
}

inline std::vector<Passage> chunk_text(std::string_view document, const std::string& book_id,
                                       const ChunkConfig& cfg,
                                       const SentenceSplitter& splitter = split_sentences) {
    cfg.validate();
    if (document.empty()) throw InputError("empty document: " + book_id);

    const std::size_t max_chars = static_cast<std::size_t>(cfg.max_chars);
    const std::size_t overlap = static_cast<std::size_t>(cfg.overlap_chars);

    // Sentence units, with oversized sentences split at word starts.
    std::vector<std::size_t> unit_ends;
    std::size_t prev = 0;
    for (std::size_t e : splitter(document)) {
        if (e <= prev) continue;
        if (e - prev > max_chars)
            detail::split_oversized(document, prev, e, max_chars, unit_ends);
        else
            unit_ends.push_back(e);
        prev = e;
    }

    std::vector<std::size_t> unit_starts;
    unit_starts.push_back(0);
    for (std::size_t i = 0; i + 1 < unit_ends.size(); ++i) unit_starts.push_back(unit_ends[i]);

    std::vector<Passage> out;
    std::size_t start = 0;
    int seq = 0;
    while (start < document.size()) {
        // Accumulate full units while both caps hold.
        std::size_t end = start;
        int count = 0;
        auto it = std::upper_bound(unit_ends.begin(), unit_ends.end(), start);
        for (; it != unit_ends.end(); ++it) {
            if (*it - start > max_chars) break;
            if (count + 1 > cfg.max_sentences) break;
            end = *it;
            ++count;
        }
        if (count == 0) end = std::min(start + max_chars, document.size());  // degenerate guard

        Passage p;
        p.book_id = book_id;
        p.seq = seq;
        p.id = passage_id(book_id, seq);
        p.char_start = start;
        p.char_end = end;
        p.text = std::string(document.substr(start, end - start));
        out.push_back(std::move(p));
        ++seq;

        if (end >= document.size()) break;

        // Next start: latest unit start <= end - overlap (keeps the shared
        // region at least overlap_chars); fall back to a word start, then to
        // the raw offset.
        std::size_t target = end > overlap ? end - overlap : 0;
        std::size_t next = std::string_view::npos;
        auto us = std::upper_bound(unit_starts.begin(), unit_starts.end(), target);
        if (us != unit_starts.begin()) {
            std::size_t u = *std::prev(us);
            if (u > start) next = u;
        }
        if (next == std::string_view::npos) {
            for (std::size_t ppos = target; ppos > start; --ppos) {
                if (is_word_byte(document[ppos]) && !is_word_byte(document[ppos - 1])) {
                    next = ppos;
                    break;
                }
            }
        }
        if (next == std::string_view::npos) next = target > start ? target : end;
        start = next;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Mention detection
// ---------------------------------------------------------------------------

namespace detail {

struct AliasEntry {
    std::string text;                      // match key (case-folded when folding)
    std::string surface_key;               // original alias string
    std::optional<std::string> canonical;  // nullopt for ambiguous surfaces
    EntityType type = EntityType::person;
};

// Aliases bucketed by their first word token for linear-time scanning.
struct AliasMatcher {
    std::unordered_map<std::string, std::vector<AliasEntry>> by_first_word;
    bool case_fold = false;

    static std::string first_word(std::string_view s) {
        std::size_t i = 0;
        while (i < s.size() && is_word_byte(s[i])) ++i;
        return std::string(s.substr(0, i));
    }

    explicit AliasMatcher(const EntityDictionary& dict) : case_fold(dict.case_fold) {
        auto add = [&](const std::string& alias, std::optional<std::string> canonical,
                       EntityType type) {
            if (alias.empty()) return;
            AliasEntry e;
            e.text = case_fold ? to_lower(alias) : alias;
            e.surface_key = alias;
            e.canonical = std::move(canonical);
            e.type = type;
            by_first_word[first_word(e.text)].push_back(std::move(e));
        };
        for (const auto& [canonical, info] : dict.entities)
            for (const auto& a : info.aliases) add(a, canonical, info.type);
        for (const auto& a : dict.ambiguous) add(a, std::nullopt, EntityType::person);
        for (auto& [w, v] : by_first_word) {
            std::sort(v.begin(), v.end(), [](const AliasEntry& a, const AliasEntry& b) {
                if (a.text.size() != b.text.size()) return a.text.size() > b.text.size();
                return a.text < b.text;
            });
        }
    }
};

inline std::vector<Mention> detect_with(const AliasMatcher& matcher, std::string_view text) {
    std::string folded;
    std::string_view scan = text;
    if (matcher.case_fold) {
        folded = to_lower(text);
        scan = folded;
    }
    std::vector<Mention> out;
    std::size_t i = 0;
    while (i < scan.size()) {
        if (!is_word_byte(scan[i]) || (i > 0 && is_word_byte(scan[i - 1]))) {
            ++i;
            continue;
        }
        std::size_t wend = i;
        while (wend < scan.size() && is_word_byte(scan[wend])) ++wend;
        auto it = matcher.by_first_word.find(std::string(scan.substr(i, wend - i)));
        if (it != matcher.by_first_word.end()) {
            const detail::AliasEntry* hit = nullptr;
            for (const auto& e : it->second) {  // longest first
                if (scan.compare(i, e.text.size(), e.text) != 0) continue;
                std::size_t after = i + e.text.size();
                if (after < scan.size() && is_word_byte(scan[after])) continue;
                hit = &e;
                break;
            }
            if (hit != nullptr) {
                Mention m;
                m.surface = std::string(text.substr(i, hit->text.size()));
                m.canonical = hit->canonical;
                m.entity_type = hit->type;
                m.char_offset = i;
                out.push_back(std::move(m));
                i += hit->text.size();
                continue;
            }
        }
        i = wend;
    }
    return out;
}

}  // namespace detail

inline std::vector<Mention> detect_mentions(std::string_view text, const EntityDictionary& dict) {
    return detail::detect_with(detail::AliasMatcher(dict), text);
}

// ---------------------------------------------------------------------------
// Enrichment
// ---------------------------------------------------------------------------

inline std::string render_context_block(const std::vector<Mention>& context) {
    if (context.empty()) return "";
    std::string block = "[context-entities: ";
    for (std::size_t i = 0; i < context.size(); ++i) {
        if (i > 0) block += "; ";
        block += context[i].surface;
    }
    block += "]";
    return block;
}

inline std::vector<EnrichedPassage> enrich_passages(const std::vector<Passage>& passages,
                                                    const EntityDictionary& dict,
                                                    const ChunkConfig& cfg) {
    detail::AliasMatcher matcher(dict);
    std::vector<std::vector<Mention>> local(passages.size());
    for (std::size_t i = 0; i < passages.size(); ++i)
        local[i] = detail::detect_with(matcher, passages[i].text);

    std::vector<EnrichedPassage> out;
    out.reserve(passages.size());
    for (std::size_t i = 0; i < passages.size(); ++i) {
        EnrichedPassage ep;
        ep.passage = passages[i];
        ep.local_mentions = local[i];

        // Person/place mentions from the preceding context_window passages,
        // oldest first, deduplicated by canonical (UNLINKED mentions carry no
        // canonical and are skipped).
        std::set<std::string> seen;
        std::size_t lo = i > static_cast<std::size_t>(cfg.context_window)
                             ? i - static_cast<std::size_t>(cfg.context_window)
                             : 0;
        for (std::size_t j = lo; j < i; ++j) {
            for (const auto& m : local[j]) {
                if (!m.canonical) continue;
                if (m.entity_type != EntityType::person && m.entity_type != EntityType::place)
                    continue;
                if (!seen.insert(*m.canonical).second) continue;
                ep.context_mentions.push_back(m);
            }
        }

        ep.enriched_text = ep.passage.text;
        std::string block = render_context_block(ep.context_mentions);
        if (!block.empty()) {
            ep.enriched_text += "\n";
            ep.enriched_text += block;
        }
        out.push_back(std::move(ep));
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSONL round-trip
// ---------------------------------------------------------------------------

inline json mention_to_json(const Mention& m) {
    return {{"surface", m.surface},
            {"canonical", m.canonical ? json(*m.canonical) : json(nullptr)},
            {"type", to_string(m.entity_type)},
            {"offset", m.char_offset}};
}

inline Mention mention_from_json(const json& j) {
    Mention m;
    m.surface = j.at("surface").get<std::string>();
    if (!j.at("canonical").is_null()) m.canonical = j.at("canonical").get<std::string>();
    m.entity_type = entity_type_from_string(j.at("type").get<std::string>());
    m.char_offset = j.at("offset").get<std::size_t>();
    return m;
}

inline json enriched_to_json(const EnrichedPassage& ep) {
    json locals = json::array();
    for (const auto& m : ep.local_mentions) locals.push_back(mention_to_json(m));
    json ctx = json::array();
    for (const auto& m : ep.context_mentions) ctx.push_back(mention_to_json(m));
    return {{"id", ep.passage.id},
            {"book_id", ep.passage.book_id},
            {"seq", ep.passage.seq},
            {"char_start", ep.passage.char_start},
            {"char_end", ep.passage.char_end},
            {"text", ep.passage.text},
            {"enriched_text", ep.enriched_text},
            {"local_mentions", locals},
            {"context_mentions", ctx}};
}

inline EnrichedPassage enriched_from_json(const json& j) {
    EnrichedPassage ep;
    ep.passage.id = j.at("id").get<std::string>();
    ep.passage.book_id = j.at("book_id").get<std::string>();
    ep.passage.seq = j.at("seq").get<int>();
    ep.passage.char_start = j.at("char_start").get<std::size_t>();
    ep.passage.char_end = j.at("char_end").get<std::size_t>();
    ep.passage.text = j.at("text").get<std::string>();
    ep.enriched_text = j.at("enriched_text").get<std::string>();
    for (const auto& m : j.at("local_mentions")) ep.local_mentions.push_back(mention_from_json(m));
    for (const auto& m : j.at("context_mentions"))
        ep.context_mentions.push_back(mention_from_json(m));
    return ep;
}

// "Object appears in passage" test: any alias of the surface's canonical (or
// the raw surface when unlinked) occurs word-delimited in the text.
inline std::optional<std::string> normalize_surface(const EntityDictionary& dict,
                                                    std::string_view surface);

inline bool object_in_text(const EntityDictionary& dict, std::string_view surface,
                           std::string_view text) {
    auto canonical = normalize_surface(dict, surface);
    if (canonical) {
        const auto& info = dict.entities.at(*canonical);
        for (const auto& a : info.aliases)
            if (contains_word(text, a)) return true;
        return false;
    }
    return contains_word(text, surface);
}

// Longest-alias normalization: exact alias match first, then the longest
// word-delimited alias occurring inside the surface. Ambiguous-only surfaces
// stay unmatched.
inline std::optional<std::string> normalize_surface(const EntityDictionary& dict,
                                                    std::string_view surface) {
    std::string key = trim(surface);
    if (key.empty()) return std::nullopt;
    std::string folded = dict.case_fold ? to_lower(key) : key;

    auto matches = [&](const std::string& alias) {
        const std::string a = dict.case_fold ? to_lower(alias) : alias;
        return a == folded;
    };
    for (const auto& [canonical, info] : dict.entities)
        for (const auto& a : info.aliases)
            if (matches(a)) return canonical;
    if (dict.ambiguous.count(key)) return std::nullopt;

    // Longest embedded alias (e.g. "Ms. Hermione Granger of Hogwarts").
    const std::string* best_alias = nullptr;
    const std::string* best_canonical = nullptr;
    for (const auto& [canonical, info] : dict.entities) {
        for (const auto& a : info.aliases) {
            if (best_alias && a.size() <= best_alias->size()) continue;
            const std::string probe = dict.case_fold ? to_lower(a) : a;
            if (contains_word(folded, probe)) {
                best_alias = &a;
                best_canonical = &canonical;
            }
        }
    }
    if (best_canonical) return *best_canonical;
    return std::nullopt;
}

}  // namespace longlist
