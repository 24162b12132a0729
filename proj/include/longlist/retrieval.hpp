#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "longlist/common.hpp"
#include "longlist/corpus.hpp"
#include "longlist/providers.hpp"

namespace longlist {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct IndexEntry {
    std::string passage_id;
    int seq = 0;
    EmbeddingVector vec;                        // unit-normalized at build time
    std::set<std::string> mention_canonicals;   // local + context canonicals
    std::map<EntityType, int> typed_counts;     // local mention counts by type
};

struct QuerySpec {
    std::string subject;
    std::string predicate;
    int template_id = 1;  // 1..5
    std::string text;
};

struct ScoredPassage {
    std::string passage_id;
    double score = 0.0;  // cosine in [-1, 1]
    int rank = 0;        // contiguous from 1
};

class PassageIndex {
public:
    PassageIndex() = default;
    PassageIndex(std::string book_id, int dim) : book_id_(std::move(book_id)), dim_(dim) {}

    void add(IndexEntry entry) {
        if (entry.vec.dim() != dim_)
            throw DimensionMismatchError("index entry dim " + std::to_string(entry.vec.dim()) +
                                         " != index dim " + std::to_string(dim_));
        auto [it, inserted] = by_id_.emplace(entry.passage_id, entries_.size());
        if (!inserted) throw InputError("duplicate passage id in index: " + entry.passage_id);
        entries_.push_back(std::move(entry));
    }

    const std::vector<IndexEntry>& entries() const { return entries_; }
    const std::string& book_id() const { return book_id_; }
    int dim() const { return dim_; }
    std::size_t size() const { return entries_.size(); }

    const IndexEntry* find(const std::string& passage_id) const {
        auto it = by_id_.find(passage_id);
        return it == by_id_.end() ? nullptr : &entries_[it->second];
    }

    const IndexEntry& at(const std::string& passage_id) const {
        const IndexEntry* e = find(passage_id);
        if (e == nullptr) throw InputError("passage id not in index: " + passage_id);
        return *e;
    }

private:
    std::string book_id_;
    int dim_ = 0;
    std::vector<IndexEntry> entries_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

inline PassageIndex build_index(const std::vector<EnrichedPassage>& passages,
                                EmbeddingProvider& embedder, std::size_t embed_batch = 32) {
    if (passages.empty()) throw InputError("cannot index an empty passage list");

    std::vector<std::string> texts;
    texts.reserve(passages.size());
    for (const auto& ep : passages) texts.push_back(ep.enriched_text);

    std::vector<EmbeddingVector> vecs;
    vecs.reserve(passages.size());
    for (std::size_t i = 0; i < texts.size(); i += embed_batch) {
        std::vector<std::string> chunk(texts.begin() + i,
                                       texts.begin() + std::min(i + embed_batch, texts.size()));
        auto got = embedder.embed(chunk);
        for (auto& v : got) vecs.push_back(std::move(v));
    }

    PassageIndex index(passages.front().passage.book_id, vecs.front().dim());
    for (std::size_t i = 0; i < passages.size(); ++i) {
        IndexEntry e;
        e.passage_id = passages[i].passage.id;
        e.seq = passages[i].passage.seq;
        e.vec = std::move(vecs[i]);
        e.vec.normalize();
        for (const auto& m : passages[i].local_mentions) {
            if (m.canonical) e.mention_canonicals.insert(*m.canonical);
            e.typed_counts[m.entity_type] += 1;
        }
        for (const auto& m : passages[i].context_mentions)
            if (m.canonical) e.mention_canonicals.insert(*m.canonical);
        index.add(std::move(e));
    }
    return index;
}

// Five query formulations per (subject, predicate); template 1 is the one
// used in single mode. Paraphrase choice rotates so the renderings differ.
inline std::vector<QuerySpec> make_queries(const std::string& subject,
                                           const std::string& predicate,
                                           const EntityDictionary& dict, int n_templates) {
    auto it = dict.predicate_paraphrases.find(predicate);
    if (it == dict.predicate_paraphrases.end() || it->second.empty())
        throw InputError("no paraphrases for predicate: " + predicate);
    const auto& phrases = it->second;
    if (n_templates < 1 || n_templates > 5)
        throw ConfigError("n_templates must be in 1..5");

    auto phrase = [&](int t) { return phrases[static_cast<std::size_t>(t - 1) % phrases.size()]; };
    std::vector<QuerySpec> out;
    for (int t = 1; t <= n_templates; ++t) {
        QuerySpec q;
        q.subject = subject;
        q.predicate = predicate;
        q.template_id = t;
        switch (t) {
            case 1: q.text = subject + " " + phrase(t); break;
            case 2: q.text = "Who are the " + phrase(t) + " of " + subject + "?"; break;
            case 3: q.text = "List all " + phrase(t) + " of " + subject + "."; break;
            case 4: q.text = subject + " and their " + phrase(t) + " in the book"; break;
            case 5: q.text = "Passages about " + subject + " " + phrase(t); break;
        }
        out.push_back(std::move(q));
    }
    return out;
}

// Exhaustive exact top-d by cosine, ties broken by ascending seq.
inline std::vector<ScoredPassage> retrieve(const PassageIndex& index,
                                           const EmbeddingVector& query_vec, int d) {
    if (query_vec.dim() != index.dim())
        throw DimensionMismatchError("query dim " + std::to_string(query_vec.dim()) +
                                     " != index dim " + std::to_string(index.dim()));
    if (d < 1) throw ConfigError("d must be >= 1");

    EmbeddingVector q = query_vec;
    q.normalize();
    struct Hit {
        double score;
        int seq;
        const IndexEntry* entry;
    };
    std::vector<Hit> hits;
    hits.reserve(index.size());
    for (const auto& e : index.entries()) hits.push_back({q.dot(e.vec), e.seq, &e});
    std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.seq < b.seq;
    });
    std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(d), hits.size());
    std::vector<ScoredPassage> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        out.push_back({hits[i].entry->passage_id, hits[i].score, static_cast<int>(i + 1)});
    return out;
}

// Deduplicated union over per-template retrievals, keeping each passage's max
// score; re-ranked by (score desc, passage id asc).
inline std::vector<ScoredPassage> merge_pools(
    const std::vector<std::vector<ScoredPassage>>& pools) {
    std::map<std::string, double> best;
    for (const auto& pool : pools)
        for (const auto& sp : pool) {
            auto [it, inserted] = best.emplace(sp.passage_id, sp.score);
            if (!inserted && sp.score > it->second) it->second = sp.score;
        }
    std::vector<ScoredPassage> out;
    out.reserve(best.size());
    for (const auto& [id, score] : best) out.push_back({id, score, 0});
    std::sort(out.begin(), out.end(), [](const ScoredPassage& a, const ScoredPassage& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.passage_id < b.passage_id;
    });
    for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i + 1);
    return out;
}

// ---------------------------------------------------------------------------
// Index persistence (JSONL sidecar so runs do not re-embed).
// ---------------------------------------------------------------------------

inline void save_index(const PassageIndex& index, const std::filesystem::path& path) {
    std::vector<json> lines;
    lines.reserve(index.size() + 1);
    lines.push_back({{"book_id", index.book_id()}, {"dim", index.dim()}});
    for (const auto& e : index.entries()) {
        json counts = json::object();
        for (const auto& [t, c] : e.typed_counts) counts[to_string(t)] = c;
        lines.push_back({{"passage_id", e.passage_id},
                         {"seq", e.seq},
                         {"vector", e.vec.values},
                         {"canonicals", e.mention_canonicals},
                         {"counts", counts}});
    }
    write_jsonl(path, lines);
}

inline PassageIndex load_index(const std::filesystem::path& path) {
    auto lines = read_jsonl(path);
    if (lines.empty()) throw InputError("empty index file: " + path.string());
    PassageIndex index(lines[0].at("book_id").get<std::string>(), lines[0].at("dim").get<int>());
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const json& j = lines[i];
        IndexEntry e;
        e.passage_id = j.at("passage_id").get<std::string>();
        e.seq = j.at("seq").get<int>();
        e.vec.values = j.at("vector").get<std::vector<double>>();
        for (const auto& c : j.at("canonicals")) e.mention_canonicals.insert(c.get<std::string>());
        for (auto it = j.at("counts").begin(); it != j.at("counts").end(); ++it)
            e.typed_counts[entity_type_from_string(it.key())] = it.value().get<int>();
        index.add(std::move(e));
    }
    return index;
}

}  // namespace longlist
