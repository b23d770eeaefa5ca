#include "kqg/kb_extract.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "kqg/errors.hpp"

namespace kqg {

namespace {

std::string lower_ascii(std::string_view s) {
  std::string out;
  for (char c : s) out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

std::string dedup_key(const KnowledgeTriple& t) {
  return t.head + '\t' + std::string(relation_name(t.relation)) + '\t' + t.tail;
}

int priority(Relation r) { return static_cast<int>(r); }

}  // namespace

// ---- knowledge.hpp ---------------------------------------------------------

std::string_view relation_name(Relation r) {
  switch (r) {
    case Relation::Synonymy: return "Synonymy";
    case Relation::RelatedTo: return "RelatedTo";
    case Relation::IsA: return "IsA";
    case Relation::Hypernymy: return "Hypernymy";
    case Relation::Hyponymy: return "Hyponymy";
    case Relation::Others: return "Others";
  }
  return "Others";
}

Relation parse_relation(std::string_view raw) {
  std::string r = lower_ascii(raw);
  if (r.starts_with("/r/")) r = r.substr(3);
  std::erase_if(r, [](char c) { return c == '_' || c == ' ' || c == '-'; });
  if (r == "synonymy" || r == "synonym" || r == "synonyms") return Relation::Synonymy;
  if (r == "relatedto") return Relation::RelatedTo;
  if (r == "isa") return Relation::IsA;
  if (r == "hypernymy" || r == "hypernym" || r == "hypernyms") return Relation::Hypernymy;
  if (r == "hyponymy" || r == "hyponym" || r == "hyponyms") return Relation::Hyponymy;
  return Relation::Others;
}

std::optional<Relation> relation_from_name(std::string_view name) {
  for (auto r : kAllRelations)
    if (relation_name(r) == name) return r;
  return std::nullopt;
}

std::string_view source_name(KbSource s) { return s == KbSource::ConceptNet ? "ConceptNet" : "WordNet"; }

std::optional<KbSource> source_from_name(std::string_view name) {
  if (name == "ConceptNet") return KbSource::ConceptNet;
  if (name == "WordNet") return KbSource::WordNet;
  return std::nullopt;
}

std::optional<KnowledgeTriple> make_triple(std::string_view head, Relation relation, std::string_view tail,
                                           KbSource source) {
  KnowledgeTriple t;
  t.head_tokens = concept_tokens(head);
  t.tail_tokens = concept_tokens(tail);
  if (t.head_tokens.empty() || t.tail_tokens.empty()) return std::nullopt;
  const auto join = [](const std::vector<std::string>& toks) {
    std::string out;
    for (const auto& w : toks) out += (out.empty() ? "" : " ") + w;
    return out;
  };
  t.head = join(t.head_tokens);
  t.tail = join(t.tail_tokens);
  t.relation = relation;
  t.source = source;
  return t;
}

std::vector<int> find_contiguous(const std::vector<std::string>& haystack, const std::vector<std::string>& needle) {
  if (needle.empty() || needle.size() > haystack.size()) return {};
  for (std::size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), haystack.begin() + static_cast<std::ptrdiff_t>(i))) {
      std::vector<int> pos(needle.size());
      for (std::size_t k = 0; k < needle.size(); ++k) pos[k] = static_cast<int>(i + k);
      return pos;
    }
  }
  return {};
}

// ---- TripleStore -----------------------------------------------------------

bool TripleStore::insert(KnowledgeTriple triple) {
  auto key = dedup_key(triple) + '\t' + std::string(source_name(triple.source));
  if (keys_.count(key)) return false;
  const std::size_t id = triples_.size();
  keys_.emplace(std::move(key), id);
  // A token repeated inside one concept is indexed once.
  for (const auto& tok : std::set<std::string>(triple.head_tokens.begin(), triple.head_tokens.end()))
    head_index_[tok].push_back(id);
  for (const auto& tok : std::set<std::string>(triple.tail_tokens.begin(), triple.tail_tokens.end()))
    tail_index_[tok].push_back(id);
  triples_.push_back(std::move(triple));
  return true;
}

TripleStore parse_knowledge_base(std::istream& in, KbSource source) {
  TripleStore store;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3)
      throw ParseError("expected 3 tab-separated fields, found " + std::to_string(fields.size()), lineno);
    auto triple = make_triple(fields[0], parse_relation(fields[1]), fields[2], source);
    if (!triple) throw ParseError("empty concept after normalization", lineno);
    store.insert(std::move(*triple));
  }
  return store;
}

TripleStore load_knowledge_base(const std::filesystem::path& path, KbSource source) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open knowledge base '" + path.string() + "'");
  return parse_knowledge_base(in, source);
}

// ---- extraction ------------------------------------------------------------

std::vector<KnowledgeTriple> retrieve_candidates(const std::vector<std::string>& passage_tokens,
                                                 const StopWords& stopwords, const TripleStore& store) {
  std::set<std::size_t> hits;
  for (const auto& raw : passage_tokens) {
    const auto tok = normalize_token(raw);
    if (tok.empty() || stopwords.count(tok)) continue;
    // Tails are indexed too so reversed triples can reach the swap rule.
    for (const auto* index : {&store.head_index(), &store.tail_index()})
      if (auto it = index->find(tok); it != index->end()) hits.insert(it->second.begin(), it->second.end());
  }
  std::vector<KnowledgeTriple> out;
  out.reserve(hits.size());
  for (auto id : hits) out.push_back(store.triples()[id]);
  return out;
}

std::vector<AlignedTriple> align_filter(const std::vector<KnowledgeTriple>& candidates,
                                        const std::vector<std::string>& passage_tokens,
                                        const std::vector<std::string>& question_tokens) {
  const auto passage = normalize_tokens(passage_tokens);
  const auto question = normalize_tokens(question_tokens);
  std::vector<AlignedTriple> out;
  for (const auto& cand : candidates) {
    auto hp = find_contiguous(passage, cand.head_tokens);
    auto tq = find_contiguous(question, cand.tail_tokens);
    if (!hp.empty() && !tq.empty()) {
      out.push_back({cand, std::move(hp), std::move(tq), false});
      continue;
    }
    auto tp = find_contiguous(passage, cand.tail_tokens);
    auto hq = find_contiguous(question, cand.head_tokens);
    if (!tp.empty() && !hq.empty()) {
      AlignedTriple a{cand, std::move(tp), std::move(hq), true};
      std::swap(a.triple.head, a.triple.tail);
      std::swap(a.triple.head_tokens, a.triple.tail_tokens);
      out.push_back(std::move(a));
    }
  }
  return out;
}

std::vector<AlignedTriple> merge_dedup(const std::vector<AlignedTriple>& a, const std::vector<AlignedTriple>& b) {
  std::set<std::string> seen;
  std::vector<AlignedTriple> out;
  for (const auto* list : {&a, &b})
    for (const auto& t : *list)
      if (seen.insert(dedup_key(t.triple)).second) out.push_back(t);
  return out;
}

std::optional<AlignedTriple> select_training_triple(const std::vector<AlignedTriple>& aligned) {
  const AlignedTriple* best = nullptr;
  for (const auto& t : aligned)
    if (!best || priority(t.triple.relation) < priority(best->triple.relation)) best = &t;
  if (!best) return std::nullopt;
  return *best;
}

std::vector<AlignedTriple> extract_for_sample(const TrainingSample& sample, const std::vector<const TripleStore*>& stores,
                                              const StopWords& stopwords) {
  std::vector<AlignedTriple> merged;
  for (const auto* store : stores) {
    const auto aligned = align_filter(retrieve_candidates(sample.passage, stopwords, *store), sample.passage,
                                      sample.question);
    merged = merge_dedup(merged, aligned);
  }
  return merged;
}

ExtractionSummary annotate_corpus(std::vector<TrainingSample>& samples, const std::vector<const TripleStore*>& stores,
                                  const StopWords& stopwords) {
  ExtractionSummary summary;
  for (auto& s : samples) {
    std::vector<AlignedTriple> merged;
    for (const auto* store : stores) {
      const auto aligned = align_filter(retrieve_candidates(s.passage, stopwords, *store), s.passage, s.question);
      if (!aligned.empty()) ++summary.equipped_by_source[aligned.front().triple.source];
      merged = merge_dedup(merged, aligned);
    }
    s.triples = std::move(merged);
  }
  return summary;
}

Partition partition_dataset(const std::vector<TrainingSample>& samples) {
  Partition p;
  for (const auto& s : samples) (s.triples.empty() ? p.pure : p.equipped).push_back(s);
  return p;
}

StatsReport stats_report(const std::vector<TrainingSample>& equipped, const std::vector<TrainingSample>& pure) {
  StatsReport r;
  r.equipped_count = equipped.size();
  r.pure_count = pure.size();
  r.total_samples = r.equipped_count + r.pure_count;
  r.equipped_fraction = r.total_samples ? double(r.equipped_count) / double(r.total_samples) : 0.0;
  std::array<std::size_t, kRelationCount> counts{};
  for (const auto* part : {&equipped, &pure})
    for (const auto& s : *part)
      for (const auto& t : s.triples) {
        ++counts[static_cast<std::size_t>(t.triple.relation)];
        ++r.triple_count;
      }
  std::size_t equipped_triples = 0;
  for (const auto& s : equipped) equipped_triples += s.triples.size();
  r.triples_per_equipped_sample = r.equipped_count ? double(equipped_triples) / double(r.equipped_count) : 0.0;
  if (r.triple_count)
    for (std::size_t k = 0; k < counts.size(); ++k) r.relation_histogram[k] = double(counts[k]) / double(r.triple_count);
  return r;
}

nlohmann::json stats_to_json(const StatsReport& r) {
  nlohmann::json hist = nlohmann::json::object();
  for (auto rel : kAllRelations) hist[std::string(relation_name(rel))] = r.relation_histogram[static_cast<std::size_t>(rel)];
  return {{"total_samples", r.total_samples},
          {"equipped_count", r.equipped_count},
          {"pure_count", r.pure_count},
          {"equipped_fraction", r.equipped_fraction},
          {"triples_per_equipped_sample", r.triples_per_equipped_sample},
          {"triple_count", r.triple_count},
          {"relation_histogram", hist}};
}

}  // namespace kqg
