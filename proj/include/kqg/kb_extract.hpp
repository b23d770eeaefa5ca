#pragma once

// Knowledge extraction: load triple dumps, retrieve candidates for a passage,
// keep the triples bridging passage and question, and summarize the corpus.

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kqg/corpus.hpp"
#include "kqg/knowledge.hpp"
#include "kqg/text.hpp"

namespace kqg {

/// Deduplicated triples with token indexes over heads and tails. Read-only
/// after loading.
class TripleStore {
 public:
  /// Returns false (and stores nothing) for an exact duplicate.
  bool insert(KnowledgeTriple triple);

  std::size_t size() const { return triples_.size(); }
  const std::vector<KnowledgeTriple>& triples() const { return triples_; }
  const std::map<std::string, std::vector<std::size_t>>& head_index() const { return head_index_; }
  const std::map<std::string, std::vector<std::size_t>>& tail_index() const { return tail_index_; }

 private:
  std::vector<KnowledgeTriple> triples_;
  std::map<std::string, std::vector<std::size_t>> head_index_;
  std::map<std::string, std::vector<std::size_t>> tail_index_;
  std::map<std::string, std::size_t> keys_;
};

/// Parses `head<TAB>relation<TAB>tail` lines; `#` lines and blank lines are
/// skipped. Throws ParseError with the line number on a bad field count.
TripleStore parse_knowledge_base(std::istream& in, KbSource source);
TripleStore load_knowledge_base(const std::filesystem::path& path, KbSource source);

/// Triples indexed under any non-stop passage token, in store order.
std::vector<KnowledgeTriple> retrieve_candidates(const std::vector<std::string>& passage_tokens,
                                                 const StopWords& stopwords, const TripleStore& store);

/// Keeps triples whose head occurs in the passage and tail in the question,
/// swapping head and tail when the orientation is reversed.
std::vector<AlignedTriple> align_filter(const std::vector<KnowledgeTriple>& candidates,
                                        const std::vector<std::string>& passage_tokens,
                                        const std::vector<std::string>& question_tokens);

/// Concatenation without repeated (head, relation, tail); first occurrence wins.
std::vector<AlignedTriple> merge_dedup(const std::vector<AlignedTriple>& a, const std::vector<AlignedTriple>& b);

/// Highest-priority relation first (Synonymy > RelatedTo > IsA > Hypernymy >
/// Hyponymy > Others); ties keep list order.
std::optional<AlignedTriple> select_training_triple(const std::vector<AlignedTriple>& aligned);

/// Runs retrieval + filtering against every store and merges the results.
std::vector<AlignedTriple> extract_for_sample(const TrainingSample& sample, const std::vector<const TripleStore*>& stores,
                                              const StopWords& stopwords);

struct ExtractionSummary {
  std::map<KbSource, std::size_t> equipped_by_source;
};

/// Annotates every sample in place. Sample order and content are otherwise untouched.
ExtractionSummary annotate_corpus(std::vector<TrainingSample>& samples, const std::vector<const TripleStore*>& stores,
                                  const StopWords& stopwords);

struct Partition {
  std::vector<TrainingSample> equipped;
  std::vector<TrainingSample> pure;
};

Partition partition_dataset(const std::vector<TrainingSample>& samples);

struct StatsReport {
  std::size_t total_samples = 0;
  std::size_t equipped_count = 0;
  std::size_t pure_count = 0;
  double equipped_fraction = 0.0;
  double triples_per_equipped_sample = 0.0;
  std::array<double, kRelationCount> relation_histogram{};
  std::size_t triple_count = 0;
};

StatsReport stats_report(const std::vector<TrainingSample>& equipped, const std::vector<TrainingSample>& pure);
nlohmann::json stats_to_json(const StatsReport& report);

}  // namespace kqg
