#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kqg {

/// The six relation buckets; anything unrecognized lands in Others.
enum class Relation : std::uint8_t { Synonymy, RelatedTo, IsA, Hypernymy, Hyponymy, Others };

inline constexpr int kRelationCount = 6;
inline constexpr std::array<Relation, kRelationCount> kAllRelations = {
    Relation::Synonymy, Relation::RelatedTo, Relation::IsA, Relation::Hypernymy, Relation::Hyponymy, Relation::Others};

std::string_view relation_name(Relation r);

/// Maps a raw knowledge-base relation string (case-insensitive, optional
/// "/r/" prefix, plural/singular spellings) onto a Relation.
Relation parse_relation(std::string_view raw);

/// Exact canonical name lookup, as written by relation_name.
std::optional<Relation> relation_from_name(std::string_view name);

enum class KbSource : std::uint8_t { ConceptNet, WordNet };

std::string_view source_name(KbSource s);
std::optional<KbSource> source_from_name(std::string_view name);

struct KnowledgeTriple {
  std::string head;  // normalized, space-joined
  Relation relation = Relation::Others;
  std::string tail;
  KbSource source = KbSource::ConceptNet;

  std::vector<std::string> head_tokens;
  std::vector<std::string> tail_tokens;
};

/// Builds a triple with normalized concepts. Returns nullopt when either
/// concept is empty after normalization.
std::optional<KnowledgeTriple> make_triple(std::string_view head, Relation relation, std::string_view tail,
                                           KbSource source);

/// Triple aligned to a sample: head found in the passage, tail in the question.
struct AlignedTriple {
  KnowledgeTriple triple;
  std::vector<int> head_positions;  // passage token indices
  std::vector<int> tail_positions;  // question token indices
  bool swapped = false;
};

/// First contiguous occurrence of `needle` in `haystack`; empty if absent.
std::vector<int> find_contiguous(const std::vector<std::string>& haystack, const std::vector<std::string>& needle);

}  // namespace kqg
