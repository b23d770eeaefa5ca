#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "kqg/knowledge.hpp"
#include "json.hpp"

namespace kqg {

struct AnswerSpan {
  int start = 0;
  int end = 0;  // inclusive
};

struct TrainingSample {
  std::string id;
  std::vector<std::string> passage;
  AnswerSpan answer;
  std::vector<std::string> pos;
  std::vector<std::string> ner;
  std::vector<std::string> question;
  std::vector<AlignedTriple> triples;
};

/// Throws ValidationError when tag lengths, span bounds or the question are off.
void validate_sample(const TrainingSample& sample);

TrainingSample sample_from_json(const nlohmann::json& j, std::size_t line = 0);
nlohmann::json sample_to_json(const TrainingSample& sample);
nlohmann::json triple_to_json(const AlignedTriple& t);

/// Reads JSONL; tokens are lowercased. Missing ids become the line index.
std::vector<TrainingSample> load_samples(const std::filesystem::path& path);
void write_samples(const std::filesystem::path& path, const std::vector<TrainingSample>& samples);

enum BioTag : int { kBioPad = 0, kBioO = 1, kBioB = 2, kBioI = 3 };
inline constexpr int kBioVocabSize = 4;

std::vector<BioTag> bio_from_span(int passage_len, AnswerSpan span);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kReserved = 4;

  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& regular_tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;  // kUnk when absent
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

/// Most frequent passage+question tokens (ties lexicographic), at most
/// `max_size` entries including the reserved ones.
Vocabulary build_vocab(const std::vector<TrainingSample>& samples, int max_size = 5000, int min_freq = 1);

/// Closed tag inventory with id 0 reserved for padding.
class TagVocabulary {
 public:
  TagVocabulary() = default;
  explicit TagVocabulary(std::vector<std::string> tags);

  int size() const { return static_cast<int>(tags_.size()) + 1; }
  int id(const std::string& tag) const;  // throws ValidationError when unknown
  const std::vector<std::string>& tags() const { return tags_; }

 private:
  std::vector<std::string> tags_;
  std::unordered_map<std::string, int> ids_;
};

enum class TagField { Pos, Ner };
TagVocabulary build_tag_vocab(const std::vector<TrainingSample>& samples, TagField field);

struct EncodedTriple {
  std::vector<int> head_ids;
  Relation relation = Relation::Others;
  std::vector<int> tail_ids;      // plain ids, UNK for OOV
  std::vector<int> tail_targets;  // extended ids followed by EOS
};

using IdMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Padded ids for a group of samples. Row b describes sample b.
struct Batch {
  IdMatrix passage_ids;     // [B x Lp], UNK for OOV
  IdMatrix bio_ids;         // [B x Lp]
  IdMatrix pos_ids;         // [B x Lp]
  IdMatrix ner_ids;         // [B x Lp]
  IdMatrix copy_ids;        // [B x Lp], extended ids
  Eigen::VectorXi passage_lengths;
  IdMatrix question_ids;    // [B x Lq], BOS ... EOS, UNK for OOV
  IdMatrix question_targets;  // [B x Lq], BOS ... EOS, extended ids
  Eigen::VectorXi question_lengths;  // includes BOS and EOS
  std::vector<std::vector<std::string>> oov_tokens;  // extended id vocab_size + k -> oov_tokens[b][k]
  std::vector<std::optional<EncodedTriple>> triples;
  int vocab_size = 0;

  int size() const { return static_cast<int>(passage_lengths.size()); }
  int extended_size(int b) const { return vocab_size + static_cast<int>(oov_tokens[static_cast<std::size_t>(b)].size()); }
  /// Maps an id (possibly extended) of row b back to a surface token.
  std::string surface(int b, int id, const Vocabulary& vocab) const;
};

Batch encode_batch(const std::vector<TrainingSample>& samples, const Vocabulary& vocab, const TagVocabulary& pos,
                   const TagVocabulary& ner);

}  // namespace kqg
