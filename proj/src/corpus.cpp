#include "kqg/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "kqg/errors.hpp"
#include "kqg/kb_extract.hpp"

namespace kqg {

namespace {

std::string lowercase(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

std::vector<std::string> string_list(const nlohmann::json& j, const char* field, std::size_t line) {
  if (!j.contains(field) || !j.at(field).is_array()) throw ParseError(std::string("missing array field '") + field + "'", line);
  std::vector<std::string> out;
  for (const auto& v : j.at(field)) {
    if (!v.is_string()) throw ParseError(std::string("non-string entry in '") + field + "'", line);
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

void validate_sample(const TrainingSample& s) {
  const auto n = static_cast<int>(s.passage.size());
  if (n == 0) throw ValidationError("sample '" + s.id + "': empty passage");
  if (s.pos.size() != s.passage.size() || s.ner.size() != s.passage.size())
    throw ValidationError("sample '" + s.id + "': tag lists must align with passage tokens");
  if (s.answer.start < 0 || s.answer.start > s.answer.end || s.answer.end >= n)
    throw ValidationError("sample '" + s.id + "': answer span out of range");
  if (s.question.empty()) throw ValidationError("sample '" + s.id + "': empty question");
}

nlohmann::json triple_to_json(const AlignedTriple& t) {
  return {{"head", t.triple.head},
          {"relation", std::string(relation_name(t.triple.relation))},
          {"tail", t.triple.tail},
          {"swapped", t.swapped},
          {"source", std::string(source_name(t.triple.source))}};
}

TrainingSample sample_from_json(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) throw ParseError("sample is not a JSON object", line);
  TrainingSample s;
  if (j.contains("id")) s.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
  for (auto& tok : (s.passage = string_list(j, "passage", line))) tok = lowercase(tok);
  for (auto& tok : (s.question = string_list(j, "question", line))) tok = lowercase(tok);
  s.pos = string_list(j, "pos", line);
  s.ner = string_list(j, "ner", line);
  const auto& span = j.value("answer_span", nlohmann::json());
  if (!span.is_array() || span.size() != 2 || !span[0].is_number_integer() || !span[1].is_number_integer())
    throw ParseError("answer_span must be [start, end]", line);
  s.answer = {span[0].get<int>(), span[1].get<int>()};
  try {
    validate_sample(s);
  } catch (const ValidationError& e) {
    throw ParseError(e.what(), line);
  }
  if (j.contains("triples")) {
    const auto passage = normalize_tokens(s.passage);
    const auto question = normalize_tokens(s.question);
    for (const auto& jt : j.at("triples")) {
      const auto rel = relation_from_name(jt.value("relation", ""));
      if (!rel) throw ParseError("unknown relation '" + jt.value("relation", "") + "'", line);
      const auto src = source_from_name(jt.value("source", "ConceptNet"));
      if (!src) throw ParseError("unknown source '" + jt.value("source", "") + "'", line);
      auto triple = make_triple(jt.value("head", ""), *rel, jt.value("tail", ""), *src);
      if (!triple) throw ParseError("triple with empty concept", line);
      AlignedTriple a;
      a.head_positions = find_contiguous(passage, triple->head_tokens);
      a.tail_positions = find_contiguous(question, triple->tail_tokens);
      if (a.head_positions.empty() || a.tail_positions.empty())
        throw ParseError("triple (" + triple->head + ", " + triple->tail + ") does not align with its sample", line);
      a.swapped = jt.value("swapped", false);
      a.triple = std::move(*triple);
      s.triples.push_back(std::move(a));
    }
  }
  return s;
}

nlohmann::json sample_to_json(const TrainingSample& s) {
  nlohmann::json j;
  j["id"] = s.id;
  j["passage"] = s.passage;
  j["answer_span"] = {s.answer.start, s.answer.end};
  j["pos"] = s.pos;
  j["ner"] = s.ner;
  j["question"] = s.question;
  j["triples"] = nlohmann::json::array();
  for (const auto& t : s.triples) j["triples"].push_back(triple_to_json(t));
  return j;
}

std::vector<TrainingSample> load_samples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open dataset '" + path.string() + "'");
  std::vector<TrainingSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("invalid JSON: ") + e.what(), lineno);
    }
    auto s = sample_from_json(j, lineno);
    if (s.id.empty()) s.id = std::to_string(out.size());
    out.push_back(std::move(s));
  }
  return out;
}

void write_samples(const std::filesystem::path& path, const std::vector<TrainingSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  for (const auto& s : samples) out << sample_to_json(s).dump() << '\n';
}

std::vector<BioTag> bio_from_span(int passage_len, AnswerSpan span) {
  if (span.start < 0 || span.start > span.end || span.end >= passage_len)
    throw ValidationError("bio_from_span: span [" + std::to_string(span.start) + ", " + std::to_string(span.end) +
                          "] out of range for length " + std::to_string(passage_len));
  std::vector<BioTag> tags(static_cast<std::size_t>(passage_len), kBioO);
  tags[static_cast<std::size_t>(span.start)] = kBioB;
  for (int i = span.start + 1; i <= span.end; ++i) tags[static_cast<std::size_t>(i)] = kBioI;
  return tags;
}

// ---- vocabularies ----------------------------------------------------------

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& regular_tokens) {
  tokens_ = {"<pad>", "<unk>", "<s>", "</s>"};
  for (int i = 0; i < kReserved; ++i) ids_.emplace(tokens_[static_cast<std::size_t>(i)], i);
  for (const auto& t : regular_tokens) {
    if (ids_.count(t)) throw ValidationError("vocabulary: duplicate token '" + t + "'");
    ids_.emplace(t, size());
    tokens_.push_back(t);
  }
}

int Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ValidationError("vocabulary: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write '" + path.string() + "'");
  for (int i = kReserved; i < size(); ++i) out << tokens_[static_cast<std::size_t>(i)] << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vocabulary '" + path.string() + "'");
  std::vector<std::string> toks;
  std::string line;
  while (std::getline(in, line)) toks.push_back(line);
  return Vocabulary(toks);
}

Vocabulary build_vocab(const std::vector<TrainingSample>& samples, int max_size, int min_freq) {
  if (max_size <= Vocabulary::kReserved) throw ValidationError("build_vocab: max_size must exceed the reserved tokens");
  std::map<std::string, int> freq;
  for (const auto& s : samples) {
    for (const auto& t : s.passage) ++freq[t];
    for (const auto& t : s.question) ++freq[t];
  }
  std::vector<std::pair<std::string, int>> ranked;
  const Vocabulary reserved;
  for (auto& [tok, n] : freq)
    if (n >= min_freq && !reserved.contains(tok)) ranked.emplace_back(tok, n);
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> keep;
  for (const auto& [tok, n] : ranked) {
    if (static_cast<int>(keep.size()) + Vocabulary::kReserved >= max_size) break;
    keep.push_back(tok);
  }
  return Vocabulary(keep);
}

TagVocabulary::TagVocabulary(std::vector<std::string> tags) : tags_(std::move(tags)) {
  for (std::size_t i = 0; i < tags_.size(); ++i) ids_.emplace(tags_[i], static_cast<int>(i) + 1);
}

int TagVocabulary::id(const std::string& tag) const {
  auto it = ids_.find(tag);
  if (it == ids_.end()) throw ValidationError("unknown tag '" + tag + "'");
  return it->second;
}

TagVocabulary build_tag_vocab(const std::vector<TrainingSample>& samples, TagField field) {
  std::set<std::string> tags;
  for (const auto& s : samples)
    for (const auto& t : field == TagField::Pos ? s.pos : s.ner) tags.insert(t);
  return TagVocabulary({tags.begin(), tags.end()});
}

// ---- batching --------------------------------------------------------------

std::string Batch::surface(int b, int id, const Vocabulary& vocab) const {
  if (id < vocab_size) return vocab.token(id);
  const auto& oov = oov_tokens[static_cast<std::size_t>(b)];
  const auto k = static_cast<std::size_t>(id - vocab_size);
  if (k >= oov.size()) throw ValidationError("extended id " + std::to_string(id) + " out of range");
  return oov[k];
}

Batch encode_batch(const std::vector<TrainingSample>& samples, const Vocabulary& vocab, const TagVocabulary& pos,
                   const TagVocabulary& ner) {
  if (samples.empty()) throw ValidationError("encode_batch: no samples");
  const auto B = static_cast<Eigen::Index>(samples.size());
  Eigen::Index lp = 0, lq = 0;
  for (const auto& s : samples) {
    validate_sample(s);
    lp = std::max<Eigen::Index>(lp, static_cast<Eigen::Index>(s.passage.size()));
    lq = std::max<Eigen::Index>(lq, static_cast<Eigen::Index>(s.question.size()) + 2);
  }
  Batch batch;
  batch.vocab_size = vocab.size();
  for (auto* m : {&batch.passage_ids, &batch.bio_ids, &batch.pos_ids, &batch.ner_ids, &batch.copy_ids})
    m->setConstant(B, lp, Vocabulary::kPad);
  batch.question_ids.setConstant(B, lq, Vocabulary::kPad);
  batch.question_targets.setConstant(B, lq, Vocabulary::kPad);
  batch.passage_lengths.resize(B);
  batch.question_lengths.resize(B);
  batch.oov_tokens.resize(samples.size());
  batch.triples.resize(samples.size());

  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& s = samples[static_cast<std::size_t>(b)];
    auto& oov = batch.oov_tokens[static_cast<std::size_t>(b)];
    std::map<std::string, int> oov_ids;
    const auto extended = [&](const std::string& tok) {
      if (vocab.contains(tok)) return vocab.id(tok);
      auto it = oov_ids.find(tok);
      return it == oov_ids.end() ? Vocabulary::kUnk : it->second;
    };

    const auto bio = bio_from_span(static_cast<int>(s.passage.size()), s.answer);
    for (std::size_t i = 0; i < s.passage.size(); ++i) {
      const auto& tok = s.passage[i];
      const auto col = static_cast<Eigen::Index>(i);
      batch.passage_ids(b, col) = vocab.id(tok);
      batch.bio_ids(b, col) = bio[i];
      batch.pos_ids(b, col) = pos.id(s.pos[i]);
      batch.ner_ids(b, col) = ner.id(s.ner[i]);
      if (!vocab.contains(tok) && !oov_ids.count(tok)) {
        oov_ids.emplace(tok, vocab.size() + static_cast<int>(oov.size()));
        oov.push_back(tok);
      }
      batch.copy_ids(b, col) = extended(tok);
    }
    batch.passage_lengths(b) = static_cast<int>(s.passage.size());

    batch.question_ids(b, 0) = batch.question_targets(b, 0) = Vocabulary::kBos;
    for (std::size_t t = 0; t < s.question.size(); ++t) {
      const auto col = static_cast<Eigen::Index>(t + 1);
      batch.question_ids(b, col) = vocab.id(s.question[t]);
      batch.question_targets(b, col) = extended(s.question[t]);
    }
    const auto eos = static_cast<Eigen::Index>(s.question.size() + 1);
    batch.question_ids(b, eos) = batch.question_targets(b, eos) = Vocabulary::kEos;
    batch.question_lengths(b) = static_cast<int>(s.question.size() + 2);

    if (auto chosen = select_training_triple(s.triples)) {
      EncodedTriple et;
      for (const auto& t : chosen->triple.head_tokens) et.head_ids.push_back(vocab.id(t));
      for (const auto& t : chosen->triple.tail_tokens) {
        et.tail_ids.push_back(vocab.id(t));
        et.tail_targets.push_back(extended(t));
      }
      et.tail_targets.push_back(Vocabulary::kEos);
      et.relation = chosen->triple.relation;
      batch.triples[static_cast<std::size_t>(b)] = std::move(et);
    }
  }
  return batch;
}

}  // namespace kqg
