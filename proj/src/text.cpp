#include "kqg/text.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "kqg/errors.hpp"

namespace kqg {

namespace {

bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

bool all_of_digits(const std::string& s) {
  bool digit = false;
  for (char c : s) {
    if (std::isdigit(static_cast<unsigned char>(c))) {
      digit = true;
    } else if (c != '.' && c != ',') {
      return false;
    }
  }
  return digit;
}

const std::unordered_set<std::string> kDeterminers = {"a", "an", "the", "this", "that", "these", "those", "some", "any"};
const std::unordered_set<std::string> kPrepositions = {"of",   "in",   "on",   "at",    "by",   "for",
                                                       "with", "from", "to",   "into",  "over", "during",
                                                       "as",   "than", "about", "under", "after", "before"};
const std::unordered_set<std::string> kWh = {"what", "which", "who", "whom", "whose", "when", "where", "why", "how"};
const std::unordered_set<std::string> kAux = {"is",  "are", "was",  "were", "be",   "been", "has",
                                              "have", "had", "does", "do",   "did", "can",  "will"};

}  // namespace

std::string normalize_token(std::string_view token) {
  std::string out;
  out.reserve(token.size());
  for (char c : token)
    if (!is_punct(c) && !is_space(c)) out.push_back(lower(c));
  return out;
}

std::vector<std::string> normalize_tokens(const std::vector<std::string>& tokens) {
  std::vector<std::string> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(normalize_token(t));
  return out;
}

std::vector<std::string> concept_tokens(std::string_view concept_text) {
  std::vector<std::string> out;
  std::string word;
  std::istringstream in{std::string(concept_text)};
  while (in >> word) {
    // ConceptNet uses underscores inside multi-word concepts.
    std::replace(word.begin(), word.end(), '_', ' ');
    std::istringstream parts(word);
    std::string part;
    while (parts >> part) {
      auto norm = normalize_token(part);
      if (!norm.empty()) out.push_back(std::move(norm));
    }
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  const auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(lower(c));
    }
  }
  flush();
  return out;
}

const StopWords& default_stopwords() {
  static const StopWords words = {
      "a",       "about",   "above",  "after",   "again",  "against", "all",     "am",      "an",      "and",
      "any",     "are",     "as",     "at",      "be",     "because", "been",    "before",  "being",   "below",
      "between", "both",    "but",    "by",      "can",    "could",   "did",     "do",      "does",    "doing",
      "down",    "during",  "each",   "few",     "for",    "from",    "further", "had",     "has",     "have",
      "having",  "he",      "her",    "here",    "hers",   "herself", "him",     "himself", "his",     "how",
      "i",       "if",      "in",     "into",    "is",     "it",      "its",     "itself",  "just",    "me",
      "more",    "most",    "my",     "myself",  "no",     "nor",     "not",     "now",     "of",      "off",
      "on",      "once",    "only",   "or",      "other",  "our",     "ours",    "ourselves", "out",   "over",
      "own",     "same",    "she",    "should",  "so",     "some",    "such",    "than",    "that",    "the",
      "their",   "theirs",  "them",   "themselves", "then", "there",  "these",   "they",    "this",    "those",
      "through", "to",      "too",    "under",   "until",  "up",      "very",    "was",     "we",      "were",
      "what",    "when",    "where",  "which",   "while",  "who",     "whom",    "why",     "will",    "with",
      "would",   "you",     "your",   "yours",   "yourself", "yourselves", "also", "among",  "upon",    "within",
      "without", "may",     "might",  "must",    "shall",  "us",      "whose",   "s",       "t",       "one",
      "many",    "much",    "every",  "either",  "neither", "yet",    "via",     "per",     "onto",    "toward",
      "towards", "across",  "along",  "around",  "behind", "beside",  "beyond",  "despite", "inside",  "near",
  };
  return words;
}

StopWords load_stopwords(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open stop-word file '" + path + "'");
  StopWords out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto w = normalize_token(line);
    if (!w.empty()) out.insert(std::move(w));
  }
  return out;
}

CoarseTags coarse_tag(const std::vector<std::string>& raw_tokens) {
  CoarseTags tags;
  for (std::size_t i = 0; i < raw_tokens.size(); ++i) {
    const auto& raw = raw_tokens[i];
    std::string low;
    for (char c : raw) low.push_back(lower(c));
    const bool capital = !raw.empty() && std::isupper(static_cast<unsigned char>(raw[0]));
    std::string pos, ner = "O";
    if (!raw.empty() && std::all_of(raw.begin(), raw.end(), is_punct)) {
      pos = ".";
    } else if (all_of_digits(raw)) {
      pos = "CD";
      ner = "NUMBER";
    } else if (kWh.count(low)) {
      pos = "WH";
    } else if (kDeterminers.count(low)) {
      pos = "DT";
    } else if (kPrepositions.count(low)) {
      pos = "IN";
    } else if (kAux.count(low)) {
      pos = "VB";
    } else if (capital && i > 0) {
      pos = "NNP";
      ner = "ENTITY";
    } else if (low.size() > 3 && low.ends_with("ly")) {
      pos = "RB";
    } else if (low.size() > 4 && (low.ends_with("ing") || low.ends_with("ed"))) {
      pos = "VB";
    } else {
      pos = "NN";
    }
    tags.pos.push_back(std::move(pos));
    tags.ner.push_back(std::move(ner));
  }
  return tags;
}

}  // namespace kqg
