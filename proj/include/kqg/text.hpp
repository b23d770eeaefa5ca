#pragma once

#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

namespace kqg {

using StopWords = std::unordered_set<std::string>;

/// Lowercases and drops punctuation characters. May return an empty string.
std::string normalize_token(std::string_view token);

std::vector<std::string> normalize_tokens(const std::vector<std::string>& tokens);

/// Splits a concept such as "legislative bodies" into normalized tokens,
/// dropping tokens that normalize to nothing.
std::vector<std::string> concept_tokens(std::string_view concept_text);

/// Whitespace and punctuation splitting, lowercased. Punctuation characters
/// become their own tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Built-in list of English function words.
const StopWords& default_stopwords();

/// One word per line; blank lines and `#` comments skipped.
StopWords load_stopwords(const std::string& path);

struct CoarseTags {
  std::vector<std::string> pos;
  std::vector<std::string> ner;
};

/// Heuristic POS/NER tagger for synthetic data. Works on raw (cased) tokens.
CoarseTags coarse_tag(const std::vector<std::string>& raw_tokens);

}  // namespace kqg
