#include "kqg/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "kqg/errors.hpp"

namespace kqg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"hidden_size", "600", "encoder output width and decoder state size"},
      {"layers", "2", "LSTM layers in every encoder and decoder"},
      {"word_dim", "100", "word embedding size"},
      {"feature_dim", "8", "size of each BIO / POS / NER feature embedding"},
      {"dropout", "0.3", "dropout rate"},
      {"init_range", "0.1", "uniform initialisation half-width"},
      {"lr", "0.001", "Adam learning rate"},
      {"clip", "5", "gradient L2 clipping threshold"},
      {"batch_size", "16", "samples per step"},
      {"itf_n", "3000", "steps per phase"},
      {"itf_cycles", "3", "equipped/pure cycles"},
      {"mode", "itf", "itf | equipped-only | pure-only"},
      {"steps", "0", "step budget for single-corpus modes (0 = 2 * itf_n * itf_cycles)"},
      {"eval_every", "500", "dev evaluation interval in steps (0 disables)"},
      {"avg_k", "5", "checkpoints averaged around the best dev score"},
      {"beam", "10", "beam width for generation"},
      {"max_len", "30", "maximum generated length"},
      {"max_vocab", "5000", "vocabulary size cap including reserved tokens"},
      {"no_knowledge", "false", "drop knowledge attention and both auxiliary tasks"},
      {"no_rc", "false", "drop relation classification"},
      {"no_tg", "false", "drop tail concept generation"},
      {"seed", "1", "random seed"},
  };
  return keys;
}

Config::Config() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  it->second = value;
}

void Config::load_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("config: expected 'key = value'", number);
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError("config: empty key", number);
    set(key, value);
  }
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  load_string(ss.str());
}

void Config::apply_env(const std::function<const char*(const char*)>& getenv) {
  for (auto& [key, value] : values_) {
    std::string var = kEnvPrefix;
    for (char c : key) var += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (const char* v = getenv(var.c_str())) value = v;
  }
}

const std::string& Config::str(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
  return it->second;
}

long Config::integer(const std::string& key) const {
  const auto& s = str(key);
  long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw ValidationError("config key '" + key + "' expects an integer, got '" + s + "'");
  return v;
}

double Config::real(const std::string& key) const {
  const auto& s = str(key);
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ValidationError("config key '" + key + "' expects a number, got '" + s + "'");
}

bool Config::flag(const std::string& key) const {
  const auto& s = str(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ValidationError("config key '" + key + "' expects true/false, got '" + s + "'");
}

std::string Config::dump() const {
  std::ostringstream out;
  for (const auto& k : config_keys()) out << k.name << " = " << values_.at(k.name) << '\n';
  return out.str();
}

}  // namespace kqg
