#pragma once

// Flat key = value configuration with environment and command-line overrides.

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace kqg {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Every recognised key with its default.
const std::vector<ConfigKey>& config_keys();

inline constexpr const char* kEnvPrefix = "KQG_";

class Config {
 public:
  Config();  // all defaults

  /// Lines are `key = value`; `#` starts a comment. Unknown keys are
  /// rejected with ValidationError, malformed lines with ParseError.
  void load_file(const std::filesystem::path& path);
  void load_string(const std::string& text);

  /// Applies KQG_<UPPERCASE KEY> variables obtained through `getenv`.
  void apply_env(const std::function<const char*(const char*)>& getenv);

  void set(const std::string& key, const std::string& value);

  const std::string& str(const std::string& key) const;
  long integer(const std::string& key) const;
  double real(const std::string& key) const;
  bool flag(const std::string& key) const;

  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace kqg
