#pragma once

#include "tclt/errors.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace tclt::harness {

/// Validation failure pinned to a config field (dotted path) and, for YAML input, a line.
class ConfigError : public ValidationError {
 public:
  ConfigError(const std::string& field, const std::string& what, int line = 0);
  const std::string& field() const { return field_; }
  int line() const { return line_; }

 private:
  std::string field_;
  int line_ = 0;
};

/// Parsed config document: the raw tree, YAML line numbers by dotted path, and the normalized
/// tree that accessors fill with defaults and canonical number types.
class Document {
 public:
  Document(nlohmann::json raw, std::map<std::string, int> lines, std::string source);

  const nlohmann::json& raw() const { return raw_; }
  nlohmann::json& normalized() { return normalized_; }
  const nlohmann::json& normalized() const { return normalized_; }
  int line(const std::string& path) const;
  const std::string& source() const { return source_; }

 private:
  nlohmann::json raw_;
  nlohmann::json normalized_;
  std::map<std::string, int> lines_;
  std::string source_;
};

/// YAML (any extension but .json) or JSON file.
Document load_document(const std::filesystem::path& path);
Document parse_yaml(const std::string& text, const std::string& source = "<string>");
Document parse_json(const std::string& text, const std::string& source = "<string>");

/// Typed read access to one object of the document. Reads record the key as used; finish()
/// rejects unknown keys. Defaults are written into the normalized tree.
class Section {
 public:
  Section(Document& doc, std::string path);

  const std::string& path() const { return path_; }
  std::string field(const std::string& key) const;
  bool has(const std::string& key) const;

  Section child(const std::string& key) const;
  std::optional<Section> optional_child(const std::string& key) const;
  /// Elements of an array of objects.
  std::vector<Section> children(const std::string& key) const;
  /// Element i of a list, which must be a mapping.
  Section element(const std::string& key, std::size_t i) const;

  double number(const std::string& key) const;
  double number(const std::string& key, double fallback) const;
  std::int64_t integer(const std::string& key) const;
  std::int64_t integer(const std::string& key, std::int64_t fallback) const;
  std::uint64_t unsigned_integer(const std::string& key) const;
  std::uint64_t unsigned_integer(const std::string& key, std::uint64_t fallback) const;
  bool boolean(const std::string& key, bool fallback) const;
  std::string string(const std::string& key) const;
  std::string string(const std::string& key, const std::string& fallback) const;
  std::vector<double> numbers(const std::string& key) const;
  std::vector<double> numbers(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<std::int64_t> integers(const std::string& key) const;
  /// The value as stored (any type); marks the key used.
  const nlohmann::json& value(const std::string& key) const;

  void finish() const;
  [[noreturn]] void fail(const std::string& key, const std::string& what) const;

 private:
  const nlohmann::json& node() const;
  nlohmann::json& normalized_node() const;
  void set(const std::string& key, nlohmann::json v) const;

  Document* doc_;
  std::string path_;
  mutable std::set<std::string> used_;
};

/// FNV-1a 64 of the compact dump (keys sorted), as 16 hex digits.
std::string config_hash(const nlohmann::json& normalized);

/// %.17g
std::string format_double(double v);

}  // namespace tclt::harness
