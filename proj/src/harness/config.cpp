#include "tclt/harness/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

namespace tclt::harness {
namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

nlohmann::json::json_pointer pointer(const std::string& path) {
  std::string p;
  std::stringstream ss(path);
  std::string part;
  while (std::getline(ss, part, '.')) p += "/" + part;
  return nlohmann::json::json_pointer(p);
}

nlohmann::json scalar_value(const YAML::Node& n) {
  const std::string& s = n.Scalar();
  if (n.Tag() == "!") return s;  // quoted
  static const std::regex integer(R"([-+]?[0-9]+)");
  static const std::regex real(R"([-+]?(\.[0-9]+|[0-9]+(\.[0-9]*)?)([eE][-+]?[0-9]+)?)");
  if (std::regex_match(s, integer)) {
    try {
      return std::stoll(s);
    } catch (const std::out_of_range&) {
      return std::stoull(s);
    }
  }
  if (std::regex_match(s, real)) return std::stod(s);
  if (s == "true" || s == "True") return true;
  if (s == "false" || s == "False") return false;
  if (s == "null" || s == "~" || s.empty()) return nullptr;
  return s;
}

nlohmann::json convert(const YAML::Node& n, const std::string& path, std::map<std::string, int>& lines) {
  lines[path] = n.Mark().line + 1;
  switch (n.Type()) {
    case YAML::NodeType::Map: {
      nlohmann::json j = nlohmann::json::object();
      for (const auto& kv : n) {
        const std::string key = kv.first.as<std::string>();
        if (j.contains(key)) throw ConfigError(join(path, key), "duplicate key", kv.first.Mark().line + 1);
        j[key] = convert(kv.second, join(path, key), lines);
        lines[join(path, key)] = kv.first.Mark().line + 1;
      }
      return j;
    }
    case YAML::NodeType::Sequence: {
      nlohmann::json j = nlohmann::json::array();
      std::size_t i = 0;
      for (const auto& v : n) j.push_back(convert(v, join(path, std::to_string(i++)), lines));
      return j;
    }
    case YAML::NodeType::Scalar:
      return scalar_value(n);
    default:
      return nullptr;
  }
}

const char* type_name(const nlohmann::json& j) { return j.type_name(); }

}  // namespace

ConfigError::ConfigError(const std::string& field, const std::string& what, int line)
    : ValidationError(field.empty() ? what : field + ": " + what), field_(field), line_(line) {}

Document::Document(nlohmann::json raw, std::map<std::string, int> lines, std::string source)
    : raw_(std::move(raw)), normalized_(raw_), lines_(std::move(lines)), source_(std::move(source)) {
  if (!raw_.is_object()) throw ConfigError("", "config root must be a mapping", 1);
}

int Document::line(const std::string& path) const {
  // Closest recorded ancestor.
  std::string p = path;
  for (;;) {
    if (auto it = lines_.find(p); it != lines_.end()) return it->second;
    const auto dot = p.rfind('.');
    if (dot == std::string::npos) break;
    p.resize(dot);
  }
  if (auto it = lines_.find(p); it != lines_.end()) return it->second;
  return 0;
}

Document parse_yaml(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("", "YAML parse error: " + e.msg, e.mark.line + 1);
  }
  std::map<std::string, int> lines;
  nlohmann::json j = convert(root, "", lines);
  return Document(std::move(j), std::move(lines), source);
}

Document parse_json(const std::string& text, const std::string& source) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("JSON parse error: ") + e.what());
  }
  return Document(std::move(j), {}, source);
}

Document load_document(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  if (path.extension() == ".json") return parse_json(ss.str(), path.string());
  return parse_yaml(ss.str(), path.string());
}

Section::Section(Document& doc, std::string path) : doc_(&doc), path_(std::move(path)) {
  if (!node().is_object()) throw ConfigError(path_, "must be a mapping", doc_->line(path_));
}

const nlohmann::json& Section::node() const {
  return path_.empty() ? doc_->raw() : doc_->raw().at(pointer(path_));
}

nlohmann::json& Section::normalized_node() const {
  return path_.empty() ? doc_->normalized() : doc_->normalized()[pointer(path_)];
}

void Section::set(const std::string& key, nlohmann::json v) const { normalized_node()[key] = std::move(v); }

std::string Section::field(const std::string& key) const { return join(path_, key); }

bool Section::has(const std::string& key) const {
  return node().contains(key) && !node().at(key).is_null();
}

void Section::fail(const std::string& key, const std::string& what) const {
  const std::string f = key.empty() ? path_ : field(key);
  throw ConfigError(f, what, doc_->line(f));
}

const nlohmann::json& Section::value(const std::string& key) const {
  used_.insert(key);
  if (!has(key)) fail(key, "missing required key");
  return node().at(key);
}

Section Section::child(const std::string& key) const {
  const auto& v = value(key);
  if (!v.is_object()) fail(key, std::string("expected a mapping, got ") + type_name(v));
  return Section(*doc_, field(key));
}

std::optional<Section> Section::optional_child(const std::string& key) const {
  used_.insert(key);
  if (!has(key)) return std::nullopt;
  return child(key);
}

std::vector<Section> Section::children(const std::string& key) const {
  const auto& v = value(key);
  if (!v.is_array()) fail(key, std::string("expected a list, got ") + type_name(v));
  std::vector<Section> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string f = field(key) + "." + std::to_string(i);
    if (!v[i].is_object()) throw ConfigError(f, "expected a mapping", doc_->line(f));
    out.emplace_back(*doc_, f);
  }
  return out;
}

Section Section::element(const std::string& key, std::size_t i) const {
  const auto& v = value(key);
  const std::string f = field(key) + "." + std::to_string(i);
  if (!v.is_array() || i >= v.size() || !v[i].is_object()) throw ConfigError(f, "expected a mapping", doc_->line(f));
  return Section(*doc_, f);
}

double Section::number(const std::string& key) const {
  const auto& v = value(key);
  if (!v.is_number()) fail(key, std::string("expected a number, got ") + type_name(v));
  const double d = v.get<double>();
  if (!std::isfinite(d)) fail(key, "must be finite");
  set(key, d);
  return d;
}

double Section::number(const std::string& key, double fallback) const {
  used_.insert(key);
  if (!has(key)) {
    set(key, fallback);
    return fallback;
  }
  return number(key);
}

std::int64_t Section::integer(const std::string& key) const {
  const auto& v = value(key);
  if (v.is_number_integer()) {
    set(key, v);
    return v.get<std::int64_t>();
  }
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 9e15) {
      set(key, static_cast<std::int64_t>(d));
      return static_cast<std::int64_t>(d);
    }
  }
  fail(key, std::string("expected an integer, got ") + type_name(v));
}

std::int64_t Section::integer(const std::string& key, std::int64_t fallback) const {
  used_.insert(key);
  if (!has(key)) {
    set(key, fallback);
    return fallback;
  }
  return integer(key);
}

std::uint64_t Section::unsigned_integer(const std::string& key) const {
  const auto& v = value(key);
  if (v.is_number_unsigned()) {
    set(key, v);
    return v.get<std::uint64_t>();
  }
  const std::int64_t i = integer(key);
  if (i < 0) fail(key, "must be nonnegative");
  return static_cast<std::uint64_t>(i);
}

std::uint64_t Section::unsigned_integer(const std::string& key, std::uint64_t fallback) const {
  used_.insert(key);
  if (!has(key)) {
    set(key, fallback);
    return fallback;
  }
  return unsigned_integer(key);
}

bool Section::boolean(const std::string& key, bool fallback) const {
  used_.insert(key);
  if (!has(key)) {
    set(key, fallback);
    return fallback;
  }
  const auto& v = value(key);
  if (!v.is_boolean()) fail(key, std::string("expected true/false, got ") + type_name(v));
  return v.get<bool>();
}

std::string Section::string(const std::string& key) const {
  const auto& v = value(key);
  if (!v.is_string()) fail(key, std::string("expected a string, got ") + type_name(v));
  return v.get<std::string>();
}

std::string Section::string(const std::string& key, const std::string& fallback) const {
  used_.insert(key);
  if (!has(key)) {
    set(key, fallback);
    return fallback;
  }
  return string(key);
}

std::vector<double> Section::numbers(const std::string& key) const {
  const auto& v = value(key);
  std::vector<double> out;
  if (v.is_number()) {
    out.push_back(v.get<double>());
  } else if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) fail(key, "element " + std::to_string(i) + " is not a number");
      out.push_back(v[i].get<double>());
    }
  } else {
    fail(key, std::string("expected a number or a list of numbers, got ") + type_name(v));
  }
  for (double d : out)
    if (!std::isfinite(d)) fail(key, "must be finite");
  set(key, out);
  return out;
}

std::vector<double> Section::numbers(const std::string& key, const std::vector<double>& fallback) const {
  used_.insert(key);
  if (!has(key)) {
    set(key, fallback);
    return fallback;
  }
  return numbers(key);
}

std::vector<std::int64_t> Section::integers(const std::string& key) const {
  const auto& v = value(key);
  std::vector<std::int64_t> out;
  auto one = [&](const nlohmann::json& e, const std::string& where) {
    if (e.is_number_integer()) return e.get<std::int64_t>();
    if (e.is_number_float() && std::floor(e.get<double>()) == e.get<double>())
      return static_cast<std::int64_t>(e.get<double>());
    fail(key, where + "expected an integer");
  };
  if (v.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(one(v[i], "element " + std::to_string(i) + ": "));
  } else {
    out.push_back(one(v, ""));
  }
  set(key, out);
  return out;
}

void Section::finish() const {
  for (const auto& [k, v] : node().items())
    if (!used_.count(k)) fail(k, "unknown key");
}

std::string config_hash(const nlohmann::json& normalized) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : normalized.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace tclt::harness
