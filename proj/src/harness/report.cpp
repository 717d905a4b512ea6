#include "tclt/harness/report.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace tclt::harness {
namespace {

json read_json(const fs::path& f) {
  std::ifstream in(f);
  if (!in) throw IncompleteRun("incomplete run: " + f.string() + " is missing", f.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IncompleteRun("corrupted file " + f.string() + ": " + e.what(), f.string());
  }
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

int report(const fs::path& dir, std::ostream& out, bool color) {
  if (!fs::is_directory(dir)) throw IncompleteRun("not a run directory: " + dir.string(), dir.string());
  const json config = read_json(dir / "config.json");
  const json results = read_json(dir / "results.json");
  const fs::path rf = dir / "results.json";
  if (!results.is_object() || !results.contains("metrics") || !results["metrics"].is_object())
    throw IncompleteRun("corrupted file " + rf.string() + ": no metrics object", rf.string());
  const json& metrics = results["metrics"];

  auto verdict = [&](bool ok) {
    if (!color) return std::string(ok ? "PASS" : "FAIL");
    return std::string(ok ? "\033[32mPASS\033[0m" : "\033[31mFAIL\033[0m");
  };

  out << results.value("experiment", "?") << " run " << dir.string() << " (config " << results.value("config_hash", "?")
      << ")\n";
  const json assertions = config.value("assertions", json::array());
  if (assertions.empty()) {
    out << "no assertions declared; " << metrics.size() << " metrics in results.json\n";
    return 0;
  }
  bool all = true;
  std::string missing;
  for (const auto& a : assertions) {
    const std::string metric = a.value("metric", "");
    const std::string label = a.value("label", metric);
    if (!metrics.contains(metric) || metrics[metric].is_null()) {
      out << label << ": " << metric << " MISSING\n";
      if (missing.empty()) missing = metric;
      continue;
    }
    const json& v = metrics[metric];
    bool ok = true;
    std::string shown;
    if (v.is_boolean()) {
      shown = v.get<bool>() ? "true" : "false";
      if (a.contains("equals")) ok = v.get<bool>() == a["equals"].get<bool>();
      out << label << ": " << shown;
      if (a.contains("equals")) out << " (expected " << (a["equals"].get<bool>() ? "true" : "false") << ")";
    } else {
      const double x = v.get<double>();
      shown = num(x);
      const bool has_lo = a.contains("min"), has_hi = a.contains("max");
      const double lo = has_lo ? a["min"].get<double>() : -INFINITY;
      const double hi = has_hi ? a["max"].get<double>() : INFINITY;
      ok = x >= lo && x <= hi;
      out << label << " " << shown;
      if (has_lo && has_hi)
        out << " ∈ [" << num(lo) << ", " << num(hi) << "]";
      else if (has_lo)
        out << " >= " << num(lo);
      else
        out << " <= " << num(hi);
    }
    out << " " << verdict(ok) << "\n";
    all = all && ok;
  }
  if (!missing.empty())
    throw IncompleteRun("incomplete run: metric '" + missing + "' is not in " + rf.string(), rf.string());
  return all ? 0 : 5;
}

}  // namespace tclt::harness
