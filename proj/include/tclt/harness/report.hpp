#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

namespace tclt::harness {

/// Run directory without a readable config.json / results.json.
class IncompleteRun : public std::runtime_error {
 public:
  IncompleteRun(const std::string& what, std::string file) : std::runtime_error(what), file_(std::move(file)) {}
  const std::string& file() const { return file_; }

 private:
  std::string file_;
};

/// Prints one line per assertion of the run's config, with the measured value. Returns 0 when all
/// assertions hold and 5 when any fails; throws IncompleteRun (exit code 4) for missing or
/// corrupted files and for assertions whose metric is absent.
int report(const std::filesystem::path& dir, std::ostream& out, bool color = false);

}  // namespace tclt::harness
