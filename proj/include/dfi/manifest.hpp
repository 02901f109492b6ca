#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dfi {

/// Ordered key=value record written next to every CLI output. Contains no
/// timestamps or host details, so identical runs give identical files.
class RunManifest {
 public:
  void set(const std::string& key, std::string value);
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value);
  void set(const std::string& key, std::int64_t value);
  void set(const std::string& key, std::uint64_t value);
  void set(const std::string& key, int value) { set(key, static_cast<std::int64_t>(value)); }
  void set(const std::string& key, bool value) { set(key, value ? "true" : "false"); }

  std::optional<std::string> get(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;
  static RunManifest parse(std::istream& in);
  static RunManifest load(const std::filesystem::path& path);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Shortest decimal form that round-trips.
std::string format_real(double value);

}  // namespace dfi
