#include "dfi/manifest.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include "dfi/error.hpp"

namespace dfi {

std::string format_real(double value) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, r.ptr);
}

void RunManifest::set(const std::string& key, std::string value) {
  if (key.empty() || key.find_first_of("=\n") != std::string::npos) {
    throw UsageError("manifest: invalid key '" + key + "'");
  }
  std::replace(value.begin(), value.end(), '\n', ' ');
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(key, std::move(value));
}

void RunManifest::set(const std::string& key, double value) { set(key, format_real(value)); }
void RunManifest::set(const std::string& key, std::int64_t value) {
  set(key, std::to_string(value));
}
void RunManifest::set(const std::string& key, std::uint64_t value) {
  set(key, std::to_string(value));
}

std::optional<std::string> RunManifest::get(const std::string& key) const {
  for (const auto& [k, v] : entries_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

void RunManifest::write(std::ostream& out) const {
  for (const auto& [k, v] : entries_) out << k << '=' << v << '\n';
}

void RunManifest::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write manifest " + path.string());
  write(out);
  if (!out) throw Error("write failed for manifest " + path.string());
}

RunManifest RunManifest::parse(std::istream& in) {
  RunManifest m;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw FormatError("manifest line " + std::to_string(n) + ": expected key=value");
    }
    m.set(line.substr(0, eq), line.substr(eq + 1));
  }
  return m;
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open manifest " + path.string());
  return parse(in);
}

}  // namespace dfi
