#include "dfi/neighbors.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>
#include <thread>
#include <tuple>

#include "binary_io.hpp"
#include "dfi/image_io.hpp"

namespace dfi {
namespace {

constexpr std::string_view kIndexMagic = "DFIX";
constexpr std::uint32_t kIndexVersion = 1;

void write_bits(detail::ByteWriter& out, const std::vector<bool>& bits) {
  for (std::size_t i = 0; i < bits.size(); i += 8) {
    std::uint8_t byte = 0;
    for (std::size_t b = 0; b < 8 && i + b < bits.size(); ++b) {
      if (bits[i + b]) byte |= static_cast<std::uint8_t>(1u << b);
    }
    out.u8(byte);
  }
}

std::vector<bool> read_bits(detail::ByteReader& in, std::size_t count) {
  std::vector<bool> bits(count);
  for (std::size_t i = 0; i < count; i += 8) {
    const std::uint8_t byte = in.u8();
    for (std::size_t b = 0; b < 8 && i + b < count; ++b) bits[i + b] = (byte >> b) & 1u;
  }
  return bits;
}

void write_string16(detail::ByteWriter& out, std::string_view s) {
  if (s.size() > 0xFFFF) throw UsageError("string too long for index: " + std::string(s));
  out.u16(static_cast<std::uint16_t>(s.size()));
  out.raw(s);
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

// Splits one CSV line, honouring double-quoted fields.
std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cell += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cell += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.push_back(trim(cell));
      cell.clear();
    } else {
      cell += ch;
    }
  }
  cells.push_back(trim(cell));
  return cells;
}

}  // namespace

const IndexRecord& DatasetIndex::record(std::uint32_t id) const {
  const auto it = std::lower_bound(
      records.begin(), records.end(), id,
      [](const IndexRecord& r, std::uint32_t v) { return r.id < v; });
  if (it != records.end() && it->id == id) return *it;
  for (const auto& r : records) {
    if (r.id == id) return r;
  }
  throw UsageError("index has no record with id " + std::to_string(id));
}

std::vector<std::uint8_t> serialize_index(const DatasetIndex& index) {
  detail::ByteWriter out;
  out.raw(kIndexMagic);
  out.u32(kIndexVersion);
  out.u32(static_cast<std::uint32_t>(index.records.size()));
  for (const auto& r : index.records) {
    out.u32(r.id);
    write_string16(out, r.path);
    if (r.attributes.valid.size() != r.attributes.width()) {
      throw UsageError("record " + r.path + ": validity mask width mismatch");
    }
    out.u16(static_cast<std::uint16_t>(r.attributes.width()));
    write_bits(out, r.attributes.values);
    write_bits(out, r.attributes.valid);
    out.u32(static_cast<std::uint32_t>(r.pool5.size()));
    out.f32_array(r.pool5);
  }
  // Attribute-name trailer.
  out.u16(static_cast<std::uint16_t>(index.attribute_names.size()));
  for (const auto& name : index.attribute_names) write_string16(out, name);
  return out.take();
}

DatasetIndex parse_index(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes, "index header");
  if (in.raw(4) != kIndexMagic) throw FormatError("index: bad magic (expected DFIX)");
  const std::uint32_t version = in.u32();
  if (version != kIndexVersion) {
    throw FormatError("index: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = in.u32();
  DatasetIndex index;
  std::set<std::uint32_t> ids;
  for (std::uint32_t i = 0; i < count; ++i) {
    in.set_context("index record #" + std::to_string(i));
    IndexRecord r;
    r.id = in.u32();
    r.path = in.raw(in.u16());
    const std::uint16_t width = in.u16();
    r.attributes.values = read_bits(in, width);
    r.attributes.valid = read_bits(in, width);
    r.pool5 = in.f32_array(in.u32());
    if (!ids.insert(r.id).second) {
      throw FormatError("index: duplicate record id " + std::to_string(r.id));
    }
    if (r.pool5.empty()) throw FormatError("index record " + r.path + ": empty pool5 descriptor");
    index.records.push_back(std::move(r));
  }
  in.set_context("index attribute names");
  if (!in.at_end()) {
    const std::uint16_t names = in.u16();
    for (std::uint16_t i = 0; i < names; ++i) index.attribute_names.push_back(in.raw(in.u16()));
  }
  if (!in.at_end()) {
    throw FormatError("index: " + std::to_string(in.remaining()) + " trailing bytes");
  }
  for (const auto& r : index.records) {
    if (r.attributes.width() != 0 && r.attributes.width() != index.attribute_names.size()) {
      throw FormatError("index record " + r.path + ": " + std::to_string(r.attributes.width()) +
                        " attribute bits but " + std::to_string(index.attribute_names.size()) +
                        " attribute names");
    }
  }
  return index;
}

void save_index(const DatasetIndex& index, const std::filesystem::path& path) {
  detail::write_file(path, serialize_index(index));
}

DatasetIndex load_index(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return parse_index(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

const AttributeBits* AttributeTable::find(const std::filesystem::path& path) const {
  if (const auto it = rows.find(path.string()); it != rows.end()) return &it->second;
  if (const auto it = rows.find(path.filename().string()); it != rows.end()) return &it->second;
  return nullptr;
}

AttributeTable parse_attribute_csv(std::istream& in) {
  AttributeTable table;
  std::string line;
  if (!std::getline(in, line)) throw FormatError("attribute table: missing header row");
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  auto header = split_csv(line);
  if (header.size() < 2) throw FormatError("attribute table: header has no attribute columns");
  table.names.assign(header.begin() + 1, header.end());
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != header.size()) {
      throw FormatError("attribute table row " + std::to_string(row_no) + ": expected " +
                        std::to_string(header.size()) + " cells, got " +
                        std::to_string(cells.size()));
    }
    AttributeBits bits = AttributeBits::unlabeled(table.names.size());
    for (std::size_t j = 1; j < cells.size(); ++j) {
      const std::string& v = cells[j];
      if (v.empty()) continue;
      if (v == "1" || v == "+1") {
        bits.values[j - 1] = true;
      } else if (v != "-1") {
        throw FormatError("attribute table row " + std::to_string(row_no) + ", column " +
                          header[j] + ": invalid cell '" + v + "' (expected -1, 1 or empty)");
      }
      bits.valid[j - 1] = true;
    }
    if (!table.rows.emplace(cells[0], std::move(bits)).second) {
      throw FormatError("attribute table: duplicate row for " + cells[0]);
    }
  }
  return table;
}

AttributeTable load_attribute_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open attribute table " + path.string());
  try {
    return parse_attribute_csv(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw UsageError("not a directory: " + dir.string());
  }
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (ext == ".png") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

BuildIndexResult build_index(const std::vector<std::filesystem::path>& images,
                             const AttributeTable* attributes, const Network& net,
                             int jobs) {
  std::set<std::string> seen;
  for (const auto& p : images) {
    if (!seen.insert(p.string()).second) {
      throw UsageError("build_index: duplicate image path " + p.string());
    }
  }
  const std::size_t width = attributes ? attributes->names.size() : 0;

  struct Slot {
    std::optional<IndexRecord> record;
    std::string error;
  };
  std::vector<Slot> slots(images.size());
  const auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < images.size(); i += stride) {
      Tensor rgb;
      try {
        rgb = read_png_rgb(images[i]);
      } catch (const Error& e) {
        slots[i].error = e.what();
        continue;
      }
      IndexRecord r;
      r.id = static_cast<std::uint32_t>(i);
      r.path = images[i].string();
      r.attributes = AttributeBits::unlabeled(width);
      if (attributes) {
        if (const AttributeBits* bits = attributes->find(images[i])) r.attributes = *bits;
      }
      r.pool5 = pool5_descriptor(net, rgb);
      slots[i].record = std::move(r);
    }
  };

  const std::size_t workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1,
                              std::max<std::size_t>(images.size(), 1));
  if (workers == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> threads;
    std::vector<std::exception_ptr> failures(workers);
    for (std::size_t t = 0; t < workers; ++t) {
      threads.emplace_back([&, t] {
        try {
          work(t, workers);
        } catch (...) {
          failures[t] = std::current_exception();
        }
      });
    }
    threads.clear();
    for (const auto& f : failures) {
      if (f) std::rethrow_exception(f);
    }
  }

  BuildIndexResult result;
  if (attributes) result.index.attribute_names = attributes->names;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].record) {
      result.index.records.push_back(std::move(*slots[i].record));
    } else {
      result.rejects.push_back({images[i].string(), slots[i].error});
    }
  }
  return result;
}

AttributeQuery AttributeQuery::negated() const {
  AttributeQuery q = *this;
  for (std::size_t i = 0; i < q.target.size(); ++i) q.target[i] = !q.target[i];
  return q;
}

void AttributeQuery::validate(std::size_t width) const {
  if (target.size() != width || care.size() != width) {
    throw UsageError("attribute query width " + std::to_string(target.size()) +
                     " does not match index width " + std::to_string(width));
  }
  if (std::none_of(care.begin(), care.end(), [](bool b) { return b; })) {
    throw UsageError("attribute query selects no attributes");
  }
}

AttributeQuery parse_attribute_spec(std::string_view spec,
                                    const std::vector<std::string>& names) {
  AttributeQuery q{std::vector<bool>(names.size(), false),
                   std::vector<bool>(names.size(), false)};
  const auto valid_names = [&] {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    return list.empty() ? std::string("(index has no attributes)") : list;
  };
  std::size_t start = 0;
  while (start <= spec.size()) {
    const std::size_t end = std::min(spec.find(',', start), spec.size());
    const std::string item = trim(spec.substr(start, end - start));
    start = end + 1;
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) {
      throw UsageError("attribute spec item '" + item + "' must be name=+1 or name=-1");
    }
    const std::string name = trim(std::string_view(item).substr(0, eq));
    const std::string value = trim(std::string_view(item).substr(eq + 1));
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) {
      throw UsageError("unknown attribute '" + name + "'; valid attributes: " + valid_names());
    }
    const auto col = static_cast<std::size_t>(it - names.begin());
    if (value == "+1" || value == "1") {
      q.target[col] = true;
    } else if (value != "-1") {
      throw UsageError("attribute '" + name + "' must be set to +1 or -1, got '" + value + "'");
    }
    q.care[col] = true;
  }
  q.validate(names.size());
  return q;
}

std::size_t matched_attributes(const AttributeBits& bits, const AttributeQuery& query) {
  if (bits.width() != query.target.size()) {
    throw ShapeError("attribute width " + std::to_string(bits.width()) +
                     " does not match query width " + std::to_string(query.target.size()));
  }
  std::size_t matches = 0;
  for (std::size_t i = 0; i < bits.width(); ++i) {
    if (query.care[i] && bits.valid[i] && bits.values[i] == query.target[i]) ++matches;
  }
  return matches;
}

KnnResult knn_by_attributes(const DatasetIndex& index, const AttributeQuery& query,
                            std::size_t k, const Exclusions& exclusions,
                            std::span<const float> test_pool5) {
  if (k == 0) throw UsageError("knn_by_attributes: K must be >= 1");
  query.validate(index.attribute_names.size());
  struct Key {
    std::size_t matches;
    double distance;
    std::uint32_t id;
  };
  std::vector<Key> keys;
  for (const auto& r : index.records) {
    if (exclusions.contains(r.id)) continue;
    const std::size_t matches = matched_attributes(r.attributes, query);
    if (matches == 0) continue;
    const double d = test_pool5.empty() ? 0.0 : cosine_distance(test_pool5, r.pool5);
    keys.push_back({matches, d, r.id});
  }
  const std::size_t take = std::min(k, keys.size());
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(take), keys.end(),
                    [](const Key& a, const Key& b) {
                      return std::tuple(b.matches, a.distance, a.id) <
                             std::tuple(a.matches, b.distance, b.id);
                    });
  KnnResult result{{}, k};
  for (std::size_t i = 0; i < take; ++i) result.ids.push_back(keys[i].id);
  return result;
}

KnnResult knn_by_cosine(const DatasetIndex& index, std::span<const float> query,
                        std::size_t k, const Exclusions& exclusions) {
  if (k == 0) throw UsageError("knn_by_cosine: K must be >= 1");
  std::vector<std::pair<double, std::uint32_t>> keys;
  for (const auto& r : index.records) {
    if (exclusions.contains(r.id)) continue;
    keys.emplace_back(cosine_distance(query, r.pool5), r.id);
  }
  const std::size_t take = std::min(k, keys.size());
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(take), keys.end());
  KnnResult result{{}, k};
  for (std::size_t i = 0; i < take; ++i) result.ids.push_back(keys[i].second);
  return result;
}

FeatureVector mean_feature(const Network& net, const DatasetIndex& index,
                           std::span<const std::uint32_t> ids, std::size_t h,
                           std::size_t w, const ImagePreparer& prepare) {
  if (ids.empty()) throw UsageError("mean_feature: no ids");
  std::vector<std::uint32_t> order(ids.begin(), ids.end());
  std::sort(order.begin(), order.end());
  RunningMean mean;
  for (std::uint32_t id : order) {
    const IndexRecord& r = index.record(id);
    Tensor rgb;
    try {
      rgb = read_png_rgb(r.path);
    } catch (const Error& e) {
      throw Error("mean_feature: cannot read neighbour " + std::to_string(id) + " (" +
                  r.path + "): " + e.what());
    }
    rgb = bilinear_resize(rgb, h, w);
    if (prepare) rgb = prepare(rgb);
    mean.add(phi_input(net, preprocess(net.preprocessing(), rgb)));
  }
  return mean.mean();
}

AttributeVector attribute_vector(const FeatureVector& target_mean,
                                 const FeatureVector& source_mean) {
  if (target_mean.layout != source_mean.layout ||
      target_mean.data.size() != source_mean.data.size()) {
    throw ShapeError("attribute_vector: layouts differ: " + to_string(target_mean.layout) +
                     " vs " + to_string(source_mean.layout));
  }
  AttributeVector out;
  out.w.layout = target_mean.layout;
  out.w.data.resize(target_mean.data.size());
  for (std::size_t i = 0; i < out.w.data.size(); ++i) {
    out.w.data[i] = target_mean.data[i] - source_mean.data[i];
  }
  return out;
}

double scale_alpha(std::span<const float> w, double strength_beta) {
  if (strength_beta < 0.0) throw UsageError("scale_alpha: strength must be >= 0");
  if (w.empty()) throw UsageError("scale_alpha: empty attribute vector");
  double sum_sq = 0.0;
  for (float v : w) sum_sq += static_cast<double>(v) * v;
  if (sum_sq == 0.0) {
    throw UsageError("scale_alpha: attribute vector is zero (no transformation direction)");
  }
  return strength_beta / (sum_sq / static_cast<double>(w.size()));
}

}  // namespace dfi
