#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dfi/featurespace.hpp"

namespace dfi {

/// Fixed-width attribute labels. A bit whose `valid` flag is clear is
/// unlabeled and never counts as a match.
struct AttributeBits {
  std::vector<bool> values;
  std::vector<bool> valid;

  static AttributeBits unlabeled(std::size_t width) {
    return {std::vector<bool>(width, false), std::vector<bool>(width, false)};
  }
  std::size_t width() const { return values.size(); }
  friend bool operator==(const AttributeBits&, const AttributeBits&) = default;
};

struct IndexRecord {
  std::uint32_t id = 0;
  std::string path;
  AttributeBits attributes;
  Pool5Descriptor pool5;
  friend bool operator==(const IndexRecord&, const IndexRecord&) = default;
};

struct DatasetIndex {
  std::vector<std::string> attribute_names;
  std::vector<IndexRecord> records;

  const IndexRecord& record(std::uint32_t id) const;
  friend bool operator==(const DatasetIndex&, const DatasetIndex&) = default;
};

/// DFIX index codec.
std::vector<std::uint8_t> serialize_index(const DatasetIndex& index);
DatasetIndex parse_index(std::span<const std::uint8_t> bytes);
void save_index(const DatasetIndex& index, const std::filesystem::path& path);
DatasetIndex load_index(const std::filesystem::path& path);

/// CSV attribute table: header row of attribute names (first column is the
/// image path), cells in {-1, 1, empty}.
struct AttributeTable {
  std::vector<std::string> names;
  std::map<std::string, AttributeBits> rows;

  // Exact path match first, then file name.
  const AttributeBits* find(const std::filesystem::path& path) const;
};

AttributeTable parse_attribute_csv(std::istream& in);
AttributeTable load_attribute_csv(const std::filesystem::path& path);

struct IndexReject {
  std::string path;
  std::string reason;
};

struct BuildIndexResult {
  DatasetIndex index;
  std::vector<IndexReject> rejects;
};

/// PNG files directly inside `dir`, sorted by name.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// One record per decodable image, id = position in `images`. Undecodable
/// images are skipped and reported; duplicate paths are an error.
BuildIndexResult build_index(const std::vector<std::filesystem::path>& images,
                             const AttributeTable* attributes, const Network& net,
                             int jobs = 1);

struct AttributeQuery {
  std::vector<bool> target;
  std::vector<bool> care;

  AttributeQuery negated() const;
  void validate(std::size_t width) const;
};

/// Parses "name=+1,other=-1" against the index's attribute names. Unknown
/// names raise UsageError listing the valid ones.
AttributeQuery parse_attribute_spec(std::string_view spec,
                                    const std::vector<std::string>& names);

std::size_t matched_attributes(const AttributeBits& bits, const AttributeQuery& query);

using Exclusions = std::set<std::uint32_t>;

struct KnnResult {
  std::vector<std::uint32_t> ids;
  std::size_t requested = 0;
  bool shortfall() const { return ids.size() < requested; }
};

/// K records with the most matching attributes; ties go to the smaller
/// pool5 cosine distance to `test_pool5` (skipped if empty), then smaller id.
/// Records matching none of the queried attributes are not candidates.
KnnResult knn_by_attributes(const DatasetIndex& index, const AttributeQuery& query,
                            std::size_t k, const Exclusions& exclusions,
                            std::span<const float> test_pool5);

/// K smallest pool5 cosine distances, ordered by (distance, id).
KnnResult knn_by_cosine(const DatasetIndex& index, std::span<const float> query,
                        std::size_t k, const Exclusions& exclusions);

// Applied to each neighbour image after it is resized to the working size.
using ImagePreparer = std::function<Tensor(const Tensor& rgb)>;

/// Elementwise mean of phi over `ids`, streamed in ascending id order. Each
/// image is resized to h x w first. Unreadable images are a hard error.
FeatureVector mean_feature(const Network& net, const DatasetIndex& index,
                           std::span<const std::uint32_t> ids, std::size_t h,
                           std::size_t w, const ImagePreparer& prepare = {});

struct AttributeVector {
  FeatureVector w;
  std::size_t k_used = 0;
  double alpha = 0.0;
};

/// w = target_mean - source_mean.
AttributeVector attribute_vector(const FeatureVector& target_mean,
                                 const FeatureVector& source_mean);

/// alpha = beta / mean(w^2).
double scale_alpha(std::span<const float> w, double strength_beta);

}  // namespace dfi
