#include "dfi/fixtures.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "dfi/error.hpp"
#include "dfi/featurespace.hpp"
#include "dfi/image_io.hpp"

namespace dfi {

namespace {

std::string trim(std::string s) {
  const auto issp = [](unsigned char ch) { return std::isspace(ch) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), issp));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), issp).base(), s.end());
  return s;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace

Tensor read_fixture_tensor(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file(path);
  const auto newline = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
  if (newline == bytes.end()) throw FormatError(path.string() + ": missing dims header line");
  std::istringstream header(std::string(bytes.begin(), newline));
  Shape s;
  if (!(header >> s.n >> s.c >> s.h >> s.w)) {
    throw FormatError(path.string() + ": malformed dims header");
  }
  std::string rest;
  if (header >> rest) throw FormatError(path.string() + ": extra tokens in dims header");
  detail::ByteReader reader(
      std::span<const std::uint8_t>(bytes).subspan(
          static_cast<std::size_t>(newline - bytes.begin()) + 1),
      path.string());
  if (s.count() == 0 || reader.remaining() / 4 != s.count() || reader.remaining() % 4 != 0) {
    throw FormatError(path.string() + ": header " + to_string(s) + " needs " +
                      std::to_string(s.count() * 4) + " data bytes, file has " +
                      std::to_string(reader.remaining()));
  }
  return Tensor(s, reader.f32_array(s.count()));
}

void write_fixture_tensor(const std::filesystem::path& path, const Tensor& t) {
  const Shape& s = t.shape();
  const std::string header = std::to_string(s.n) + " " + std::to_string(s.c) + " " +
                             std::to_string(s.h) + " " + std::to_string(s.w) + "\n";
  detail::ByteWriter w;
  w.raw(header);
  w.f32_array(t.data());
  detail::write_file(path, w.take());
}

FixtureSet load_fixture_set(const std::filesystem::path& dir) {
  const std::filesystem::path manifest_path = dir / "manifest.txt";
  std::ifstream in(manifest_path);
  if (!in) throw UsageError("cannot open fixture manifest " + manifest_path.string());
  FixtureSet f;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(manifest_path.string() + ":" + std::to_string(line_no) +
                        ": expected key=value");
    }
    f.manifest[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  const auto need = [&](const char* key) -> const std::string& {
    const auto it = f.manifest.find(key);
    if (it == f.manifest.end() || it->second.empty()) {
      throw FormatError(manifest_path.string() + ": missing key '" + key + "'");
    }
    return it->second;
  };
  f.image = dir / need("image");
  f.layers = split_list(need("layers"));
  if (f.layers.empty()) throw FormatError(manifest_path.string() + ": empty layer list");
  if (const auto it = f.manifest.find("tolerance"); it != f.manifest.end()) {
    try {
      f.tolerance = std::stod(it->second);
    } catch (const std::exception&) {
      throw FormatError(manifest_path.string() + ": bad tolerance '" + it->second + "'");
    }
  }
  for (const std::string& layer : f.layers) {
    f.activations[layer] = read_fixture_tensor(dir / (layer + ".f32"));
  }
  return f;
}

void save_fixture_set(const FixtureSet& fixtures, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::map<std::string, std::string> manifest = fixtures.manifest;
  manifest["image"] = fixtures.image.filename().string();
  std::string layers;
  for (const auto& l : fixtures.layers) layers += (layers.empty() ? "" : ",") + l;
  manifest["layers"] = layers;
  std::ostringstream tol;
  tol.precision(17);
  tol << fixtures.tolerance;
  manifest["tolerance"] = tol.str();
  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  for (const auto& [k, v] : manifest) out << k << '=' << v << '\n';
  if (!out) throw Error("cannot write " + (dir / "manifest.txt").string());
  for (const auto& layer : fixtures.layers) {
    const auto it = fixtures.activations.find(layer);
    if (it == fixtures.activations.end()) {
      throw UsageError("save_fixture_set: no activation for layer " + layer);
    }
    write_fixture_tensor(dir / (layer + ".f32"), it->second);
  }
}

std::string engine_layer_for(const std::string& fixture_layer) {
  if (fixture_layer.rfind("conv", 0) == 0) return "relu" + fixture_layer.substr(4);
  return fixture_layer;
}

std::vector<FixtureComparison> compare_with_fixture(const Network& net,
                                                    const FixtureSet& fixtures) {
  const Tensor rgb = to_working_resolution(read_png_rgb(fixtures.image));
  CaptureSet capture;
  for (const auto& l : fixtures.layers) capture.push_back(engine_layer_for(l));
  const ActivationMap<float> got =
      net.forward_capture(preprocess(net.preprocessing(), rgb), capture);

  std::vector<FixtureComparison> out;
  for (const auto& layer : fixtures.layers) {
    const Tensor& expected = fixtures.activations.at(layer);
    const Tensor& actual = got.at(engine_layer_for(layer));
    if (actual.shape() != expected.shape()) {
      throw ShapeError("fixture layer " + layer + ": engine " + to_string(actual.shape()) +
                       " vs fixture " + to_string(expected.shape()));
    }
    double diff = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < actual.size(); ++i) {
      diff = std::max(diff, std::abs(static_cast<double>(actual[i]) - expected[i]));
      scale = std::max(scale, std::abs(static_cast<double>(expected[i])));
    }
    FixtureComparison c;
    c.layer = layer;
    c.max_rel_error = scale > 0.0 ? diff / scale : diff;
    c.passed = c.max_rel_error <= fixtures.tolerance;
    out.push_back(c);
  }
  return out;
}

}  // namespace dfi
