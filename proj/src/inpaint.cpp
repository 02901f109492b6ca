#include "dfi/inpaint.hpp"

#include <algorithm>
#include <exception>
#include <thread>

#include "dfi/error.hpp"
#include "dfi/image_io.hpp"
#include "dfi/kernels.hpp"

namespace dfi {

Mask::Mask(Tensor bits) : bits_(std::move(bits)) {
  const std::size_t missing = missing_count();
  if (missing == 0) throw UsageError("mask has no missing pixels");
  if (missing == bits_.size()) throw UsageError("mask has no known pixels");
}

Mask Mask::from_gray(const Tensor& gray) {
  if (gray.n() != 1 || gray.c() != 1) {
    throw ShapeError("mask: expected a 1x1xHxW grayscale image, got " +
                     to_string(gray.shape()));
  }
  Tensor bits(gray.shape());
  for (std::size_t i = 0; i < gray.size(); ++i) bits[i] = gray[i] >= 128.0f ? 1.0f : 0.0f;
  return Mask(std::move(bits));
}

Mask Mask::from_bits(std::size_t h, std::size_t w, std::vector<bool> missing) {
  if (missing.size() != h * w) throw ShapeError("mask: bit count does not match dims");
  Tensor bits({1, 1, h, w});
  for (std::size_t i = 0; i < missing.size(); ++i) bits[i] = missing[i] ? 1.0f : 0.0f;
  return Mask(std::move(bits));
}

std::size_t Mask::missing_count() const {
  return static_cast<std::size_t>(
      std::count_if(bits_.data().begin(), bits_.data().end(), [](float v) { return v != 0.0f; }));
}

Mask Mask::resized(std::size_t h, std::size_t w) const {
  if (h == this->h() && w == this->w()) return *this;
  Tensor r = bilinear_resize(bits_, h, w);
  for (float& v : r.data()) v = v >= 0.5f ? 1.0f : 0.0f;
  return Mask(std::move(r));
}

namespace {

void check_dims(const Tensor& image, const Mask& mask, const char* what) {
  if (image.n() != 1 || image.h() != mask.h() || image.w() != mask.w()) {
    throw ShapeError(std::string(what) + ": image " + to_string(image.shape()) +
                     " vs mask " + std::to_string(mask.h()) + "x" + std::to_string(mask.w()));
  }
}

Tensor load_at(const IndexRecord& r, std::size_t h, std::size_t w) {
  Tensor rgb;
  try {
    rgb = read_png_rgb(r.path);
  } catch (const Error& e) {
    throw Error("cannot read index image " + std::to_string(r.id) + " (" + r.path +
                "): " + e.what());
  }
  return bilinear_resize(rgb, h, w);
}

}  // namespace

Tensor apply_mask(const Tensor& image, const Mask& mask, float fill) {
  check_dims(image, mask, "apply_mask");
  Tensor out = image;
  const std::size_t plane = mask.h() * mask.w();
  const float* m = mask.bits().ptr();
  for (std::size_t c = 0; c < out.c(); ++c) {
    float* p = out.plane(0, c);
    for (std::size_t i = 0; i < plane; ++i) {
      if (m[i] != 0.0f) p[i] = fill;
    }
  }
  return out;
}

Tensor composite(const Tensor& filled, const Tensor& known, const Mask& mask) {
  check_dims(filled, mask, "composite");
  if (filled.shape() != known.shape()) {
    throw ShapeError("composite: " + to_string(filled.shape()) + " vs " +
                     to_string(known.shape()));
  }
  Tensor out = filled;
  const std::size_t plane = mask.h() * mask.w();
  const float* m = mask.bits().ptr();
  for (std::size_t c = 0; c < out.c(); ++c) {
    float* p = out.plane(0, c);
    const float* k = known.plane(0, c);
    for (std::size_t i = 0; i < plane; ++i) {
      if (m[i] == 0.0f) p[i] = k[i];
    }
  }
  return out;
}

ImagePreparer masked_preparer(const Mask& mask, float fill) {
  return [mask, fill](const Tensor& rgb) { return apply_mask(rgb, mask, fill); };
}

std::vector<std::pair<Tensor, Tensor>> masked_pairs(const DatasetIndex& index,
                                                    std::span<const std::uint32_t> ids,
                                                    const Mask& mask, float fill) {
  std::vector<std::pair<Tensor, Tensor>> out;
  out.reserve(ids.size());
  for (std::uint32_t id : ids) {
    Tensor plain = load_at(index.record(id), mask.h(), mask.w());
    Tensor masked = apply_mask(plain, mask, fill);
    out.emplace_back(std::move(plain), std::move(masked));
  }
  return out;
}

double preset_strength(InpaintPreset preset) {
  return preset == InpaintPreset::faces ? kFacesInpaintStrength : kShoesInpaintStrength;
}

std::string_view to_string(InpaintPreset preset) {
  return preset == InpaintPreset::faces ? "faces" : "shoes";
}

InpaintPreset parse_inpaint_preset(std::string_view name) {
  if (name == "faces") return InpaintPreset::faces;
  if (name == "shoes") return InpaintPreset::shoes;
  throw UsageError("unknown inpaint preset '" + std::string(name) +
                   "'; valid presets: faces, shoes");
}

InpaintConfig::InpaintConfig() {
  reconstruction.strength_beta = kFacesInpaintStrength;
}

std::vector<Pool5Descriptor> masked_descriptors(const Network& net,
                                                const DatasetIndex& index,
                                                const Mask& mask, float fill, int jobs) {
  const std::size_t n = index.records.size();
  std::vector<Pool5Descriptor> out(n);
  const auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t i = first; i < n; i += stride) {
      const Tensor masked =
          apply_mask(load_at(index.records[i], mask.h(), mask.w()), mask, fill);
      out[i] = pool5_input(net, preprocess(net.preprocessing(), masked));
    }
  };
  const std::size_t workers =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1,
                              std::max<std::size_t>(n, 1));
  if (workers == 1) {
    work(0, 1);
    return out;
  }
  std::vector<std::exception_ptr> failures(workers);
  {
    std::vector<std::jthread> threads;
    for (std::size_t t = 0; t < workers; ++t) {
      threads.emplace_back([&, t] {
        try {
          work(t, workers);
        } catch (...) {
          failures[t] = std::current_exception();
        }
      });
    }
  }
  for (const auto& f : failures) {
    if (f) std::rethrow_exception(f);
  }
  return out;
}

InpaintResult inpaint(const Tensor& x_rgb, const Mask& mask, const DatasetIndex& index,
                      const InpaintConfig& cfg, const Network& net,
                      const Exclusions& exclusions) {
  cfg.reconstruction.validate();
  if (cfg.k == 0) throw UsageError("inpaint: K must be >= 1");
  const Tensor working = to_working_resolution(x_rgb);
  const Mask m = mask.resized(working.h(), working.w());
  const Tensor query = apply_mask(working, m, cfg.fill);

  InpaintResult result;
  InpaintReport& report = result.report;
  report.working_shape = working.shape();

  FeatureVector target;
  if (cfg.reconstruction.strength_beta == 0.0) {
    target = phi(net, query);
  } else {
    const ImageFeatures x = phi_and_pool5(net, query);
    DatasetIndex masked = index;
    std::vector<Pool5Descriptor> descriptors =
        masked_descriptors(net, index, m, cfg.fill, cfg.jobs);
    for (std::size_t i = 0; i < masked.records.size(); ++i) {
      masked.records[i].pool5 = std::move(descriptors[i]);
    }
    const KnnResult nn = knn_by_cosine(masked, x.pool5, cfg.k, exclusions);
    if (nn.ids.empty()) throw UsageError("inpaint: index has no candidate neighbours");
    report.neighbor_ids = nn.ids;
    report.shortfall = nn.shortfall();
    InterpolationTarget shift = interpolation_target(
        net, index, x.phi, nn.ids, nn.ids, working.h(), working.w(),
        cfg.reconstruction.strength_beta, masked_preparer(m, cfg.fill));
    report.alpha = shift.attribute.alpha;
    target = std::move(shift.target);
  }

  ReconstructionResult recon = reconstruct(net, target, query, cfg.reconstruction);
  result.image = cfg.composite ? composite(recon.image, working, m) : std::move(recon.image);
  result.optimization = std::move(recon.optimization);
  return result;
}

}  // namespace dfi
