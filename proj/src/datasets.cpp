#include "gradprobe/datasets.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "gradprobe/io.hpp"

namespace gradprobe {

Tensor LabeledDataset::batch(const std::vector<std::size_t>& indices) const {
  if (images.empty()) throw ShapeError("cannot batch an empty dataset");
  const Shape& s = images.front().shape();
  Shape shape = s;
  shape.insert(shape.begin(), indices.size());
  Tensor out(shape);
  const std::size_t stride = shape_size(s);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor& img = images.at(indices[i]);
    std::copy(img.data().begin(), img.data().end(), out.data().begin() + i * stride);
  }
  return out;
}

// IDX ---------------------------------------------------------------------

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const char* file) {
  if (bytes.size() < offset + 4)
    throw IdxError(std::string(file) + " truncated: header field at offset " +
                   std::to_string(offset) + " needs 4 bytes, file has " +
                   std::to_string(bytes.size()));
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

void put_be32(std::string& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace

LabeledDataset parse_idx(const std::string& image_bytes, const std::string& label_bytes) {
  const std::uint32_t img_magic = read_be32(image_bytes, 0, "image file");
  if (img_magic != kIdxImages)
    throw IdxError("image file has bad magic " + hex32(img_magic) + " at offset 0 (expected " +
                   hex32(kIdxImages) + ")");
  const std::uint32_t lbl_magic = read_be32(label_bytes, 0, "label file");
  if (lbl_magic != kIdxLabels)
    throw IdxError("label file has bad magic " + hex32(lbl_magic) + " at offset 0 (expected " +
                   hex32(kIdxLabels) + ")");

  const std::size_t count = read_be32(image_bytes, 4, "image file");
  const std::size_t rows = read_be32(image_bytes, 8, "image file");
  const std::size_t cols = read_be32(image_bytes, 12, "image file");
  const std::size_t label_count = read_be32(label_bytes, 4, "label file");
  if (count != label_count)
    throw IdxError("image count " + std::to_string(count) + " (offset 4 of image file) does not " +
                   "match label count " + std::to_string(label_count) + " (offset 4 of label file)");

  const std::size_t pixels = rows * cols;
  if (image_bytes.size() < 16 + count * pixels)
    throw IdxError("image file truncated at offset " + std::to_string(image_bytes.size()) +
                   ": expected " + std::to_string(16 + count * pixels) + " bytes");
  if (label_bytes.size() < 8 + count)
    throw IdxError("label file truncated at offset " + std::to_string(label_bytes.size()) +
                   ": expected " + std::to_string(8 + count) + " bytes");

  LabeledDataset data;
  data.images.reserve(count);
  data.labels.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Tensor img({1, rows, cols});
    for (std::size_t p = 0; p < pixels; ++p)
      img[p] = static_cast<unsigned char>(image_bytes[16 + i * pixels + p]) / 255.0;
    data.images.push_back(std::move(img));
    data.labels.push_back(static_cast<unsigned char>(label_bytes[8 + i]));
  }
  return data;
}

LabeledDataset read_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  LabeledDataset data = parse_idx(read_file(images_path), read_file(labels_path));
  data.name = images_path.stem().string();
  return data;
}

void write_idx(const LabeledDataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  std::size_t rows = 0, cols = 0;
  if (!data.empty()) {
    const Shape& s = data.images.front().shape();
    if (s.size() != 3 || s[0] != 1)
      throw IdxError("IDX images must be 1×rows×cols, got " + shape_string(s));
    rows = s[1];
    cols = s[2];
  }
  std::string img, lbl;
  put_be32(img, kIdxImages);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(rows));
  put_be32(img, static_cast<std::uint32_t>(cols));
  put_be32(lbl, kIdxLabels);
  put_be32(lbl, static_cast<std::uint32_t>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.images[i].data())
      img.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    if (data.labels[i] > 255) throw IdxError("IDX labels must fit in a byte");
    lbl.push_back(static_cast<char>(data.labels[i]));
  }
  write_file_atomic(images_path, img);
  write_file_atomic(labels_path, lbl);
}

// Synthetic data ------------------------------------------------------------

namespace {

void require_image_shape(const Shape& s) {
  if (s.size() != 3 || shape_size(s) == 0)
    throw ShapeError("image shape must be c×h×w, got " + shape_string(s));
}

double class_colour(std::size_t cls, std::size_t classes, std::size_t ch, std::size_t channels) {
  if (channels == 1) return 1.0;
  const double phase = static_cast<double>(cls) / static_cast<double>(classes) -
                       static_cast<double>(ch) / static_cast<double>(channels);
  return std::max(0.0, std::cos(2.0 * std::numbers::pi * phase));
}

}  // namespace

LabeledDataset synth_blobs(std::size_t classes, std::size_t per_class, const Shape& image_shape,
                           std::uint64_t seed) {
  if (classes < 2) throw Error("synth_blobs needs at least 2 classes");
  require_image_shape(image_shape);
  const std::size_t channels = image_shape[0], h = image_shape[1], w = image_shape[2];
  const auto grid = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(classes))));
  const double cell_h = static_cast<double>(h) / static_cast<double>(grid);
  const double cell_w = static_cast<double>(w) / static_cast<double>(grid);
  const double sigma = 0.1 * std::min(cell_h, cell_w);

  LabeledDataset data;
  data.name = "blobs";
  const std::size_t n = classes * per_class;
  data.images.assign(n, Tensor(image_shape));
  data.labels.resize(n);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(n); ++si) {
    const auto i = static_cast<std::size_t>(si);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    const std::size_t cls = i % classes;
    const double cy = (static_cast<double>(cls / grid) + 0.5) * cell_h + rng.uniform(-1.0, 1.0) * cell_h / 8;
    const double cx = (static_cast<double>(cls % grid) + 0.5) * cell_w + rng.uniform(-1.0, 1.0) * cell_w / 8;
    const double amplitude = rng.uniform(0.7, 1.0);
    Tensor& img = data.images[i];
    for (std::size_t c = 0; c < channels; ++c) {
      const double colour = amplitude * class_colour(cls, classes, c, channels);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          img[(c * h + y) * w + x] =
              colour * std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma)) + rng.normal(0.0, 0.05);
        }
      }
    }
    clip_unit(img);
    data.labels[i] = cls;
  }
  return data;
}

UnfamiliarKind parse_unfamiliar_kind(const std::string& s) {
  if (s == "uniform_noise") return UnfamiliarKind::uniform_noise;
  if (s == "textures") return UnfamiliarKind::textures;
  throw Error("unknown unfamiliar dataset kind '" + s + "'");
}

std::string to_string(UnfamiliarKind kind) {
  return kind == UnfamiliarKind::uniform_noise ? "uniform_noise" : "textures";
}

LabeledDataset synth_unfamiliar(UnfamiliarKind kind, std::size_t count, const Shape& image_shape,
                                std::uint64_t seed) {
  if (count == 0) throw Error("synth_unfamiliar needs count >= 1");
  require_image_shape(image_shape);
  const std::size_t channels = image_shape[0], h = image_shape[1], w = image_shape[2];

  LabeledDataset data;
  data.name = to_string(kind);
  data.images.assign(count, Tensor(image_shape));
  data.labels.assign(count, 0);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(count); ++si) {
    const auto i = static_cast<std::size_t>(si);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    Tensor& img = data.images[i];
    if (kind == UnfamiliarKind::uniform_noise) {
      for (double& v : img.data()) v = rng.uniform();
      continue;
    }
    const double freq = rng.uniform(0.08, 0.4);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double mean = rng.uniform(0.3, 0.7);
    const double contrast = rng.uniform(0.3, 0.5);
    const double kx = 2.0 * std::numbers::pi * freq * std::cos(theta);
    const double ky = 2.0 * std::numbers::pi * freq * std::sin(theta);
    for (std::size_t c = 0; c < channels; ++c) {
      const double shift = rng.uniform(0.0, 1.0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          img[(c * h + y) * w + x] =
              mean + contrast * std::sin(kx * static_cast<double>(x) + ky * static_cast<double>(y) +
                                         phase + shift);
    }
    clip_unit(img);
  }
  return data;
}

// Corruptions ---------------------------------------------------------------

CorruptionKind parse_corruption_kind(const std::string& s) {
  if (s == "gaussian_noise") return CorruptionKind::gaussian_noise;
  if (s == "gaussian_blur") return CorruptionKind::gaussian_blur;
  if (s == "exposure") return CorruptionKind::exposure;
  if (s == "decolor") return CorruptionKind::decolor;
  throw Error("unknown corruption kind '" + s + "'");
}

std::string to_string(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::gaussian_noise: return "gaussian_noise";
    case CorruptionKind::gaussian_blur: return "gaussian_blur";
    case CorruptionKind::exposure: return "exposure";
    case CorruptionKind::decolor: return "decolor";
  }
  return "unknown";
}

double corruption_strength(CorruptionKind kind, int severity) {
  static constexpr std::array<double, 5> noise = {0.04, 0.08, 0.12, 0.18, 0.26};
  static constexpr std::array<double, 5> blur = {0.4, 0.6, 0.9, 1.3, 1.8};
  static constexpr std::array<double, 5> exposure = {1.3, 1.6, 2.0, 2.5, 3.0};
  static constexpr std::array<double, 5> gray = {0.2, 0.4, 0.6, 0.8, 1.0};
  if (severity < 1 || severity > 5)
    throw Error("corruption severity " + std::to_string(severity) + " outside [1,5]");
  const auto s = static_cast<std::size_t>(severity - 1);
  switch (kind) {
    case CorruptionKind::gaussian_noise: return noise[s];
    case CorruptionKind::gaussian_blur: return blur[s];
    case CorruptionKind::exposure: return exposure[s];
    case CorruptionKind::decolor: return gray[s];
  }
  throw Error("unknown corruption kind");
}

void clip_unit(Tensor& image) {
  for (double& v : image.data()) v = std::clamp(v, 0.0, 1.0);
}

void add_gaussian_noise(Tensor& image, double sigma, Rng& rng) {
  if (sigma == 0.0) return;
  for (double& v : image.data()) v += rng.normal(0.0, sigma);
}

void gaussian_blur(Tensor& image, double sigma) {
  if (sigma <= 0.0) return;
  if (image.rank() != 3) throw ShapeError("gaussian_blur needs c×h×w, got " + shape_string(image.shape()));
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t k = -radius; k <= radius; ++k)
    total += taps[static_cast<std::size_t>(k + radius)] =
        std::exp(-static_cast<double>(k * k) / (2.0 * sigma * sigma));
  for (double& t : taps) t /= total;

  const auto c_n = image.dim(0);
  const auto h = static_cast<std::ptrdiff_t>(image.dim(1));
  const auto w = static_cast<std::ptrdiff_t>(image.dim(2));
  std::vector<double> tmp(static_cast<std::size_t>(h * w));
  for (std::size_t c = 0; c < c_n; ++c) {
    double* plane = image.data().data() + c * static_cast<std::size_t>(h * w);
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k)
          acc += taps[static_cast<std::size_t>(k + radius)] * plane[y * w + std::clamp(x + k, std::ptrdiff_t{0}, w - 1)];
        tmp[static_cast<std::size_t>(y * w + x)] = acc;
      }
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k)
          acc += taps[static_cast<std::size_t>(k + radius)] *
                 tmp[static_cast<std::size_t>(std::clamp(y + k, std::ptrdiff_t{0}, h - 1) * w + x)];
        plane[y * w + x] = acc;
      }
  }
}

void scale_exposure(Tensor& image, double factor) {
  for (double& v : image.data()) v *= factor;
}

void decolor(Tensor& image, double weight) {
  if (image.rank() != 3) throw ShapeError("decolor needs c×h×w, got " + shape_string(image.shape()));
  const std::size_t channels = image.dim(0), plane = image.dim(1) * image.dim(2);
  for (std::size_t p = 0; p < plane; ++p) {
    double gray = 0.0;
    for (std::size_t c = 0; c < channels; ++c) gray += image[c * plane + p];
    gray /= static_cast<double>(channels);
    for (std::size_t c = 0; c < channels; ++c) {
      double& v = image[c * plane + p];
      v = (1.0 - weight) * v + weight * gray;
    }
  }
}

LabeledDataset corrupt(const LabeledDataset& data, const CorruptionSpec& spec, std::uint64_t seed) {
  const double strength = corruption_strength(spec.kind, spec.severity);
  LabeledDataset out = data;
  out.name = data.name + "@" + to_string(spec.kind) + "-" + std::to_string(spec.severity);

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t si = 0; si < static_cast<std::ptrdiff_t>(out.size()); ++si) {
    const auto i = static_cast<std::size_t>(si);
    Tensor& img = out.images[i];
    switch (spec.kind) {
      case CorruptionKind::gaussian_noise: {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
        add_gaussian_noise(img, strength, rng);
        break;
      }
      case CorruptionKind::gaussian_blur: gaussian_blur(img, strength); break;
      case CorruptionKind::exposure: scale_exposure(img, strength); break;
      case CorruptionKind::decolor: decolor(img, strength); break;
    }
    clip_unit(img);
  }
  return out;
}

}  // namespace gradprobe
