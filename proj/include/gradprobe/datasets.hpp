#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gradprobe/rng.hpp"
#include "gradprobe/tensor.hpp"

namespace gradprobe {

/// Images are c×h×w with pixels in [0,1].
struct LabeledDataset {
  std::string name;
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }
  /// Stacks the selected images into an n×c×h×w batch.
  Tensor batch(const std::vector<std::size_t>& indices) const;
};

class IdxError : public Error {
 public:
  using Error::Error;
};

/// Parses an IDX image file (magic 0x00000803, u8 count×rows×cols) and its IDX
/// label file (magic 0x00000801). Pixels are scaled by 1/255 into 1×rows×cols.
LabeledDataset read_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);
LabeledDataset parse_idx(const std::string& image_bytes, const std::string& label_bytes);

/// Writes a single-channel dataset as an IDX pair, quantizing pixels to u8.
void write_idx(const LabeledDataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// Class-conditional images: each class owns a grid cell and a colour; a
/// jittered Gaussian blob is drawn there, plus N(0, 0.05) pixel noise.
/// Samples interleave classes (sample i has label i % classes).
LabeledDataset synth_blobs(std::size_t classes, std::size_t per_class, const Shape& image_shape,
                           std::uint64_t seed);

enum class UnfamiliarKind { uniform_noise, textures };
UnfamiliarKind parse_unfamiliar_kind(const std::string& s);
std::string to_string(UnfamiliarKind kind);

/// uniform_noise: i.i.d. U[0,1] pixels. textures: sinusoidal gratings with
/// random frequency, orientation and phase. Labels are all 0.
LabeledDataset synth_unfamiliar(UnfamiliarKind kind, std::size_t count, const Shape& image_shape,
                                std::uint64_t seed);

enum class CorruptionKind { gaussian_noise, gaussian_blur, exposure, decolor };
CorruptionKind parse_corruption_kind(const std::string& s);
std::string to_string(CorruptionKind kind);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::gaussian_noise;
  int severity = 1;  // 1..5
};

/// Strength of a corruption at a severity level; throws on severity outside [1,5].
double corruption_strength(CorruptionKind kind, int severity);

/// Applies the corruption to every image, clipping to [0,1]. Labels are kept.
LabeledDataset corrupt(const LabeledDataset& data, const CorruptionSpec& spec, std::uint64_t seed);

// Per-image transforms. None of them clip.
void add_gaussian_noise(Tensor& image, double sigma, Rng& rng);
/// Separable Gaussian filter per channel, radius ⌈3σ⌉, replicated borders.
void gaussian_blur(Tensor& image, double sigma);
void scale_exposure(Tensor& image, double factor);
/// Blends every pixel toward the mean over channels by `weight`.
void decolor(Tensor& image, double weight);
void clip_unit(Tensor& image);

}  // namespace gradprobe
