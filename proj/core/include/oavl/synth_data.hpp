#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "oavl/score_model.hpp"

namespace oavl::synth {

struct SynthConfig {
  int height = 64;
  int width = 64;
  double noise_sigma = 0.03;
  int max_shift = 2;
  std::uint64_t seed = 0;

  // Throws ValidationError: height, width >= 32, noise_sigma >= 0, max_shift >= 0.
  void validate() const;
};

// Row-major grayscale image, values in [0, 1].
struct SynthImage {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  float at(int row, int col) const { return pixels[static_cast<std::size_t>(row * width + col)]; }
  float& at(int row, int col) { return pixels[static_cast<std::size_t>(row * width + col)]; }
  bool operator==(const SynthImage&) const = default;
};

// Knee geometry at a given resolution. Constants are authored for 64x64 and
// scale linearly with height/width.
struct Geometry {
  int height, width;
  int femur_top, femur_end;  // femur band rows [femur_top, femur_end)
  int tibia_top, tibia_end;  // tibia band rows [tibia_top, tibia_end) before narrowing
  int half;                  // medial columns [0, half) in the left-knee frame

  static Geometry for_size(int height, int width);
  int rows(double px64) const;  // scales a 64-row distance
  int cols(double px64) const;  // scales a 64-column distance
};

SynthImage render_image(const scores::OaScoreRecord& record, const SynthConfig& cfg, std::uint64_t seed);

enum class Split : std::uint8_t { Train, Val, Test };
std::string_view to_string(Split s) noexcept;
Split split_from_string(std::string_view s);

struct ManifestEntry {
  scores::OaScoreRecord record;
  std::string image_path;  // relative to the manifest's directory unless absolute
  Split split = Split::Train;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split(Split s) const;
  bool operator==(const DatasetManifest&) const = default;
};

struct SplitRatios {
  double train = 0.81;
  double val = 0.09;
  double test = 0.10;
};

// floor(n * train), floor(n * val), remainder to test.
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios);

// Writes manifest.jsonl and images/*.pgm under out_dir. Item i derives its
// seed as cfg.seed ^ i, so items can be produced on `threads` workers without
// changing any output byte.
DatasetManifest generate_dataset(std::size_t n, const SynthConfig& cfg, const SplitRatios& ratios,
                                 const std::filesystem::path& out_dir, unsigned threads = 1);

// JSONL, one entry per line: the record object plus "image_path" and "split".
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
// Throws ValidationError "line N: <field>: ..." on malformed content or
// duplicate ids, IoError when the file cannot be read.
DatasetManifest read_manifest(const std::filesystem::path& path);

// A manifest with every image decoded, parallel to manifest.entries.
struct LoadedDataset {
  DatasetManifest manifest;
  std::vector<SynthImage> images;

  const SynthImage& image_of(const ManifestEntry& entry) const;
};

// Relative image paths resolve against the manifest's directory. All images
// must share one size.
LoadedDataset load_dataset(const std::filesystem::path& manifest_path);

// 16-bit binary PGM ("P5", maxval 65535), intensities quantised as round(v * 65535).
void write_pgm(const SynthImage& image, const std::filesystem::path& path);
SynthImage read_pgm(const std::filesystem::path& path);

enum class FeatureKind : std::uint8_t { Osteophytes, Sclerosis, Jsn, Attrition, Cysts, Chondrocalcinosis };

// A feature at one compartment. `site` indexes the feature's own site list:
// kBoneSites for osteophytes/sclerosis/cysts, kJointSites for jsn and
// chondrocalcinosis, kTibiaSites for attrition.
struct FeatureLocator {
  FeatureKind kind = FeatureKind::Osteophytes;
  int site = 0;
};

struct GroundTruthRegion {
  FeatureLocator feature;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> mask;  // row-major, 1 inside

  std::size_t area() const;
  bool contains(int row, int col) const { return mask[static_cast<std::size_t>(row * width + col)] != 0; }
};

// Pixels the renderer modifies for `feature`, in pre-shift geometry dilated by
// cfg.max_shift. Throws ValidationError("feature absent") when the feature has
// grade 0 / flag false in the record.
GroundTruthRegion ground_truth_region(const scores::OaScoreRecord& record, FeatureLocator feature,
                                      const SynthConfig& cfg);

}  // namespace oavl::synth
