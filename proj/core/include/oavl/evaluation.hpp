#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "oavl/model.hpp"
#include "oavl/rng.hpp"
#include "oavl/synth_data.hpp"

namespace oavl::eval {

inline constexpr int kClassCount = 5;

// "{word} osteoarthritis." and "Image shows {word} osteoarthritis in the {side} knee."
std::array<std::string, 2> class_prompts(int kl, scores::Side side);

// Unit class vectors [5, proj_dim] for one knee side: each class averages the
// unit embeddings of its prompts, then renormalizes.
nn::Tensor<float> class_vectors(model::DualEncoder<float>& model, scores::Side side);

// Argmax of cosine(image, class k); ties go to the lower class index.
int classify_embedding(std::span<const float> image_proj, const nn::Tensor<float>& class_vecs);

int zero_shot_classify(model::DualEncoder<float>& model, const synth::SynthImage& image, scores::Side side);

struct ZeroShotResult {
  std::size_t total = 0;
  std::size_t correct = 0;
  std::array<std::array<std::size_t, kClassCount>, kClassCount> confusion{};  // [true][predicted]
  std::vector<int> predictions;  // parallel to the evaluated entries

  double accuracy() const { return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

ZeroShotResult evaluate_zero_shot(model::DualEncoder<float>& model, const synth::LoadedDataset& data,
                                  std::span<const synth::ManifestEntry* const> entries);

struct RetrievalHit {
  std::size_t pool_index = 0;
  double similarity = 0.0;
};

// Ranks rows of pool_proj [P, d] by dot product with image_proj, descending,
// ties by pool index. Throws ValidationError for an empty pool or k > P.
std::vector<RetrievalHit> rank_pool(std::span<const float> image_proj, const nn::Tensor<float>& pool_proj,
                                    std::size_t k);

std::vector<RetrievalHit> retrieve_topk(model::DualEncoder<float>& model, const synth::SynthImage& image,
                                        std::span<const std::string> pool, std::size_t k);

// Clipped n-gram statistics of one candidate/reference pair.
struct BleuStats {
  std::array<std::size_t, 4> matched{};
  std::array<std::size_t, 4> total{};
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(std::span<const std::string> candidate, std::span<const std::string> reference);
// Unsmoothed BLEU-4: 0 when any precision is 0, BP = 1 if c > r else exp(1 - r/c).
double bleu_from_stats(const BleuStats& s);
double bleu4(std::span<const std::string> candidate, std::span<const std::string> reference);
// Tokenizes both strings with captions::split_tokens first.
double bleu4(std::string_view candidate, std::string_view reference);
double corpus_bleu4(std::span<const std::string> candidates, std::span<const std::string> references);

struct RetrievalResult {
  std::size_t queries = 0;
  double mean_top1_bleu = 0.0;
  double random_baseline_bleu = 0.0;
  // Fraction of queries whose own caption is within the top k, for k in
  // kHitTable plus the requested k (ranks beyond the pool size are skipped).
  std::vector<std::pair<std::size_t, double>> hit_rate;
  std::vector<std::size_t> top1;  // pool index per query
  std::vector<double> top1_bleu;
};

inline constexpr std::array<std::size_t, 3> kHitTable{1, 5, 10};

// Pool: Location captions (include_zero_grades = true) of `entries`; each image
// queries the pool and its top-1 caption is scored against its own caption.
// The random baseline averages BLEU of `random_draws` uniformly drawn
// (query, pool caption) pairs.
RetrievalResult evaluate_retrieval(model::DualEncoder<float>& model, const synth::LoadedDataset& data,
                                   std::span<const synth::ManifestEntry* const> entries, std::size_t k,
                                   std::size_t random_draws,
                                   std::uint64_t seed);

struct SaliencyMap {
  int height = 0;
  int width = 0;
  std::vector<float> values;
  std::string prompt;
  std::string image_id;
};

// activations, gradients: [C, h, w]. relu(sum_c mean(grad_c) * A_c), bilinear
// upsample to height x width (half-pixel centres), divided by its max.
SaliencyMap cam_from_activations(std::span<const float> activations, std::span<const float> gradients, int channels,
                                 int h, int w, int height, int width);

// Target: cosine(projected image, projected prompt) w.r.t. the last conv stage.
SaliencyMap grad_cam(model::DualEncoder<float>& model, const synth::SynthImage& image, std::string_view prompt,
                     std::string image_id = {});

// (mass inside / total mass) / (mask area / image area). An all-zero map scores 0.
double localization_score(const SaliencyMap& map, const synth::GroundTruthRegion& region);

// Union of the rendered osteophyte spurs of every graded bone site.
synth::GroundTruthRegion osteophyte_region(const scores::OaScoreRecord& record, const synth::SynthConfig& cfg);

// The "Osteophytes: ..." sentence of the abnormality caption.
std::string osteophyte_prompt(const scores::OaScoreRecord& record);

struct SaliencyExample {
  SaliencyMap map;
  synth::SynthImage image;
  double localization = 0.0;
};

struct EvalReport {
  std::string checkpoint;
  ZeroShotResult zero_shot;
  std::vector<int> true_labels;
  std::vector<std::string> ids;
  bool has_retrieval = false;
  RetrievalResult retrieval;
  std::vector<SaliencyExample> saliency;

  nlohmann::json to_json() const;
};

// report.json (sorted keys), confusion.csv, saliency/<id>.pgm overlays
// (0.5 * image + 0.5 * saliency).
void export_report(const EvalReport& report, const std::filesystem::path& out_dir);

}  // namespace oavl::eval
