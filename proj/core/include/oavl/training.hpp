#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "oavl/caption_engine.hpp"
#include "oavl/checkpoint.hpp"
#include "oavl/model.hpp"
#include "oavl/rng.hpp"
#include "oavl/synth_data.hpp"

namespace oavl::training {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr_image = 1e-4;
  double lr_text = 1e-3;  // text encoder is trained from scratch
  double lr_projection = 1e-3;
  double weight_decay = 1e-3;
  double lambda = 0.5;
  double shuffle_prob = 0.5;
  bool include_zero_grades = true;
  std::uint64_t seed = 0;

  // Rates > 0, batch_size >= 2, epochs >= 0, lambda >= 0, shuffle_prob in [0, 1].
  void validate() const;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys throw ValidationError.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct PlanItem {
  const synth::ManifestEntry* entry = nullptr;
  captions::TemplateKind kind = captions::TemplateKind::Abnormality;
  bool shuffle = false;
};

struct EpochPlan {
  int epoch = 0;
  std::size_t survivors = 0;  // one per signature group
  std::vector<std::vector<PlanItem>> batches;
};

// Keeps one uniformly chosen item per severity signature, shuffles the
// survivors and cuts them into full batches (the ragged tail is dropped).
EpochPlan epoch_plan(std::span<const synth::ManifestEntry* const> train, int epoch, const TrainConfig& cfg, Rng& rng);

struct StepLosses {
  double total = 0.0;
  double info_nce = 0.0;
  double negative = 0.0;
};

// One forward/backward and one Adam update per parameter at its group's rate.
// Throws Error when a loss is not finite.
StepLosses train_step(model::DualEncoder<float>& model, const nn::Tensor<float>& images,
                      const model::TokenBatch& positive, const model::TokenBatch& negative, const TrainConfig& cfg);

struct EpochStats {
  int epoch = 0;
  std::size_t steps = 0;
  double total = 0.0;
  double info_nce = 0.0;
  double negative = 0.0;
  double val_accuracy = 0.0;
  double temperature = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  double initial_negative_cosine = 0.0;
  double final_negative_cosine = 0.0;

  nlohmann::json to_json() const;
};

// Mean cosine between unprojected text embeddings of each record's captions
// and of perturb_negative captions in the same template, over all three
// templates. Negatives are drawn from a generator seeded by `seed`.
double negative_pair_cosine(model::DualEncoder<float>& model, std::span<const synth::ManifestEntry* const> entries,
                            bool include_zero_grades, std::uint64_t seed);

struct FitResult {
  model::DualEncoder<float> model;
  TrainReport report;
  Checkpoint checkpoint;
};

using EpochCallback = std::function<void(const EpochStats&)>;

FitResult fit(const synth::LoadedDataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Model shape for a dataset: image size from its images, defaults otherwise.
model::ModelConfig model_config_for(const synth::LoadedDataset& data);

nlohmann::json model_config_to_json(const model::ModelConfig& cfg);
model::ModelConfig model_config_from_json(const nlohmann::json& j);

// Checkpoints written by fit() embed {"model": ..., "train": ...}; this
// rebuilds the model they describe and restores its tensors.
model::DualEncoder<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace oavl::training
