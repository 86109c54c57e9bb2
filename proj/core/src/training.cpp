#include "oavl/training.hpp"

#include <cmath>
#include <map>

#include "oavl/errors.hpp"
#include "oavl/evaluation.hpp"
#include "oavl/nn/optim.hpp"

namespace oavl::training {

namespace {

using captions::TemplateKind;

template <typename T>
T read_value(const nlohmann::json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(key + ": wrong type (" + std::string(j.type_name()) + ")");
  }
}

template <typename T>
void read_number(const nlohmann::json& j, const std::string& key, T& out) {
  if (!j.is_number() || (std::is_integral_v<T> && !j.is_number_integer())) {
    throw ValidationError(key + ": expected " + (std::is_integral_v<T> ? "an integer" : "a number"));
  }
  if constexpr (std::is_unsigned_v<T>) {
    if (j.is_number_integer() && !j.is_number_unsigned() && j.get<std::int64_t>() < 0) {
      throw ValidationError(key + ": must be non-negative");
    }
  }
  out = read_value<T>(j, key);
}

std::vector<captions::TokenSequence> tokenize_captions(const std::vector<std::string>& texts, int max_len) {
  std::vector<captions::TokenSequence> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) {
    seqs.push_back(captions::tokenize(t, captions::Vocabulary::grammar(), static_cast<std::size_t>(max_len)));
  }
  return seqs;
}

double finite_or_throw(double v, const char* what) {
  if (!std::isfinite(v)) {
    throw Error(std::string("training: non-finite ") + what + " loss (" + std::to_string(v) + ")");
  }
  return v;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs: must be >= 0");
  if (batch_size < 2) throw ValidationError("batch_size: must be >= 2 (InfoNCE needs in-batch negatives)");
  if (!(lr_image > 0)) throw ValidationError("lr_image: must be > 0");
  if (!(lr_text > 0)) throw ValidationError("lr_text: must be > 0");
  if (!(lr_projection > 0)) throw ValidationError("lr_projection: must be > 0");
  if (!(weight_decay >= 0)) throw ValidationError("weight_decay: must be >= 0");
  if (!(lambda >= 0)) throw ValidationError("lambda: must be >= 0");
  if (!(shuffle_prob >= 0 && shuffle_prob <= 1)) throw ValidationError("shuffle_prob: must be in [0, 1]");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"lr_image", lr_image},
          {"lr_text", lr_text},
          {"lr_projection", lr_projection},
          {"weight_decay", weight_decay},
          {"lambda", lambda},
          {"shuffle_prob", shuffle_prob},
          {"include_zero_grades", include_zero_grades},
          {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ValidationError("train config: expected a JSON object");
  }
  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "epochs") read_number(v, key, c.epochs);
    else if (key == "batch_size") read_number(v, key, c.batch_size);
    else if (key == "lr_image") read_number(v, key, c.lr_image);
    else if (key == "lr_text") read_number(v, key, c.lr_text);
    else if (key == "lr_projection") read_number(v, key, c.lr_projection);
    else if (key == "weight_decay") read_number(v, key, c.weight_decay);
    else if (key == "lambda") read_number(v, key, c.lambda);
    else if (key == "shuffle_prob") read_number(v, key, c.shuffle_prob);
    else if (key == "seed") read_number(v, key, c.seed);
    else if (key == "include_zero_grades") {
      if (!v.is_boolean()) throw ValidationError(key + ": expected a boolean");
      c.include_zero_grades = v.get<bool>();
    } else {
      throw ValidationError("train config: unknown key '" + key + "'");
    }
  }
  return c;
}

EpochPlan epoch_plan(std::span<const synth::ManifestEntry* const> train, int epoch, const TrainConfig& cfg,
                     Rng& rng) {
  if (train.empty()) {
    throw ValidationError("epoch plan: training split is empty");
  }
  if (cfg.batch_size < 1) {
    throw ValidationError("epoch plan: batch_size must be positive");
  }
  std::map<scores::SeveritySignature, std::vector<const synth::ManifestEntry*>> groups;
  for (const auto* e : train) {
    groups[scores::severity_signature(e->record)].push_back(e);
  }
  std::vector<const synth::ManifestEntry*> survivors;
  survivors.reserve(groups.size());
  for (const auto& [sig, members] : groups) {
    const auto pick = rng.uniform_int(0, static_cast<std::int64_t>(members.size()) - 1);
    survivors.push_back(members[static_cast<std::size_t>(pick)]);
  }
  rng.shuffle(survivors);

  EpochPlan plan;
  plan.epoch = epoch;
  plan.survivors = survivors.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (std::size_t start = 0; start + bs <= survivors.size(); start += bs) {
    std::vector<PlanItem> batch;
    batch.reserve(bs);
    for (std::size_t i = start; i < start + bs; ++i) {
      PlanItem item;
      item.entry = survivors[i];
      item.kind = captions::kTemplateKinds[static_cast<std::size_t>(rng.uniform_int(0, 2))];
      item.shuffle = rng.bernoulli(cfg.shuffle_prob);
      batch.push_back(item);
    }
    plan.batches.push_back(std::move(batch));
  }
  return plan;
}

StepLosses train_step(model::DualEncoder<float>& model, const nn::Tensor<float>& images,
                      const model::TokenBatch& positive, const model::TokenBatch& negative, const TrainConfig& cfg) {
  const int n = images.shape.empty() ? 0 : images.shape[0];
  if (n < 2) {
    throw ValidationError("train step: batch size must be >= 2");
  }
  if (positive.rows != n || negative.rows != n) {
    throw ValidationError("train step: image and caption batch sizes differ");
  }

  nn::Graph<float> g;
  model::DualEncoder<float>::Binder b{g, model, true, {}};
  const nn::Var img = model.project(b, model.encode_image(b, g.constant(images)), model::Modality::Image);
  const nn::Var pos_u = model.encode_text(b, positive);
  const nn::Var pos = model.project(b, pos_u, model::Modality::Text);
  const nn::Var neg_u = model.encode_text(b, negative);

  const nn::Var info = model::info_nce_loss(g, model::similarity_matrix(g, img, pos), model.inverse_temperature(b));
  const nn::Var neg = model::negative_caption_loss(g, pos_u, neg_u);
  const nn::Var total = model::total_loss(g, info, neg, cfg.lambda);

  StepLosses out;
  out.info_nce = finite_or_throw(g.value(info).data[0], "InfoNCE");
  out.negative = finite_or_throw(g.value(neg).data[0], "negative-caption");
  out.total = finite_or_throw(g.value(total).data[0], "total");

  model.zero_grad();
  g.backward(total);
  g.accumulate_param_grads();
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].grad_ready) {
      continue;
    }
    nn::AdamConfig adam;
    adam.weight_decay = cfg.weight_decay;
    switch (model.group_of(i)) {
      case model::ParamGroup::ImageEncoder: adam.lr = cfg.lr_image; break;
      case model::ParamGroup::TextEncoder: adam.lr = cfg.lr_text; break;
      case model::ParamGroup::Projection: adam.lr = cfg.lr_projection; break;
    }
    nn::adam_step(params[i], adam);
  }
  return out;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"steps", e.steps},
                           {"total", e.total},
                           {"info_nce", e.info_nce},
                           {"negative", e.negative},
                           {"val_accuracy", e.val_accuracy},
                           {"temperature", e.temperature}});
  }
  return {{"epochs", std::move(epochs_json)},
          {"initial_negative_cosine", initial_negative_cosine},
          {"final_negative_cosine", final_negative_cosine}};
}

double negative_pair_cosine(model::DualEncoder<float>& model, std::span<const synth::ManifestEntry* const> entries,
                            bool include_zero_grades, std::uint64_t seed) {
  if (entries.empty()) {
    return 0.0;
  }
  Rng rng(seed, 0xC05);
  std::vector<std::string> pos;
  std::vector<std::string> neg;
  for (const auto* e : entries) {
    for (auto kind : captions::kTemplateKinds) {
      pos.push_back(captions::render_caption(e->record, kind, include_zero_grades).text);
      const auto negative = scores::perturb_negative(e->record, rng);
      neg.push_back(captions::render_caption(negative, kind, include_zero_grades).text);
    }
  }
  const int max_len = model.config().max_len;
  const auto p = model.embed_texts(model::TokenBatch::from(tokenize_captions(pos, max_len)), false);
  const auto q = model.embed_texts(model::TokenBatch::from(tokenize_captions(neg, max_len)), false);
  const auto d = static_cast<std::size_t>(p.shape[1]);
  double sum = 0.0;
  for (std::size_t r = 0; r < pos.size(); ++r) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t k = 0; k < d; ++k) {
      const double a = p.data[r * d + k];
      const double b = q.data[r * d + k];
      ab += a * b;
      aa += a * a;
      bb += b * b;
    }
    sum += ab / (std::sqrt(aa) * std::sqrt(bb) + 1e-12);
  }
  return sum / static_cast<double>(pos.size());
}

model::ModelConfig model_config_for(const synth::LoadedDataset& data) {
  model::ModelConfig m;
  if (!data.images.empty()) {
    m.image_height = data.images.front().height;
    m.image_width = data.images.front().width;
  }
  m.vocab_size = static_cast<int>(captions::Vocabulary::grammar().size());
  return m;
}

nlohmann::json model_config_to_json(const model::ModelConfig& cfg) {
  return {{"image_height", cfg.image_height},         {"image_width", cfg.image_width},
          {"vocab_size", cfg.vocab_size},             {"max_len", cfg.max_len},
          {"embed_dim", cfg.embed_dim},               {"proj_dim", cfg.proj_dim},
          {"init_temperature", cfg.init_temperature}, {"min_temperature", cfg.min_temperature},
          {"max_temperature", cfg.max_temperature}};
}

model::ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ValidationError("model config: expected a JSON object");
  }
  model::ModelConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "image_height") read_number(v, key, c.image_height);
    else if (key == "image_width") read_number(v, key, c.image_width);
    else if (key == "vocab_size") read_number(v, key, c.vocab_size);
    else if (key == "max_len") read_number(v, key, c.max_len);
    else if (key == "embed_dim") read_number(v, key, c.embed_dim);
    else if (key == "proj_dim") read_number(v, key, c.proj_dim);
    else if (key == "init_temperature") read_number(v, key, c.init_temperature);
    else if (key == "min_temperature") read_number(v, key, c.min_temperature);
    else if (key == "max_temperature") read_number(v, key, c.max_temperature);
    else throw ValidationError("model config: unknown key '" + key + "'");
  }
  return c;
}

model::DualEncoder<float> model_from_checkpoint(const Checkpoint& ckpt) {
  const auto cfg = checkpoint_config(ckpt);
  if (!cfg.contains("model")) {
    throw ValidationError("checkpoint: no model configuration embedded");
  }
  model::DualEncoder<float> m(model_config_from_json(cfg.at("model")), 0);
  restore_model(m, ckpt);
  return m;
}

FitResult fit(const synth::LoadedDataset& data, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  const auto train = data.manifest.split(synth::Split::Train);
  const auto val = data.manifest.split(synth::Split::Val);
  if (train.empty() || val.empty()) {
    throw ValidationError("fit: manifest needs non-empty train and val splits");
  }

  const auto mcfg = model_config_for(data);
  FitResult result{model::DualEncoder<float>(mcfg, cfg.seed), {}, {}};
  auto& model = result.model;
  const std::uint64_t probe_seed = cfg.seed ^ 0xC0511E;
  result.report.initial_negative_cosine = negative_pair_cosine(model, val, cfg.include_zero_grades, probe_seed);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng plan_rng(cfg.seed, 0x1000 + static_cast<std::uint64_t>(epoch));
    Rng caption_rng(cfg.seed, 0x2000 + static_cast<std::uint64_t>(epoch));
    const auto plan = epoch_plan(train, epoch, cfg, plan_rng);

    EpochStats stats;
    stats.epoch = epoch + 1;
    for (const auto& batch : plan.batches) {
      std::vector<const std::vector<float>*> imgs;
      std::vector<std::string> pos;
      std::vector<std::string> neg;
      for (const auto& item : batch) {
        const auto& rec = item.entry->record;
        imgs.push_back(&data.image_of(*item.entry).pixels);
        auto p = captions::render_caption(rec, item.kind, cfg.include_zero_grades);
        auto n = captions::render_caption(scores::perturb_negative(rec, caption_rng), item.kind,
                                          cfg.include_zero_grades);
        if (item.shuffle) {
          p = captions::shuffle_sentences(p, caption_rng);
          n = captions::shuffle_sentences(n, caption_rng);
        }
        pos.push_back(std::move(p.text));
        neg.push_back(std::move(n.text));
      }
      const auto images = model::image_batch<float>(imgs, mcfg.image_height, mcfg.image_width);
      const auto losses =
          train_step(model, images, model::TokenBatch::from(tokenize_captions(pos, mcfg.max_len)),
                     model::TokenBatch::from(tokenize_captions(neg, mcfg.max_len)), cfg);
      stats.total += losses.total;
      stats.info_nce += losses.info_nce;
      stats.negative += losses.negative;
      ++stats.steps;
    }
    if (stats.steps > 0) {
      const auto s = static_cast<double>(stats.steps);
      stats.total /= s;
      stats.info_nce /= s;
      stats.negative /= s;
    }
    stats.val_accuracy = eval::evaluate_zero_shot(model, data, val).accuracy();
    stats.temperature = model.temperature();
    result.report.epochs.push_back(stats);
    if (on_epoch) {
      on_epoch(stats);
    }
  }

  result.report.final_negative_cosine = negative_pair_cosine(model, val, cfg.include_zero_grades, probe_seed);
  const nlohmann::json config{{"model", model_config_to_json(mcfg)}, {"train", cfg.to_json()}};
  result.checkpoint = make_checkpoint(model, config, cfg.epochs);
  return result;
}

}  // namespace oavl::training
