#include "oavl/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "oavl/caption_engine.hpp"
#include "oavl/errors.hpp"

namespace oavl::eval {

namespace {

using captions::TemplateKind;
using captions::Vocabulary;

model::TokenBatch tokenize_all(std::span<const std::string> texts, std::size_t max_len) {
  std::vector<captions::TokenSequence> seqs;
  seqs.reserve(texts.size());
  for (const auto& t : texts) {
    seqs.push_back(captions::tokenize(t, Vocabulary::grammar(), max_len));
  }
  return model::TokenBatch::from(seqs);
}

nn::Tensor<float> single_image(const model::DualEncoder<float>& m, const synth::SynthImage& image) {
  const auto& cfg = m.config();
  if (image.height != cfg.image_height || image.width != cfg.image_width) {
    throw ValidationError("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                          ", model expects " + std::to_string(cfg.image_height) + "x" +
                          std::to_string(cfg.image_width));
  }
  return nn::Tensor<float>({1, 1, image.height, image.width}, image.pixels);
}

nn::Tensor<float> embed_images(model::DualEncoder<float>& m, const synth::LoadedDataset& data,
                               std::span<const synth::ManifestEntry* const> entries) {
  std::vector<const std::vector<float>*> ptrs;
  ptrs.reserve(entries.size());
  for (const auto* e : entries) {
    ptrs.push_back(&data.image_of(*e).pixels);
  }
  const auto batch = model::image_batch<float>(ptrs, m.config().image_height, m.config().image_width);
  return m.embed_images(batch, true);
}

std::span<const float> row(const nn::Tensor<float>& t, std::size_t i) {
  const auto d = static_cast<std::size_t>(t.shape.at(1));
  return std::span<const float>(t.data).subspan(i * d, d);
}

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a[i]) * b[i];
  }
  return s;
}

using Ngram = std::vector<std::string>;

std::map<Ngram, std::size_t> ngram_counts(std::span<const std::string> tokens, std::size_t n) {
  std::map<Ngram, std::size_t> counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i), tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

}  // namespace

std::array<std::string, 2> class_prompts(int kl, scores::Side side) {
  const auto word = std::string(scores::grade_word(scores::Grade(kl)));
  std::string first = word + " osteoarthritis.";
  first[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(first[0])));
  return {first, "Image shows " + word + " osteoarthritis in the " + std::string(scores::to_string(side)) + " knee."};
}

nn::Tensor<float> class_vectors(model::DualEncoder<float>& model, scores::Side side) {
  std::vector<std::string> prompts;
  for (int k = 0; k < kClassCount; ++k) {
    for (auto& p : class_prompts(k, side)) {
      prompts.push_back(std::move(p));
    }
  }
  const auto tokens = tokenize_all(prompts, static_cast<std::size_t>(model.config().max_len));
  const auto emb = model.embed_texts(tokens, true);
  const int d = emb.shape.at(1);
  nn::Tensor<float> out({kClassCount, d});
  for (int k = 0; k < kClassCount; ++k) {
    std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
    for (std::size_t p = 0; p < 2; ++p) {
      const auto r = row(emb, static_cast<std::size_t>(2 * k) + p);
      const double n = std::sqrt(dot(r, r));
      for (int i = 0; i < d; ++i) {
        acc[static_cast<std::size_t>(i)] += n > 0 ? r[static_cast<std::size_t>(i)] / n : 0.0;
      }
    }
    double norm = 0.0;
    for (double v : acc) {
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (int i = 0; i < d; ++i) {
      out.data[static_cast<std::size_t>(k * d + i)] =
          static_cast<float>(norm > 0 ? acc[static_cast<std::size_t>(i)] / norm : 0.0);
    }
  }
  return out;
}

int classify_embedding(std::span<const float> image_proj, const nn::Tensor<float>& class_vecs) {
  const double n = std::sqrt(dot(image_proj, image_proj));
  int best = 0;
  double best_cos = -INFINITY;
  for (int k = 0; k < class_vecs.shape.at(0); ++k) {
    const auto c = row(class_vecs, static_cast<std::size_t>(k));
    const double cn = std::sqrt(dot(c, c));
    const double cos = (n > 0 && cn > 0) ? dot(image_proj, c) / (n * cn) : 0.0;
    if (cos > best_cos) {
      best_cos = cos;
      best = k;
    }
  }
  return best;
}

int zero_shot_classify(model::DualEncoder<float>& model, const synth::SynthImage& image, scores::Side side) {
  const auto emb = model.embed_images(single_image(model, image), true);
  return classify_embedding(emb.data, class_vectors(model, side));
}

ZeroShotResult evaluate_zero_shot(model::DualEncoder<float>& model, const synth::LoadedDataset& data,
                                  std::span<const synth::ManifestEntry* const> entries) {
  ZeroShotResult r;
  if (entries.empty()) {
    return r;
  }
  const std::array<nn::Tensor<float>, 2> classes{class_vectors(model, scores::Side::Left),
                                                 class_vectors(model, scores::Side::Right)};
  const auto emb = embed_images(model, data, entries);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& rec = entries[i]->record;
    const int pred = classify_embedding(row(emb, i), classes[static_cast<std::size_t>(rec.side)]);
    const int truth = rec.kl.value();
    r.predictions.push_back(pred);
    ++r.confusion[static_cast<std::size_t>(truth)][static_cast<std::size_t>(pred)];
    ++r.total;
    r.correct += pred == truth ? 1 : 0;
  }
  return r;
}

std::vector<RetrievalHit> rank_pool(std::span<const float> image_proj, const nn::Tensor<float>& pool_proj,
                                    std::size_t k) {
  const auto pool = pool_proj.shape.empty() ? 0 : static_cast<std::size_t>(pool_proj.shape[0]);
  if (pool == 0) {
    throw ValidationError("retrieval: empty caption pool");
  }
  if (k > pool) {
    throw ValidationError("retrieval: k = " + std::to_string(k) + " exceeds pool size " + std::to_string(pool));
  }
  std::vector<RetrievalHit> hits(pool);
  for (std::size_t j = 0; j < pool; ++j) {
    hits[j] = {j, dot(image_proj, row(pool_proj, j))};
  }
  std::stable_sort(hits.begin(), hits.end(),
                   [](const RetrievalHit& a, const RetrievalHit& b) { return a.similarity > b.similarity; });
  hits.resize(k);
  return hits;
}

std::vector<RetrievalHit> retrieve_topk(model::DualEncoder<float>& model, const synth::SynthImage& image,
                                        std::span<const std::string> pool, std::size_t k) {
  if (pool.empty()) {
    throw ValidationError("retrieval: empty caption pool");
  }
  const auto img = model.embed_images(single_image(model, image), true);
  const auto txt = model.embed_texts(tokenize_all(pool, static_cast<std::size_t>(model.config().max_len)), true);
  return rank_pool(img.data, txt, k);
}

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matched[n] += o.matched[n];
    total[n] += o.total[n];
  }
  candidate_length += o.candidate_length;
  reference_length += o.reference_length;
  return *this;
}

BleuStats bleu_stats(std::span<const std::string> candidate, std::span<const std::string> reference) {
  if (candidate.empty() || reference.empty()) {
    throw ValidationError("bleu: empty candidate or reference");
  }
  BleuStats s;
  s.candidate_length = candidate.size();
  s.reference_length = reference.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cand = ngram_counts(candidate, n);
    const auto ref = ngram_counts(reference, n);
    for (const auto& [gram, count] : cand) {
      const auto it = ref.find(gram);
      s.matched[n - 1] += it == ref.end() ? 0 : std::min(count, it->second);
      s.total[n - 1] += count;
    }
  }
  return s;
}

double bleu_from_stats(const BleuStats& s) {
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (s.matched[n] == 0 || s.total[n] == 0) {
      return 0.0;
    }
    log_sum += std::log(static_cast<double>(s.matched[n]) / static_cast<double>(s.total[n]));
  }
  const double c = static_cast<double>(s.candidate_length);
  const double r = static_cast<double>(s.reference_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / 4.0);
}

double bleu4(std::span<const std::string> candidate, std::span<const std::string> reference) {
  return bleu_from_stats(bleu_stats(candidate, reference));
}

double bleu4(std::string_view candidate, std::string_view reference) {
  return bleu4(captions::split_tokens(candidate), captions::split_tokens(reference));
}

double corpus_bleu4(std::span<const std::string> candidates, std::span<const std::string> references) {
  if (candidates.size() != references.size() || candidates.empty()) {
    throw ValidationError("corpus bleu: need equally many (and at least one) candidates and references");
  }
  BleuStats total;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    total += bleu_stats(captions::split_tokens(candidates[i]), captions::split_tokens(references[i]));
  }
  return bleu_from_stats(total);
}

RetrievalResult evaluate_retrieval(model::DualEncoder<float>& model, const synth::LoadedDataset& data,
                                   std::span<const synth::ManifestEntry* const> entries, std::size_t k,
                                   std::size_t random_draws, std::uint64_t seed) {
  RetrievalResult r;
  if (entries.empty()) {
    return r;
  }
  std::vector<std::string> pool;
  std::vector<std::vector<std::string>> pool_tokens;
  for (const auto* e : entries) {
    pool.push_back(captions::render_caption(e->record, TemplateKind::Location, true).text);
    pool_tokens.push_back(captions::split_tokens(pool.back()));
  }
  const auto txt = model.embed_texts(tokenize_all(pool, static_cast<std::size_t>(model.config().max_len)), true);
  const auto img = embed_images(model, data, entries);

  std::vector<std::size_t> table;
  for (auto t : kHitTable) {
    table.push_back(t);
  }
  table.push_back(k);
  std::sort(table.begin(), table.end());
  table.erase(std::unique(table.begin(), table.end()), table.end());
  std::erase_if(table, [&](std::size_t t) { return t == 0 || t > pool.size(); });

  r.queries = entries.size();
  std::vector<std::size_t> hits(table.size(), 0);
  double bleu_sum = 0.0;
  const std::size_t kmax = table.empty() ? 1 : table.back();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto ranked = rank_pool(row(img, i), txt, kmax);
    const std::size_t top = ranked.front().pool_index;
    r.top1.push_back(top);
    r.top1_bleu.push_back(bleu4(pool_tokens[top], pool_tokens[i]));
    bleu_sum += r.top1_bleu.back();
    for (std::size_t h = 0; h < table.size(); ++h) {
      const auto limit = table[h];
      for (std::size_t j = 0; j < limit; ++j) {
        if (ranked[j].pool_index == i) {
          ++hits[h];
          break;
        }
      }
    }
  }
  r.mean_top1_bleu = bleu_sum / static_cast<double>(entries.size());
  for (std::size_t h = 0; h < table.size(); ++h) {
    r.hit_rate.emplace_back(table[h], static_cast<double>(hits[h]) / static_cast<double>(entries.size()));
  }

  Rng rng(seed, 0xB1E0);
  double random_sum = 0.0;
  const auto last = static_cast<std::int64_t>(pool.size()) - 1;
  for (std::size_t d = 0; d < random_draws; ++d) {
    const auto q = static_cast<std::size_t>(rng.uniform_int(0, last));
    const auto c = static_cast<std::size_t>(rng.uniform_int(0, last));
    random_sum += bleu4(pool_tokens[c], pool_tokens[q]);
  }
  r.random_baseline_bleu = random_draws == 0 ? 0.0 : random_sum / static_cast<double>(random_draws);
  return r;
}

SaliencyMap cam_from_activations(std::span<const float> activations, std::span<const float> gradients, int channels,
                                 int h, int w, int height, int width) {
  const auto hw = static_cast<std::size_t>(h * w);
  if (activations.size() != hw * static_cast<std::size_t>(channels) || gradients.size() != activations.size()) {
    throw ValidationError("grad-cam: activation/gradient size mismatch");
  }
  std::vector<double> raw(hw, 0.0);
  for (int c = 0; c < channels; ++c) {
    const auto base = static_cast<std::size_t>(c) * hw;
    double weight = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      weight += gradients[base + p];
    }
    weight /= static_cast<double>(hw);
    for (std::size_t p = 0; p < hw; ++p) {
      raw[p] += weight * activations[base + p];
    }
  }
  for (auto& v : raw) {
    v = std::max(v, 0.0);
  }

  SaliencyMap map;
  map.height = height;
  map.width = width;
  map.values.assign(static_cast<std::size_t>(height * width), 0.0F);
  auto at = [&](int y, int x) { return raw[static_cast<std::size_t>(y * w + x)]; };
  double peak = 0.0;
  std::vector<double> up(map.values.size());
  for (int y = 0; y < height; ++y) {
    const double sy = std::clamp((y + 0.5) * h / height - 0.5, 0.0, static_cast<double>(h - 1));
    const int y0 = static_cast<int>(std::floor(sy));
    const int y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (int x = 0; x < width; ++x) {
      const double sx = std::clamp((x + 0.5) * w / width - 0.5, 0.0, static_cast<double>(w - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                       fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
      up[static_cast<std::size_t>(y * width + x)] = v;
      peak = std::max(peak, v);
    }
  }
  if (peak > 0.0) {
    for (std::size_t i = 0; i < up.size(); ++i) {
      map.values[i] = static_cast<float>(up[i] / peak);
    }
  }
  return map;
}

SaliencyMap grad_cam(model::DualEncoder<float>& model, const synth::SynthImage& image, std::string_view prompt,
                     std::string image_id) {
  const std::string text(prompt);
  const auto tokens = tokenize_all(std::span(&text, 1), static_cast<std::size_t>(model.config().max_len));

  nn::Graph<float> g;
  model::DualEncoder<float>::Binder b{g, model, false, {}};
  nn::Var conv;
  const nn::Var img = model.project(b, model.encode_image(b, g.leaf(single_image(model, image)), &conv),
                                    model::Modality::Image);
  const nn::Var txt = model.project(b, model.encode_text(b, tokens), model::Modality::Text);
  const nn::Var target = g.sum(g.rowwise_dot(img, txt));
  g.backward(target);

  const auto& s = g.shape(conv);
  const auto& acts = g.value(conv).data;
  std::vector<float> grads = g.grad(conv);
  if (grads.empty()) {
    grads.assign(acts.size(), 0.0F);
  }
  auto map = cam_from_activations(acts, grads, s[1], s[2], s[3], image.height, image.width);
  map.prompt = text;
  map.image_id = std::move(image_id);
  return map;
}

double localization_score(const SaliencyMap& map, const synth::GroundTruthRegion& region) {
  if (region.height != map.height || region.width != map.width) {
    throw ValidationError("localization: mask and saliency sizes differ");
  }
  const auto area = region.area();
  if (area == 0) {
    throw ValidationError("localization: empty mask");
  }
  double inside = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < map.values.size(); ++i) {
    total += map.values[i];
    inside += region.mask[i] != 0 ? map.values[i] : 0.0;
  }
  if (total <= 0.0) {
    return 0.0;
  }
  const double area_fraction = static_cast<double>(area) / static_cast<double>(map.values.size());
  return (inside / total) / area_fraction;
}

synth::GroundTruthRegion osteophyte_region(const scores::OaScoreRecord& record, const synth::SynthConfig& cfg) {
  synth::GroundTruthRegion out;
  out.feature = {synth::FeatureKind::Osteophytes, 0};
  out.height = cfg.height;
  out.width = cfg.width;
  out.mask.assign(static_cast<std::size_t>(cfg.height * cfg.width), 0);
  for (std::size_t s = 0; s < scores::kBoneSites.size(); ++s) {
    if (record.osteophytes[scores::kBoneSites[s]].value() == 0) {
      continue;
    }
    const auto r = synth::ground_truth_region(record, {synth::FeatureKind::Osteophytes, static_cast<int>(s)}, cfg);
    for (std::size_t i = 0; i < out.mask.size(); ++i) {
      out.mask[i] = static_cast<std::uint8_t>(out.mask[i] | r.mask[i]);
    }
  }
  return out;
}

std::string osteophyte_prompt(const scores::OaScoreRecord& record) {
  const auto caption = captions::render_caption(record, TemplateKind::Abnormality, true);
  for (auto& s : captions::split_sentences(caption.text)) {
    if (s.starts_with("Osteophytes")) {
      return s;
    }
  }
  throw ValidationError("record " + record.id + " has no osteophyte sentence");
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["checkpoint"] = checkpoint;
  auto& zs = j["zero_shot"];
  zs["accuracy"] = zero_shot.accuracy();
  zs["correct"] = zero_shot.correct;
  zs["total"] = zero_shot.total;
  zs["confusion"] = zero_shot.confusion;
  std::array<std::size_t, kClassCount> per_class{};
  for (std::size_t t = 0; t < kClassCount; ++t) {
    for (auto c : zero_shot.confusion[t]) {
      per_class[t] += c;
    }
  }
  zs["per_class_total"] = per_class;
  if (has_retrieval) {
    auto& rt = j["retrieval"];
    rt["queries"] = retrieval.queries;
    rt["mean_top1_bleu4"] = retrieval.mean_top1_bleu;
    rt["random_baseline_bleu4"] = retrieval.random_baseline_bleu;
    nlohmann::json hits = nlohmann::json::object();
    for (const auto& [k, rate] : retrieval.hit_rate) {
      hits["top" + std::to_string(k)] = rate;
    }
    rt["hit_rate"] = hits;
  }
  nlohmann::json images = nlohmann::json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    nlohmann::json e;
    e["id"] = ids[i];
    if (i < true_labels.size()) e["kl"] = true_labels[i];
    if (i < zero_shot.predictions.size()) e["predicted_kl"] = zero_shot.predictions[i];
    if (has_retrieval && i < retrieval.top1.size()) {
      e["top1_caption"] = retrieval.top1[i];
      e["top1_bleu4"] = retrieval.top1_bleu[i];
    }
    images.push_back(std::move(e));
  }
  j["images"] = std::move(images);
  nlohmann::json sal = nlohmann::json::array();
  for (const auto& s : saliency) {
    sal.push_back({{"id", s.map.image_id}, {"prompt", s.map.prompt}, {"localization", s.localization}});
  }
  j["saliency"] = std::move(sal);
  return j;
}

void export_report(const EvalReport& report, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  }
  {
    std::ofstream out(out_dir / "report.json", std::ios::trunc);
    if (!out) {
      throw IoError("cannot write " + (out_dir / "report.json").string());
    }
    out << report.to_json().dump(2) << '\n';
  }
  {
    std::ofstream out(out_dir / "confusion.csv", std::ios::trunc);
    if (!out) {
      throw IoError("cannot write " + (out_dir / "confusion.csv").string());
    }
    out << "true\\predicted,0,1,2,3,4\n";
    for (std::size_t t = 0; t < kClassCount; ++t) {
      out << t;
      for (auto c : report.zero_shot.confusion[t]) {
        out << ',' << c;
      }
      out << '\n';
    }
  }
  if (!report.saliency.empty()) {
    std::filesystem::create_directories(out_dir / "saliency", ec);
    if (ec) {
      throw IoError("cannot create " + (out_dir / "saliency").string() + ": " + ec.message());
    }
    for (const auto& s : report.saliency) {
      synth::SynthImage overlay = s.image;
      for (std::size_t i = 0; i < overlay.pixels.size() && i < s.map.values.size(); ++i) {
        overlay.pixels[i] = 0.5F * overlay.pixels[i] + 0.5F * s.map.values[i];
      }
      synth::write_pgm(overlay, out_dir / "saliency" / (s.map.image_id + ".pgm"));
    }
  }
}

}  // namespace oavl::eval
