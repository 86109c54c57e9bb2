// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.
//
//   oavl_acceptance [--cli <path to oavl>] [--work-dir <dir>] [--only <n>]...

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "oavl/caption_engine.hpp"
#include "oavl/checkpoint.hpp"
#include "oavl/errors.hpp"
#include "oavl/evaluation.hpp"
#include "oavl/model.hpp"
#include "oavl/nn/gradcheck.hpp"
#include "oavl/nn/graph.hpp"
#include "oavl/synth_data.hpp"
#include "oavl/training.hpp"

using namespace oavl;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------- 1

nn::Tensor<double> random_tensor(nn::Shape s, Rng& rng, double scale = 1.0) {
  nn::Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

double primitive_checks(std::uint64_t seed) {
  Rng rng(seed, 1);
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 1, 1};
  std::vector<std::pair<std::vector<nn::Tensor<double>>, nn::GraphFunction>> cases;
  using G = nn::Graph<double>;
  using V = std::vector<nn::Var>;
  cases.emplace_back(std::vector{random_tensor({3, 4}, rng), random_tensor({4, 5}, rng), random_tensor({5}, rng)},
                     [](G& g, const V& v) { return g.sum(g.linear(v[0], v[1], v[2])); });
  cases.emplace_back(std::vector{random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)}, [](G& g, const V& v) {
    const auto m = g.transpose(g.matmul_nt(v[0], v[1]));
    return g.sum(g.rowwise_dot(m, m));
  });
  cases.emplace_back(std::vector{random_tensor({2, 2, 7, 6}, rng), random_tensor({3, 2, 3, 3}, rng),
                                 random_tensor({3}, rng)},
                     [](G& g, const V& v) {
                       const auto p = g.mean_pool(g.relu(g.add_channel_bias(g.conv2d(v[0], v[1], 2, 1), v[2])));
                       return g.sum(g.rowwise_dot(p, p));
                     });
  cases.emplace_back(std::vector{random_tensor({2, 3, 1, 6}, rng), random_tensor({3, 3, 1, 3}, rng)},
                     [mask](G& g, const V& v) {
                       const auto h = g.conv2d(g.mask_positions(v[0], mask), v[1], 1, 0, 1);
                       const auto p = g.masked_mean_pool(h, mask);
                       return g.sum(g.rowwise_dot(p, p));
                     });
  cases.emplace_back(std::vector{random_tensor({7, 3}, rng), random_tensor({6, 3}, rng)}, [mask](G& g, const V& v) {
    const std::vector<std::int32_t> ids{1, 4, 0, 2, 2, 6, 3, 0, 0, 5, 1, 1};
    const auto p = g.masked_mean_pool(g.embed_tokens(ids, mask, 2, 6, v[0], v[1]), mask);
    return g.sum(g.rowwise_dot(p, p));
  });
  cases.emplace_back(std::vector{random_tensor({4, 5}, rng), nn::Tensor<double>({1}, {0.4 + rng.uniform()})},
                     [](G& g, const V& v) {
                       const auto n = g.l2_normalize(v[0]);
                       const auto logits = g.mul_scalar(g.matmul_nt(n, n), g.exp_clamped(v[1], -3.0, 3.0));
                       const auto ce = g.softmax_cross_entropy(logits, std::vector<int>{0, 1, 2, 3});
                       return g.add(g.scale(ce, 0.5), g.mean(v[0]));
                     });
  double worst = 0.0;
  for (const auto& [inputs, fn] : cases) {
    worst = std::max(worst, nn::check_graph_gradient(fn, inputs, 1e-5, 0, seed).max_rel_error);
  }
  return worst;
}

struct FullCheck {
  double worst = 0.0;
  std::size_t probes = 0;
  std::size_t skipped = 0;
};

void full_loss_check(std::uint64_t seed, FullCheck& stats) {
  model::ModelConfig cfg;
  cfg.image_height = 32;
  cfg.image_width = 32;
  model::DualEncoder<double> m(cfg, seed);
  Rng rng(seed, 2);
  // Perturb biases and temperature away from their initial values so every
  // coordinate carries a generic gradient.
  for (auto& p : m.parameters()) {
    if (p.value.shape.size() == 1) {
      for (auto& v : p.value.data) v += 0.05 * rng.normal();
    }
  }
  synth::SynthConfig sc;
  sc.height = sc.width = 32;
  std::vector<synth::SynthImage> images;
  std::vector<const std::vector<float>*> ptrs;
  std::vector<captions::TokenSequence> pos;
  std::vector<captions::TokenSequence> neg;
  for (int i = 0; i < 4; ++i) {
    const auto rec = scores::sample_record(rng, "g");
    images.push_back(synth::render_image(rec, sc, seed * 10 + static_cast<std::uint64_t>(i)));
    const auto kind = captions::kTemplateKinds[static_cast<std::size_t>(i % 3)];
    pos.push_back(captions::tokenize(captions::render_caption(rec, kind, true).text, captions::Vocabulary::grammar(), 40));
    neg.push_back(captions::tokenize(captions::render_caption(scores::perturb_negative(rec, rng), kind, true).text,
                                     captions::Vocabulary::grammar(), 40));
  }
  for (const auto& im : images) ptrs.push_back(&im.pixels);
  const auto batch = model::image_batch<double>(ptrs, 32, 32);
  const auto pt = model::TokenBatch::from(pos);
  const auto nt = model::TokenBatch::from(neg);

  // Loss plus the sign pattern of every node value; a probe whose two sides
  // disagree straddles a ReLU kink and is retried with a smaller step.
  std::vector<bool> pattern;
  auto loss = [&](bool backward) {
    nn::Graph<double> g;
    model::DualEncoder<double>::Binder b{g, m, backward, {}};
    const auto img = m.project(b, m.encode_image(b, g.constant(batch)), model::Modality::Image);
    const auto pu = m.encode_text(b, pt);
    const auto nu = m.encode_text(b, nt);
    const auto info = model::info_nce_loss(g, model::similarity_matrix(g, img, m.project(b, pu, model::Modality::Text)),
                                           m.inverse_temperature(b));
    const auto total = model::total_loss(g, info, model::negative_caption_loss(g, pu, nu), 0.5);
    if (backward) {
      m.zero_grad();
      g.backward(total);
      g.accumulate_param_grads();
    } else {
      pattern.clear();
      for (std::size_t id = 0; id < g.node_count(); ++id) {
        for (double v : g.value(nn::Var{id}).data) pattern.push_back(v > 0.0);
      }
    }
    return g.value(total).data[0];
  };
  loss(true);

  for (auto& p : m.parameters()) {
    const auto n = static_cast<std::int64_t>(p.value.numel());
    for (int k = 0; k < std::min<std::int64_t>(3, n); ++k) {
      const auto i = static_cast<std::size_t>(rng.uniform_int(0, n - 1));
      const double x0 = p.value.data[i];
      bool smooth = false;
      double numeric = 0.0;
      for (double h = 1e-5; h >= 1e-8 && !smooth; h /= 10.0) {
        p.value.data[i] = x0 + h;
        const double fp = loss(false);
        const auto side = pattern;
        p.value.data[i] = x0 - h;
        const double fm = loss(false);
        smooth = side == pattern;
        numeric = (fp - fm) / (2.0 * h);
      }
      p.value.data[i] = x0;
      if (!smooth) {
        ++stats.skipped;
        continue;
      }
      const double a = p.grad[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++stats.probes;
      stats.worst = std::max(stats.worst, rel);
    }
  }
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  double prim = 0.0;
  FullCheck full;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    prim = std::max(prim, primitive_checks(seed));
    full_loss_check(seed, full);
  }
  const double secs = seconds_since(t0);
  return {prim <= 1e-4 && full.worst <= 1e-4 && full.skipped * 20 <= full.probes && secs < 60.0,
          "primitives max rel err " + fmt("%.2e", prim) + ", total_loss max rel err " + fmt("%.2e", full.worst) +
              " over " + std::to_string(full.probes) + " probes (" + std::to_string(full.skipped) +
              " kink-straddling skipped), 20 seeds in " + fmt("%.1f", secs) + " s"};
}

// ---------------------------------------------------------------- 2

Outcome criterion_loss_closed_forms() {
  double worst = 0.0;
  for (int n : {2, 8, 32}) {
    nn::Graph<double> g;
    const auto s = g.constant(nn::Tensor<double>({n, n}, 0.37));
    const auto l = model::info_nce_loss(g, s, g.constant(nn::Tensor<double>({1}, {1.0 / 0.07})));
    worst = std::max(worst, std::abs(g.value(l).data[0] - std::log(static_cast<double>(n))));
  }
  nn::Graph<double> g;
  const auto s = g.constant(nn::Tensor<double>({2, 2}, {1.0, 0.0, 0.0, 1.0}));
  const auto l = model::info_nce_loss(g, s, g.constant(nn::Tensor<double>({1}, {20.0})));
  const double expected = std::log1p(std::exp(-20.0));
  const double rel = std::abs(g.value(l).data[0] - expected) / expected;
  return {worst <= 1e-6 && rel <= 1e-12,
          "max |L - ln N| " + fmt("%.2e", worst) + ", saturated rel err " + fmt("%.2e", rel)};
}

// ---------------------------------------------------------------- 3

Outcome criterion_round_trip() {
  Rng rng(2024, 3);
  std::size_t checked = 0;
  std::size_t mismatches = 0;
  auto expect = [&](bool ok) {
    ++checked;
    mismatches += ok ? 0 : 1;
  };
  for (int i = 0; i < 1000; ++i) {
    const auto r = scores::sample_record(rng, "rt");
    for (auto kind : captions::kTemplateKinds) {
      for (bool shuffled : {false, true}) {
        auto c = captions::render_caption(r, kind, true);
        if (shuffled) c = captions::shuffle_sentences(c, rng);
        captions::ParsedCaption p;
        try {
          p = captions::parse_caption(c.text);
        } catch (const Error&) {
          expect(false);
          continue;
        }
        expect(p.kl && *p.kl == r.kl);
        if (kind == captions::TemplateKind::Overall) {
          const auto g = scores::all_grades(r);
          scores::Grade max_ost;
          scores::Grade max_scl;
          for (auto s : scores::kBoneSites) {
            max_ost = std::max(max_ost, r.osteophytes[s]);
            max_scl = std::max(max_scl, r.sclerosis[s]);
          }
          (void)g;
          bool cysts = false;
          bool chondro = false;
          for (auto s : scores::kBoneSites) cysts = cysts || r.cysts[s];
          for (auto s : scores::kJointSites) chondro = chondro || r.chondrocalcinosis[s];
          expect(p.max_osteophytes && *p.max_osteophytes == max_ost);
          expect(p.max_sclerosis && *p.max_sclerosis == max_scl);
          expect(p.any_cysts && *p.any_cysts == cysts);
          expect(p.any_chondrocalcinosis && *p.any_chondrocalcinosis == chondro);
          expect(p.side && *p.side == r.side);
          continue;
        }
        for (std::size_t k = 0; k < 4; ++k) {
          const auto s = scores::kBoneSites[k];
          expect(p.osteophytes[k] && *p.osteophytes[k] == r.osteophytes[s]);
          expect(p.sclerosis[k] && *p.sclerosis[k] == r.sclerosis[s]);
          expect(p.cysts[k] && *p.cysts[k] == r.cysts[s]);
        }
        for (std::size_t k = 0; k < 2; ++k) {
          expect(p.jsn[k] && *p.jsn[k] == r.jsn[scores::kJointSites[k]]);
          expect(p.attrition[k] && *p.attrition[k] == r.attrition[scores::kTibiaSites[k]]);
          expect(p.chondrocalcinosis[k] && *p.chondrocalcinosis[k] == r.chondrocalcinosis[scores::kJointSites[k]]);
        }
      }
    }
  }
  return {mismatches == 0, std::to_string(checked - mismatches) + "/" + std::to_string(checked) +
                               " stated fields recovered over 6000 captions"};
}

// ---------------------------------------------------------------- 4

Outcome criterion_negatives() {
  Rng rng(77, 4);
  std::size_t violations = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto r = scores::sample_record(rng, "n");
    const auto n = scores::perturb_negative(r, rng);
    const auto a = scores::all_grades(r);
    const auto b = scores::all_grades(n);
    for (std::size_t k = 0; k < a.size(); ++k) {
      violations += std::abs(a[k].value() - b[k].value()) >= 2 ? 0 : 1;
    }
  }
  return {violations == 0, std::to_string(violations) + " violations in 10000 perturbations x " +
                               std::to_string(scores::kGradeCount) + " graded fields"};
}

// ---------------------------------------------------------------- 5

// Clipped precision by scanning: each candidate position contributes
// min(count_cand, count_ref) / count_cand for its n-gram, which sums to the
// clipped count of every distinct n-gram.
double oracle_bleu(const std::vector<std::string>& c, const std::vector<std::string>& r) {
  auto occurrences = [](const std::vector<std::string>& seq, const std::vector<std::string>& src, std::size_t at,
                        std::size_t n) {
    std::size_t count = 0;
    for (std::size_t i = 0; i + n <= seq.size(); ++i) {
      bool eq = true;
      for (std::size_t k = 0; k < n && eq; ++k) eq = seq[i + k] == src[at + k];
      count += eq ? 1 : 0;
    }
    return count;
  };
  double log_p = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    if (c.size() < n) return 0.0;
    double clipped = 0.0;
    for (std::size_t i = 0; i + n <= c.size(); ++i) {
      const double cc = static_cast<double>(occurrences(c, c, i, n));
      const double rc = static_cast<double>(occurrences(r, c, i, n));
      clipped += std::min(cc, rc) / cc;
    }
    const double total = static_cast<double>(c.size() - n + 1);
    if (clipped < 0.5) return 0.0;
    log_p += std::log(clipped / total);
  }
  const double cl = static_cast<double>(c.size());
  const double rl = static_cast<double>(r.size());
  return (cl > rl ? 1.0 : std::exp(1.0 - rl / cl)) * std::exp(log_p / 4.0);
}

Outcome criterion_bleu() {
  Rng rng(55, 5);
  double worst = 0.0;
  int nonzero = 0;
  for (int i = 0; i < 100; ++i) {
    const auto a = scores::sample_record(rng, "a");
    const auto b = i % 2 == 0 ? scores::perturb_negative(a, rng) : scores::sample_record(rng, "b");
    const auto ka = captions::kTemplateKinds[static_cast<std::size_t>(rng.uniform_int(0, 2))];
    const auto kb = i % 5 == 0 ? captions::kTemplateKinds[static_cast<std::size_t>(rng.uniform_int(0, 2))] : ka;
    const auto c = captions::split_tokens(captions::render_caption(a, ka, rng.bernoulli(0.5)).text);
    const auto r = captions::split_tokens(captions::render_caption(b, kb, rng.bernoulli(0.5)).text);
    const double got = eval::bleu4(c, r);
    const double want = oracle_bleu(c, r);
    nonzero += want > 0 ? 1 : 0;
    worst = std::max(worst, std::abs(got - want));
  }
  const std::vector<std::string> hc{"a", "b", "c", "d", "e"};
  const std::vector<std::string> hr{"a", "b", "c", "d", "f"};
  const double hand = std::abs(eval::bleu4(hc, hr) - std::pow(0.2, 0.25));
  return {worst <= 1e-9 && hand <= 1e-12 && nonzero > 50,
          "max |bleu - oracle| " + fmt("%.2e", worst) + " on 100 pairs (" + std::to_string(nonzero) +
              " non-zero), hand case err " + fmt("%.2e", hand)};
}

// ---------------------------------------------------------------- 6-9

struct DeskRun {
  synth::LoadedDataset data;
  std::optional<training::FitResult> main;
  std::optional<training::FitResult> no_negative;
  double synth_seconds = 0.0;
  double train_seconds = 0.0;
  double train_seconds_lambda0 = 0.0;
};

void log_epoch(const char* tag, const training::EpochStats& e) {
  std::fprintf(stderr, "  [%s] epoch %2d  total %.4f  infonce %.4f  negative %.4f  val_acc %.3f  tau %.4f\n", tag,
               e.epoch, e.total, e.info_nce, e.negative, e.val_accuracy, e.temperature);
}

std::vector<const synth::ManifestEntry*> test_split(const DeskRun& run) {
  return run.data.manifest.split(synth::Split::Test);
}

Outcome criterion_desk_training(const DeskRun& run) {
  const auto& r = run.main->report;
  const double final_info = r.epochs.back().info_nce;
  auto m = run.main->model;
  const auto test = test_split(run);
  const auto zs = eval::evaluate_zero_shot(m, run.data, test);
  const double total_secs = run.synth_seconds + run.train_seconds;
  const double threshold = std::log(32.0) - 0.5;
  const bool splits = run.data.manifest.split(synth::Split::Train).size() == 2002 &&
                      run.data.manifest.split(synth::Split::Val).size() == 222 && test.size() == 248;
  return {splits && final_info < threshold && zs.accuracy() >= 0.40 && total_secs <= 1800.0,
          "splits 2002/222/248, final train InfoNCE " + fmt("%.4f", final_info) + " (< " + fmt("%.4f", threshold) +
              "), test zero-shot accuracy " + fmt("%.3f", zs.accuracy()) + " (" + std::to_string(zs.correct) + "/" +
              std::to_string(zs.total) + "), " + std::to_string(r.epochs.size()) + " epochs in " +
              fmt("%.0f", total_secs) + " s"};
}

Outcome criterion_negative_effect(const DeskRun& run) {
  const auto& a = run.main->report;
  const auto& b = run.no_negative->report;
  const bool pass = a.final_negative_cosine <= b.final_negative_cosine - 0.05 &&
                    a.final_negative_cosine < a.initial_negative_cosine;
  return {pass, "matched-pair cosine: lambda=0.5 " + fmt("%.4f", a.final_negative_cosine) + " (init " +
                    fmt("%.4f", a.initial_negative_cosine) + "), lambda=0 " + fmt("%.4f", b.final_negative_cosine)};
}

Outcome criterion_retrieval(const DeskRun& run) {
  auto m = run.main->model;
  const auto r = eval::evaluate_retrieval(m, run.data, test_split(run), 10, 1000, 8);
  const double margin = r.mean_top1_bleu - r.random_baseline_bleu;
  return {margin >= 0.05, "mean top-1 BLEU-4 " + fmt("%.4f", r.mean_top1_bleu) + " vs random " +
                              fmt("%.4f", r.random_baseline_bleu) + " (margin " + fmt("%.4f", margin) + ")"};
}

Outcome criterion_saliency(const DeskRun& run) {
  auto m = run.main->model;
  synth::SynthConfig cfg;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto* e : test_split(run)) {
    scores::Grade worst;
    for (auto s : scores::kBoneSites) worst = std::max(worst, e->record.osteophytes[s]);
    if (worst.value() < 2) continue;
    const auto map = eval::grad_cam(m, run.data.image_of(*e), eval::osteophyte_prompt(e->record), e->record.id);
    sum += eval::localization_score(map, eval::osteophyte_region(e->record, cfg));
    ++n;
  }
  const double mean = n == 0 ? 0.0 : sum / static_cast<double>(n);
  return {n > 0 && mean > 1.0, "mean osteophyte localization " + fmt("%.3f", mean) + " over " + std::to_string(n) +
                                   " test images with osteophyte grade >= 2"};
}

// ---------------------------------------------------------------- 10

int run_command(const std::string& cmd) {
  const int status = std::system((cmd + " 2>/dev/null").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion_determinism(const std::string& cli, const fs::path& work) {
  const auto dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::uint8_t> a;
  std::vector<std::uint8_t> b;
  std::string how;
  if (!cli.empty()) {
    const std::string base = "'" + cli + "' ";
    if (run_command(base + "--threads 1 synth --n 120 --seed 4 --height 32 --width 32 --out-dir '" +
                    (dir / "data").string() + "'") != 0) {
      return {false, "synth subcommand failed"};
    }
    const std::string train = base + "--threads 1 train --manifest '" + (dir / "data" / "manifest.jsonl").string() +
                              "' --epochs 2 --batch-size 8 --seed 9 --out ";
    if (run_command(train + "'" + (dir / "a.bin").string() + "'") != 0 ||
        run_command(train + "'" + (dir / "b.bin").string() + "'") != 0) {
      return {false, "train subcommand failed"};
    }
    a = read_bytes(dir / "a.bin");
    b = read_bytes(dir / "b.bin");
    how = "two `oavl train` runs";
  } else {
    synth::SynthConfig sc;
    sc.height = sc.width = 32;
    sc.seed = 4;
    const auto m = synth::generate_dataset(120, sc, {}, dir / "data", 1);
    synth::write_manifest(m, dir / "data" / "manifest.jsonl");
    const auto data = synth::load_dataset(dir / "data" / "manifest.jsonl");
    training::TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 8;
    tc.seed = 9;
    a = training::serialize(training::fit(data, tc).checkpoint);
    b = training::serialize(training::fit(data, tc).checkpoint);
    how = "two fit() runs";
  }
  const bool identical = !a.empty() && a == b;

  const auto loaded = training::deserialize(a);
  const bool resave = training::serialize(loaded) == a;

  bool rejected = true;
  std::size_t probes = 0;
  Rng rng(3, 10);
  for (int i = 0; i < 50; ++i) {
    // Flip one byte inside the first tensor payload region (after the header).
    auto corrupt = a;
    const auto pos = static_cast<std::size_t>(rng.uniform_int(60, static_cast<std::int64_t>(a.size()) - 5));
    corrupt[pos] ^= static_cast<std::uint8_t>(1U << rng.uniform_int(0, 7));
    try {
      (void)training::deserialize(corrupt);
      rejected = false;
    } catch (const IoError&) {
      ++probes;
    }
  }
  auto last = a;
  last[last.size() - 1] ^= 0xFF;
  try {
    (void)training::deserialize(last);
    rejected = false;
  } catch (const ChecksumError&) {
  }
  bool cli_rejects = true;
  if (!cli.empty()) {
    std::ofstream(dir / "bad.bin", std::ios::binary).write(reinterpret_cast<const char*>(last.data()),
                                                           static_cast<std::streamsize>(last.size()));
    cli_rejects = run_command("'" + cli + "' inspect '" + (dir / "bad.bin").string() + "' > /dev/null") == 2;
  }
  return {identical && resave && rejected && cli_rejects,
          how + (identical ? " bit-identical" : " DIFFER") + " (" + std::to_string(a.size()) +
              " bytes); save-load-save " + (resave ? "byte-identical" : "DIFFERS") + "; " + std::to_string(probes) +
              "/50 random byte flips + CRC flip rejected" + (cli.empty() ? "" : (cli_rejects ? ", CLI exit 2" : ", CLI accepted corruption"))};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  fs::path work = fs::temp_directory_path() / "oavl-acceptance";
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--cli" && i + 1 < argc) cli = argv[++i];
    else if (a == "--work-dir" && i + 1 < argc) work = argv[++i];
    else if (a == "--only" && i + 1 < argc) only.insert(std::atoi(argv[++i]));
    else {
      std::cerr << "usage: oavl_acceptance [--cli PATH] [--work-dir DIR] [--only N]...\n";
      return 2;
    }
  }
  fs::create_directories(work);
  auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

  int failures = 0;
  nlohmann::json summary = nlohmann::json::object();
  auto report = [&](int n, const char* name, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << " [" << n << "] " << name << ": " << o.detail << std::endl;
    summary[std::to_string(n)] = {{"name", name}, {"pass", o.pass}, {"detail", o.detail}};
  };

  report(1, "gradient fidelity", criterion_gradients);
  report(2, "loss closed forms", criterion_loss_closed_forms);
  report(3, "grammar round trip", criterion_round_trip);
  report(4, "negative sampling rule", criterion_negatives);
  report(5, "BLEU oracle", criterion_bleu);

  if (wanted(6) || wanted(7) || wanted(8) || wanted(9)) {
    DeskRun run;
    std::optional<std::string> setup_error;
    try {
      auto t0 = Clock::now();
      synth::SynthConfig sc;
      sc.seed = 2472;
      const auto threads = std::max(1U, std::thread::hardware_concurrency());
      const auto m = synth::generate_dataset(2472, sc, {}, work / "desk", threads);
      synth::write_manifest(m, work / "desk" / "manifest.jsonl");
      run.data = synth::load_dataset(work / "desk" / "manifest.jsonl");
      run.synth_seconds = seconds_since(t0);

      training::TrainConfig tc;
      tc.seed = 11;
      t0 = Clock::now();
      run.main = training::fit(run.data, tc, [](const auto& e) { log_epoch("lambda=0.5", e); });
      run.train_seconds = seconds_since(t0);
      if (wanted(7)) {
        auto t1 = Clock::now();
        tc.lambda = 0.0;
        run.no_negative = training::fit(run.data, tc, [](const auto& e) { log_epoch("lambda=0", e); });
        run.train_seconds_lambda0 = seconds_since(t1);
      }
    } catch (const std::exception& e) {
      setup_error = e.what();
    }
    auto guarded = [&](auto fn) {
      return [&, fn]() -> Outcome {
        if (setup_error) return {false, "desk-scale training failed: " + *setup_error};
        return fn(run);
      };
    };
    report(6, "desk-scale training", guarded(criterion_desk_training));
    report(7, "negative-loss effect", guarded(criterion_negative_effect));
    report(8, "retrieval beats random", guarded(criterion_retrieval));
    report(9, "osteophyte saliency localization", guarded(criterion_saliency));
  }

  report(10, "determinism and checkpoint integrity", [&] { return criterion_determinism(cli, work); });

  std::ofstream(work / "acceptance_summary.json") << summary.dump(2) << "\n";
  std::cout << (failures == 0 ? "ALL CRITERIA PASS" : std::to_string(failures) + " CRITERIA FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
