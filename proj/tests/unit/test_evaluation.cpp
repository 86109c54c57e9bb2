#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "oavl/caption_engine.hpp"
#include "oavl/errors.hpp"
#include "oavl/evaluation.hpp"
#include "support/temp_dir.hpp"

using namespace oavl;
using namespace oavl::eval;

namespace {

std::vector<std::string> words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("bleu hand cases") {
  CHECK(bleu4(words("a b c d e"), words("a b c d f")) == doctest::Approx(std::pow(0.2, 0.25)).epsilon(1e-12));
  CHECK(bleu4(words("a b c d e"), words("a b c d e")) == 1.0);
  CHECK(bleu4(words("a b c x d e f"), words("a b c d e f g")) == 0.0);
  // Brevity: candidate shorter than reference.
  const double short_bleu = bleu4(words("a b c d"), words("a b c d e f"));
  CHECK(short_bleu == doctest::Approx(std::exp(1.0 - 6.0 / 4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(bleu4(std::vector<std::string>{}, words("a")), ValidationError);
  CHECK(bleu4("Mild osteoarthritis.", "mild osteoarthritis .") == 0.0);  // three tokens: no 4-gram
}

TEST_CASE("bleu is monotone as shared 4-grams are removed") {
  const auto ref = words("a b c d e f g h i j");
  auto cand = ref;
  double last = bleu4(cand, ref);
  CHECK(last == 1.0);
  for (std::size_t i = 0; i + 4 < cand.size(); i += 3) {
    cand[i + 3] = "z" + std::to_string(i);
    const double now = bleu4(cand, ref);
    CHECK(now <= last);
    last = now;
  }
}

TEST_CASE("corpus bleu of one pair equals sentence bleu") {
  const std::string c = "mild osteoarthritis. In joint medial compartment: early joint space narrowing.";
  const std::string r = "mild osteoarthritis. In joint medial compartment: mild joint space narrowing.";
  const std::vector<std::string> cs{c};
  const std::vector<std::string> rs{r};
  CHECK(corpus_bleu4(cs, rs) == doctest::Approx(bleu4(c, r)).epsilon(1e-15));
}

TEST_CASE("classification by cosine with lower-index ties") {
  nn::Tensor<float> classes({5, 3}, 0.0F);
  for (int k = 0; k < 3; ++k) classes.data[static_cast<std::size_t>(k * 3 + k)] = 1.0F;
  classes.data[9] = 0.6F;
  classes.data[10] = 0.8F;
  classes.data[12] = -1.0F;
  const std::vector<float> three{0.6F, 0.8F, 0.0F};
  CHECK(classify_embedding(three, classes) == 3);
  nn::Tensor<float> same({5, 3}, 0.5F);
  CHECK(classify_embedding(three, same) == 0);
  const std::vector<float> scaled{6.0F, 8.0F, 0.0F};
  CHECK(classify_embedding(scaled, classes) == 3);
}

TEST_CASE("prompt ensemble wording") {
  const auto p = class_prompts(2, scores::Side::Right);
  CHECK(p[0] == "Mild osteoarthritis.");
  CHECK(p[1] == "Image shows mild osteoarthritis in the right knee.");
}

TEST_CASE("pool ranking") {
  nn::Tensor<float> pool({4, 2}, {1.0F, 0.0F, 0.0F, 1.0F, 0.6F, 0.8F, 0.6F, 0.8F});
  const std::vector<float> q{0.6F, 0.8F};
  const auto top = rank_pool(q, pool, 4);
  CHECK(top[0].pool_index == 2);  // tie with 3 broken by index
  CHECK(top[1].pool_index == 3);
  std::set<std::size_t> seen;
  for (std::size_t i = 0; i < top.size(); ++i) {
    seen.insert(top[i].pool_index);
    if (i > 0) CHECK(top[i - 1].similarity >= top[i].similarity);
  }
  CHECK(seen.size() == 4);
  const std::vector<float> neg{-0.6F, -0.8F};
  const auto rev = rank_pool(neg, pool, 4);
  CHECK(rev[0].pool_index == 0);
  CHECK(rev[3].similarity == doctest::Approx(-1.0));
  CHECK_THROWS_AS(rank_pool(q, pool, 5), ValidationError);
  CHECK_THROWS_AS(rank_pool(q, nn::Tensor<float>({0, 2}), 0), ValidationError);
}

TEST_CASE("grad-cam of constant activations and gradients is uniform") {
  const std::vector<float> acts(3 * 4 * 4, 2.0F);
  const std::vector<float> grads(3 * 4 * 4, 0.5F);
  const auto map = cam_from_activations(acts, grads, 3, 4, 4, 16, 16);
  CHECK(map.values.size() == 256);
  for (float v : map.values) CHECK(v == doctest::Approx(1.0));
  const std::vector<float> negative(3 * 4 * 4, -0.5F);
  for (float v : cam_from_activations(acts, negative, 3, 4, 4, 16, 16).values) CHECK(v == 0.0F);
}

TEST_CASE("grad-cam on a model yields a normalized map of the input size") {
  model::DualEncoder<float> m(model::ModelConfig{}, 3);
  Rng rng(4, 0);
  const auto rec = scores::sample_record(rng, "g");
  const auto img = synth::render_image(rec, synth::SynthConfig{}, 5);
  const auto map = grad_cam(m, img, osteophyte_prompt(rec), "g");
  CHECK(map.height == 64);
  CHECK(map.width == 64);
  float peak = 0;
  for (float v : map.values) {
    CHECK(v >= 0.0F);
    CHECK(v <= 1.0F);
    peak = std::max(peak, v);
  }
  CHECK((peak == 1.0F || peak == 0.0F));
  CHECK(map.prompt.starts_with("Osteophytes:"));
}

TEST_CASE("localization score") {
  SaliencyMap map{10, 10, std::vector<float>(100, 0.3F), "", ""};
  synth::GroundTruthRegion region;
  region.height = region.width = 10;
  region.mask.assign(100, 0);
  for (int i = 0; i < 10; ++i) region.mask[static_cast<std::size_t>(i)] = 1;
  CHECK(localization_score(map, region) == doctest::Approx(1.0));
  std::fill(map.values.begin(), map.values.end(), 0.0F);
  for (int i = 0; i < 10; ++i) map.values[static_cast<std::size_t>(i)] = 1.0F;
  CHECK(localization_score(map, region) == doctest::Approx(10.0));
  region.mask.assign(100, 0);
  CHECK_THROWS_AS(localization_score(map, region), ValidationError);
}

TEST_CASE("osteophyte region unions graded sites") {
  scores::OaScoreRecord r;
  r.id = "o";
  r.osteophytes[scores::BoneSite::FemurMedial] = scores::Grade(2);
  r.osteophytes[scores::BoneSite::TibiaLateral] = scores::Grade(3);
  const synth::SynthConfig cfg;
  const auto u = osteophyte_region(r, cfg);
  const auto a = synth::ground_truth_region(r, {synth::FeatureKind::Osteophytes, 0}, cfg);
  const auto b = synth::ground_truth_region(r, {synth::FeatureKind::Osteophytes, 3}, cfg);
  CHECK(u.area() >= std::max(a.area(), b.area()));
  CHECK(u.area() <= a.area() + b.area());
}

TEST_CASE("report export") {
  test::TempDir dir;
  EvalReport empty;
  export_report(empty, dir.path() / "e");
  const auto j = nlohmann::json::parse(slurp(dir.path() / "e" / "report.json"));
  CHECK(j["zero_shot"]["total"] == 0);
  CHECK(j["zero_shot"]["accuracy"] == 0.0);

  EvalReport r;
  r.zero_shot.confusion[0] = {3, 1, 0, 0, 0};
  r.zero_shot.confusion[2] = {0, 0, 2, 2, 0};
  r.zero_shot.total = 8;
  r.zero_shot.correct = 5;
  synth::SynthImage img{4, 4, std::vector<float>(16, 0.2F)};
  r.saliency.push_back({SaliencyMap{4, 4, std::vector<float>(16, 1.0F), "p", "img1"}, img, 1.5});
  export_report(r, dir.path() / "a");
  export_report(r, dir.path() / "b");
  CHECK(slurp(dir.path() / "a" / "report.json") == slurp(dir.path() / "b" / "report.json"));
  const auto rep = nlohmann::json::parse(slurp(dir.path() / "a" / "report.json"));
  std::istringstream csv(slurp(dir.path() / "a" / "confusion.csv"));
  std::string line;
  std::getline(csv, line);
  for (std::size_t t = 0; t < 5; ++t) {
    REQUIRE(std::getline(csv, line));
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    std::size_t sum = 0;
    while (std::getline(row, cell, ',')) sum += std::stoul(cell);
    CHECK(sum == rep["zero_shot"]["per_class_total"][t].get<std::size_t>());
  }
  const auto overlay = synth::read_pgm(dir.path() / "a" / "saliency" / "img1.pgm");
  CHECK(overlay.pixels[0] == doctest::Approx(0.6).epsilon(1e-4));
}
