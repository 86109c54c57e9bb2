#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "oavl/errors.hpp"
#include "oavl/synth_data.hpp"
#include "support/temp_dir.hpp"

using namespace oavl;
using namespace oavl::synth;
using scores::BoneSite;
using scores::Grade;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

scores::OaScoreRecord plain_record() {
  scores::OaScoreRecord r;
  r.id = "p";
  return r;
}

}  // namespace

TEST_CASE("split counts floor train and val") {
  CHECK(split_counts(2472, {}) == std::array<std::size_t, 3>{2002, 222, 248});
  CHECK(split_counts(100, {}) == std::array<std::size_t, 3>{81, 9, 10});
}

TEST_CASE("config validation") {
  SynthConfig c;
  CHECK_NOTHROW(c.validate());
  c.height = 16;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.noise_sigma = -1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("render is deterministic and bounded") {
  Rng rng(1, 0);
  const auto r = scores::sample_record(rng, "r");
  SynthConfig cfg;
  const auto a = render_image(r, cfg, 42);
  const auto b = render_image(r, cfg, 42);
  CHECK(a == b);
  CHECK(a.pixels.size() == 64U * 64U);
  for (float v : a.pixels) {
    REQUIRE(v >= 0.0F);
    REQUIRE(v <= 1.0F);
  }
  CHECK_FALSE(render_image(r, cfg, 43) == a);
}

TEST_CASE("noise-free healthy knee shows the two bone bands") {
  SynthConfig cfg;
  cfg.noise_sigma = 0;
  cfg.max_shift = 0;
  const auto img = render_image(plain_record(), cfg, 0);
  CHECK(img.at(5, 10) == doctest::Approx(0.05));
  CHECK(img.at(20, 10) == doctest::Approx(0.55));
  CHECK(img.at(44, 50) == doctest::Approx(0.55));
  CHECK(img.at(31, 10) == doctest::Approx(0.05));
}

TEST_CASE("each feature only changes pixels inside its ground-truth region") {
  SynthConfig cfg;
  cfg.noise_sigma = 0;
  cfg.max_shift = 0;
  const auto base = plain_record();
  const auto before = render_image(base, cfg, 7);
  for (std::size_t s = 0; s < 4; ++s) {
    for (int side = 0; side < 2; ++side) {
      auto r = base;
      r.side = side == 0 ? scores::Side::Left : scores::Side::Right;
      const auto ref = render_image(r, cfg, 7);
      r.osteophytes[scores::kBoneSites[s]] = Grade(3);
      const auto after = render_image(r, cfg, 7);
      const auto region = ground_truth_region(r, {FeatureKind::Osteophytes, static_cast<int>(s)}, cfg);
      CHECK(region.area() > 0);
      std::size_t changed = 0;
      for (int y = 0; y < 64; ++y) {
        for (int x = 0; x < 64; ++x) {
          if (after.at(y, x) != ref.at(y, x)) {
            ++changed;
            CHECK(region.contains(y, x));
          }
        }
      }
      CHECK(changed > 0);
    }
  }
  (void)before;
}

TEST_CASE("absent feature has no region") {
  CHECK_THROWS_WITH_AS(ground_truth_region(plain_record(), {FeatureKind::Cysts, 0}, SynthConfig{}),
                       "feature absent", ValidationError);
}

TEST_CASE("pgm round trip within quantisation") {
  test::TempDir dir;
  Rng rng(2, 0);
  const auto img = render_image(scores::sample_record(rng, "q"), SynthConfig{}, 1);
  write_pgm(img, dir.path() / "a.pgm");
  const auto back = read_pgm(dir.path() / "a.pgm");
  REQUIRE(back.pixels.size() == img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    REQUIRE(std::abs(back.pixels[i] - img.pixels[i]) <= 0.5 / 65535.0 + 1e-7);
  }
  const auto bytes = slurp(dir.path() / "a.pgm");
  CHECK(bytes.starts_with("P5\n64 64\n65535\n"));
  CHECK(bytes.size() == std::string("P5\n64 64\n65535\n").size() + 64 * 64 * 2);
  CHECK_THROWS_AS(read_pgm(dir.path() / "missing.pgm"), IoError);
}

TEST_CASE("dataset generation is thread-count independent") {
  test::TempDir dir;
  SynthConfig cfg;
  cfg.seed = 7;
  const auto one = generate_dataset(40, cfg, {}, dir.path() / "one", 1);
  const auto three = generate_dataset(40, cfg, {}, dir.path() / "three", 3);
  CHECK(one == three);
  for (const auto& e : one.entries) {
    REQUIRE(slurp(dir.path() / "one" / e.image_path) == slurp(dir.path() / "three" / e.image_path));
  }
  CHECK(one.split(Split::Train).size() == 32);
  CHECK(one.split(Split::Val).size() == 3);
  CHECK(one.split(Split::Test).size() == 5);

  write_manifest(one, dir.path() / "one" / "manifest.jsonl");
  CHECK(read_manifest(dir.path() / "one" / "manifest.jsonl") == one);
  const auto loaded = load_dataset(dir.path() / "one" / "manifest.jsonl");
  CHECK(loaded.images.size() == 40);
  CHECK(loaded.image_of(loaded.manifest.entries[5]).height == 64);
}

TEST_CASE("manifest reader reports the offending line") {
  test::TempDir dir;
  SynthConfig cfg;
  const auto m = generate_dataset(10, cfg, {}, dir.path(), 1);
  write_manifest(m, dir.path() / "m.jsonl");
  auto text = slurp(dir.path() / "m.jsonl");
  {
    std::ofstream out(dir.path() / "dup.jsonl");
    out << text << text.substr(0, text.find('\n') + 1);
  }
  CHECK_THROWS_WITH_AS(read_manifest(dir.path() / "dup.jsonl"), doctest::Contains("line 11: id: duplicate"),
                       ValidationError);
  {
    std::ofstream out(dir.path() / "bad.jsonl");
    out << text.substr(0, text.find('\n') + 1) << "{not json\n";
  }
  CHECK_THROWS_WITH_AS(read_manifest(dir.path() / "bad.jsonl"), doctest::Contains("line 2"), ValidationError);
  CHECK_THROWS_AS(read_manifest(dir.path() / "nope.jsonl"), IoError);
}
