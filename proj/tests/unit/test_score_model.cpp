#include <doctest.h>

#include <set>

#include "oavl/errors.hpp"
#include "oavl/score_model.hpp"

using namespace oavl;
using namespace oavl::scores;

TEST_CASE("grade range is enforced") {
  CHECK_NOTHROW(Grade(0));
  CHECK_NOTHROW(Grade(4));
  CHECK_THROWS_AS(Grade(5), ValidationError);
  CHECK_THROWS_AS(Grade(-1), ValidationError);
}

TEST_CASE("grade words") {
  const char* words[] = {"no", "early", "mild", "moderate", "severe"};
  for (int g = 0; g <= 4; ++g) {
    CHECK(grade_word(Grade(g)) == words[g]);
    CHECK(grade_from_word(words[g]).value() == g);
  }
  CHECK_THROWS_AS(grade_from_word("extreme"), ValidationError);
}

TEST_CASE("sample_record couples features to kl") {
  Rng rng(11, 0);
  for (int i = 0; i < 2000; ++i) {
    const auto r = sample_record(rng, "r");
    CHECK_NOTHROW(validate_record(r));
    CHECK(r.age >= 45);
    CHECK(r.age <= 79);
    const auto grades = all_grades(r);
    for (std::size_t k = 1; k < grades.size(); ++k) {
      CHECK(std::abs(grades[k].value() - r.kl.value()) <= 1);
    }
  }
}

TEST_CASE("perturb_negative moves every grade by at least two") {
  Rng rng(5, 0);
  for (int i = 0; i < 500; ++i) {
    const auto r = sample_record(rng, "knee");
    const auto n = perturb_negative(r, rng);
    CHECK(n.id == "knee-neg");
    const auto a = all_grades(r);
    const auto b = all_grades(n);
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(std::abs(a[k].value() - b[k].value()) >= 2);
    }
  }
}

TEST_CASE("flags flip about half the time") {
  Rng rng(9, 0);
  int flips = 0;
  int total = 0;
  for (int i = 0; i < 2000; ++i) {
    const auto r = sample_record(rng, "k");
    const auto n = perturb_negative(r, rng);
    const auto fa = all_flags(r);
    const auto fb = all_flags(n);
    for (std::size_t k = 0; k < fa.size(); ++k) {
      flips += fa[k] != fb[k] ? 1 : 0;
      ++total;
    }
  }
  const double rate = static_cast<double>(flips) / total;
  CHECK(rate > 0.47);
  CHECK(rate < 0.53);
}

TEST_CASE("distant_grade reaches every admissible value") {
  Rng rng(1, 0);
  for (int g = 0; g <= 4; ++g) {
    std::set<int> seen;
    for (int i = 0; i < 400; ++i) {
      const int v = distant_grade(Grade(g), rng).value();
      CHECK(std::abs(v - g) >= 2);
      seen.insert(v);
    }
    std::size_t expected = 0;
    for (int v = 0; v <= 4; ++v) expected += std::abs(v - g) >= 2 ? 1 : 0;
    CHECK(seen.size() == expected);
  }
}

TEST_CASE("signature ignores side, alignment and demographics") {
  Rng rng(2, 0);
  auto r = sample_record(rng, "a");
  auto s = r;
  s.id = "b";
  s.side = r.side == Side::Left ? Side::Right : Side::Left;
  s.alignment = Alignment::Valgus;
  s.age = 70;
  CHECK(severity_signature(r) == severity_signature(s));
  s.cysts[BoneSite::TibiaLateral] = !s.cysts[BoneSite::TibiaLateral];
  CHECK(severity_signature(r) != severity_signature(s));
  CHECK(severity_signature(r).hex().size() == 2 * (kGradeCount + kFlagCount));
}

TEST_CASE("record json round trip and field errors") {
  Rng rng(4, 0);
  for (int i = 0; i < 50; ++i) {
    const auto r = sample_record(rng, "id" + std::to_string(i));
    CHECK(record_from_json(record_to_json(r)) == r);
  }
  auto j = record_to_json(sample_record(rng, "x"));
  j["osteophytes"]["fm"] = 5;
  CHECK_THROWS_WITH_AS(record_from_json(j), doctest::Contains("osteophytes.fm: grade out of range"),
                       ValidationError);
  j = record_to_json(sample_record(rng, "x"));
  j["jsn"].erase("jl");
  CHECK_THROWS_WITH_AS(record_from_json(j), doctest::Contains("jsn.jl: missing key"), ValidationError);
}

TEST_CASE("site naming") {
  CHECK(site_key(BoneSite::FemurLateral) == "fl");
  CHECK(site_key(JointSite::JointMedial) == "jm");
  CHECK(site_name(BoneSite::TibiaMedial) == "tibia medial");
  CHECK(to_bone_site(TibiaSite::TibiaLateral) == BoneSite::TibiaLateral);
}
