#include <doctest.h>

#include <algorithm>

#include "oavl/caption_engine.hpp"
#include "oavl/errors.hpp"

using namespace oavl;
using namespace oavl::scores;
using namespace oavl::captions;

namespace {

OaScoreRecord zero_record() {
  OaScoreRecord r;
  r.id = "z";
  return r;
}

std::vector<std::string> sorted_sentences(const std::string& text) {
  auto s = split_sentences(text);
  std::sort(s.begin(), s.end());
  return s;
}

}  // namespace

TEST_CASE("abnormality template omits zero grades on request") {
  auto r = zero_record();
  r.kl = Grade(2);
  r.osteophytes[BoneSite::FemurMedial] = Grade(2);
  r.osteophytes[BoneSite::TibiaMedial] = Grade(1);
  r.sclerosis[BoneSite::FemurMedial] = Grade(2);
  r.sclerosis[BoneSite::TibiaMedial] = Grade(2);
  r.jsn[JointSite::JointMedial] = Grade(2);
  const auto c = render_caption(r, TemplateKind::Abnormality, false);
  CHECK(c.text ==
        "mild osteoarthritis. Osteophytes: mild in femur medial, early in tibia medial. Sclerosis: mild in femur "
        "medial, mild in tibia medial. Joint Space Narrowing: mild in joint medial.");
}

TEST_CASE("overall template") {
  auto r = zero_record();
  r.kl = Grade(3);
  r.side = Side::Left;
  r.sclerosis[BoneSite::FemurLateral] = Grade(3);
  r.osteophytes[BoneSite::TibiaMedial] = Grade(3);
  r.osteophytes[BoneSite::FemurMedial] = Grade(1);
  CHECK(render_caption(r, TemplateKind::Overall, true).text ==
        "Image shows moderate osteoarthritis in the left knee. It shows sign of moderate sclerosis, no sign of "
        "cysts, no sign of chondrocalcinosis, and sign of moderate osteophytes.");
}

TEST_CASE("all-zero record collapses to the kl sentence") {
  const auto r = zero_record();
  CHECK(render_caption(r, TemplateKind::Abnormality, false).text == "no osteoarthritis.");
  CHECK(render_caption(r, TemplateKind::Location, false).text == "no osteoarthritis.");
}

TEST_CASE("alignment sentence trails every template") {
  auto r = zero_record();
  r.alignment = Alignment::Valgus;
  for (auto kind : kTemplateKinds) {
    const auto text = render_caption(r, kind, true).text;
    CHECK(text.ends_with(" knee is valgus."));
  }
}

TEST_CASE("demographics only behind the flag") {
  auto r = zero_record();
  r.age = 63;
  r.sex = Sex::Male;
  RenderOptions opts;
  CHECK(render_caption(r, TemplateKind::Abnormality, opts).text.find("year old") == std::string::npos);
  opts.include_demographics = true;
  CHECK(render_caption(r, TemplateKind::Abnormality, opts).text.find("The patient is a 63 year old male.") !=
        std::string::npos);
}

TEST_CASE("caption bag") {
  Rng rng(3, 0);
  const auto r = sample_record(rng, "b");
  const auto bag = build_caption_bag(r, true);
  REQUIRE(bag.captions.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(bag.captions[i].kind == kTemplateKinds[i]);
    CHECK(bag.captions[i].signature == severity_signature(r));
  }
}

TEST_CASE("negative bag differs in every graded clause") {
  Rng rng(8, 0);
  for (int i = 0; i < 100; ++i) {
    const auto r = sample_record(rng, "p");
    const auto n = perturb_negative(r, rng);
    const auto pa = parse_caption(render_caption(r, TemplateKind::Abnormality, true).text);
    const auto pb = parse_caption(render_caption(n, TemplateKind::Abnormality, true).text);
    CHECK(pa.kl != pb.kl);
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(pa.osteophytes[k] != pb.osteophytes[k]);
      CHECK(pa.sclerosis[k] != pb.sclerosis[k]);
    }
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(pa.jsn[k] != pb.jsn[k]);
      CHECK(pa.attrition[k] != pb.attrition[k]);
    }
  }
}

TEST_CASE("shuffle permutes sentences deterministically") {
  Rng gen(12, 0);
  const auto r = sample_record(gen, "s");
  const auto c = render_caption(r, TemplateKind::Location, true);
  Rng a(1, 2);
  Rng b(1, 2);
  const auto s1 = shuffle_sentences(c, a);
  const auto s2 = shuffle_sentences(c, b);
  CHECK(s1.text == s2.text);
  CHECK(sorted_sentences(s1.text) == sorted_sentences(c.text));
  CHECK(s1.kind == c.kind);
  CHECK(s1.signature == c.signature);

  Caption single{"no osteoarthritis.", TemplateKind::Abnormality, {}};
  CHECK(shuffle_sentences(single, a).text == single.text);
}

TEST_CASE("parse recovers rendered scores in any sentence order") {
  Rng rng(21, 0);
  for (int i = 0; i < 200; ++i) {
    const auto r = sample_record(rng, "x");
    const auto loc = parse_caption(render_caption(r, TemplateKind::Location, true).text);
    REQUIRE(loc.kl.has_value());
    CHECK(loc.kl->value() == r.kl.value());
    for (std::size_t k = 0; k < 4; ++k) {
      CHECK(loc.osteophytes[k]->value() == r.osteophytes[kBoneSites[k]].value());
      CHECK(*loc.cysts[k] == r.cysts[kBoneSites[k]]);
    }
    const auto abn = render_caption(r, TemplateKind::Abnormality, true);
    CHECK(parse_caption(shuffle_sentences(abn, rng).text) == parse_caption(abn.text));
  }
}

TEST_CASE("parse of a single sentence leaves the rest absent") {
  const auto p = parse_caption("Osteophytes: mild in femur medial.");
  REQUIRE(p.osteophytes[0].has_value());
  CHECK(p.osteophytes[0]->value() == 2);
  CHECK_FALSE(p.kl.has_value());
  CHECK_FALSE(p.osteophytes[1].has_value());
  CHECK_FALSE(p.sclerosis[0].has_value());
  CHECK_FALSE(p.cysts[0].has_value());
}

TEST_CASE("parse rejects text outside the grammar with a position") {
  try {
    parse_caption("mild osteoarthritis. Osteophytes: purple in femur medial.");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.position() >= 21);
  }
  CHECK_THROWS_AS(parse_caption("hello world."), ParseError);
  CHECK_THROWS_AS(parse_caption("mild osteoarthritis. severe osteoarthritis."), ParseError);
}

TEST_CASE("tokenizer") {
  CHECK(split_tokens("Osteophytes: mild in femur medial, no.") ==
        std::vector<std::string>{"osteophytes", ":", "mild", "in", "femur", "medial", ",", "no", "."});
  const auto& v = Vocabulary::grammar();
  CHECK(v.token(0) == "<pad>");
  CHECK(v.token(1) == "<unk>");
  CHECK(v.index("zebra") == Vocabulary::kUnk);
  const auto t = tokenize("no osteoarthritis.", v);
  REQUIRE(t.ids.size() == kDefaultMaxLen);
  CHECK(t.length == 3);
  CHECK(t.ids[0] == v.index("no"));
  CHECK(t.ids[1] == v.index("osteoarthritis"));
  CHECK(t.ids[2] == v.index("."));
  CHECK(t.ids[3] == Vocabulary::kPad);

  std::string longtext;
  for (int i = 0; i < 200; ++i) longtext += "mild ";
  const auto l = tokenize(longtext, v, 96);
  CHECK(l.ids.size() == 96);
  CHECK(l.length == 96);
}

TEST_CASE("vocabulary is closed over captions and negatives") {
  Rng rng(30, 0);
  const auto& v = Vocabulary::grammar();
  RenderOptions opts;
  opts.include_demographics = true;
  for (int i = 0; i < 1000; ++i) {
    const auto r = sample_record(rng, "v");
    const auto n = perturb_negative(r, rng);
    for (const auto* rec : {&r, &n}) {
      for (const auto& c : build_caption_bag(*rec, opts).captions) {
        for (const auto& tok : split_tokens(c.text)) {
          REQUIRE(v.index(tok) != Vocabulary::kUnk);
        }
      }
    }
  }
}
