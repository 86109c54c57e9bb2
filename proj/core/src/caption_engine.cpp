#include "oavl/caption_engine.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "oavl/errors.hpp"

namespace oavl::captions {

using scores::Alignment;
using scores::BoneSite;
using scores::Grade;
using scores::JointSite;
using scores::OaScoreRecord;
using scores::TibiaSite;
using scores::grade_word;
using scores::site_name;

namespace {

constexpr std::string_view kOsteophytes = "Osteophytes";
constexpr std::string_view kSclerosis = "Sclerosis";
constexpr std::string_view kJsn = "Joint Space Narrowing";
constexpr std::string_view kAttrition = "Attrition";
constexpr std::string_view kChondro = "Chondrocalcinosis";
constexpr std::string_view kCysts = "Cysts";

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) {
      out += sep;
    }
    out += parts[i];
  }
  return out;
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string kl_sentence(const OaScoreRecord& r) {
  return std::string(grade_word(r.kl)) + " osteoarthritis.";
}

void append_trailer(std::vector<std::string>& sentences, const OaScoreRecord& r, const RenderOptions& opt) {
  if (opt.include_demographics) {
    sentences.push_back("The patient is a " + std::to_string(r.age) + " year old " +
                        std::string(scores::to_string(r.sex)) + ".");
  }
  if (r.alignment != Alignment::Neutral) {
    sentences.push_back("knee is " + std::string(scores::to_string(r.alignment)) + ".");
  }
}

template <typename Map, typename Sites>
void graded_feature_sentence(std::vector<std::string>& out, std::string_view feature, const Map& grades,
                             const Sites& sites, bool include_zero) {
  std::vector<std::string> entries;
  for (auto s : sites) {
    if (grades[s].value() == 0 && !include_zero) {
      continue;
    }
    entries.push_back(std::string(grade_word(grades[s])) + " in " + std::string(site_name(s)));
  }
  if (!entries.empty()) {
    out.push_back(std::string(feature) + ": " + join(entries, ", ") + ".");
  }
}

template <typename Map, typename Sites>
void flag_feature_sentence(std::vector<std::string>& out, std::string_view feature, const Map& flags,
                           const Sites& sites, bool include_zero) {
  std::vector<std::string> entries;
  for (auto s : sites) {
    if (!flags[s] && !include_zero) {
      continue;
    }
    entries.push_back(std::string(flags[s] ? "sign in " : "no sign in ") + std::string(site_name(s)));
  }
  if (!entries.empty()) {
    out.push_back(std::string(feature) + ": " + join(entries, ", ") + ".");
  }
}

std::vector<std::string> abnormality_sentences(const OaScoreRecord& r, const RenderOptions& opt) {
  std::vector<std::string> s{kl_sentence(r)};
  const bool z = opt.include_zero_grades;
  graded_feature_sentence(s, kOsteophytes, r.osteophytes, scores::kBoneSites, z);
  graded_feature_sentence(s, kSclerosis, r.sclerosis, scores::kBoneSites, z);
  graded_feature_sentence(s, kJsn, r.jsn, scores::kJointSites, z);
  graded_feature_sentence(s, kAttrition, r.attrition, scores::kTibiaSites, z);
  flag_feature_sentence(s, kChondro, r.chondrocalcinosis, scores::kJointSites, z);
  flag_feature_sentence(s, kCysts, r.cysts, scores::kBoneSites, z);
  return s;
}

void graded_phrase(std::vector<std::string>& out, Grade g, std::string_view feature, bool include_zero) {
  if (g.value() == 0 && !include_zero) {
    return;
  }
  out.push_back(std::string(grade_word(g)) + " " + lower(feature));
}

void flag_phrase(std::vector<std::string>& out, bool present, std::string_view feature, bool include_zero) {
  if (!present && !include_zero) {
    return;
  }
  out.push_back(std::string(present ? "sign of " : "no sign of ") + lower(feature));
}

void location_sentence(std::vector<std::string>& out, std::string_view location,
                       const std::vector<std::string>& phrases) {
  if (!phrases.empty()) {
    out.push_back("In " + std::string(location) + " compartment: " + join(phrases, ", ") + ".");
  }
}

std::vector<std::string> location_sentences(const OaScoreRecord& r, const RenderOptions& opt) {
  std::vector<std::string> s{kl_sentence(r)};
  const bool z = opt.include_zero_grades;
  for (auto site : scores::kJointSites) {
    std::vector<std::string> phrases;
    graded_phrase(phrases, r.jsn[site], kJsn, z);
    flag_phrase(phrases, r.chondrocalcinosis[site], kChondro, z);
    location_sentence(s, site_name(site), phrases);
  }
  for (auto site : scores::kBoneSites) {
    std::vector<std::string> phrases;
    graded_phrase(phrases, r.osteophytes[site], kOsteophytes, z);
    graded_phrase(phrases, r.sclerosis[site], kSclerosis, z);
    if (site == BoneSite::TibiaMedial) {
      graded_phrase(phrases, r.attrition[TibiaSite::TibiaMedial], kAttrition, z);
    } else if (site == BoneSite::TibiaLateral) {
      graded_phrase(phrases, r.attrition[TibiaSite::TibiaLateral], kAttrition, z);
    }
    flag_phrase(phrases, r.cysts[site], kCysts, z);
    location_sentence(s, site_name(site), phrases);
  }
  return s;
}

template <typename Map>
Grade max_grade(const Map& m) {
  Grade best;
  for (auto g : m.values) {
    best = std::max(best, g);
  }
  return best;
}

template <typename Map>
bool any_flag(const Map& m) {
  return std::any_of(m.values.begin(), m.values.end(), [](bool b) { return b; });
}

std::vector<std::string> overall_sentences(const OaScoreRecord& r, const RenderOptions& opt) {
  std::vector<std::string> s{"Image shows " + std::string(grade_word(r.kl)) + " osteoarthritis in the " +
                             std::string(scores::to_string(r.side)) + " knee."};
  const bool z = opt.include_zero_grades;
  std::vector<std::string> clauses;
  auto graded = [&](Grade g, std::string_view feature) {
    if (g.value() > 0) {
      clauses.push_back("sign of " + std::string(grade_word(g)) + " " + lower(feature));
    } else if (z) {
      clauses.push_back("no sign of " + lower(feature));
    }
  };
  auto flag = [&](bool present, std::string_view feature) { flag_phrase(clauses, present, feature, z); };
  graded(max_grade(r.sclerosis), kSclerosis);
  flag(any_flag(r.cysts), kCysts);
  flag(any_flag(r.chondrocalcinosis), kChondro);
  graded(max_grade(r.osteophytes), kOsteophytes);
  if (!clauses.empty()) {
    if (clauses.size() > 1) {
      clauses.back() = "and " + clauses.back();
    }
    s.push_back("It shows " + join(clauses, ", ") + ".");
  }
  return s;
}

// ---------------------------------------------------------------- parsing

struct Tok {
  std::string text;  // lowercased
  std::size_t offset;
};

class SentenceParser {
 public:
  SentenceParser(std::vector<Tok> toks, std::size_t end_offset, ParsedCaption& out)
      : toks_(std::move(toks)), end_offset_(end_offset), out_(out) {}

  void parse() {
    if (toks_.empty()) {
      fail("empty sentence");
    }
    const auto& first = peek();
    if (first == "image") {
      parse_image_shows();
    } else if (first == "it") {
      parse_it_shows();
    } else if (first == "knee") {
      parse_alignment();
    } else if (first == "the") {
      parse_demographics();
    } else if (first == "in") {
      parse_location();
    } else if (is_feature_start()) {
      parse_feature_list();
    } else {
      expect_word("severity word");
      const Grade kl = last_grade_;
      expect("osteoarthritis");
      set(out_.kl, kl, "kl");
    }
    if (pos_ != toks_.size()) {
      fail("unexpected trailing token '" + toks_[pos_].text + "'");
    }
  }

 private:
  enum class Feature { Osteophytes, Sclerosis, Jsn, Attrition, Chondro, Cysts };

  const std::string& peek(std::size_t ahead = 0) const {
    static const std::string kEnd;
    return pos_ + ahead < toks_.size() ? toks_[pos_ + ahead].text : kEnd;
  }

  std::size_t here() const { return pos_ < toks_.size() ? toks_[pos_].offset : end_offset_; }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, here()); }

  void expect(std::string_view word) {
    if (peek() != word) {
      fail("expected '" + std::string(word) + "'");
    }
    ++pos_;
  }

  bool accept(std::string_view word) {
    if (peek() == word) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect_word(const char* what) {
    try {
      last_grade_ = scores::grade_from_word(peek());
    } catch (const ValidationError&) {
      fail(std::string("expected ") + what);
    }
    ++pos_;
  }

  template <typename T>
  void set(std::optional<T>& slot, T value, const char* field) {
    if (slot.has_value() && !(*slot == value)) {
      fail(std::string("contradictory statement for ") + field);
    }
    slot = value;
  }

  bool is_feature_start() const {
    const auto& w = peek();
    return w == "osteophytes" || w == "sclerosis" || w == "attrition" || w == "chondrocalcinosis" || w == "cysts" ||
           (w == "joint" && peek(1) == "space");
  }

  Feature parse_feature_name() {
    const auto w = peek();
    if (w == "joint") {
      ++pos_;
      expect("space");
      expect("narrowing");
      return Feature::Jsn;
    }
    ++pos_;
    if (w == "osteophytes") return Feature::Osteophytes;
    if (w == "sclerosis") return Feature::Sclerosis;
    if (w == "attrition") return Feature::Attrition;
    if (w == "chondrocalcinosis") return Feature::Chondro;
    if (w == "cysts") return Feature::Cysts;
    --pos_;
    fail("expected feature name");
  }

  // 0..3 bone sites (fm, fl, tm, tl); 4..5 joint sites (jm, jl).
  int parse_site() {
    const auto bone = peek();
    int base = 0;
    if (bone == "femur") {
      base = 0;
    } else if (bone == "tibia") {
      base = 2;
    } else if (bone == "joint") {
      base = 4;
    } else {
      fail("expected compartment");
    }
    ++pos_;
    if (accept("medial")) {
      return base;
    }
    if (accept("lateral")) {
      return base + 1;
    }
    fail("expected 'medial' or 'lateral'");
  }

  void store_grade(Feature f, int site, Grade g) {
    switch (f) {
      case Feature::Osteophytes:
        if (site > 3) fail("osteophytes are scored on bone compartments");
        set(out_.osteophytes[static_cast<std::size_t>(site)], g, "osteophytes");
        return;
      case Feature::Sclerosis:
        if (site > 3) fail("sclerosis is scored on bone compartments");
        set(out_.sclerosis[static_cast<std::size_t>(site)], g, "sclerosis");
        return;
      case Feature::Jsn:
        if (site < 4) fail("joint space narrowing is scored on joint compartments");
        set(out_.jsn[static_cast<std::size_t>(site - 4)], g, "jsn");
        return;
      case Feature::Attrition:
        if (site != 2 && site != 3) fail("attrition is scored on tibia compartments");
        set(out_.attrition[static_cast<std::size_t>(site - 2)], g, "attrition");
        return;
      default:
        fail("feature is not graded");
    }
  }

  void store_flag(Feature f, int site, bool present) {
    if (f == Feature::Cysts) {
      if (site > 3) fail("cysts are scored on bone compartments");
      set(out_.cysts[static_cast<std::size_t>(site)], present, "cysts");
    } else if (f == Feature::Chondro) {
      if (site < 4) fail("chondrocalcinosis is scored on joint compartments");
      set(out_.chondrocalcinosis[static_cast<std::size_t>(site - 4)], present, "chondrocalcinosis");
    } else {
      fail("feature is graded, not flagged");
    }
  }

  static bool is_flag(Feature f) { return f == Feature::Cysts || f == Feature::Chondro; }

  // "Feature: w in site, w in site." / "Feature: [no] sign in site, ..."
  void parse_feature_list() {
    const Feature f = parse_feature_name();
    expect(":");
    do {
      if (is_flag(f)) {
        const bool present = !accept("no");
        expect("sign");
        expect("in");
        store_flag(f, parse_site(), present);
      } else {
        expect_word("severity word");
        const Grade g = last_grade_;
        expect("in");
        store_grade(f, parse_site(), g);
      }
    } while (accept(","));
  }

  // "In site compartment: w feature, [no] sign of feature, ..."
  void parse_location() {
    expect("in");
    const int site = parse_site();
    expect("compartment");
    expect(":");
    do {
      if (peek() == "sign" || (peek() == "no" && peek(1) == "sign")) {
        const bool present = !accept("no");
        expect("sign");
        expect("of");
        const Feature f = parse_feature_name();
        store_flag(f, site, present);
      } else {
        expect_word("severity word");
        const Grade g = last_grade_;
        const Feature f = parse_feature_name();
        store_grade(f, site, g);
      }
    } while (accept(","));
  }

  void parse_image_shows() {
    expect("image");
    expect("shows");
    expect_word("severity word");
    const Grade kl = last_grade_;
    expect("osteoarthritis");
    expect("in");
    expect("the");
    scores::Side side{};
    if (accept("left")) {
      side = scores::Side::Left;
    } else if (accept("right")) {
      side = scores::Side::Right;
    } else {
      fail("expected 'left' or 'right'");
    }
    expect("knee");
    set(out_.kl, kl, "kl");
    set(out_.side, side, "side");
  }

  void parse_it_shows() {
    expect("it");
    expect("shows");
    do {
      accept("and");
      if (accept("no")) {
        expect("sign");
        expect("of");
        summary(parse_feature_name(), Grade(0), false);
      } else {
        expect("sign");
        expect("of");
        if (peek() == "cysts" || peek() == "chondrocalcinosis") {
          summary(parse_feature_name(), Grade(0), true);
        } else {
          expect_word("severity word");
          const Grade g = last_grade_;
          if (g.value() == 0) {
            --pos_;
            fail("use 'no sign of' for absent features");
          }
          summary(parse_feature_name(), g, true);
        }
      }
    } while (accept(","));
  }

  void summary(Feature f, Grade g, bool present) {
    switch (f) {
      case Feature::Sclerosis: set(out_.max_sclerosis, g, "sclerosis summary"); return;
      case Feature::Osteophytes: set(out_.max_osteophytes, g, "osteophytes summary"); return;
      case Feature::Cysts: set(out_.any_cysts, present, "cysts summary"); return;
      case Feature::Chondro: set(out_.any_chondrocalcinosis, present, "chondrocalcinosis summary"); return;
      default: fail("feature not summarised in the overall template");
    }
  }

  void parse_alignment() {
    expect("knee");
    expect("is");
    if (accept("varus")) {
      set(out_.alignment, Alignment::Varus, "alignment");
    } else if (accept("valgus")) {
      set(out_.alignment, Alignment::Valgus, "alignment");
    } else {
      fail("expected 'varus' or 'valgus'");
    }
  }

  void parse_demographics() {
    expect("the");
    expect("patient");
    expect("is");
    expect("a");
    const auto& num = peek();
    if (num.empty() || num.size() > 3 || !std::all_of(num.begin(), num.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      fail("expected age");
    }
    const int age = std::stoi(num);
    if (age > 120) {
      fail("age out of range");
    }
    ++pos_;
    expect("year");
    expect("old");
    if (accept("male")) {
      set(out_.sex, scores::Sex::Male, "sex");
    } else if (accept("female")) {
      set(out_.sex, scores::Sex::Female, "sex");
    } else {
      fail("expected 'male' or 'female'");
    }
    set(out_.age, age, "age");
  }

  std::vector<Tok> toks_;
  std::size_t end_offset_;
  ParsedCaption& out_;
  std::size_t pos_ = 0;
  Grade last_grade_;
};

bool is_punct(char c) { return c == '.' || c == ',' || c == ':'; }

std::vector<Tok> lex(std::string_view text, std::size_t begin, std::size_t end) {
  std::vector<Tok> toks;
  std::size_t i = begin;
  while (i < end) {
    const char c = text[i];
    if (c == ' ') {
      ++i;
    } else if (is_punct(c)) {
      toks.push_back({std::string(1, c), i});
      ++i;
    } else if (std::isalnum(static_cast<unsigned char>(c))) {
      std::size_t j = i;
      while (j < end && std::isalnum(static_cast<unsigned char>(text[j]))) {
        ++j;
      }
      toks.push_back({lower(text.substr(i, j - i)), i});
      i = j;
    } else {
      throw ParseError(std::string("unexpected character '") + c + "'", i);
    }
  }
  return toks;
}

std::vector<std::string> grammar_terminals() {
  std::vector<std::string> phrases{
      "no early mild moderate severe",
      "osteoarthritis image shows in the left right knee it and is varus valgus",
      "sign of compartment",
      "femur tibia joint medial lateral",
      "osteophytes sclerosis joint space narrowing attrition chondrocalcinosis cysts",
      "the patient is a year old male female",
      ". , :",
  };
  for (int age = 0; age <= 120; ++age) {
    phrases.push_back(std::to_string(age));
  }
  std::set<std::string> unique;
  for (const auto& p : phrases) {
    for (auto& t : split_tokens(p)) {
      unique.insert(std::move(t));
    }
  }
  return {unique.begin(), unique.end()};
}

}  // namespace

std::string_view to_string(TemplateKind kind) noexcept {
  switch (kind) {
    case TemplateKind::Abnormality: return "abnormality";
    case TemplateKind::Location: return "location";
    case TemplateKind::Overall: return "overall";
  }
  return "abnormality";
}

Caption render_caption(const OaScoreRecord& record, TemplateKind kind, const RenderOptions& options) {
  std::vector<std::string> sentences;
  switch (kind) {
    case TemplateKind::Abnormality: sentences = abnormality_sentences(record, options); break;
    case TemplateKind::Location: sentences = location_sentences(record, options); break;
    case TemplateKind::Overall: sentences = overall_sentences(record, options); break;
  }
  append_trailer(sentences, record, options);
  return Caption{join(sentences, " "), kind, scores::severity_signature(record)};
}

Caption render_caption(const OaScoreRecord& record, TemplateKind kind, bool include_zero_grades) {
  return render_caption(record, kind, RenderOptions{include_zero_grades, false});
}

CaptionBag build_caption_bag(const OaScoreRecord& record, const RenderOptions& options) {
  CaptionBag bag;
  for (auto kind : kTemplateKinds) {
    bag.captions.push_back(render_caption(record, kind, options));
  }
  return bag;
}

CaptionBag build_caption_bag(const OaScoreRecord& record, bool include_zero_grades) {
  return build_caption_bag(record, RenderOptions{include_zero_grades, false});
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start < text.size()) {
    auto dot = text.find(". ", start);
    if (dot == std::string_view::npos) {
      out.emplace_back(text.substr(start));
      break;
    }
    out.emplace_back(text.substr(start, dot + 1 - start));
    start = dot + 2;
  }
  return out;
}

Caption shuffle_sentences(const Caption& caption, Rng& rng) {
  auto sentences = split_sentences(caption.text);
  rng.shuffle(sentences);
  return Caption{join(sentences, " "), caption.kind, caption.signature};
}

ParsedCaption parse_caption(std::string_view text) {
  ParsedCaption out;
  std::size_t start = 0;
  while (start < text.size() && text[start] == ' ') {
    ++start;
  }
  if (start == text.size()) {
    throw ParseError("empty caption", 0);
  }
  while (start < text.size()) {
    const auto dot = text.find('.', start);
    if (dot == std::string_view::npos) {
      throw ParseError("sentence is not period-terminated", start);
    }
    SentenceParser(lex(text, start, dot), dot, out).parse();
    start = dot + 1;
    while (start < text.size() && text[start] == ' ') {
      ++start;
    }
  }
  return out;
}

std::vector<std::string> split_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary(std::vector<std::string> terminals) {
  tokens_.reserve(terminals.size() + 2);
  tokens_.emplace_back("<pad>");
  tokens_.emplace_back("<unk>");
  std::sort(terminals.begin(), terminals.end());
  terminals.erase(std::unique(terminals.begin(), terminals.end()), terminals.end());
  for (auto& t : terminals) {
    if (t != "<pad>" && t != "<unk>") {
      tokens_.push_back(std::move(t));
    }
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    lookup_.emplace(tokens_[i], static_cast<std::int32_t>(i));
  }
}

const Vocabulary& Vocabulary::grammar() {
  static const Vocabulary vocab(grammar_terminals());
  return vocab;
}

std::int32_t Vocabulary::index(std::string_view token) const {
  const auto it = lookup_.find(std::string(token));
  return it == lookup_.end() ? kUnk : it->second;
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  TokenSequence seq;
  seq.ids.assign(max_len, Vocabulary::kPad);
  const auto toks = split_tokens(text);
  seq.length = std::min(toks.size(), max_len);
  for (std::size_t i = 0; i < seq.length; ++i) {
    seq.ids[i] = vocab.index(toks[i]);
  }
  return seq;
}

}  // namespace oavl::captions
