#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "oavl/rng.hpp"
#include "oavl/score_model.hpp"

namespace oavl::captions {

enum class TemplateKind : std::uint8_t { Abnormality, Location, Overall };

inline constexpr std::array<TemplateKind, 3> kTemplateKinds{TemplateKind::Abnormality, TemplateKind::Location,
                                                            TemplateKind::Overall};

std::string_view to_string(TemplateKind kind) noexcept;  // "abnormality", "location", "overall"

struct RenderOptions {
  // Emit "no ..." clauses for grade-0 features and absent flags.
  bool include_zero_grades = true;
  // Adds "The patient is a {age} year old {sex}." Off by default: only
  // qualitative scores are captioned.
  bool include_demographics = false;
};

struct Caption {
  std::string text;
  TemplateKind kind = TemplateKind::Abnormality;
  scores::SeveritySignature signature;
};

// One caption per TemplateKind, in kTemplateKinds order.
struct CaptionBag {
  std::vector<Caption> captions;
};

Caption render_caption(const scores::OaScoreRecord& record, TemplateKind kind, const RenderOptions& options);
Caption render_caption(const scores::OaScoreRecord& record, TemplateKind kind, bool include_zero_grades);

CaptionBag build_caption_bag(const scores::OaScoreRecord& record, const RenderOptions& options);
CaptionBag build_caption_bag(const scores::OaScoreRecord& record, bool include_zero_grades);

// Splits period-terminated text into sentences (each keeps its trailing '.').
std::vector<std::string> split_sentences(std::string_view text);

// Permutes sentences with the generator; kind and signature are kept.
Caption shuffle_sentences(const Caption& caption, Rng& rng);

// Everything a caption states. Per-compartment fields come from the
// abnormality and location templates; the overall template only states the
// summary fields (maximum grade / presence anywhere).
struct ParsedCaption {
  std::optional<scores::Grade> kl;
  std::optional<scores::Side> side;
  std::optional<scores::Alignment> alignment;
  std::optional<int> age;
  std::optional<scores::Sex> sex;

  std::array<std::optional<scores::Grade>, 4> osteophytes;
  std::array<std::optional<scores::Grade>, 4> sclerosis;
  std::array<std::optional<scores::Grade>, 2> jsn;
  std::array<std::optional<scores::Grade>, 2> attrition;
  std::array<std::optional<bool>, 4> cysts;
  std::array<std::optional<bool>, 2> chondrocalcinosis;

  std::optional<scores::Grade> max_osteophytes;
  std::optional<scores::Grade> max_sclerosis;
  std::optional<bool> any_cysts;
  std::optional<bool> any_chondrocalcinosis;

  bool operator==(const ParsedCaption&) const = default;
};

// Recovers every stated grade and flag; sentence order does not matter.
// Throws ParseError (with byte offset) for text outside the report grammar or
// for contradictory statements.
ParsedCaption parse_caption(std::string_view text);

// Lowercased words with ".", ",", ":" split off as separate tokens.
std::vector<std::string> split_tokens(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kUnk = 1;

  // <pad>, <unk>, then every terminal the report grammar can emit, sorted.
  static const Vocabulary& grammar();

  explicit Vocabulary(std::vector<std::string> terminals);

  std::size_t size() const noexcept { return tokens_.size(); }
  std::int32_t index(std::string_view token) const;
  const std::string& token(std::int32_t index) const { return tokens_.at(static_cast<std::size_t>(index)); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> lookup_;
};

inline constexpr std::size_t kDefaultMaxLen = 96;

struct TokenSequence {
  std::vector<std::int32_t> ids;  // exactly max_len entries, right-padded
  std::size_t length = 0;         // non-pad prefix length
};

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::size_t max_len = kDefaultMaxLen);

}  // namespace oavl::captions
