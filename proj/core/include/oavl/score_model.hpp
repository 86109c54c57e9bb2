#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "oavl/rng.hpp"

namespace oavl::scores {

// Ordinal severity 0..4. Construction outside that range throws ValidationError.
class Grade {
 public:
  constexpr Grade() noexcept = default;
  explicit Grade(int value);

  constexpr int value() const noexcept { return value_; }
  constexpr auto operator<=>(const Grade&) const noexcept = default;

  static constexpr int kMin = 0;
  static constexpr int kMax = 4;

 private:
  std::uint8_t value_ = 0;
};

enum class Side : std::uint8_t { Left, Right };
enum class Sex : std::uint8_t { Male, Female };
enum class Alignment : std::uint8_t { Varus, Valgus, Neutral };

// femur/tibia x medial/lateral; medial before lateral, femur before tibia.
enum class BoneSite : std::uint8_t { FemurMedial, FemurLateral, TibiaMedial, TibiaLateral };
enum class JointSite : std::uint8_t { JointMedial, JointLateral };
// Attrition is scored on the tibial plateau only.
enum class TibiaSite : std::uint8_t { TibiaMedial, TibiaLateral };

inline constexpr std::array<BoneSite, 4> kBoneSites{BoneSite::FemurMedial, BoneSite::FemurLateral,
                                                    BoneSite::TibiaMedial, BoneSite::TibiaLateral};
inline constexpr std::array<JointSite, 2> kJointSites{JointSite::JointMedial, JointSite::JointLateral};
inline constexpr std::array<TibiaSite, 2> kTibiaSites{TibiaSite::TibiaMedial, TibiaSite::TibiaLateral};

template <typename Site, typename Value, std::size_t N>
struct SiteMap {
  std::array<Value, N> values{};

  Value& operator[](Site s) noexcept { return values[static_cast<std::size_t>(s)]; }
  const Value& operator[](Site s) const noexcept { return values[static_cast<std::size_t>(s)]; }
  bool operator==(const SiteMap&) const = default;
};

using BoneGrades = SiteMap<BoneSite, Grade, 4>;
using JointGrades = SiteMap<JointSite, Grade, 2>;
using TibiaGrades = SiteMap<TibiaSite, Grade, 2>;
using BoneFlags = SiteMap<BoneSite, bool, 4>;
using JointFlags = SiteMap<JointSite, bool, 2>;

struct OaScoreRecord {
  std::string id;
  Side side = Side::Left;
  int age = 60;
  Sex sex = Sex::Female;
  Alignment alignment = Alignment::Neutral;
  Grade kl;
  BoneGrades osteophytes;
  BoneGrades sclerosis;
  JointGrades jsn;
  TibiaGrades attrition;
  BoneFlags cysts;
  JointFlags chondrocalcinosis;

  bool operator==(const OaScoreRecord&) const = default;
};

// Number of grades (kl + per-compartment grades) and flags in a record.
inline constexpr std::size_t kGradeCount = 1 + 4 + 4 + 2 + 2;
inline constexpr std::size_t kFlagCount = 4 + 2;

// Every grade followed by every flag, in a fixed order. Two records have equal
// signatures exactly when they agree on every grade and flag.
struct SeveritySignature {
  std::array<std::uint8_t, kGradeCount + kFlagCount> bytes{};

  auto operator<=>(const SeveritySignature&) const = default;
  std::string hex() const;
};

// Throws ValidationError naming the first offending field.
const OaScoreRecord& validate_record(const OaScoreRecord& record);

std::string_view grade_word(Grade g) noexcept;
// Inverse of grade_word; throws ValidationError for an unknown word.
Grade grade_from_word(std::string_view word);

SeveritySignature severity_signature(const OaScoreRecord& record) noexcept;

// Synthetic population draw; features are coupled to the KL grade.
OaScoreRecord sample_record(Rng& rng, std::string id = {});

// Negative partner: every grade moved by at least 2 levels, flags flipped with
// probability 0.5, id suffixed "-neg".
OaScoreRecord perturb_negative(const OaScoreRecord& record, Rng& rng);

// Uniform draw from {v in 0..4 : |v - g| >= 2}.
Grade distant_grade(Grade g, Rng& rng);

// Every graded field as a flat list in signature order (kl first).
std::array<Grade, kGradeCount> all_grades(const OaScoreRecord& record) noexcept;
std::array<bool, kFlagCount> all_flags(const OaScoreRecord& record) noexcept;

std::string_view to_string(Side s) noexcept;
std::string_view to_string(Sex s) noexcept;
std::string_view to_string(Alignment a) noexcept;
std::string_view site_key(BoneSite s) noexcept;   // "fm", "fl", "tm", "tl"
std::string_view site_key(JointSite s) noexcept;  // "jm", "jl"
std::string_view site_key(TibiaSite s) noexcept;  // "tm", "tl"
std::string_view site_name(BoneSite s) noexcept;   // "femur medial", ...
std::string_view site_name(JointSite s) noexcept;  // "joint medial", ...
std::string_view site_name(TibiaSite s) noexcept;  // "tibia medial", ...
BoneSite to_bone_site(TibiaSite s) noexcept;

// Record JSON object (sorted keys, compartments keyed by site_key).
nlohmann::json record_to_json(const OaScoreRecord& record);
// Throws ValidationError naming the field ("osteophytes.fm: grade out of range",
// "jsn.jl: missing key").
OaScoreRecord record_from_json(const nlohmann::json& j);

}  // namespace oavl::scores
