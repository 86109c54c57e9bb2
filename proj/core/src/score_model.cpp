#include "oavl/score_model.hpp"

#include <algorithm>
#include <cstdio>
#include <vector>

#include "oavl/errors.hpp"

namespace oavl::scores {

namespace {

constexpr std::array<std::string_view, 5> kGradeWords{"no", "early", "mild", "moderate", "severe"};

Grade clamped(int v) { return Grade(std::clamp(v, Grade::kMin, Grade::kMax)); }

template <typename Enum, std::size_t N>
Enum enum_from_string(const nlohmann::json& j, const char* field, const std::array<std::string_view, N>& names) {
  if (!j.contains(field)) {
    throw ValidationError(std::string(field) + ": missing key");
  }
  const auto& v = j.at(field);
  if (!v.is_string()) {
    throw ValidationError(std::string(field) + ": expected string");
  }
  const auto s = v.get<std::string>();
  for (std::size_t i = 0; i < N; ++i) {
    if (s == names[i]) {
      return static_cast<Enum>(i);
    }
  }
  throw ValidationError(std::string(field) + ": unknown value '" + s + "'");
}

Grade grade_from_json(const nlohmann::json& v, const std::string& path) {
  if (!v.is_number_integer()) {
    throw ValidationError(path + ": expected integer grade");
  }
  const auto raw = v.get<long long>();
  if (raw < Grade::kMin || raw > Grade::kMax) {
    throw ValidationError(path + ": grade out of range (" + std::to_string(raw) + ")");
  }
  return Grade(static_cast<int>(raw));
}

const nlohmann::json& require_object(const nlohmann::json& j, const char* field) {
  if (!j.contains(field)) {
    throw ValidationError(std::string(field) + ": missing key");
  }
  const auto& v = j.at(field);
  if (!v.is_object()) {
    throw ValidationError(std::string(field) + ": expected object");
  }
  return v;
}

template <typename Map, typename Sites>
Map grades_from_json(const nlohmann::json& j, const char* field, const Sites& sites) {
  const auto& obj = require_object(j, field);
  Map out;
  for (auto site : sites) {
    const std::string key(site_key(site));
    const std::string path = std::string(field) + "." + key;
    if (!obj.contains(key)) {
      throw ValidationError(path + ": missing key");
    }
    out[site] = grade_from_json(obj.at(key), path);
  }
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (auto site : sites) {
      known = known || key == site_key(site);
    }
    if (!known) {
      throw ValidationError(std::string(field) + "." + key + ": unknown compartment");
    }
  }
  return out;
}

template <typename Map, typename Sites>
Map flags_from_json(const nlohmann::json& j, const char* field, const Sites& sites) {
  const auto& obj = require_object(j, field);
  Map out;
  for (auto site : sites) {
    const std::string key(site_key(site));
    const std::string path = std::string(field) + "." + key;
    if (!obj.contains(key)) {
      throw ValidationError(path + ": missing key");
    }
    if (!obj.at(key).is_boolean()) {
      throw ValidationError(path + ": expected boolean");
    }
    out[site] = obj.at(key).get<bool>();
  }
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (auto site : sites) {
      known = known || key == site_key(site);
    }
    if (!known) {
      throw ValidationError(std::string(field) + "." + key + ": unknown compartment");
    }
  }
  return out;
}

template <typename Map, typename Sites>
nlohmann::json map_to_json(const Map& m, const Sites& sites) {
  nlohmann::json out = nlohmann::json::object();
  for (auto site : sites) {
    if constexpr (std::is_same_v<std::decay_t<decltype(m[site])>, bool>) {
      out[std::string(site_key(site))] = m[site];
    } else {
      out[std::string(site_key(site))] = m[site].value();
    }
  }
  return out;
}

}  // namespace

Grade::Grade(int value) {
  if (value < kMin || value > kMax) {
    throw ValidationError("grade out of range (" + std::to_string(value) + ")");
  }
  value_ = static_cast<std::uint8_t>(value);
}

std::string SeveritySignature::hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * bytes.size());
  for (auto b : bytes) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

const OaScoreRecord& validate_record(const OaScoreRecord& record) {
  if (record.id.empty()) {
    throw ValidationError("id: must be non-empty");
  }
  if (record.age < 0 || record.age > 120) {
    throw ValidationError("age: out of range (" + std::to_string(record.age) + ")");
  }
  if (static_cast<int>(record.side) > 1) {
    throw ValidationError("side: invalid enumerator");
  }
  if (static_cast<int>(record.sex) > 1) {
    throw ValidationError("sex: invalid enumerator");
  }
  if (static_cast<int>(record.alignment) > 2) {
    throw ValidationError("alignment: invalid enumerator");
  }
  return record;
}

std::string_view grade_word(Grade g) noexcept { return kGradeWords[static_cast<std::size_t>(g.value())]; }

Grade grade_from_word(std::string_view word) {
  for (std::size_t i = 0; i < kGradeWords.size(); ++i) {
    if (kGradeWords[i] == word) {
      return Grade(static_cast<int>(i));
    }
  }
  throw ValidationError("unknown severity word '" + std::string(word) + "'");
}

std::array<Grade, kGradeCount> all_grades(const OaScoreRecord& r) noexcept {
  return {r.kl,
          r.osteophytes[BoneSite::FemurMedial], r.osteophytes[BoneSite::FemurLateral],
          r.osteophytes[BoneSite::TibiaMedial], r.osteophytes[BoneSite::TibiaLateral],
          r.sclerosis[BoneSite::FemurMedial],   r.sclerosis[BoneSite::FemurLateral],
          r.sclerosis[BoneSite::TibiaMedial],   r.sclerosis[BoneSite::TibiaLateral],
          r.jsn[JointSite::JointMedial],        r.jsn[JointSite::JointLateral],
          r.attrition[TibiaSite::TibiaMedial],  r.attrition[TibiaSite::TibiaLateral]};
}

std::array<bool, kFlagCount> all_flags(const OaScoreRecord& r) noexcept {
  return {r.cysts[BoneSite::FemurMedial],  r.cysts[BoneSite::FemurLateral],
          r.cysts[BoneSite::TibiaMedial],  r.cysts[BoneSite::TibiaLateral],
          r.chondrocalcinosis[JointSite::JointMedial], r.chondrocalcinosis[JointSite::JointLateral]};
}

SeveritySignature severity_signature(const OaScoreRecord& record) noexcept {
  SeveritySignature sig;
  std::size_t i = 0;
  for (auto g : all_grades(record)) {
    sig.bytes[i++] = static_cast<std::uint8_t>(g.value());
  }
  for (auto f : all_flags(record)) {
    sig.bytes[i++] = f ? 1 : 0;
  }
  return sig;
}

OaScoreRecord sample_record(Rng& rng, std::string id) {
  OaScoreRecord r;
  r.id = std::move(id);
  r.kl = Grade(static_cast<int>(rng.uniform_int(0, 4)));
  const int kl = r.kl.value();
  auto coupled = [&] { return clamped(kl + static_cast<int>(rng.uniform_int(-1, 1))); };
  const double flag_p = 0.1 + 0.1 * kl;

  for (auto s : kBoneSites) r.osteophytes[s] = coupled();
  for (auto s : kBoneSites) r.sclerosis[s] = coupled();
  for (auto s : kJointSites) r.jsn[s] = coupled();
  for (auto s : kTibiaSites) r.attrition[s] = coupled();
  for (auto s : kBoneSites) r.cysts[s] = rng.bernoulli(flag_p);
  for (auto s : kJointSites) r.chondrocalcinosis[s] = rng.bernoulli(flag_p);

  r.side = static_cast<Side>(rng.uniform_int(0, 1));
  r.sex = static_cast<Sex>(rng.uniform_int(0, 1));
  r.alignment = static_cast<Alignment>(rng.uniform_int(0, 2));
  r.age = static_cast<int>(rng.uniform_int(45, 79));
  return r;
}

Grade distant_grade(Grade g, Rng& rng) {
  std::array<int, 5> candidates{};
  std::size_t n = 0;
  for (int v = Grade::kMin; v <= Grade::kMax; ++v) {
    if (std::abs(v - g.value()) >= 2) {
      candidates[n++] = v;
    }
  }
  return Grade(candidates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(n) - 1))]);
}

OaScoreRecord perturb_negative(const OaScoreRecord& record, Rng& rng) {
  OaScoreRecord neg = record;
  neg.id = record.id + "-neg";
  neg.kl = distant_grade(record.kl, rng);
  for (auto s : kBoneSites) neg.osteophytes[s] = distant_grade(record.osteophytes[s], rng);
  for (auto s : kBoneSites) neg.sclerosis[s] = distant_grade(record.sclerosis[s], rng);
  for (auto s : kJointSites) neg.jsn[s] = distant_grade(record.jsn[s], rng);
  for (auto s : kTibiaSites) neg.attrition[s] = distant_grade(record.attrition[s], rng);
  for (auto s : kBoneSites) neg.cysts[s] = rng.bernoulli(0.5) ? !record.cysts[s] : record.cysts[s];
  for (auto s : kJointSites) {
    neg.chondrocalcinosis[s] = rng.bernoulli(0.5) ? !record.chondrocalcinosis[s] : record.chondrocalcinosis[s];
  }
  return neg;
}

std::string_view to_string(Side s) noexcept { return s == Side::Left ? "left" : "right"; }
std::string_view to_string(Sex s) noexcept { return s == Sex::Male ? "male" : "female"; }

std::string_view to_string(Alignment a) noexcept {
  switch (a) {
    case Alignment::Varus: return "varus";
    case Alignment::Valgus: return "valgus";
    case Alignment::Neutral: return "neutral";
  }
  return "neutral";
}

std::string_view site_key(BoneSite s) noexcept {
  constexpr std::array<std::string_view, 4> keys{"fm", "fl", "tm", "tl"};
  return keys[static_cast<std::size_t>(s)];
}

std::string_view site_key(JointSite s) noexcept { return s == JointSite::JointMedial ? "jm" : "jl"; }
std::string_view site_key(TibiaSite s) noexcept { return s == TibiaSite::TibiaMedial ? "tm" : "tl"; }

std::string_view site_name(BoneSite s) noexcept {
  constexpr std::array<std::string_view, 4> names{"femur medial", "femur lateral", "tibia medial", "tibia lateral"};
  return names[static_cast<std::size_t>(s)];
}

std::string_view site_name(JointSite s) noexcept {
  return s == JointSite::JointMedial ? "joint medial" : "joint lateral";
}

std::string_view site_name(TibiaSite s) noexcept {
  return s == TibiaSite::TibiaMedial ? "tibia medial" : "tibia lateral";
}

BoneSite to_bone_site(TibiaSite s) noexcept {
  return s == TibiaSite::TibiaMedial ? BoneSite::TibiaMedial : BoneSite::TibiaLateral;
}

nlohmann::json record_to_json(const OaScoreRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["side"] = std::string(to_string(r.side));
  j["age"] = r.age;
  j["sex"] = std::string(to_string(r.sex));
  j["alignment"] = std::string(to_string(r.alignment));
  j["kl"] = r.kl.value();
  j["osteophytes"] = map_to_json(r.osteophytes, kBoneSites);
  j["sclerosis"] = map_to_json(r.sclerosis, kBoneSites);
  j["jsn"] = map_to_json(r.jsn, kJointSites);
  j["attrition"] = map_to_json(r.attrition, kTibiaSites);
  j["cysts"] = map_to_json(r.cysts, kBoneSites);
  j["chondrocalcinosis"] = map_to_json(r.chondrocalcinosis, kJointSites);
  return j;
}

OaScoreRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ValidationError("record: expected JSON object");
  }
  OaScoreRecord r;
  if (!j.contains("id")) {
    throw ValidationError("id: missing key");
  }
  if (!j.at("id").is_string()) {
    throw ValidationError("id: expected string");
  }
  r.id = j.at("id").get<std::string>();
  r.side = enum_from_string<Side>(j, "side", std::array<std::string_view, 2>{"left", "right"});
  if (!j.contains("age")) {
    throw ValidationError("age: missing key");
  }
  if (!j.at("age").is_number_integer()) {
    throw ValidationError("age: expected integer");
  }
  const auto age = j.at("age").get<long long>();
  if (age < 0 || age > 120) {
    throw ValidationError("age: out of range (" + std::to_string(age) + ")");
  }
  r.age = static_cast<int>(age);
  r.sex = enum_from_string<Sex>(j, "sex", std::array<std::string_view, 2>{"male", "female"});
  r.alignment = enum_from_string<Alignment>(j, "alignment",
                                            std::array<std::string_view, 3>{"varus", "valgus", "neutral"});
  if (!j.contains("kl")) {
    throw ValidationError("kl: missing key");
  }
  r.kl = grade_from_json(j.at("kl"), "kl");
  r.osteophytes = grades_from_json<BoneGrades>(j, "osteophytes", kBoneSites);
  r.sclerosis = grades_from_json<BoneGrades>(j, "sclerosis", kBoneSites);
  r.jsn = grades_from_json<JointGrades>(j, "jsn", kJointSites);
  r.attrition = grades_from_json<TibiaGrades>(j, "attrition", kTibiaSites);
  r.cysts = flags_from_json<BoneFlags>(j, "cysts", kBoneSites);
  r.chondrocalcinosis = flags_from_json<JointFlags>(j, "chondrocalcinosis", kJointSites);
  return validate_record(r);
}

}  // namespace oavl::scores
