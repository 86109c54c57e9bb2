#include "oavl/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "oavl/errors.hpp"
#include "oavl/rng.hpp"

namespace oavl::synth {

using scores::BoneSite;
using scores::JointSite;
using scores::OaScoreRecord;
using scores::Side;
using scores::TibiaSite;

namespace {

constexpr float kBackground = 0.05F;
constexpr float kBone = 0.55F;
constexpr float kBright = 0.9F;
constexpr double kSclerosisStep = 0.12;
constexpr double kCystDelta = -0.5;
constexpr double kSpeckleProbability = 0.2;

constexpr std::uint64_t kSpeckleStream = 11;
constexpr std::uint64_t kShiftStream = 12;
constexpr std::uint64_t kNoiseStream = 13;

struct Rect {
  int r0, r1, c0, c1;  // half-open
};

bool is_medial(BoneSite s) { return s == BoneSite::FemurMedial || s == BoneSite::TibiaMedial; }
bool is_femur(BoneSite s) { return s == BoneSite::FemurMedial || s == BoneSite::FemurLateral; }
bool is_medial(JointSite s) { return s == JointSite::JointMedial; }
bool is_medial(TibiaSite s) { return s == TibiaSite::TibiaMedial; }

// All shapes are computed in the left-knee frame (medial on the left half);
// right knees are mirrored afterwards.
class Layout {
 public:
  Layout(const OaScoreRecord& r, const Geometry& g) : r_(r), g_(g) {}

  std::pair<int, int> half_cols(bool medial) const {
    return medial ? std::pair{0, g_.half} : std::pair{g_.half, g_.width};
  }

  int tibia_top(bool medial) const {
    const auto site = medial ? JointSite::JointMedial : JointSite::JointLateral;
    return g_.tibia_top - g_.rows(2.0 * r_.jsn[site].value());
  }

  int tibia_bottom(bool medial) const {
    const auto site = medial ? TibiaSite::TibiaMedial : TibiaSite::TibiaLateral;
    return g_.tibia_end - g_.rows(r_.attrition[site].value());
  }

  Rect spur(BoneSite s) const {
    const int w = g_.cols(2.0 * r_.osteophytes[s].value());
    const int h = g_.rows(3.0);
    const bool medial = is_medial(s);
    const int c0 = medial ? 0 : g_.width - w;
    if (is_femur(s)) {
      return {g_.femur_end, g_.femur_end + h, c0, c0 + w};
    }
    const int top = tibia_top(medial);
    return {top - h, top, c0, c0 + w};
  }

  Rect sclerosis_strip(BoneSite s) const {
    const int h = g_.rows(4.0);
    const auto [c0, c1] = half_cols(is_medial(s));
    if (is_femur(s)) {
      return {g_.femur_end - h, g_.femur_end, c0, c1};
    }
    const int top = tibia_top(is_medial(s));
    return {top, top + h, c0, c1};
  }

  Rect narrowing(JointSite s) const {
    const auto [c0, c1] = half_cols(is_medial(s));
    return {tibia_top(is_medial(s)), g_.tibia_top, c0, c1};
  }

  Rect gap(JointSite s) const {
    const auto [c0, c1] = half_cols(is_medial(s));
    return {g_.femur_end, tibia_top(is_medial(s)), c0, c1};
  }

  Rect thinning(TibiaSite s) const {
    const auto [c0, c1] = half_cols(is_medial(s));
    return {tibia_bottom(is_medial(s)), g_.tibia_end, c0, c1};
  }

  // Center (row, col) and radius of the cyst disk.
  std::array<double, 3> cyst(BoneSite s) const {
    const auto [c0, c1] = half_cols(is_medial(s));
    const double row = is_femur(s) ? (g_.femur_top + g_.femur_end - 1) / 2.0 : (g_.tibia_top + g_.tibia_end - 1) / 2.0;
    const double col = (c0 + c1 - 1) / 2.0;
    const double radius = 3.0 * std::min(g_.height / 64.0, g_.width / 64.0);
    return {row, col, radius};
  }

 private:
  const OaScoreRecord& r_;
  const Geometry& g_;
};

class Canvas {
 public:
  Canvas(int h, int w, float fill) : h_(h), w_(w), px_(static_cast<std::size_t>(h * w), fill) {}

  template <typename F>
  void each(const Rect& r, F&& f) {
    for (int row = std::max(r.r0, 0); row < std::min(r.r1, h_); ++row) {
      for (int col = std::max(r.c0, 0); col < std::min(r.c1, w_); ++col) {
        f(px_[static_cast<std::size_t>(row * w_ + col)]);
      }
    }
  }

  void fill(const Rect& r, float v) {
    each(r, [v](float& p) { p = v; });
  }

  void add(const Rect& r, double v) {
    each(r, [v](float& p) { p = static_cast<float>(p + v); });
  }

  template <typename F>
  void each_in_disk(const std::array<double, 3>& disk, F&& f) {
    const auto [cr, cc, rad] = disk;
    for (int row = 0; row < h_; ++row) {
      for (int col = 0; col < w_; ++col) {
        const double dr = row - cr;
        const double dc = col - cc;
        if (dr * dr + dc * dc <= rad * rad) {
          f(px_[static_cast<std::size_t>(row * w_ + col)]);
        }
      }
    }
  }

  std::vector<float>& pixels() { return px_; }

 private:
  int h_, w_;
  std::vector<float> px_;
};

template <typename T>
void mirror_columns(std::vector<T>& px, int h, int w) {
  for (int row = 0; row < h; ++row) {
    auto* line = px.data() + static_cast<std::ptrdiff_t>(row * w);
    std::reverse(line, line + w);
  }
}

std::string item_id(std::size_t i) {
  std::ostringstream os;
  os << "knee-" << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

}  // namespace

void SynthConfig::validate() const {
  if (height < 32 || width < 32) {
    throw ValidationError("synth: height and width must be >= 32");
  }
  if (!(noise_sigma >= 0.0)) {
    throw ValidationError("synth: noise_sigma must be >= 0");
  }
  if (max_shift < 0) {
    throw ValidationError("synth: max_shift must be >= 0");
  }
}

Geometry Geometry::for_size(int height, int width) {
  Geometry g{height, width, 0, 0, 0, 0, 0};
  g.femur_top = g.rows(14);
  g.femur_end = g.rows(26);
  g.tibia_top = g.rows(38);
  g.tibia_end = g.rows(50);
  g.half = g.cols(32);
  return g;
}

int Geometry::rows(double px64) const { return static_cast<int>(std::lround(px64 * height / 64.0)); }
int Geometry::cols(double px64) const { return static_cast<int>(std::lround(px64 * width / 64.0)); }

SynthImage render_image(const OaScoreRecord& record, const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const auto g = Geometry::for_size(cfg.height, cfg.width);
  const Layout layout(record, g);
  Canvas canvas(g.height, g.width, kBackground);

  canvas.fill({g.femur_top, g.femur_end, 0, g.width}, kBone);
  for (bool medial : {true, false}) {
    const auto [c0, c1] = layout.half_cols(medial);
    canvas.fill({layout.tibia_top(medial), layout.tibia_bottom(medial), c0, c1}, kBone);
  }
  for (auto s : scores::kBoneSites) {
    canvas.add(layout.sclerosis_strip(s), kSclerosisStep * record.sclerosis[s].value());
  }
  for (auto s : scores::kBoneSites) {
    if (record.cysts[s]) {
      canvas.each_in_disk(layout.cyst(s), [](float& p) { p = static_cast<float>(p + kCystDelta); });
    }
  }
  for (auto s : scores::kBoneSites) {
    if (record.osteophytes[s].value() > 0) {
      canvas.fill(layout.spur(s), kBright);
    }
  }
  Rng speckles(seed, kSpeckleStream);
  for (auto s : scores::kJointSites) {
    if (record.chondrocalcinosis[s]) {
      canvas.each(layout.gap(s), [&](float& p) {
        if (speckles.bernoulli(kSpeckleProbability)) {
          p = kBright;
        }
      });
    }
  }

  auto& px = canvas.pixels();
  if (record.side == Side::Right) {
    mirror_columns(px, g.height, g.width);
  }

  SynthImage out{g.height, g.width, std::vector<float>(px.size(), kBackground)};
  Rng shift_rng(seed, kShiftStream);
  const int dy = static_cast<int>(shift_rng.uniform_int(-cfg.max_shift, cfg.max_shift));
  const int dx = static_cast<int>(shift_rng.uniform_int(-cfg.max_shift, cfg.max_shift));
  Rng noise(seed, kNoiseStream);
  for (int row = 0; row < g.height; ++row) {
    for (int col = 0; col < g.width; ++col) {
      const int sr = row - dy;
      const int sc = col - dx;
      double v = kBackground;
      if (sr >= 0 && sr < g.height && sc >= 0 && sc < g.width) {
        v = px[static_cast<std::size_t>(sr * g.width + sc)];
      }
      if (cfg.noise_sigma > 0.0) {
        v += cfg.noise_sigma * noise.normal();
      }
      out.at(row, col) = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split split_from_string(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ValidationError("split: unknown value '" + std::string(s) + "'");
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == s) {
      out.push_back(&e);
    }
  }
  return out;
}

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& ratios) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 || std::abs(sum - 1.0) > 1e-6) {
    throw ValidationError("ratios: must be non-negative and sum to 1");
  }
  const auto dn = static_cast<double>(n);
  const auto train = static_cast<std::size_t>(std::floor(dn * ratios.train + 1e-9));
  const auto val = std::min(n - train, static_cast<std::size_t>(std::floor(dn * ratios.val + 1e-9)));
  return {train, val, n - train - val};
}

DatasetManifest generate_dataset(std::size_t n, const SynthConfig& cfg, const SplitRatios& ratios,
                                 const std::filesystem::path& out_dir, unsigned threads) {
  cfg.validate();
  if (n < 10) {
    throw ValidationError("synth: n must be >= 10");
  }
  const auto counts = split_counts(n, ratios);

  std::error_code ec;
  std::filesystem::create_directories(out_dir / "images", ec);
  if (ec) {
    throw IoError("cannot create " + (out_dir / "images").string() + ": " + ec.message());
  }

  DatasetManifest manifest;
  manifest.entries.resize(n);

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    order[i] = i;
  }
  Rng split_rng(cfg.seed, 0x5311);
  split_rng.shuffle(order);
  for (std::size_t k = 0; k < n; ++k) {
    const Split s = k < counts[0] ? Split::Train : (k < counts[0] + counts[1] ? Split::Val : Split::Test);
    manifest.entries[order[k]].split = s;
  }

  auto produce = [&](std::size_t i) {
    const std::uint64_t item_seed = cfg.seed ^ static_cast<std::uint64_t>(i);
    Rng record_rng(item_seed, 1);
    auto& e = manifest.entries[i];
    e.record = scores::sample_record(record_rng, item_id(i));
    e.image_path = "images/" + e.record.id + ".pgm";
    write_pgm(render_image(e.record, cfg, item_seed), out_dir / e.image_path);
  };

  const unsigned workers = std::max(1U, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) {
      produce(i);
    }
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < n; i += workers) {
            produce(i);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) {
      t.join();
    }
    for (auto& e : errors) {
      if (e) {
        std::rethrow_exception(e);
      }
    }
  }

  write_manifest(manifest, out_dir / "manifest.jsonl");
  return manifest;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  for (const auto& e : manifest.entries) {
    auto j = scores::record_to_json(e.record);
    j["image_path"] = e.image_path;
    j["split"] = std::string(to_string(e.split));
    out << j.dump() << '\n';
  }
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open manifest " + path.string());
  }
  DatasetManifest manifest;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line.find_first_not_of(" \t") == std::string::npos) {
      continue;
    }
    const auto where = "line " + std::to_string(line_no) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& err) {
      throw ValidationError(where + "malformed JSON (" + err.what() + ")");
    }
    ManifestEntry e;
    try {
      e.record = scores::record_from_json(j);
      if (!j.contains("image_path") || !j.at("image_path").is_string()) {
        throw ValidationError("image_path: missing key");
      }
      e.image_path = j.at("image_path").get<std::string>();
      if (!j.contains("split") || !j.at("split").is_string()) {
        throw ValidationError("split: missing key");
      }
      e.split = split_from_string(j.at("split").get<std::string>());
    } catch (const ValidationError& err) {
      throw ValidationError(where + err.what());
    }
    if (!ids.insert(e.record.id).second) {
      throw ValidationError(where + "id: duplicate id '" + e.record.id + "'");
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

void write_pgm(const SynthImage& image, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << "P5\n" << image.width << ' ' << image.height << "\n65535\n";
  std::vector<unsigned char> buf;
  buf.reserve(image.pixels.size() * 2);
  for (float v : image.pixels) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(static_cast<double>(v), 0.0, 1.0) * 65535.0));
    buf.push_back(static_cast<unsigned char>(q >> 8));
    buf.push_back(static_cast<unsigned char>(q & 0xFF));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

SynthImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open image " + path.string());
  }
  std::string magic;
  int width = 0;
  int height = 0;
  int maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (!in || magic != "P5" || width <= 0 || height <= 0 || maxval != 65535) {
    throw IoError("not a 16-bit binary PGM: " + path.string());
  }
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> buf(static_cast<std::size_t>(width * height) * 2);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw IoError("truncated PGM: " + path.string());
  }
  SynthImage img{height, width, std::vector<float>(static_cast<std::size_t>(width * height))};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const unsigned q = (static_cast<unsigned>(buf[2 * i]) << 8) | buf[2 * i + 1];
    img.pixels[i] = static_cast<float>(q / 65535.0);
  }
  return img;
}

const SynthImage& LoadedDataset::image_of(const ManifestEntry& entry) const {
  const auto i = static_cast<std::size_t>(&entry - manifest.entries.data());
  if (i >= images.size()) {
    throw ValidationError("dataset: entry " + entry.record.id + " does not belong to this dataset");
  }
  return images[i];
}

LoadedDataset load_dataset(const std::filesystem::path& manifest_path) {
  LoadedDataset ds;
  ds.manifest = read_manifest(manifest_path);
  const auto root = manifest_path.parent_path();
  ds.images.reserve(ds.manifest.entries.size());
  for (const auto& e : ds.manifest.entries) {
    const std::filesystem::path p(e.image_path);
    ds.images.push_back(read_pgm(p.is_absolute() ? p : root / p));
    const auto& first = ds.images.front();
    if (ds.images.back().height != first.height || ds.images.back().width != first.width) {
      throw ValidationError("dataset: image " + e.image_path + " differs in size from the first image");
    }
  }
  return ds;
}

std::size_t GroundTruthRegion::area() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

GroundTruthRegion ground_truth_region(const OaScoreRecord& record, FeatureLocator feature, const SynthConfig& cfg) {
  cfg.validate();
  const auto g = Geometry::for_size(cfg.height, cfg.width);
  const Layout layout(record, g);
  Canvas canvas(g.height, g.width, 0.0F);
  auto absent = [] { return ValidationError("feature absent"); };

  switch (feature.kind) {
    case FeatureKind::Osteophytes: {
      const auto s = scores::kBoneSites.at(static_cast<std::size_t>(feature.site));
      if (record.osteophytes[s].value() == 0) throw absent();
      canvas.fill(layout.spur(s), 1.0F);
      break;
    }
    case FeatureKind::Sclerosis: {
      const auto s = scores::kBoneSites.at(static_cast<std::size_t>(feature.site));
      if (record.sclerosis[s].value() == 0) throw absent();
      canvas.fill(layout.sclerosis_strip(s), 1.0F);
      break;
    }
    case FeatureKind::Jsn: {
      const auto s = scores::kJointSites.at(static_cast<std::size_t>(feature.site));
      if (record.jsn[s].value() == 0) throw absent();
      canvas.fill(layout.narrowing(s), 1.0F);
      break;
    }
    case FeatureKind::Attrition: {
      const auto s = scores::kTibiaSites.at(static_cast<std::size_t>(feature.site));
      if (record.attrition[s].value() == 0) throw absent();
      canvas.fill(layout.thinning(s), 1.0F);
      break;
    }
    case FeatureKind::Cysts: {
      const auto s = scores::kBoneSites.at(static_cast<std::size_t>(feature.site));
      if (!record.cysts[s]) throw absent();
      canvas.each_in_disk(layout.cyst(s), [](float& p) { p = 1.0F; });
      break;
    }
    case FeatureKind::Chondrocalcinosis: {
      const auto s = scores::kJointSites.at(static_cast<std::size_t>(feature.site));
      if (!record.chondrocalcinosis[s]) throw absent();
      canvas.fill(layout.gap(s), 1.0F);
      break;
    }
  }

  auto& px = canvas.pixels();
  if (record.side == Side::Right) {
    mirror_columns(px, g.height, g.width);
  }
  GroundTruthRegion region{feature, g.height, g.width, std::vector<std::uint8_t>(px.size(), 0)};
  const int d = cfg.max_shift;
  for (int row = 0; row < g.height; ++row) {
    for (int col = 0; col < g.width; ++col) {
      if (px[static_cast<std::size_t>(row * g.width + col)] == 0.0F) {
        continue;
      }
      for (int r = std::max(0, row - d); r <= std::min(g.height - 1, row + d); ++r) {
        for (int c = std::max(0, col - d); c <= std::min(g.width - 1, col + d); ++c) {
          region.mask[static_cast<std::size_t>(r * g.width + c)] = 1;
        }
      }
    }
  }
  return region;
}

}  // namespace oavl::synth
