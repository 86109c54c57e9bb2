// oavl: dataset synthesis, captioning, training, evaluation and checkpoint
// inspection from one binary. Data goes to files; diagnostics go to stderr.

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "oavl/caption_engine.hpp"
#include "oavl/checkpoint.hpp"
#include "oavl/errors.hpp"
#include "oavl/evaluation.hpp"
#include "oavl/synth_data.hpp"
#include "oavl/training.hpp"

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// Every key a --config file may carry, with its default. Paths have none.
json default_config() {
  const oavl::training::TrainConfig t;
  const oavl::synth::SynthConfig s;
  return {
      {"n", 2472},
      {"height", s.height},
      {"width", s.width},
      {"noise_sigma", s.noise_sigma},
      {"max_shift", s.max_shift},
      {"seed", 0},
      {"threads", 1},
      {"epochs", t.epochs},
      {"batch_size", t.batch_size},
      {"lr_image", t.lr_image},
      {"lr_text", t.lr_text},
      {"lr_projection", t.lr_projection},
      {"weight_decay", t.weight_decay},
      {"lambda", t.lambda},
      {"shuffle_prob", t.shuffle_prob},
      {"include_zero_grades", t.include_zero_grades},
      {"k", 10},
      {"random_draws", 1000},
      {"split", "test"},
      {"manifest", nullptr},
      {"checkpoint", nullptr},
      {"out", nullptr},
      {"out_dir", nullptr},
      {"report", nullptr},
      {"id", nullptr},
      {"prompt", nullptr},
  };
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw oavl::IoError("cannot open config " + path);
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw oavl::ValidationError("config " + path + ": " + e.what());
  }
  if (!j.is_object()) {
    throw oavl::ValidationError("config " + path + ": expected a JSON object");
  }
  const auto defaults = default_config();
  for (const auto& [key, value] : j.items()) {
    if (!defaults.contains(key)) {
      throw oavl::ValidationError("config " + path + ": unknown key '" + key + "'");
    }
  }
  return j;
}

// Flag values registered against config keys; a flag given on the command
// line overrides the config file, which overrides the defaults.
class Settings {
 public:
  void bind_string(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = strings_[key];
    options_.emplace_back(key, app->add_option(flag, slot, help));
  }
  void bind_int(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = ints_[key];
    options_.emplace_back(key, app->add_option(flag, slot, help));
  }
  void bind_double(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = doubles_[key];
    options_.emplace_back(key, app->add_option(flag, slot, help));
  }
  void bind_bool(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto& slot = bools_[key];
    options_.emplace_back(key, app->add_option(flag, slot, help));
  }

  json resolve(const std::string& config_path) const {
    json cfg = default_config();
    if (!config_path.empty()) {
      const json file = load_config_file(config_path);
      for (const auto& [key, value] : file.items()) {
        cfg[key] = value;
      }
    }
    for (const auto& [key, opt] : options_) {
      if (opt->count() == 0) {
        continue;
      }
      if (auto it = strings_.find(key); it != strings_.end()) cfg[key] = it->second;
      else if (auto i = ints_.find(key); i != ints_.end()) cfg[key] = i->second;
      else if (auto d = doubles_.find(key); d != doubles_.end()) cfg[key] = d->second;
      else if (auto b = bools_.find(key); b != bools_.end()) cfg[key] = b->second;
    }
    return cfg;
  }

 private:
  std::vector<std::pair<std::string, CLI::Option*>> options_;
  std::map<std::string, std::string> strings_;
  std::map<std::string, std::int64_t> ints_;
  std::map<std::string, double> doubles_;
  std::map<std::string, bool> bools_;
};

std::string require_path(const json& cfg, const std::string& key) {
  if (!cfg.contains(key) || cfg.at(key).is_null()) {
    throw oavl::ValidationError("missing required setting '" + key + "'");
  }
  if (!cfg.at(key).is_string()) {
    throw oavl::ValidationError(key + ": expected a path string");
  }
  return cfg.at(key).get<std::string>();
}

template <typename T>
T get(const json& cfg, const std::string& key) {
  try {
    return cfg.at(key).get<T>();
  } catch (const json::exception&) {
    throw oavl::ValidationError(key + ": wrong type in configuration");
  }
}

oavl::training::TrainConfig train_config(const json& cfg) {
  json t = oavl::training::TrainConfig{}.to_json();
  for (auto& [key, value] : t.items()) {
    value = cfg.at(key);
  }
  auto tc = oavl::training::TrainConfig::from_json(t);
  tc.validate();
  return tc;
}

oavl::synth::SynthConfig synth_config(const json& cfg) {
  oavl::synth::SynthConfig s;
  s.height = get<int>(cfg, "height");
  s.width = get<int>(cfg, "width");
  s.noise_sigma = get<double>(cfg, "noise_sigma");
  s.max_shift = get<int>(cfg, "max_shift");
  s.seed = get<std::uint64_t>(cfg, "seed");
  s.validate();
  return s;
}

oavl::synth::Split split_setting(const json& cfg) { return oavl::synth::split_from_string(get<std::string>(cfg, "split")); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw oavl::IoError("cannot write " + path.string());
  }
  out << text;
  if (!out) {
    throw oavl::IoError("write failed: " + path.string());
  }
}

int run_synth(const json& cfg) {
  const auto out_dir = require_path(cfg, "out_dir");
  const auto s = synth_config(cfg);
  const auto n = get<std::int64_t>(cfg, "n");
  if (n < 10) {
    throw oavl::ValidationError("n: must be >= 10");
  }
  const auto threads = static_cast<unsigned>(std::max<std::int64_t>(1, get<std::int64_t>(cfg, "threads")));
  const auto manifest = oavl::synth::generate_dataset(static_cast<std::size_t>(n), s, {}, out_dir, threads);
  oavl::synth::write_manifest(manifest, fs::path(out_dir) / "manifest.jsonl");
  std::cerr << "synth: wrote " << manifest.entries.size() << " images to " << out_dir << "\n";
  return 0;
}

int run_captions(const json& cfg) {
  const auto manifest = oavl::synth::read_manifest(require_path(cfg, "manifest"));
  const bool zero = get<bool>(cfg, "include_zero_grades");
  std::ostringstream out;
  for (const auto& e : manifest.entries) {
    for (auto kind : oavl::captions::kTemplateKinds) {
      const auto c = oavl::captions::render_caption(e.record, kind, zero);
      json line{{"id", e.record.id},
                {"template", std::string(oavl::captions::to_string(kind))},
                {"text", c.text},
                {"signature", c.signature.hex()}};
      out << line.dump() << '\n';
    }
  }
  write_text(require_path(cfg, "out"), out.str());
  return 0;
}

int run_train(const json& cfg) {
  const auto manifest_path = require_path(cfg, "manifest");
  const auto out = require_path(cfg, "out");
  const auto tc = train_config(cfg);
  const auto data = oavl::synth::load_dataset(manifest_path);
  auto result = oavl::training::fit(data, tc, [&](const oavl::training::EpochStats& e) {
    std::cerr << "epoch " << e.epoch << "/" << tc.epochs << "  total " << std::fixed << std::setprecision(4)
              << e.total << "  infonce " << e.info_nce << "  negative " << e.negative << "  val_acc "
              << e.val_accuracy << "  tau " << e.temperature << "\n";
  });
  oavl::training::save_checkpoint(result.checkpoint, out);
  if (cfg.contains("report") && !cfg.at("report").is_null()) {
    write_text(require_path(cfg, "report"), result.report.to_json().dump(2) + "\n");
  }
  return 0;
}

struct EvalInputs {
  oavl::synth::LoadedDataset data;
  oavl::model::DualEncoder<float> model;
  std::vector<const oavl::synth::ManifestEntry*> entries;
  std::string checkpoint;
};

EvalInputs load_eval_inputs(const json& cfg) {
  const auto ckpt_path = require_path(cfg, "checkpoint");
  auto ckpt = oavl::training::load_checkpoint(ckpt_path);
  auto data = oavl::synth::load_dataset(require_path(cfg, "manifest"));
  auto model = oavl::training::model_from_checkpoint(ckpt);
  EvalInputs in{std::move(data), std::move(model), {}, ckpt_path};
  in.entries = in.data.manifest.split(split_setting(cfg));
  return in;
}

oavl::eval::EvalReport base_report(EvalInputs& in) {
  oavl::eval::EvalReport report;
  report.checkpoint = fs::path(in.checkpoint).filename().string();
  report.zero_shot = oavl::eval::evaluate_zero_shot(in.model, in.data, in.entries);
  for (const auto* e : in.entries) {
    report.ids.push_back(e->record.id);
    report.true_labels.push_back(e->record.kl.value());
  }
  return report;
}

int run_eval_zero_shot(const json& cfg) {
  auto in = load_eval_inputs(cfg);
  const auto report = base_report(in);
  oavl::eval::export_report(report, require_path(cfg, "out"));
  std::cerr << "zero-shot accuracy " << report.zero_shot.accuracy() << " on " << report.zero_shot.total
            << " images\n";
  return 0;
}

int run_eval_retrieval(const json& cfg) {
  auto in = load_eval_inputs(cfg);
  auto report = base_report(in);
  const auto k = get<std::int64_t>(cfg, "k");
  if (k < 1) {
    throw oavl::ValidationError("k: must be >= 1");
  }
  if (!in.entries.empty() && static_cast<std::size_t>(k) > in.entries.size()) {
    throw oavl::ValidationError("k: exceeds the caption pool size " + std::to_string(in.entries.size()));
  }
  report.has_retrieval = true;
  report.retrieval = oavl::eval::evaluate_retrieval(in.model, in.data, in.entries, static_cast<std::size_t>(k),
                                                    get<std::size_t>(cfg, "random_draws"),
                                                    get<std::uint64_t>(cfg, "seed"));
  oavl::eval::export_report(report, require_path(cfg, "out"));
  std::cerr << "retrieval mean top-1 BLEU-4 " << report.retrieval.mean_top1_bleu << " (random "
            << report.retrieval.random_baseline_bleu << ")\n";
  return 0;
}

int run_saliency(const json& cfg) {
  auto in = load_eval_inputs(cfg);
  const auto id = require_path(cfg, "id");
  const oavl::synth::ManifestEntry* entry = nullptr;
  for (const auto& e : in.data.manifest.entries) {
    if (e.record.id == id) {
      entry = &e;
    }
  }
  if (entry == nullptr) {
    throw oavl::ValidationError("id: no manifest entry '" + id + "'");
  }
  const std::string prompt = cfg.at("prompt").is_string() ? cfg.at("prompt").get<std::string>()
                                                          : oavl::eval::osteophyte_prompt(entry->record);
  const auto& image = in.data.image_of(*entry);
  oavl::eval::SaliencyExample ex{oavl::eval::grad_cam(in.model, image, prompt, id), image, 0.0};
  oavl::synth::SynthConfig s;
  s.height = image.height;
  s.width = image.width;
  const auto region = oavl::eval::osteophyte_region(entry->record, s);
  if (region.area() > 0) {
    ex.localization = oavl::eval::localization_score(ex.map, region);
  }
  oavl::eval::EvalReport report;
  report.checkpoint = fs::path(in.checkpoint).filename().string();
  report.saliency.push_back(std::move(ex));
  oavl::eval::export_report(report, require_path(cfg, "out"));
  return 0;
}

int run_inspect(const std::string& path) {
  const auto ckpt = oavl::training::load_checkpoint(path);
  std::cout << "format " << oavl::training::kCheckpointVersion << ", " << ckpt.tensors.size() << " tensors, epoch "
            << oavl::training::checkpoint_epoch(ckpt) << "\n";
  for (const auto& t : ckpt.tensors) {
    std::ostringstream dims;
    for (std::size_t i = 0; i < t.dims.size(); ++i) {
      dims << (i ? "x" : "") << t.dims[i];
    }
    char crc[16];
    std::snprintf(crc, sizeof crc, "%08x", t.crc32());
    std::cout << t.name << '\t' << (t.dtype == oavl::training::DType::Float32 ? "f32" : "bytes") << '\t'
              << dims.str() << '\t' << crc << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"oavl: knee osteoarthritis vision-language toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON settings; explicit flags take precedence");
  Settings settings;
  settings.bind_int(&app, "--threads", "threads", "worker threads for data preparation (1 = deterministic)");

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  settings.bind_int(synth, "--n", "n", "number of images");
  settings.bind_int(synth, "--seed", "seed", "dataset seed");
  settings.bind_string(synth, "--out-dir", "out_dir", "output directory");
  settings.bind_int(synth, "--height", "height", "image height");
  settings.bind_int(synth, "--width", "width", "image width");
  settings.bind_double(synth, "--noise-sigma", "noise_sigma", "pixel noise");
  settings.bind_int(synth, "--max-shift", "max_shift", "maximum translation in pixels");

  auto* caps = app.add_subcommand("captions", "render the caption bag of every record as JSONL");
  settings.bind_string(caps, "--manifest", "manifest", "manifest.jsonl");
  settings.bind_string(caps, "--out", "out", "output JSONL");
  settings.bind_bool(caps, "--include-zero-grades", "include_zero_grades", "emit 'no ...' clauses");

  auto* train = app.add_subcommand("train", "train the dual encoder");
  settings.bind_string(train, "--manifest", "manifest", "manifest.jsonl");
  settings.bind_string(train, "--out", "out", "checkpoint path");
  settings.bind_string(train, "--report", "report", "training report JSON");
  settings.bind_int(train, "--epochs", "epochs", "epochs");
  settings.bind_int(train, "--batch-size", "batch_size", "batch size");
  settings.bind_double(train, "--lr-image", "lr_image", "image encoder learning rate");
  settings.bind_double(train, "--lr-text", "lr_text", "text encoder learning rate");
  settings.bind_double(train, "--lr-projection", "lr_projection", "projection learning rate");
  settings.bind_double(train, "--weight-decay", "weight_decay", "decoupled weight decay");
  settings.bind_double(train, "--lambda", "lambda", "negative-caption loss weight");
  settings.bind_double(train, "--shuffle-prob", "shuffle_prob", "sentence shuffle probability");
  settings.bind_bool(train, "--include-zero-grades", "include_zero_grades", "emit 'no ...' clauses");
  settings.bind_int(train, "--seed", "seed", "training seed");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->require_subcommand(1);
  auto* zero_shot = eval->add_subcommand("zero-shot", "zero-shot KL grading");
  auto* retrieval = eval->add_subcommand("retrieval", "image-to-caption retrieval scored by BLEU-4");
  for (auto* sub : {zero_shot, retrieval}) {
    settings.bind_string(sub, "--checkpoint", "checkpoint", "checkpoint path");
    settings.bind_string(sub, "--manifest", "manifest", "manifest.jsonl");
    settings.bind_string(sub, "--out", "out", "output directory");
    settings.bind_string(sub, "--split", "split", "train, val or test");
  }
  settings.bind_int(retrieval, "--k", "k", "ranks reported");
  settings.bind_int(retrieval, "--random-draws", "random_draws", "draws for the random baseline");
  settings.bind_int(retrieval, "--seed", "seed", "baseline seed");

  auto* saliency = app.add_subcommand("saliency", "Grad-CAM map for one image and prompt");
  settings.bind_string(saliency, "--checkpoint", "checkpoint", "checkpoint path");
  settings.bind_string(saliency, "--manifest", "manifest", "manifest.jsonl");
  settings.bind_string(saliency, "--id", "id", "record id");
  settings.bind_string(saliency, "--prompt", "prompt", "prompt text (default: the osteophyte sentence)");
  settings.bind_string(saliency, "--out", "out", "output directory");

  auto* inspect = app.add_subcommand("inspect", "print tensor names, shapes and checksums");
  std::string inspect_path;
  inspect->add_option("checkpoint", inspect_path, "checkpoint path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, std::cerr, std::cerr);
    return code == 0 ? 0 : 1;
  }

  try {
    if (inspect->parsed()) {
      return run_inspect(inspect_path);
    }
    const json cfg = settings.resolve(config_path);
    if (synth->parsed()) return run_synth(cfg);
    if (caps->parsed()) return run_captions(cfg);
    if (train->parsed()) return run_train(cfg);
    if (zero_shot->parsed()) return run_eval_zero_shot(cfg);
    if (retrieval->parsed()) return run_eval_retrieval(cfg);
    if (saliency->parsed()) return run_saliency(cfg);
    std::cerr << app.help();
    return 1;
  } catch (const oavl::IoError& e) {
    std::cerr << "oavl: " << e.what() << "\n";
    return 2;
  } catch (const oavl::Error& e) {
    std::cerr << "oavl: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "oavl: " << e.what() << "\n";
    return 1;
  }
}
