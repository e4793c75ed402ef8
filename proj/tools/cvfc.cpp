// Command-line front end: synth, train, infer, eval, gradcheck.
//
// Exit codes: 0 success, 1 validation or I/O error, 2 numerical or check failure.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cvfc/data.hpp"
#include "cvfc/evaluation.hpp"
#include "cvfc/gradcheck_suite.hpp"
#include "cvfc/training.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kUsage = 1;
constexpr int kNumeric = 2;

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::string> class_names_for(std::size_t count) {
  if (count == cvfc::kDefaultClassNames.size()) return cvfc::kDefaultClassNames;
  std::vector<std::string> names;
  for (std::size_t k = 1; k <= count; ++k) names.push_back("class" + std::to_string(k));
  return names;
}

struct SynthArgs {
  std::string out;
  std::size_t count = 0;
  std::size_t size = 48;
  std::uint64_t seed = 0;
  std::size_t classes = 3;
};

int run_synth(const SynthArgs& a) {
  const auto patches = cvfc::synth_generate(a.seed, a.count, a.size, a.classes);
  cvfc::write_dataset(a.out, patches, class_names_for(a.classes));
  std::cout << json{{"event", "synth"}, {"out", a.out}, {"count", a.count}, {"size", a.size}, {"seed", a.seed}}.dump()
            << '\n';
  return kOk;
}

struct TrainArgs {
  std::string config;
  std::string data;
  std::string out;
  std::string resume;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::size_t> batch_size;
};

int run_train(const TrainArgs& a) {
  cvfc::TrainConfig cfg = cvfc::TrainConfig::load(a.config);
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.seed) cfg.seed = *a.seed;
  if (a.lr) cfg.lr = *a.lr;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  cfg.model.seed = cfg.seed;
  cfg.validate();

  const auto manifest = cvfc::load_dataset_auto(a.data, cfg.model.class_names);
  if (manifest.class_names != cfg.model.class_names) {
    throw cvfc::ConfigError("dataset classes do not match config class_names");
  }
  const auto patches = cvfc::load_patches(manifest, cfg.image_size);
  if (patches.empty()) throw cvfc::TrainError("dataset " + a.data + " contains no patches");

  cvfc::Trainer trainer(cfg);
  if (!a.resume.empty()) trainer.restore(cvfc::Checkpoint::load(a.resume));
  try {
    trainer.train(patches, [&](const cvfc::EpochLog& log) {
      std::cout << log.to_json_line() << '\n' << std::flush;
      trainer.checkpoint().save(a.out);
    });
  } catch (const cvfc::NonFiniteLossError& e) {
    std::cout << json{{"event", "non_finite_loss"},
                      {"epoch", trainer.epoch() + 1},
                      {"breakdown", json::parse(cvfc::breakdown_json(e.snapshot()), nullptr, false)}}
                     .dump()
              << '\n';
    std::cerr << "error: " << e.what() << '\n';
    return kNumeric;
  }
  trainer.checkpoint().save(a.out);
  return kOk;
}

struct InferArgs {
  std::string ckpt;
  std::string images;
  std::string out;
  double threshold = cvfc::kDefaultBgThreshold;
  bool use_labels = false;
};

int run_infer(const InferArgs& a) {
  if (!(a.threshold >= 0.0 && a.threshold < 1.0)) throw cvfc::ArgumentError("--threshold must lie in [0,1)");
  const cvfc::Checkpoint ck = cvfc::Checkpoint::load(a.ckpt);
  auto net = cvfc::model_from_checkpoint(ck);
  const auto& names = net->config().class_names;

  std::vector<cvfc::LabeledPatch> patches;
  std::vector<std::string> out_names;
  if (fs::exists(fs::path(a.images) / "manifest.json")) {
    cvfc::DatasetManifest m = cvfc::load_dataset(a.images, cvfc::DatasetMode::manifest, names);
    for (auto& e : m.entries) e.mask.reset();
    patches = cvfc::load_patches(m);
    for (const auto& e : m.entries) out_names.push_back(e.image.filename().string());
  } else {
    if (!fs::is_directory(a.images)) throw cvfc::IngestError("image directory " + a.images + " does not exist");
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.images)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      cvfc::LabeledPatch p;
      p.image = cvfc::from_rgb(cvfc::read_rgb_png(f));
      p.id = f.stem().string();
      try {
        p.label = cvfc::parse_bracket_label(f.filename().string(), names.size());
      } catch (const cvfc::ParseError&) {
        if (a.use_labels) throw;
      }
      patches.push_back(std::move(p));
      out_names.push_back(f.filename().string());
    }
  }
  fs::create_directories(a.out);
  const cvfc::Palette palette = cvfc::default_palette(names.size());
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const auto masks = cvfc::infer_pseudo_labels(*net, std::span(&patches[i], 1), a.threshold, a.use_labels);
    cvfc::write_mask_png(fs::path(a.out) / out_names[i], masks[0], palette);
  }
  std::cout << json{{"event", "infer"}, {"images", patches.size()}, {"out", a.out}}.dump() << '\n';
  return kOk;
}

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string classes = "tumor,stroma,normal";
  std::string json_path;
};

int run_eval(const EvalArgs& a) {
  const auto names = split_names(a.classes);
  if (names.empty()) throw cvfc::ArgumentError("--classes must name at least one class");
  const cvfc::EvalReport r = cvfc::evaluate_directories(a.pred, a.gt, names);
  std::cout << r.table();
  if (!a.json_path.empty()) {
    std::ofstream f(a.json_path);
    if (!f) throw cvfc::IoError("cannot write " + a.json_path);
    f << r.to_json() << '\n';
  }
  return kOk;
}

int run_gradcheck(std::uint64_t seed, const std::string& fault) {
  if (!fault.empty()) cvfc::testing::set_backward_fault(fault);
  const auto start = std::chrono::steady_clock::now();
  const auto reports = cvfc::run_gradcheck_suite(seed);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  bool ok = true;
  for (const auto& r : reports) {
    json line{{"op", r.op}, {"max_rel_err", r.max_rel_err}, {"probes", r.probes}, {"passed", r.passed}};
    if (!r.failure.empty()) line["failure"] = r.failure;
    std::cout << line.dump() << '\n';
    ok = ok && r.passed;
  }
  std::cout << json{{"event", "gradcheck"}, {"checked", reports.size()}, {"passed", ok}, {"seconds", seconds}}.dump()
            << '\n';
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-view feature consistency pseudo-mask toolkit"};
  app.require_subcommand(1, 1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--count", synth.count, "Number of patches")->required()->check(CLI::PositiveNumber);
  s->add_option("--size", synth.size, "Patch side in pixels")->check(CLI::Range(16, 4096));
  s->add_option("--seed", synth.seed, "Generator seed");
  s->add_option("--classes", synth.classes, "Number of tissue classes")->check(CLI::Range(1, 255));

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train a model and write a checkpoint");
  t->add_option("--config", train.config, "Config JSON")->required();
  t->add_option("--data", train.data, "Dataset directory")->required();
  t->add_option("--out", train.out, "Checkpoint path")->required();
  t->add_option("--resume", train.resume, "Checkpoint to continue from");
  t->add_option("--epochs", train.epochs, "Override epochs");
  t->add_option("--seed", train.seed, "Override seed");
  t->add_option("--lr", train.lr, "Override learning rate");
  t->add_option("--batch-size", train.batch_size, "Override batch size");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Write pseudo-masks for a directory of images");
  i->add_option("--ckpt", infer.ckpt, "Checkpoint")->required();
  i->add_option("--images", infer.images, "Image directory or dataset root")->required();
  i->add_option("--out", infer.out, "Output mask directory")->required();
  i->add_option("--threshold", infer.threshold, "Background threshold in [0,1)");
  i->add_flag("--use-labels", infer.use_labels, "Gate classes by image-level labels instead of predicted scores");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score predicted masks against ground truth");
  e->add_option("--pred", eval.pred, "Predicted mask directory")->required();
  e->add_option("--gt", eval.gt, "Ground-truth mask directory")->required();
  e->add_option("--classes", eval.classes, "Comma-separated class names");
  e->add_option("--json", eval.json_path, "Write a JSON report here");

  std::uint64_t gc_seed = 0;
  std::string fault;
  auto* g = app.add_subcommand("gradcheck", "Run the gradient-check suite");
  g->add_option("--seed", gc_seed, "Probe seed");
  g->add_option("--inject-fault", fault, "Corrupt the backward pass of one op")->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::cerr << "error: " << ex.what() << "\n\n" << app.help();
    return kUsage;
  }

  try {
    if (s->parsed()) return run_synth(synth);
    if (t->parsed()) return run_train(train);
    if (i->parsed()) return run_infer(infer);
    if (e->parsed()) return run_eval(eval);
    if (g->parsed()) return run_gradcheck(gc_seed, fault);
  } catch (const cvfc::NumericError& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kNumeric;
  } catch (const cvfc::Error& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kUsage;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
