// grace: dataset generation, training, evaluation and contact prediction.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>

#include "CLI11.hpp"
#include "grace/grace.hpp"

namespace fs = std::filesystem;
using namespace grace;

namespace {

constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string default_data_dir() {
  const char* env = std::getenv("GRACE_DATA_DIR");
  return env ? env : "";
}

ExperimentConfig load_experiment(const std::string& path) {
  if (path.empty()) return {};
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  return load_json_file<ExperimentConfig>(path);
}

fs::path require_dataset(const std::string& root) {
  if (root.empty()) throw UsageError("no dataset given (use --data or GRACE_DATA_DIR)");
  if (!fs::exists(fs::path(root) / io::kManifestName)) throw UsageError("dataset not found: " + root);
  return root;
}

std::pair<Index, Index> parse_size(const std::string& s) {
  static const std::regex re(R"((\d+)x(\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw UsageError("--image-size must look like HxW, got " + s);
  return {std::stoll(m[1]), std::stoll(m[2])};
}

struct GenerateArgs {
  std::string config, out, image_size = "224x224";
  Index num = 10, points = 6890;
  std::uint64_t seed = 0;
  int parts = kDefaultPartCount;
};

int run_generate(const GenerateArgs& a) {
  DatasetOptions opt;
  if (!a.config.empty()) {
    if (!fs::exists(a.config)) throw UsageError("config file not found: " + a.config);
    const Json j = Json::parse(std::ifstream(a.config));
    opt.sample.contact_epsilon = j.value("contact_epsilon", opt.sample.contact_epsilon);
    opt.test_fraction = j.value("test_fraction", opt.test_fraction);
  }
  const auto [h, w] = parse_size(a.image_size);
  opt.sample.image_height = h;
  opt.sample.image_width = w;
  opt.sample.n_points = a.points;
  opt.sample.parts = a.parts;
  opt.count = a.num;
  opt.seed = a.seed;
  if (a.points < kMinPoints) throw UsageError("--points must be at least " + std::to_string(kMinPoints));
  if (a.num <= 0) throw UsageError("--num must be positive");
  if (a.parts <= 0 || a.parts > 255) throw UsageError("--parts must be in [1, 255]");
  if (h <= 0 || w <= 0) throw UsageError("--image-size must be positive");
  const io::Manifest m = generate_dataset(a.out, opt);
  std::cout << "wrote " << m.samples.size() << " samples to " << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string config, data, out;
  Index steps = 0;
  bool deterministic = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int run_train(const TrainArgs& a) {
  ExperimentConfig cfg = load_experiment(a.config);
  if (!a.data.empty()) cfg.dataset = a.data;
  if (cfg.dataset.empty()) cfg.dataset = default_data_dir();
  require_dataset(cfg.dataset);
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.steps > 0) cfg.max_steps = a.steps;
  if (a.seed_set) cfg.seed = a.seed;
  cfg.deterministic = a.deterministic || cfg.deterministic;
  try {
    cfg.model.validate();
    cfg.loss.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  fs::create_directories(cfg.output_dir);
  save_json_file(cfg, (fs::path(cfg.output_dir) / "config.json").string());
  TrainCallbacks cb;
  cb.on_step = [&](const StepRecord& r) {
    if (cfg.log_every > 0 && r.step % cfg.log_every == 0)
      std::cout << "step " << r.step << " loss " << r.loss.total << " contact " << r.loss.contact << "\n";
  };
  const TrainResult r = train(cfg, cb);
  metrics::write_table(std::cout, r.train_report, false);
  std::cout << "checkpoint " << r.checkpoints.back().string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string config, data, checkpoint, split = "test", out;
  bool legacy = false, deterministic = false;
};

int run_eval(const EvalArgs& a) {
  const ExperimentConfig cfg = load_experiment(a.config);
  std::string data = a.data.empty() ? cfg.dataset : a.data;
  if (data.empty()) data = default_data_dir();
  const fs::path root = require_dataset(data);
  if (!fs::exists(a.checkpoint)) throw UsageError("checkpoint not found: " + a.checkpoint);
  auto model = load_checkpoint(a.checkpoint);
  const auto samples = io::load_dataset(root, a.split);
  const unsigned threads = a.deterministic ? 1u : std::max(1u, std::thread::hardware_concurrency());
  const metrics::MetricsReport report = evaluate(*model, samples, threads);
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    std::ofstream csv(fs::path(a.out) / "report.csv", std::ios::trunc);
    metrics::write_csv(csv, report, a.legacy);
    std::ofstream txt(fs::path(a.out) / "report.txt", std::ios::trunc);
    metrics::write_table(txt, report, a.legacy);
  }
  metrics::write_table(std::cout, report, a.legacy);
  return 0;
}

struct PredictArgs {
  std::string image, points, checkpoint, out = ".";
  bool no_ply = false;
};

int run_predict(const PredictArgs& a) {
  for (const auto& p : {a.image, a.points, a.checkpoint})
    if (!fs::exists(p)) throw UsageError("file not found: " + p);
  auto model = load_checkpoint(a.checkpoint);
  const ImageInput img = normalize_image(read_png(a.image));
  const HumanPointCloud cloud = io::read_points(a.points);
  const ContactPrediction pred = model->predict(img, cloud);
  fs::create_directories(a.out);
  io::write_probabilities(fs::path(a.out) / "contact.bin", pred.probs);
  if (!a.no_ply) io::write_ply(fs::path(a.out) / "contact.ply", cloud, pred);
  std::size_t hits = 0;
  for (auto b : pred.binary) hits += b;
  std::cout << hits << " of " << pred.binary.size() << " vertices in contact\n";
  return 0;
}

struct ExportArgs {
  std::string points, contact, out = "contact.ply";
  double threshold = 0.5;
};

int run_export(const ExportArgs& a) {
  for (const auto& p : {a.points, a.contact})
    if (!fs::exists(p)) throw UsageError("file not found: " + p);
  if (a.threshold < 0 || a.threshold > 1) throw UsageError("--threshold must be in [0, 1]");
  const HumanPointCloud cloud = io::read_points(a.points);
  const ColVector probs = io::read_probabilities(a.contact);
  if (probs.size() != cloud.size())
    throw std::runtime_error("contact file has " + std::to_string(probs.size()) + " values, cloud has " +
                             std::to_string(cloud.size()) + " points");
  io::write_ply(a.out, cloud, ContactPrediction::from_probs(probs, a.threshold));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grace: dense human-scene contact estimation"};
  app.require_subcommand(1);
  std::string config;

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic dataset");
  g->add_option("--config", gen.config, "JSON with contact_epsilon / test_fraction");
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--num", gen.num, "Number of samples");
  g->add_option("--seed", gen.seed, "Dataset seed");
  g->add_option("--parts", gen.parts, "Number of body parts J");
  g->add_option("--image-size", gen.image_size, "Image size HxW");
  g->add_option("--points", gen.points, "Points per cloud");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "Experiment config JSON");
  t->add_option("--data", tr.data, "Dataset root (default GRACE_DATA_DIR)");
  t->add_option("--out", tr.out, "Run directory");
  t->add_option("--steps", tr.steps, "Optimizer steps (overrides epochs)");
  t->add_option("--seed", tr.seed, "Shuffle seed")->each([&](const std::string&) { tr.seed_set = true; });
  t->add_flag("--deterministic", tr.deterministic, "Single-threaded, bit-reproducible");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  e->add_option("--config", ev.config, "Experiment config JSON");
  e->add_option("--data", ev.data, "Dataset root (default GRACE_DATA_DIR)");
  e->add_option("--checkpoint", ev.checkpoint, "Model checkpoint")->required();
  e->add_option("--split", ev.split, "train, test or all");
  e->add_option("--out", ev.out, "Directory for report.csv and report.txt");
  e->add_flag("--legacy-geo-err", ev.legacy, "Add the false-positive-only geo.err columns");
  e->add_flag("--deterministic", ev.deterministic, "Evaluate on one thread");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Predict contact for one image and point cloud");
  p->add_option("--config", config, "Unused; accepted for uniformity");
  p->add_option("--image", pr.image, "RGB PNG")->required();
  p->add_option("--points", pr.points, "points.bin")->required();
  p->add_option("--checkpoint", pr.checkpoint, "Model checkpoint")->required();
  p->add_option("--out", pr.out, "Output directory");
  p->add_flag("--no-ply", pr.no_ply, "Skip the PLY export");
  p->add_flag("--deterministic", "Accepted for uniformity; prediction is always deterministic");

  ExportArgs ex;
  auto* x = app.add_subcommand("export-contact", "Write a colored PLY from points and contact probabilities");
  x->add_option("--config", config, "Unused; accepted for uniformity");
  x->add_option("--points", ex.points, "points.bin")->required();
  x->add_option("--contact", ex.contact, "contact.bin")->required();
  x->add_option("--out", ex.out, "PLY path");
  x->add_option("--threshold", ex.threshold, "Contact threshold");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr);
    if (*e) return run_eval(ev);
    if (*p) return run_predict(pr);
    if (*x) return run_export(ex);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsageError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
