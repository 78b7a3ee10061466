#pragma once

// Optimizer, training loop, evaluation and checkpoints.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "grace/config.hpp"
#include "grace/io.hpp"
#include "grace/losses.hpp"
#include "grace/metrics.hpp"
#include "grace/model.hpp"

namespace grace {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- optimizer

/// Adam with decoupled weight decay over the trainable entries of a store.
class Adam {
 public:
  Adam(nn::ParamStore& store, const OptimizerConfig& cfg) : store_(&store), cfg_(cfg) {
    for (const auto& e : store.entries()) {
      if (!e.trainable) continue;
      m_.push_back(Matrix::Zero(e.var.rows(), e.var.cols()));
      v_.push_back(Matrix::Zero(e.var.rows(), e.var.cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1 - std::pow(b2, static_cast<double>(t_));
    std::size_t k = 0;
    for (auto& e : store_->entries()) {
      if (!e.trainable) continue;
      Matrix& m = m_[k];
      Matrix& v = v_[k];
      ++k;
      if (!e.var.has_grad()) continue;
      const Matrix& g = e.var.grad();
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g.cwiseProduct(g);
      Matrix& w = e.var.mutable_value();
      if (cfg_.weight_decay > 0) w *= 1 - lr * cfg_.weight_decay;
      w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg_.epsilon);
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  nn::ParamStore* store_;
  OptimizerConfig cfg_;
  std::vector<Matrix> m_, v_;
  std::int64_t t_ = 0;
};

/// Learning rate at `step` of `total`.
inline double learning_rate(const OptimizerConfig& cfg, Index step, Index total) {
  if (cfg.schedule == LrSchedule::kConstant || total <= 1) return cfg.learning_rate;
  const double t = static_cast<double>(step) / static_cast<double>(total - 1);
  const double cosine = 0.5 * (1 + std::cos(std::numbers::pi * t));
  return cfg.learning_rate * (cfg.min_lr_ratio + (1 - cfg.min_lr_ratio) * cosine);
}

// ---------------------------------------------------------------- checkpoints

inline constexpr std::array<char, 4> kCheckpointMagic{'G', 'R', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}
  const unsigned char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw std::runtime_error("checkpoint truncated");
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data()) + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() { return io::detail::get_u32(take(4)); }
  std::uint64_t u64() { return get_u64(take(8)); }
  std::string str(std::size_t n) {
    const auto* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Binary checkpoint: magic, version, config hash, model config JSON, then
/// every store entry (name, shape, float64 values) in registration order.
inline void save_checkpoint(const fs::path& path, const GraceNet& model) {
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  io::detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, config_hash(model.config()));
  const std::string cfg = Json(model.config()).dump();
  io::detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  const auto& entries = model.params().entries();
  io::detail::put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    io::detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    out.push_back(e.trainable ? 1 : 0);
    const Matrix& v = e.var.value();
    io::detail::put_u32(out, static_cast<std::uint32_t>(v.rows()));
    io::detail::put_u32(out, static_cast<std::uint32_t>(v.cols()));
    for (Index i = 0; i < v.size(); ++i) detail::put_u64(out, std::bit_cast<std::uint64_t>(v.data()[i]));
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::detail::write_file(path, out);
}

struct CheckpointHeader {
  std::uint64_t hash = 0;
  ModelConfig config;
};

namespace detail {

inline CheckpointHeader read_header(Reader& r) {
  if (std::memcmp(r.take(4), kCheckpointMagic.data(), 4) != 0) throw std::runtime_error("not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  CheckpointHeader h;
  h.hash = r.u64();
  const std::uint32_t len = r.u32();
  h.config = Json::parse(r.str(len)).get<ModelConfig>();
  if (config_hash(h.config) != h.hash) throw std::runtime_error("checkpoint config hash mismatch");
  return h;
}

inline void read_entries(Reader& r, GraceNet& model) {
  auto& entries = model.params().entries();
  const std::uint32_t count = r.u32();
  if (count != entries.size()) throw std::runtime_error("checkpoint incompatible: parameter count differs");
  for (auto& e : entries) {
    const std::uint32_t len = r.u32();
    const std::string name = r.str(len);
    if (name != e.name) throw std::runtime_error("checkpoint incompatible: expected " + e.name + ", found " + name);
    r.take(1);
    const Index rows = r.u32();
    const Index cols = r.u32();
    Matrix& v = e.var.mutable_value();
    if (rows != v.rows() || cols != v.cols()) throw std::runtime_error("checkpoint incompatible: shape of " + name);
    for (Index i = 0; i < v.size(); ++i) v.data()[i] = std::bit_cast<double>(r.u64());
  }
  if (!r.done()) throw std::runtime_error("checkpoint has trailing bytes");
}

}  // namespace detail

/// Rebuilds the model described by the checkpoint and loads its weights.
inline std::unique_ptr<GraceNet> load_checkpoint(const fs::path& path) {
  detail::Reader r(io::detail::read_file(path));
  const CheckpointHeader h = detail::read_header(r);
  auto model = std::make_unique<GraceNet>(h.config);
  detail::read_entries(r, *model);
  return model;
}

/// Loads weights into an existing model; the architectures must match.
inline void load_checkpoint_into(const fs::path& path, GraceNet& model) {
  detail::Reader r(io::detail::read_file(path));
  const CheckpointHeader h = detail::read_header(r);
  if (h.hash != config_hash(model.config()))
    throw std::runtime_error("checkpoint incompatible: model config hash differs");
  detail::read_entries(r, model);
}

// ---------------------------------------------------------------- evaluation

inline metrics::GeodesicIndex topology_index(const ContactSample& s) {
  if (s.topology) return metrics::GeodesicIndex::from_mesh(s.cloud.points, *s.topology);
  return metrics::GeodesicIndex::from_knn(s.cloud.points);
}

inline metrics::SampleMetrics evaluate_sample(const ContactSample& s, const ContactPrediction& pred) {
  const auto index = topology_index(s);
  metrics::SampleMetrics m;
  m.id = s.id;
  m.vertices = s.cloud.size();
  m.topology = index.kind();
  m.detection = metrics::detection_metrics(pred.binary, s.contact.contact);
  m.geo = metrics::geo_sum(pred.binary, s.contact.contact, index);
  return m;
}

/// Metrics of `model` over `samples`. Results do not depend on `threads`.
inline metrics::MetricsReport evaluate(GraceNet& model, const std::vector<ContactSample>& samples,
                                       unsigned threads = 1) {
  if (samples.empty()) throw std::runtime_error("empty split");
  metrics::MetricsReport report;
  report.per_sample.resize(samples.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < samples.size(); i = next++) {
      try {
        const auto pred = model.predict(samples[i].image, samples[i].cloud);
        report.per_sample[i] = evaluate_sample(samples[i], pred);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(samples.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  report.finalize();
  return report;
}

// ---------------------------------------------------------------- training

struct StepLoss {
  double total = 0;
  double contact = 0;
  double part = 0;
  bool has_part = false;
};

/// Loss of one sample with the graph attached, ready for backward.
struct SampleLoss {
  ag::Var total;
  StepLoss values;
};

inline SampleLoss sample_loss(GraceNet& model, const ContactSample& s, const LossConfig& cfg) {
  const ForwardResult r = model.forward(s.image, s.cloud, true);
  const ag::Var lc = losses::contact_loss_with_logits(r.logits, s.contact.contact, cfg);
  ag::Var lp;
  if (r.part_logits.defined()) lp = losses::part_loss(r.part_logits, s.part_mask);
  SampleLoss out;
  out.total = losses::total_loss(lc, lp, cfg);
  out.values.total = out.total.item();
  out.values.contact = lc.item();
  out.values.has_part = lp.defined();
  out.values.part = lp.defined() ? lp.item() : 0.0;
  return out;
}

struct StepRecord {
  Index step = 0;
  Index epoch = 0;
  StepLoss loss;
  double lr = 0;
  double elapsed_s = 0;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  std::vector<fs::path> checkpoints;
  metrics::MetricsReport train_report;
};

struct TrainCallbacks {
  /// Called after every optimizer step.
  std::function<void(const StepRecord&)> on_step;
};

inline Index total_steps(const ExperimentConfig& cfg, std::size_t n_samples) {
  if (cfg.max_steps > 0) return cfg.max_steps;
  const Index per_epoch = (static_cast<Index>(n_samples) + cfg.batch_size - 1) / cfg.batch_size;
  return per_epoch * cfg.epochs;
}

namespace detail {

inline Json step_json(const StepRecord& r) {
  Json j{{"step", r.step},        {"epoch", r.epoch}, {"loss", r.loss.total}, {"contact_loss", r.loss.contact},
         {"lr", r.lr},            {"elapsed_s", r.elapsed_s}};
  j["part_loss"] = r.loss.has_part ? Json(r.loss.part) : Json(nullptr);
  return j;
}

inline void nan_dump(const fs::path& dir, Index step, const std::vector<std::string>& batch, const GraceNet& model,
                     const StepLoss& loss) {
  Json j;
  j["step"] = step;
  j["batch"] = batch;
  j["loss"] = {{"total", std::isfinite(loss.total) ? Json(loss.total) : Json("nan")},
               {"contact", std::isfinite(loss.contact) ? Json(loss.contact) : Json("nan")}};
  Json norms = Json::object();
  for (const auto& e : model.params().entries()) {
    const double n = e.var.value().norm();
    norms[e.name] = std::isfinite(n) ? Json(n) : Json("nan");
  }
  j["parameter_norms"] = norms;
  fs::create_directories(dir);
  std::ofstream(dir / "nan_dump.json") << j.dump(2) << "\n";
}

}  // namespace detail

/// Trains `model` on `samples`. Batches come from a per-epoch shuffle seeded
/// by `cfg.seed`; writes checkpoints and a JSONL log when `cfg.output_dir` is
/// non-empty.
inline TrainResult train(GraceNet& model, const std::vector<ContactSample>& samples, const ExperimentConfig& cfg,
                         const TrainCallbacks& callbacks = {}) {
  if (samples.empty()) throw std::runtime_error("empty split");
  if (cfg.batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  cfg.loss.validate();
  const bool write = !cfg.output_dir.empty();
  const fs::path out_dir(cfg.output_dir);
  std::ofstream log;
  if (write) {
    fs::create_directories(out_dir);
    log.open(out_dir / "train_log.jsonl", std::ios::trunc);
  }

  TrainResult result;
  Adam opt(model.params(), cfg.optimizer);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());
  std::size_t cursor = order.size();
  Index epoch = -1;
  const Index total = total_steps(cfg, samples.size());
  const auto start = std::chrono::steady_clock::now();

  for (Index step = 0; step < total; ++step) {
    std::vector<std::size_t> batch;
    while (static_cast<Index>(batch.size()) < std::min<Index>(cfg.batch_size, static_cast<Index>(samples.size()))) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        cursor = 0;
        ++epoch;
      }
      batch.push_back(order[cursor++]);
    }

    model.params().zero_grad();
    StepLoss mean;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (std::size_t b : batch) {
      SampleLoss l = sample_loss(model, samples[b], cfg.loss);
      ag::backward(ag::scale(l.total, inv));
      mean.total += l.values.total * inv;
      mean.contact += l.values.contact * inv;
      mean.part += l.values.part * inv;
      mean.has_part = l.values.has_part;
    }
    if (!std::isfinite(mean.total)) {
      std::vector<std::string> ids;
      for (std::size_t b : batch) ids.push_back(samples[b].id);
      if (write) detail::nan_dump(out_dir, step, ids, model, mean);
      throw std::runtime_error("non-finite loss at step " + std::to_string(step) +
                               (write ? "; diagnostics in " + (out_dir / "nan_dump.json").string() : ""));
    }
    const double lr = learning_rate(cfg.optimizer, step, total);
    opt.step(lr);

    StepRecord rec;
    rec.step = step;
    rec.epoch = epoch;
    rec.loss = mean;
    rec.lr = lr;
    rec.elapsed_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.steps.push_back(rec);
    if (callbacks.on_step) callbacks.on_step(rec);
    if (write && (cfg.log_every <= 1 || step % cfg.log_every == 0 || step + 1 == total))
      log << detail::step_json(rec).dump() << "\n" << std::flush;
    if (write && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < total) {
      const fs::path p = out_dir / ("step_" + std::to_string(step + 1) + ".ckpt");
      save_checkpoint(p, model);
      result.checkpoints.push_back(p);
    }
  }

  const unsigned threads = cfg.deterministic ? 1u : std::max(1u, std::thread::hardware_concurrency());
  result.train_report = evaluate(model, samples, threads);
  if (write) {
    const fs::path p = out_dir / "model.ckpt";
    save_checkpoint(p, model);
    result.checkpoints.push_back(p);
    std::ofstream csv(out_dir / "train_report.csv", std::ios::trunc);
    metrics::write_csv(csv, result.train_report, false);
  }
  return result;
}

/// Config-driven entry point: loads the dataset, builds the model, trains.
inline TrainResult train(const ExperimentConfig& cfg, const TrainCallbacks& callbacks = {}) {
  cfg.model.validate();
  if (cfg.dataset.empty() || !fs::exists(cfg.dataset)) throw std::runtime_error("dataset not found: " + cfg.dataset);
  const auto samples = io::load_dataset(cfg.dataset, cfg.train_split);
  GraceNet model(cfg.model);
  return train(model, samples, cfg, callbacks);
}

}  // namespace grace
