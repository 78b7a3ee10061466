#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "grace/autograd.hpp"

namespace grace::nn {

using Rng = std::mt19937_64;
using ag::Var;

/// Named, ordered collection of trainable parameters and non-trainable
/// buffers. Iteration order is registration order, which fixes the
/// checkpoint layout.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Var var;
    bool trainable;
  };

  Var& add_parameter(const std::string& name, Matrix init) {
    ensure_unique(name);
    entries_.push_back({name, Var::parameter(std::move(init)), true});
    return entries_.back().var;
  }

  Var& add_buffer(const std::string& name, Matrix init) {
    ensure_unique(name);
    entries_.push_back({name, Var::constant(std::move(init)), false});
    return entries_.back().var;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += static_cast<std::size_t>(e.var.value().size());
    return n;
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  void zero_grad() {
    for (auto& e : entries_) e.var.zero_grad();
  }

 private:
  void ensure_unique(const std::string& name) const {
    if (find(name)) throw std::logic_error("duplicate parameter name: " + name);
  }

  // std::deque-like stability is not needed: Vars share nodes, so copies held
  // by layers stay valid when the vector reallocates.
  std::vector<Entry> entries_;
};

enum class Init { kHe, kXavier, kZero };

inline Matrix init_weight(Index out, Index in, Init init, Rng& rng) {
  if (init == Init::kZero) return Matrix::Zero(out, in);
  const double fan_in = static_cast<double>(in);
  const double fan_out = static_cast<double>(out);
  const double bound = init == Init::kHe ? std::sqrt(6.0 / fan_in) : std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix w(out, in);
  for (Index j = 0; j < in; ++j)
    for (Index i = 0; i < out; ++i) w(i, j) = dist(rng);
  return w;
}

/// Pointwise affine map on (in x n) feature columns.
class Linear {
 public:
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, Index in, Index out, Rng& rng,
         Init init = Init::kHe, bool bias = true)
      : weight_(store.add_parameter(name + ".weight", init_weight(out, in, init, rng))) {
    if (bias) bias_ = store.add_parameter(name + ".bias", Matrix::Zero(out, 1));
  }

  Var operator()(const Var& x) const {
    Var y = ag::matmul(weight_, x);
    return bias_.defined() ? ag::add_bias(y, bias_) : y;
  }

  Index in_features() const { return weight_.cols(); }
  Index out_features() const { return weight_.rows(); }
  Var& weight() { return weight_; }
  Var& bias() { return bias_; }

 private:
  Var weight_;
  Var bias_;
};

/// Stack of Linear layers with ReLU between them. `final_relu` also
/// activates the last layer.
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, const std::vector<Index>& widths, Rng& rng,
      bool final_relu = false, Init last_init = Init::kHe)
      : final_relu_(final_relu) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp needs at least input and output widths");
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const bool last = i + 2 == widths.size();
      layers_.emplace_back(store, name + "." + std::to_string(i), widths[i], widths[i + 1], rng,
                           last ? last_init : Init::kHe);
    }
  }

  Var operator()(Var x) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](x);
      if (i + 1 < layers_.size() || final_relu_) x = ag::relu(x);
    }
    return x;
  }

  std::vector<Linear>& layers() { return layers_; }
  Index out_features() const { return layers_.back().out_features(); }

 private:
  std::vector<Linear> layers_;
  bool final_relu_ = false;
};

/// 2D convolution on (C x H*W) images via im2col.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, Index in_ch, Index out_ch, Index kernel,
         Index stride, Rng& rng, ag::PadMode pad_mode = ag::PadMode::kZero, Init init = Init::kHe)
      : in_ch_(in_ch), kernel_(kernel), stride_(stride), pad_mode_(pad_mode),
        weight_(store.add_parameter(name + ".weight",
                                    init_weight(out_ch, in_ch * kernel * kernel, init, rng))),
        bias_(store.add_parameter(name + ".bias", Matrix::Zero(out_ch, 1))) {}

  /// Returns the output and writes the output spatial size.
  Var operator()(const Var& x, Index height, Index width, Index* out_h = nullptr,
                 Index* out_w = nullptr) const {
    ag::ConvGeometry geo{in_ch_, height, width, kernel_, stride_, kernel_ / 2, pad_mode_};
    if (out_h) *out_h = geo.out_height();
    if (out_w) *out_w = geo.out_width();
    Var cols = kernel_ == 1 && stride_ == 1 ? x : ag::im2col(x, geo);
    return ag::add_bias(ag::matmul(weight_, cols), bias_);
  }

  Var& weight() { return weight_; }
  Var& bias() { return bias_; }
  Index out_channels() const { return weight_.rows(); }
  Index stride() const { return stride_; }

 private:
  Index in_ch_ = 0;
  Index kernel_ = 3;
  Index stride_ = 1;
  ag::PadMode pad_mode_ = ag::PadMode::kZero;
  Var weight_;
  Var bias_;
};

/// Per-channel batch normalization with running statistics.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(ParamStore& store, const std::string& name, Index channels, double momentum = 0.1,
            double eps = 1e-5)
      : momentum_(momentum), eps_(eps),
        gamma_(store.add_parameter(name + ".gamma", Matrix::Ones(channels, 1))),
        beta_(store.add_parameter(name + ".beta", Matrix::Zero(channels, 1))),
        running_mean_(store.add_buffer(name + ".running_mean", Matrix::Zero(channels, 1))),
        running_var_(store.add_buffer(name + ".running_var", Matrix::Ones(channels, 1))) {}

  Var operator()(const Var& x, bool training) {
    ColVector mean, var;
    Var y = ag::batch_norm(x, gamma_, beta_, training, running_mean_.value().col(0),
                           running_var_.value().col(0), eps_, &mean, &var);
    if (training) {
      const double n = static_cast<double>(x.cols());
      const ColVector unbiased = n > 1 ? ColVector(var * (n / (n - 1))) : var;
      running_mean_.mutable_value() = (1 - momentum_) * running_mean_.value() + momentum_ * mean;
      running_var_.mutable_value() = (1 - momentum_) * running_var_.value() + momentum_ * unbiased;
    }
    return y;
  }

 private:
  double momentum_ = 0.1;
  double eps_ = 1e-5;
  Var gamma_;
  Var beta_;
  Var running_mean_;
  Var running_var_;
};

}  // namespace grace::nn
