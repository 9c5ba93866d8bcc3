#ifndef MICRONET_TRAIN_HPP
#define MICRONET_TRAIN_HPP

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "micronet/errors.hpp"
#include "micronet/graph.hpp"
#include "micronet/metrics.hpp"
#include "micronet/rng.hpp"
#include "micronet/tensor.hpp"

namespace micronet {

struct TrainingConfig {
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 0.00005;
  int batch_size = 2;
  int epochs = 20;
  uint64_t seed = 0;
  std::string checkpoint_path;

  void validate() const {
    if (learning_rate < 0 || momentum < 0 || weight_decay < 0) {
      throw ParamError("training rates must be non-negative");
    }
    if (batch_size < 1) throw ParamError("batch_size must be >= 1");
    if (epochs < 0) throw ParamError("epochs must be non-negative");
  }
};

// One velocity buffer per parameter tensor.
template <typename T>
struct OptimizerState {
  std::vector<Tensor<T>> velocity;

  template <typename G>
  static OptimizerState init(const LayerGraph<G>& g) {
    OptimizerState s;
    s.velocity.reserve(g.params.size());
    for (const auto& p : g.params) s.velocity.push_back(Tensor<T>(p.n(), p.c(), p.h(), p.w()));
    return s;
  }
};

// Zero-mean Gaussian with variance 2/fan_in.
template <typename T>
void he_init(Tensor<T>& t, int fan_in, Rng& rng) {
  if (fan_in <= 0) throw ParamError("he_init: fan_in must be positive");
  const double stddev = std::sqrt(2.0 / fan_in);
  for (int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(stddev * rng.gaussian());
}

template <typename T>
void init_params(LayerGraph<T>& g, Rng& rng) {
  for (size_t i = 0; i < g.params.size(); ++i) he_init(g.params[i], g.param_fan_in[i], rng);
}

template <typename T>
struct LossResult {
  double loss = 0;
  Tensor<T> grad_logits;  // (probs - onehot) / (N*H*W)
};

namespace detail {

template <typename T>
inline double clamped_log(T a) {
  const double lo = 1e-12;
  return std::log(std::max(static_cast<double>(a), lo));
}

}  // namespace detail

// Categorical cross-entropy of softmax output against one-hot targets,
// averaged over batch and pixels. The returned gradient is with respect to
// the pre-softmax logits.
template <typename T>
LossResult<T> cross_entropy_loss(const Tensor<T>& probs, const Tensor<T>& onehot) {
  if (!probs.same_shape(onehot)) throw ShapeError("cross_entropy_loss: shape mismatch");
  const int64_t c = probs.c(), hw = probs.h() * probs.w();
  const double scale = 1.0 / (static_cast<double>(probs.n()) * hw);
  LossResult<T> res;
  res.grad_logits = Tensor<T>::zeros_like(probs);
  double loss = 0;
  for (int64_t n = 0; n < probs.n(); ++n) {
    const T* a = probs.data() + n * c * hw;
    const T* y = onehot.data() + n * c * hw;
    T* g = res.grad_logits.data() + n * c * hw;
    for (int64_t p = 0; p < hw; ++p) {
      double ysum = 0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double yv = static_cast<double>(y[ch * hw + p]);
        if (yv != 0.0 && yv != 1.0) {
          throw ValidationError("labels must be one-hot (found " + std::to_string(yv) + ")");
        }
        ysum += yv;
        if (yv == 1.0) loss -= detail::clamped_log(a[ch * hw + p]);
        g[ch * hw + p] = static_cast<T>((a[ch * hw + p] - y[ch * hw + p]) * scale);
      }
      if (ysum != 1.0) {
        throw ValidationError("labels must be one-hot (channel sum " + std::to_string(ysum) +
                              " at pixel " + std::to_string(p) + ")");
      }
    }
  }
  res.loss = loss * scale;
  return res;
}

// Same loss against integer category labels (expanded on the fly).
template <typename T>
LossResult<T> cross_entropy_from_labels(const Tensor<T>& probs,
                                        const std::vector<uint8_t>& labels) {
  const int64_t c = probs.c(), hw = probs.h() * probs.w();
  if (static_cast<int64_t>(labels.size()) != probs.n() * hw) {
    throw ShapeError("cross_entropy_from_labels: label count does not match batch*pixels");
  }
  const double scale = 1.0 / (static_cast<double>(probs.n()) * hw);
  LossResult<T> res;
  res.grad_logits = Tensor<T>::zeros_like(probs);
  double loss = 0;
  for (int64_t n = 0; n < probs.n(); ++n) {
    const T* a = probs.data() + n * c * hw;
    T* g = res.grad_logits.data() + n * c * hw;
    for (int64_t p = 0; p < hw; ++p) {
      const int y = labels[n * hw + p];
      if (y < 0 || y >= c) throw ValidationError("label out of range at pixel " + std::to_string(p));
      loss -= detail::clamped_log(a[y * hw + p]);
      for (int64_t ch = 0; ch < c; ++ch) {
        g[ch * hw + p] = static_cast<T>((a[ch * hw + p] - (ch == y ? T{1} : T{0})) * scale);
      }
    }
  }
  res.loss = loss * scale;
  return res;
}

// Classical SGD with momentum and coupled weight decay:
//   g' = g + wd*w;  v <- m*v - lr*g';  w <- w + v.
template <typename T>
void sgd_step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads,
              OptimizerState<T>& state, const TrainingConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.velocity.size()) {
    throw ShapeError("sgd_step: parameter/gradient/state count mismatch");
  }
  const T lr = static_cast<T>(cfg.learning_rate);
  const T m = static_cast<T>(cfg.momentum);
  const T wd = static_cast<T>(cfg.weight_decay);
  for (size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p];
    const auto& g = grads[p];
    auto& v = state.velocity[p];
    if (!w.same_shape(g) || !w.same_shape(v)) throw ShapeError("sgd_step: tensor shape mismatch");
    for (int64_t i = 0; i < w.size(); ++i) {
      const T gp = g[i] + wd * w[i];
      v[i] = m * v[i] - lr * gp;
      w[i] += v[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "MNCK", version u16, metadata text block, tensor
// directory (name, dtype, dims) with packed data. Writes are atomic
// (temp file + rename).

namespace detail {

inline void write_u16(std::ostream& os, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

inline uint16_t read_u16(std::istream& is, const char* what) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) {
    throw IntegrityError(std::string("truncated checkpoint while reading ") + what +
                         " at offset " + std::to_string(static_cast<long long>(is.tellg())));
  }
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace detail

template <typename T>
struct Checkpoint {
  std::string meta;  // key=value lines (architecture, epoch, ...)
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;
};

template <typename T>
void checkpoint_save(const Checkpoint<T>& ck, const std::string& path) {
  namespace fs = std::filesystem;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + tmp);
    os.write("MNCK", 4);
    detail::write_u16(os, 1);
    detail::write_u32(os, static_cast<uint32_t>(ck.meta.size()));
    os.write(ck.meta.data(), static_cast<std::streamsize>(ck.meta.size()));
    detail::write_u32(os, static_cast<uint32_t>(ck.tensors.size()));
    for (size_t i = 0; i < ck.tensors.size(); ++i) {
      const auto& t = ck.tensors[i];
      const auto& name = ck.names[i];
      detail::write_u16(os, static_cast<uint16_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      uint8_t code = detail::dtype_code<T>();
      os.write(reinterpret_cast<const char*>(&code), 1);
      detail::write_u32(os, static_cast<uint32_t>(t.n()));
      detail::write_u32(os, static_cast<uint32_t>(t.c()));
      detail::write_u32(os, static_cast<uint32_t>(t.h()));
      detail::write_u32(os, static_cast<uint32_t>(t.w()));
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.size() * sizeof(T)));
    }
    if (!os) throw IoError("write failed: " + tmp);
  }
  fs::rename(tmp, path);
}

template <typename T>
Checkpoint<T> checkpoint_load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "MNCK", 4) != 0) {
    throw IntegrityError("bad checkpoint magic at offset 0: " + path);
  }
  const uint16_t version = detail::read_u16(is, "version");
  if (version != 1) throw IntegrityError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint<T> ck;
  const uint32_t meta_len = detail::read_u32(is, "meta length");
  ck.meta.resize(meta_len);
  if (meta_len && !is.read(ck.meta.data(), meta_len)) {
    throw IntegrityError("truncated checkpoint metadata at offset " +
                         std::to_string(static_cast<long long>(is.tellg())));
  }
  const uint32_t count = detail::read_u32(is, "tensor count");
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = detail::read_u16(is, "tensor name length");
    std::string name(name_len, '\0');
    if (name_len && !is.read(name.data(), name_len)) {
      throw IntegrityError("truncated tensor name at offset " +
                           std::to_string(static_cast<long long>(is.tellg())));
    }
    uint8_t code;
    if (!is.read(reinterpret_cast<char*>(&code), 1)) {
      throw IntegrityError("truncated dtype at offset " +
                           std::to_string(static_cast<long long>(is.tellg())));
    }
    if (code != detail::dtype_code<T>()) {
      throw IntegrityError("checkpoint dtype code " + std::to_string(code) +
                           " does not match requested precision");
    }
    int64_t dims[4];
    for (int d = 0; d < 4; ++d) dims[d] = detail::read_u32(is, "tensor dims");
    Tensor<T> t(dims[0], dims[1], dims[2], dims[3]);
    if (!is.read(reinterpret_cast<char*>(t.data()),
                 static_cast<std::streamsize>(t.size() * sizeof(T)))) {
      throw IntegrityError("truncated tensor data at offset " +
                           std::to_string(static_cast<long long>(is.tellg())));
    }
    ck.names.push_back(std::move(name));
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

// Graph parameters plus optimizer velocities in one file.
template <typename T>
void save_training_state(const LayerGraph<T>& g, const OptimizerState<T>& opt,
                         const std::string& meta, const std::string& path) {
  Checkpoint<T> ck;
  ck.meta = meta;
  for (size_t i = 0; i < g.params.size(); ++i) {
    ck.names.push_back(g.param_names[i]);
    ck.tensors.push_back(g.params[i]);
  }
  for (size_t i = 0; i < opt.velocity.size(); ++i) {
    ck.names.push_back("velocity/" + g.param_names[i]);
    ck.tensors.push_back(opt.velocity[i]);
  }
  checkpoint_save(ck, path);
}

template <typename T>
void load_training_state(LayerGraph<T>& g, OptimizerState<T>* opt, const std::string& path) {
  auto ck = checkpoint_load<T>(path);
  size_t expected = g.params.size() + (opt ? opt->velocity.size() : 0);
  std::vector<Tensor<T>> params(g.params.size());
  std::vector<Tensor<T>> vel(opt ? opt->velocity.size() : 0);
  std::vector<bool> seen_p(g.params.size(), false);
  size_t matched = 0;
  for (size_t i = 0; i < ck.names.size(); ++i) {
    const auto& name = ck.names[i];
    bool is_vel = name.rfind("velocity/", 0) == 0;
    const std::string key = is_vel ? name.substr(9) : name;
    for (size_t p = 0; p < g.params.size(); ++p) {
      if (g.param_names[p] != key) continue;
      if (!ck.tensors[i].same_shape(g.params[p])) {
        throw IntegrityError("checkpoint tensor '" + name + "' has mismatched shape");
      }
      if (is_vel) {
        if (opt) {
          vel[p] = std::move(ck.tensors[i]);
          ++matched;
        }
      } else {
        params[p] = std::move(ck.tensors[i]);
        seen_p[p] = true;
        ++matched;
      }
      break;
    }
  }
  for (size_t p = 0; p < g.params.size(); ++p) {
    if (!seen_p[p]) throw IntegrityError("checkpoint missing tensor '" + g.param_names[p] + "'");
  }
  (void)expected;
  // All-or-nothing: mutate only after every tensor validated.
  g.params = std::move(params);
  if (opt) opt->velocity = std::move(vel);
}

// ---------------------------------------------------------------------------
// Epoch loop

// One training sample: image tensor (1, C, H, W) and per-pixel category map.
template <typename T>
struct Sample {
  Tensor<T> image;
  std::vector<uint8_t> label;
};

template <typename T>
struct EpochLog {
  int epoch = 0;
  double loss = 0;
  double miou = 0;
  double acc = 0;
  double seconds = 0;
};

template <typename T>
std::vector<uint8_t> argmax_channels(const Tensor<T>& probs) {
  const int64_t c = probs.c(), hw = probs.h() * probs.w();
  std::vector<uint8_t> labels(static_cast<size_t>(probs.n() * hw));
  for (int64_t n = 0; n < probs.n(); ++n) {
    const T* a = probs.data() + n * c * hw;
    for (int64_t p = 0; p < hw; ++p) {
      int best = 0;
      T bv = a[p];
      for (int64_t ch = 1; ch < c; ++ch) {
        if (a[ch * hw + p] > bv) {
          bv = a[ch * hw + p];
          best = static_cast<int>(ch);
        }
      }
      labels[n * hw + p] = static_cast<uint8_t>(best);
    }
  }
  return labels;
}

template <typename T>
void hflip_image_inplace(Tensor<T>& img) {
  for (int64_t n = 0; n < img.n(); ++n) {
    for (int64_t c = 0; c < img.c(); ++c) {
      for (int64_t i = 0; i < img.h(); ++i) {
        T* row = img.data() + ((n * img.c() + c) * img.h() + i) * img.w();
        std::reverse(row, row + img.w());
      }
    }
  }
}

inline void hflip_label_inplace(std::vector<uint8_t>& label, int64_t h, int64_t w) {
  for (int64_t i = 0; i < h; ++i) std::reverse(label.begin() + i * w, label.begin() + (i + 1) * w);
}

template <typename T>
ConfusionMatrix evaluate(const LayerGraph<T>& g, const std::vector<Sample<T>>& samples) {
  ConfusionMatrix cm(g.n_classes);
  for (const auto& s : samples) {
    auto probs = forward(g, s.image);
    cm.accumulate(argmax_channels(probs), s.label);
  }
  return cm;
}

// Batches samples (all must share H, W) into one (B, C, H, W) tensor.
template <typename T>
Tensor<T> stack_batch(const std::vector<const Sample<T>*>& batch) {
  const auto& first = batch.front()->image;
  Tensor<T> out(static_cast<int64_t>(batch.size()), first.c(), first.h(), first.w());
  const int64_t per = first.size();
  for (size_t i = 0; i < batch.size(); ++i) {
    std::copy(batch[i]->image.data(), batch[i]->image.data() + per, out.data() + i * per);
  }
  return out;
}

// Seeded epoch loop realizing the training protocol: shuffled mini-batches,
// probability-0.5 horizontal flips on training samples only, SGD with
// momentum and weight decay, a checkpoint written every epoch, and an
// append-only per-epoch log.
template <typename T>
std::vector<EpochLog<T>> train(LayerGraph<T>& g, const std::vector<Sample<T>>& train_set,
                               const std::vector<Sample<T>>& val_set, const TrainingConfig& cfg,
                               const std::function<void(const EpochLog<T>&)>& on_epoch = {}) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("training dataset is empty");
  Rng rng_init(split_seed(cfg.seed, static_cast<uint64_t>(SeedStream::Init)));
  Rng rng_shuffle(split_seed(cfg.seed, static_cast<uint64_t>(SeedStream::Shuffle)));
  Rng rng_aug(split_seed(cfg.seed, static_cast<uint64_t>(SeedStream::Augment)));
  init_params(g, rng_init);
  auto opt = OptimizerState<T>::init(g);

  std::vector<EpochLog<T>> logs;
  std::vector<size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    rng_shuffle.shuffle(order);
    double epoch_loss = 0;
    int steps = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Sample<T>> flipped;
      std::vector<const Sample<T>*> batch;
      flipped.reserve(end - start);
      for (size_t k = start; k < end; ++k) {
        const auto& s = train_set[order[k]];
        if (rng_aug.bernoulli(0.5)) {
          Sample<T> f{s.image, s.label};
          hflip_image_inplace(f.image);
          hflip_label_inplace(f.label, f.image.h(), f.image.w());
          flipped.push_back(std::move(f));
          batch.push_back(&flipped.back());
        } else {
          batch.push_back(&s);
        }
      }
      Tensor<T> input = stack_batch(batch);
      std::vector<uint8_t> labels;
      const int64_t hw = input.h() * input.w();
      labels.reserve(batch.size() * hw);
      for (const auto* s : batch) labels.insert(labels.end(), s->label.begin(), s->label.end());

      auto acts = forward_cached(g, input);
      auto loss = cross_entropy_from_labels(acts.out[g.output_node], labels);
      if (!std::isfinite(loss.loss)) {
        throw NumericError("NaN/Inf loss at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(steps + 1));
      }
      auto grads = backward(g, acts, g.logits_node, loss.grad_logits);
      sgd_step(g.params, grads.param_grads, opt, cfg);
      epoch_loss += loss.loss;
      ++steps;
    }

    EpochLog<T> log;
    log.epoch = epoch;
    log.loss = epoch_loss / std::max(steps, 1);
    if (!val_set.empty()) {
      auto cm = evaluate(g, val_set);
      log.miou = miou(cm);
      log.acc = acc(cm);
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    logs.push_back(log);
    if (!cfg.checkpoint_path.empty()) {
      std::string meta = "epoch=" + std::to_string(epoch) + "\n";
      save_training_state(g, opt, meta, cfg.checkpoint_path);
    }
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

// CSV rendering of the epoch log: epoch,loss,miou,acc,seconds. The seconds
// column is wall time and is the one run-to-run nondeterministic field.
template <typename T>
std::string training_log_csv(const std::vector<EpochLog<T>>& logs, bool include_seconds = true) {
  std::ostringstream os;
  os << "epoch,loss,miou,acc,seconds\n";
  char buf[160];
  for (const auto& l : logs) {
    if (include_seconds) {
      std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,%.3f\n", l.epoch, l.loss, l.miou, l.acc,
                    l.seconds);
    } else {
      std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g,\n", l.epoch, l.loss, l.miou, l.acc);
    }
    os << buf;
  }
  return os.str();
}

}  // namespace micronet

#endif
